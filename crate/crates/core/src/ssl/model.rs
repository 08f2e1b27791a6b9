use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::augment::{make_views, mixup, mixup_partners, AugmentKind, AugmentationSpec, SubsetSplit, ViewSet};
use crate::encoders::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::features::FeatureLayout;
use crate::nn::{Adam, BatchNorm, Ctx, Linear, Mode, ParamStore};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

use super::losses::{
    barlow_twins_loss, byol_loss, simsiam_loss, vicreg_loss, wmse_loss, Loss, LossBreakdown, VicregWeights, WmseParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SslKind {
    Byol,
    Simsiam,
    BarlowTwins,
    Vicreg,
    Wmse,
}

impl SslKind {
    pub const ALL: [SslKind; 5] = [
        SslKind::Byol,
        SslKind::Simsiam,
        SslKind::BarlowTwins,
        SslKind::Vicreg,
        SslKind::Wmse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SslKind::Byol => "byol",
            SslKind::Simsiam => "simsiam",
            SslKind::BarlowTwins => "barlow_twins",
            SslKind::Vicreg => "vicreg",
            SslKind::Wmse => "wmse",
        }
    }

    pub fn has_predictor(self) -> bool {
        matches!(self, SslKind::Byol | SslKind::Simsiam)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslConfig {
    pub kind: SslKind,
    /// Projector (and predictor) width.
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    #[serde(default = "default_lambda_bt")]
    pub lambda_bt: f64,
    #[serde(default)]
    pub vicreg: VicregWeights,
    #[serde(default)]
    pub wmse: WmseParams,
    /// EMA decay of the target branch.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

fn default_embed() -> usize {
    256
}
fn default_lambda_bt() -> f64 {
    5e-3
}
fn default_tau() -> f64 {
    0.99
}
fn default_lr() -> f64 {
    1e-3
}

impl SslConfig {
    pub fn new(kind: SslKind) -> Self {
        Self {
            kind,
            embed_dim: default_embed(),
            lambda_bt: default_lambda_bt(),
            vicreg: VicregWeights::default(),
            wmse: WmseParams::default(),
            tau: default_tau(),
            lr: default_lr(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau = {} outside [0, 1]", self.tau)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.kind == SslKind::Wmse && self.wmse.slice < 2 {
            return Err(Error::Config(format!(
                "W-MSE slice {} must be at least 2",
                self.wmse.slice
            )));
        }
        Ok(())
    }
}

/// Two fully connected layers with batch normalization and ReLU between.
#[derive(Clone, Debug)]
pub struct Head {
    pub fc0: Linear,
    pub bn: BatchNorm,
    pub fc1: Linear,
}

impl Head {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        width: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            fc0: Linear::new(store, &format!("{prefix}.fc0"), input, width, true, rng)?,
            bn: BatchNorm::new(store, &format!("{prefix}.bn"), width)?,
            fc1: Linear::new(store, &format!("{prefix}.fc1"), width, width, true, rng)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.bn.forward(ctx, self.fc0.forward(ctx, x)?)?.relu();
        self.fc1.forward(ctx, h)
    }
}

/// `target ← τ·target + (1−τ)·online` over every trainable target parameter,
/// matched to the online store by name.
pub fn ema_update<T: Scalar>(target: &mut ParamStore<T>, online: &ParamStore<T>, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau = {tau} outside [0, 1]")));
    }
    let ids: Vec<_> = target.trainable_ids().collect();
    let (keep, mix) = (T::of(tau), T::of(1.0 - tau));
    for id in ids {
        let name = target.name(id).to_string();
        let src = online
            .id(&name)
            .map(|o| online.get(o))
            .ok_or_else(|| Error::Checkpoint(format!("online parameters lack `{name}`")))?;
        let dst = target.get_mut(id);
        if src.shape() != dst.shape() {
            return Err(Error::Checkpoint(format!(
                "`{name}` is {:?} online but {:?} in the target",
                src.shape(),
                dst.shape()
            )));
        }
        for (t, &o) in dst.data_mut().iter_mut().zip(src.data()) {
            *t = keep * *t + mix * o;
        }
    }
    Ok(())
}

/// Encoder, heads, optimizer and (for BYOL) the moving-average target.
#[derive(Clone, Debug)]
pub struct SslModel<T: Scalar> {
    pub config: SslConfig,
    pub augment: AugmentationSpec,
    pub encoder: Encoder,
    pub projector: Head,
    pub predictor: Option<Head>,
    /// Online parameters: `encoder.*`, `projector.*` and `predictor.*`.
    pub store: ParamStore<T>,
    /// Target copies of `encoder.*` and `projector.*`, with the same ids.
    pub target: Option<ParamStore<T>>,
    pub optimizer: Adam<T>,
    pub split: Option<SubsetSplit>,
    rng: Rng,
}

impl<T: Scalar> SslModel<T> {
    /// `layout` describes the full preprocessed feature vector; Subsets runs
    /// build their split from it and feed the encoder the window width.
    pub fn new(
        config: &SslConfig,
        encoder: &EncoderConfig,
        augment: &AugmentationSpec,
        layout: &FeatureLayout,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        augment.validate()?;
        let split = if augment.kind == AugmentKind::Subsets {
            let mut perm: Vec<usize> = (0..layout.width).collect();
            crate::augment::shuffle_in_place(&mut perm, &mut rng::stream(seed, "subsets"));
            Some(SubsetSplit::new(layout.width, augment.k, augment.overlap, &perm)?)
        } else {
            None
        };
        let enc_layout = match &split {
            Some(s) => FeatureLayout::numeric_only(s.width()),
            None => layout.clone(),
        };
        let mut init = rng::stream(seed, "init");
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "encoder", encoder, &enc_layout, &mut init)?;
        let projector = Head::new(&mut store, "projector", enc.output_dim(), config.embed_dim, &mut init)?;
        let target = (config.kind == SslKind::Byol).then(|| store.clone());
        let predictor = if config.kind.has_predictor() {
            Some(Head::new(
                &mut store,
                "predictor",
                config.embed_dim,
                config.embed_dim,
                &mut init,
            )?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            augment: augment.clone(),
            encoder: enc,
            projector,
            predictor,
            store,
            target,
            optimizer: Adam::new(config.lr),
            split,
            rng: rng::stream(seed, "train"),
        })
    }

    pub fn kind(&self) -> SslKind {
        self.config.kind
    }

    pub fn representation_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Minimum batch size a training step accepts.
    pub fn min_batch(&self) -> usize {
        match self.config.kind {
            SslKind::Wmse => self.config.wmse.slice,
            _ => 2,
        }
    }

    /// Draws the views of one training batch.
    pub fn views(&mut self, batch: &Tensor<T>, donors: &Tensor<T>) -> Result<ViewSet<T>> {
        make_views(&self.augment, batch, donors, self.split.as_ref(), &mut self.rng)
    }

    /// One optimization step: forward every view, average the loss over view
    /// pairs, backpropagate, update with Adam and, for BYOL, move the target.
    pub fn train_step(&mut self, views: &ViewSet<T>) -> Result<LossBreakdown> {
        let inputs = views.views();
        if inputs.len() < 2 {
            return Err(Error::Config(format!(
                "training needs at least two views, got {}",
                inputs.len()
            )));
        }
        let b = inputs[0].shape()[0];
        let partners = match views {
            ViewSet::Mixup(v) => Some(
                v.iter()
                    .map(|_| mixup_partners(b, &mut self.rng))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        let (online_seed, target_seed) = (self.rng.random::<u64>(), self.rng.random::<u64>());

        let tape = Tape::new();
        let (breakdown, grads, updates, target_updates) = {
            let ctx = Ctx::new(&tape, &self.store, Mode::Train, online_seed);
            let mix = |i: usize| partners.as_ref().map(|p| p[i].as_slice());
            let branch = |ctx, i| self.branch(ctx, &inputs[i], mix(i));
            let z: Vec<_> = (0..inputs.len()).map(|i| branch(&ctx, i)).collect::<Result<_>>()?;
            let p: Vec<_> = match &self.predictor {
                Some(h) => z.iter().map(|&zi| h.forward(&ctx, zi)).collect::<Result<_>>()?,
                None => Vec::new(),
            };
            let target_ctx = self
                .target
                .as_ref()
                .map(|t| Ctx::new(&tape, t, Mode::Train, target_seed).frozen());
            let t: Vec<_> = match &target_ctx {
                Some(tc) => (0..inputs.len())
                    .map(|i| branch(tc, i).map(|v| v.detach()))
                    .collect::<Result<_>>()?,
                None => Vec::new(),
            };

            let mut losses = Vec::new();
            for i in 0..z.len() {
                for j in i + 1..z.len() {
                    losses.push(self.pair_loss(&z, &p, &t, i, j)?);
                }
            }
            let mut total = losses[0].total;
            for l in &losses[1..] {
                total = total.add(l.total)?;
            }
            let total = total.scale(T::of(1.0 / losses.len() as f64));
            let parts: Vec<_> = losses.iter().map(|l| l.breakdown()).collect();
            let mut breakdown = LossBreakdown::mean(&parts);
            breakdown.total = total.value().item().as_f64();
            if !breakdown.total.is_finite() {
                return crate::error::domain_err("train_step", format!("non-finite {} loss", self.config.kind.name()));
            }
            tape.backward(total)?;
            let target_updates = target_ctx.map(|tc| tc.take_updates()).unwrap_or_default();
            (breakdown, ctx.grads(), ctx.take_updates(), target_updates)
        };

        self.optimizer.step(&mut self.store, &grads)?;
        self.store.apply_updates(updates)?;
        if let Some(target) = self.target.as_mut() {
            target.apply_updates(target_updates)?;
            ema_update(target, &self.store, self.config.tau)?;
        }
        Ok(breakdown)
    }

    fn branch<'t>(&self, ctx: &Ctx<'t, '_, T>, x: &Tensor<T>, partners: Option<&[usize]>) -> Result<Var<'t, T>> {
        let mut y = self.encoder.forward(ctx, ctx.tape.constant(x.clone()))?;
        if let Some(p) = partners {
            y = mixup(y, self.augment.alpha, p)?;
        }
        self.projector.forward(ctx, y)
    }

    fn pair_loss<'t>(
        &self,
        z: &[Var<'t, T>],
        p: &[Var<'t, T>],
        t: &[Var<'t, T>],
        i: usize,
        j: usize,
    ) -> Result<Loss<'t, T>> {
        Ok(match self.config.kind {
            SslKind::Byol => {
                let l = byol_loss(p[i], t[j])?.add(byol_loss(p[j], t[i])?)?;
                Loss::scalar(l.scale(T::of(0.5)))
            }
            SslKind::Simsiam => Loss::scalar(simsiam_loss(p[i], p[j], z[i], z[j])?),
            SslKind::BarlowTwins => barlow_twins_loss(z[i], z[j], self.config.lambda_bt)?,
            SslKind::Vicreg => vicreg_loss(z[i], z[j], &self.config.vicreg)?,
            SslKind::Wmse => Loss::scalar(wmse_loss(z[i], z[j], &self.config.wmse)?),
        })
    }

    /// Eval-mode encoder outputs for the rows of `x`, in chunks of `chunk`
    /// rows. Subsets runs average the window representations of each row.
    pub fn represent(&self, x: &Tensor<T>, chunk: usize) -> Result<Tensor<T>> {
        let (n, _) = x.dims2()?;
        let r = self.representation_dim();
        let mut out = Vec::with_capacity(n * r);
        let chunk = chunk.max(1);
        for start in (0..n).step_by(chunk) {
            let rows: Vec<usize> = (start..(start + chunk).min(n)).collect();
            let part = x.select_rows(&rows);
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &self.store, Mode::Eval, 0).frozen();
            let y = match &self.split {
                None => (*self.encoder.forward(&ctx, tape.constant(part))?.value()).clone(),
                Some(split) => {
                    let views = split.views(&part)?;
                    let mut acc = Tensor::zeros(vec![rows.len(), r]);
                    for v in views {
                        let y = self.encoder.forward(&ctx, tape.constant(v))?.value();
                        for (a, &b) in acc.data_mut().iter_mut().zip(y.data()) {
                            *a += b;
                        }
                    }
                    let k = T::of(split.columns.len() as f64);
                    acc.map(|v| v / k)
                }
            };
            out.extend_from_slice(y.data());
        }
        Tensor::new(vec![n, r], out)
    }

    /// Runs `epochs` passes over `data` in shuffled batches of `batch_size`
    /// (an incomplete final batch is dropped). `log` receives every step.
    pub fn pretrain(
        &mut self,
        data: &Tensor<T>,
        epochs: usize,
        batch_size: usize,
        mut log: impl FnMut(&StepRecord) -> Result<()>,
    ) -> Result<Vec<f64>> {
        let (n, _) = data.dims2()?;
        let need = self.min_batch();
        if batch_size < need {
            return Err(Error::Config(format!(
                "batch size {batch_size} below the minimum {need} for {}",
                self.config.kind.name()
            )));
        }
        if n < batch_size {
            return Err(Error::BatchSize {
                op: "pretrain",
                got: n,
                need: batch_size,
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut epoch_means = Vec::with_capacity(epochs);
        let mut step = 0;
        for epoch in 0..epochs {
            crate::augment::shuffle_in_place(&mut order, &mut self.rng);
            let mut sum = 0.0;
            let batches = n / batch_size;
            for chunk in order.chunks_exact(batch_size) {
                let batch = data.select_rows(chunk);
                let views = self.views(&batch, data)?;
                let loss = self.train_step(&views)?;
                sum += loss.total;
                log(&StepRecord { epoch, step, loss })?;
                step += 1;
            }
            epoch_means.push(sum / batches as f64);
        }
        Ok(epoch_means)
    }
}

/// One line of the loss curve.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
}

impl StepRecord {
    /// Flat JSON object: `step`, `epoch`, `total` and one key per term.
    pub fn to_json_line(&self) -> String {
        let mut map = serde_json::Map::new();
        map.insert("step".into(), self.step.into());
        map.insert("epoch".into(), self.epoch.into());
        map.insert("total".into(), self.loss.total.into());
        for (k, v) in &self.loss.terms {
            map.insert(k.clone(), (*v).into());
        }
        serde_json::Value::Object(map).to_string()
    }
}
