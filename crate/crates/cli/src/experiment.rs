//! One experiment: every seed of one config, end to end.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ncssl::augment::AugmentKind;
use ncssl::baselines::{AeModel, SvddModel};
use ncssl::data::{load_csv, preprocess, protocol_split, read_cache, subsample, synth_generate, Dataset, Schema};
use ncssl::detector::{write_scores, Detector};
use ncssl::encoders::EncoderKind;
use ncssl::eval::{aggregate_runs, optimal_threshold_metrics, Aggregate, MetricsReport};
use ncssl::nn::checkpoint;
use ncssl::ssl::SslModel;
use ncssl::tensor::Tensor;
use ncssl::{Error, Result, Scalar};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetRef, ExperimentConfig, ModelKind, Precision};

pub const RECORD_FILE: &str = "record.json";
pub const EXPERIMENT_FILE: &str = "experiment.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub metrics: Option<MetricsReport>,
    pub duration_secs: f64,
    pub checkpoint: Option<PathBuf>,
    pub error: Option<StageError>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.metrics.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub name: String,
    pub config_hash: String,
    pub model: ModelKind,
    /// `None` for the baselines, which have no encoder or augmentation.
    pub encoder: Option<EncoderKind>,
    pub augmentation: Option<AugmentKind>,
    pub runs: Vec<RunRecord>,
    /// Over the successful runs; `None` if every run failed.
    pub aggregate: Option<Aggregate>,
}

impl ExperimentRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(EXPERIMENT_FILE))?)?)
    }

    /// True if this record holds every run of `config`.
    pub fn is_complete_for(&self, config: &ExperimentConfig) -> bool {
        self.config_hash == config.hash() && self.runs.len() == config.runs
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Reuse successful per-seed records already on disk.
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { resume: true }
    }
}

/// Loads and cleans the referenced data. Subsampling uses the config seed,
/// so every run of an experiment sees the same rows.
pub fn load_dataset(r: &DatasetRef, seed: u64) -> Result<Dataset> {
    match r {
        DatasetRef::Csv {
            paths,
            schema,
            subsample: frac,
        } => {
            let schema = Schema::load(schema)?;
            let mut table = load_csv(&paths[0], &schema)?;
            for p in &paths[1..] {
                table.append(load_csv(p, &schema)?)?;
            }
            let ds = preprocess(&table)?;
            maybe_subsample(ds, *frac, seed)
        }
        DatasetRef::Cache { path, subsample: frac } => maybe_subsample(read_cache(path)?, *frac, seed),
        DatasetRef::Synthetic {
            n_normal,
            n_attack,
            features,
            separation,
            seed,
        } => synth_generate(*n_normal, *n_attack, *features, *separation, *seed),
    }
}

fn maybe_subsample(ds: Dataset, frac: Option<f64>, seed: u64) -> Result<Dataset> {
    match frac {
        Some(f) if f < 1.0 => subsample(&ds, f, seed),
        _ => Ok(ds),
    }
}

/// Runs every seed of `config` and writes all artifacts under
/// [`ExperimentConfig::experiment_dir`]. Failures inside a run are recorded
/// in its [`RunRecord`]; only an invalid config or an unwritable output
/// directory fail the whole call.
pub fn run_experiment(config: &ExperimentConfig, opts: RunOptions) -> Result<ExperimentRecord> {
    config.validate()?;
    let dir = config.experiment_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), config.to_toml())?;
    let hash = config.hash();
    log::info!("experiment {} ({}) in {}", config.name, &hash[..12], dir.display());

    let data = load_dataset(&config.dataset, config.seed);
    let mut runs = Vec::with_capacity(config.runs);
    for i in 0..config.runs {
        let seed = config.seed + i as u64;
        let run_dir = dir.join(format!("seed-{seed}"));
        if opts.resume {
            if let Some(done) = finished_run(&run_dir, &hash) {
                log::info!("seed {seed}: reusing finished run");
                runs.push(done);
                continue;
            }
        }
        fs::create_dir_all(&run_dir)?;
        let start = Instant::now();
        let mut record = RunRecord {
            config_hash: hash.clone(),
            seed,
            epoch_losses: Vec::new(),
            metrics: None,
            duration_secs: 0.0,
            checkpoint: None,
            error: None,
        };
        let outcome = match &data {
            Ok(ds) => match config.training.precision {
                Precision::F32 => run_seed::<f32>(config, ds, seed, &run_dir, &mut record),
                Precision::F64 => run_seed::<f64>(config, ds, seed, &run_dir, &mut record),
            },
            Err(e) => Err(StageError {
                stage: "load".into(),
                message: e.to_string(),
            }),
        };
        if let Err(e) = outcome {
            log::error!("seed {seed}: {} failed: {}", e.stage, e.message);
            record.error = Some(e);
        }
        record.duration_secs = start.elapsed().as_secs_f64();
        fs::write(run_dir.join(RECORD_FILE), serde_json::to_string_pretty(&record)?)?;
        runs.push(record);
    }

    let ok: Vec<MetricsReport> = runs.iter().filter_map(|r| r.metrics.clone()).collect();
    let aggregate = if ok.is_empty() {
        None
    } else {
        Some(aggregate_runs(&ok)?)
    };
    let ssl = config.model.ssl().is_some();
    let record = ExperimentRecord {
        name: config.name.clone(),
        config_hash: hash,
        model: config.model,
        encoder: ssl.then_some(config.encoder.kind),
        augmentation: ssl.then_some(config.augmentation.kind),
        runs,
        aggregate,
    };
    write_run_table(&record, &dir.join("report.csv"))?;
    fs::write(dir.join(EXPERIMENT_FILE), serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

fn finished_run(run_dir: &Path, hash: &str) -> Option<RunRecord> {
    let text = fs::read_to_string(run_dir.join(RECORD_FILE)).ok()?;
    let r: RunRecord = serde_json::from_str(&text).ok()?;
    (r.config_hash == hash && r.succeeded()).then_some(r)
}

fn stage(name: &'static str) -> impl Fn(Error) -> StageError {
    move |e| StageError {
        stage: name.into(),
        message: e.to_string(),
    }
}

fn run_seed<T: Scalar>(
    config: &ExperimentConfig,
    ds: &Dataset,
    seed: u64,
    dir: &Path,
    record: &mut RunRecord,
) -> std::result::Result<(), StageError> {
    let split = protocol_split(ds, config.training.train_fraction, seed).map_err(stage("split"))?;
    let train: Tensor<T> = split.train.cast();
    let test: Tensor<T> = split.test.cast();
    let t = &config.training;
    let ckpt = dir.join("model.ckpt");
    let loss_log = dir.join("loss.jsonl");

    let scores = match config.model.ssl() {
        Some(_) => {
            let ssl = config.ssl_config().expect("ssl model");
            let mut model = SslModel::<T>::new(&ssl, &config.encoder, &config.augmentation, &ds.layout, seed)
                .map_err(stage("build"))?;
            let mut log = BufWriter::new(File::create(&loss_log).map_err(|e| stage("write")(e.into()))?);
            record.epoch_losses = model
                .pretrain(&train, t.epochs, t.batch_size, |s| {
                    Ok(writeln!(log, "{}", s.to_json_line())?)
                })
                .map_err(stage("pretrain"))?;
            log.flush().map_err(|e| stage("write")(e.into()))?;
            checkpoint::save(&model.store, &ckpt).map_err(stage("checkpoint"))?;
            let detector = Detector::fit_model(&model, &train).map_err(stage("detect"))?;
            let json = serde_json::to_string(&detector).map_err(|e| stage("write")(e.into()))?;
            fs::write(dir.join("detector.json"), json).map_err(|e| stage("write")(e.into()))?;
            detector.score_inputs(&model, &test).map_err(stage("detect"))?
        }
        None if config.model == ModelKind::Autoencoder => {
            let mut model = AeModel::<T>::new(&config.ae_config(), ds.n_features(), seed).map_err(stage("build"))?;
            record.epoch_losses = model.fit(&train, t.epochs, t.batch_size).map_err(stage("pretrain"))?;
            write_epoch_log(&loss_log, &record.epoch_losses).map_err(stage("write"))?;
            checkpoint::save(&model.store, &ckpt).map_err(stage("checkpoint"))?;
            model.score(&test).map_err(stage("detect"))?
        }
        None => {
            let mut model =
                SvddModel::<T>::new(&config.svdd_config(), ds.n_features(), seed).map_err(stage("build"))?;
            record.epoch_losses = model.fit(&train, t.epochs, t.batch_size).map_err(stage("pretrain"))?;
            write_epoch_log(&loss_log, &record.epoch_losses).map_err(stage("write"))?;
            checkpoint::save(&model.store, &ckpt).map_err(stage("checkpoint"))?;
            model.score(&test).map_err(stage("detect"))?
        }
    };
    record.checkpoint = Some(ckpt);
    let scaler = serde_json::to_string(&split.scaler).map_err(|e| stage("write")(e.into()))?;
    fs::write(dir.join("scaler.json"), scaler).map_err(|e| stage("write")(e.into()))?;
    write_scores(&dir.join("scores.csv"), &scores, Some(&split.test_labels)).map_err(stage("write"))?;
    // Labels are first touched here.
    let metrics = optimal_threshold_metrics(&scores, &split.test_labels, seed).map_err(stage("evaluate"))?;
    log::info!(
        "seed {seed}: f1 {:.4} auroc {:.4} precision {:.4} recall {:.4}",
        metrics.f1,
        metrics.auroc,
        metrics.precision,
        metrics.recall
    );
    record.metrics = Some(metrics);
    Ok(())
}

fn write_epoch_log(path: &Path, losses: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (epoch, loss) in losses.iter().enumerate() {
        writeln!(w, "{}", serde_json::json!({ "epoch": epoch, "total": loss }))?;
    }
    w.flush()?;
    Ok(())
}

/// Per-run metrics plus mean and std rows.
fn write_run_table(record: &ExperimentRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "precision", "recall", "f1", "auroc", "threshold", "error"])?;
    for r in &record.runs {
        let m = r.metrics.as_ref();
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.seed.to_string(),
            f(m.map(|m| m.precision)),
            f(m.map(|m| m.recall)),
            f(m.map(|m| m.f1)),
            f(m.map(|m| m.auroc)),
            f(m.map(|m| m.threshold)),
            r.error
                .as_ref()
                .map(|e| format!("{}: {}", e.stage, e.message))
                .unwrap_or_default(),
        ])?;
    }
    if let Some(a) = &record.aggregate {
        for (label, pick) in [("mean", 0), ("std", 1)] {
            let g = |m: ncssl::eval::MeanStd| if pick == 0 { m.mean } else { m.std }.to_string();
            w.write_record([
                label.to_string(),
                g(a.precision),
                g(a.recall),
                g(a.f1),
                g(a.auroc),
                String::new(),
                String::new(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
