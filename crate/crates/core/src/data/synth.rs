use rand::Rng as _;

use super::preprocess::{preprocess, Dataset};
use super::table::{ColumnData, RawColumn, RawTable, RejectReport};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const GROUPS: usize = 2;
const CARDINALITY: usize = 3;
const LATENTS: usize = 2;
const REPEATS: usize = 3;
const NOISE: f64 = 0.15;
const NORMAL_PROBS: [f64; 3] = [0.6, 0.3, 0.1];
const ATTACK_PROBS: [f64; 3] = [0.1, 0.3, 0.6];
/// Category skew per unit of separation, capped at full skew.
const SKEW_RATE: f64 = 0.05;

/// Smallest `d` the generator accepts.
pub const SYNTH_MIN_WIDTH: usize = GROUPS * CARDINALITY + LATENTS;

/// Labeled synthetic traffic with `d` one-hot expanded features.
///
/// Two latent factors each drive a block of correlated numeric columns
/// (random gains, small noise); the remaining numeric columns are
/// independent standard normals, and two 3-way categorical columns follow a
/// skewed distribution. Attacks shift the latent factors by `separation`
/// along a random unit direction and skew their categories.
pub fn synth_generate(n_normal: usize, n_attack: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if !(separation >= 0.0) {
        return Err(Error::Config(format!("separation {separation} must be non-negative")));
    }
    if d < SYNTH_MIN_WIDTH {
        return Err(Error::Config(format!(
            "synthetic width {d} below minimum {SYNTH_MIN_WIDTH}"
        )));
    }
    let n_numeric = d - GROUPS * CARDINALITY;
    let rep = REPEATS.min(n_numeric / LATENTS);
    let structured = LATENTS * rep;
    let mut r = rng::stream(seed, "synth");

    let mut gains = vec![vec![0.0; structured]; LATENTS];
    for (l, g) in gains.iter_mut().enumerate() {
        for k in 0..rep {
            let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
            g[l * rep + k] = r.random_range(0.7..1.3) * sign;
        }
    }

    let n = n_normal + n_attack;
    let mut numeric = (0..n_numeric).map(|_| Vec::with_capacity(n)).collect::<Vec<_>>();
    let mut cats = (0..GROUPS).map(|_| Vec::with_capacity(n)).collect::<Vec<_>>();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let attack = i >= n_normal;
        let mut lat: Vec<f64> = (0..LATENTS).map(|_| rng::normal(&mut r)).collect();
        if attack && separation > 0.0 {
            let dir: Vec<f64> = (0..LATENTS).map(|_| rng::normal(&mut r)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for (l, v) in lat.iter_mut().zip(&dir) {
                *l += v / norm * separation;
            }
        }
        for (j, col) in numeric.iter_mut().enumerate() {
            let v = if j < structured {
                (0..LATENTS).map(|l| lat[l] * gains[l][j]).sum::<f64>() + NOISE * rng::normal(&mut r)
            } else {
                rng::normal(&mut r)
            };
            col.push(v);
        }
        let w = if attack { (separation * SKEW_RATE).min(1.0) } else { 0.0 };
        for col in cats.iter_mut() {
            col.push(Some(format!("v{}", draw_category(&mut r, w))));
        }
        labels.push(u8::from(attack));
    }

    let mut columns: Vec<RawColumn> = numeric
        .into_iter()
        .enumerate()
        .map(|(j, v)| RawColumn {
            name: format!("x{j}"),
            data: ColumnData::Numeric(v),
        })
        .collect();
    columns.extend(cats.into_iter().enumerate().map(|(g, v)| RawColumn {
        name: format!("c{g}"),
        data: ColumnData::Categorical(v),
    }));
    preprocess(&RawTable {
        columns,
        labels,
        rejects: RejectReport {
            rows_read: n,
            rejected: Vec::new(),
        },
    })
}

fn draw_category(r: &mut Rng, skew: f64) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for k in 0..CARDINALITY {
        acc += (1.0 - skew) * NORMAL_PROBS[k] + skew * ATTACK_PROBS[k];
        if u < acc {
            return k;
        }
    }
    CARDINALITY - 1
}
