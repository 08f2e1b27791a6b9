//! Ranked result tables built from experiment records.

use std::path::Path;

use ncssl::augment::AugmentKind;
use ncssl::encoders::EncoderKind;
use ncssl::eval::MeanStd;
use ncssl::Result;
use serde::{Deserialize, Serialize};

use crate::config::ModelKind;
use crate::experiment::{ExperimentRecord, EXPERIMENT_FILE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub name: String,
    pub model: ModelKind,
    pub encoder: Option<EncoderKind>,
    pub augmentation: Option<AugmentKind>,
    pub runs: usize,
    pub failed_runs: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub auroc: MeanStd,
}

/// Every record with at least one successful run, by descending mean F1
/// (ties broken by name).
pub fn rank(records: &[ExperimentRecord]) -> Vec<RankRow> {
    let mut rows: Vec<RankRow> = records
        .iter()
        .filter_map(|r| {
            let a = r.aggregate.as_ref()?;
            Some(RankRow {
                name: r.name.clone(),
                model: r.model,
                encoder: r.encoder,
                augmentation: r.augmentation,
                runs: a.runs,
                failed_runs: r.runs.len() - a.runs,
                precision: a.precision,
                recall: a.recall,
                f1: a.f1,
                auroc: a.auroc,
            })
        })
        .collect();
    rows.sort_by(|a, b| b.f1.mean.total_cmp(&a.f1.mean).then_with(|| a.name.cmp(&b.name)));
    rows
}

/// The highest ranked row of each model, in ranking order.
pub fn best_per_model(ranked: &[RankRow]) -> Vec<RankRow> {
    let mut seen = Vec::new();
    ranked
        .iter()
        .filter(|r| {
            let fresh = !seen.contains(&r.model);
            seen.push(r.model);
            fresh
        })
        .cloned()
        .collect()
}

/// Reads every `experiment.json` below `dir`, sorted by path.
pub fn collect_records(dir: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut paths: Vec<_> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name() == EXPERIMENT_FILE)
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| ExperimentRecord::load(p.parent().expect("file has a parent")))
        .collect()
}

fn label<T: Copy>(v: Option<T>, name: fn(T) -> &'static str) -> &'static str {
    v.map(name).unwrap_or("-")
}

pub fn write_csv(rows: &[RankRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "rank",
        "name",
        "model",
        "encoder",
        "augmentation",
        "runs",
        "failed_runs",
        "f1_mean",
        "f1_std",
        "precision_mean",
        "precision_std",
        "recall_mean",
        "recall_std",
        "auroc_mean",
        "auroc_std",
    ])?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.name.clone(),
            r.model.name().to_string(),
            label(r.encoder, EncoderKind::name).to_string(),
            label(r.augmentation, AugmentKind::name).to_string(),
            r.runs.to_string(),
            r.failed_runs.to_string(),
            r.f1.mean.to_string(),
            r.f1.std.to_string(),
            r.precision.mean.to_string(),
            r.precision.std.to_string(),
            r.recall.mean.to_string(),
            r.recall.std.to_string(),
            r.auroc.mean.to_string(),
            r.auroc.std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width text table for the terminal.
pub fn render(rows: &[RankRow]) -> String {
    let mut out = format!(
        "{:<4} {:<13} {:<15} {:<15} {:>17} {:>17} {:>17} {:>17}\n",
        "rank", "model", "encoder", "augmentation", "f1", "precision", "recall", "auroc"
    );
    let ms = |m: MeanStd| format!("{:.3} ± {:.3}", m.mean, m.std);
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!(
            "{:<4} {:<13} {:<15} {:<15} {:>17} {:>17} {:>17} {:>17}\n",
            i + 1,
            r.model.name(),
            label(r.encoder, EncoderKind::name),
            label(r.augmentation, AugmentKind::name),
            ms(r.f1),
            ms(r.precision),
            ms(r.recall),
            ms(r.auroc)
        ));
    }
    out
}
