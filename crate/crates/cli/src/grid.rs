//! Encoder × augmentation × model grids.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ncssl::augment::AugmentKind;
use ncssl::encoders::EncoderKind;
use ncssl::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelKind, CONFIG_VERSION};
use crate::experiment::{run_experiment, ExperimentRecord, RunOptions};
use crate::report::{self, RankRow};

/// Extra settings merged into the cells that match every given key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Override {
    #[serde(default)]
    pub model: Option<ModelKind>,
    #[serde(default)]
    pub encoder: Option<EncoderKind>,
    #[serde(default)]
    pub augmentation: Option<AugmentKind>,
    pub set: toml::Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub version: u32,
    pub name: String,
    pub encoders: Vec<EncoderKind>,
    pub augmentations: Vec<AugmentKind>,
    pub models: Vec<ModelKind>,
    #[serde(default = "one")]
    pub workers: usize,
    /// Experiment settings shared by every cell; `model`, `encoder.kind` and
    /// `augmentation.kind` are filled in per cell.
    pub base: toml::Table,
    #[serde(default)]
    pub overrides: Vec<Override>,
    /// Directory that relative dataset paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

/// One resolved experiment of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub model: ModelKind,
    pub encoder: Option<EncoderKind>,
    pub augmentation: Option<AugmentKind>,
    pub config: ExperimentConfig,
}

impl GridConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let g: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if g.version != CONFIG_VERSION {
            return Err(Error::Config(format!("grid version {} not supported", g.version)));
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut g = Self::from_toml(&text)?;
        g.base_dir = Some(path.parent().unwrap_or(Path::new(".")).to_path_buf());
        Ok(g)
    }

    pub fn set_base(&mut self, key: &str, value: toml::Value) {
        self.base.insert(key.into(), value);
    }

    /// `base.output_dir` (default `runs`) joined with the grid name.
    pub fn grid_dir(&self) -> PathBuf {
        let root = self.base.get("output_dir").and_then(|v| v.as_str()).unwrap_or("runs");
        Path::new(root).join(&self.name)
    }

    /// Every cell in encoder, augmentation, model order. The baselines use
    /// neither an encoder nor an augmentation and get a single cell each.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let (ssl, baselines): (Vec<ModelKind>, Vec<ModelKind>) = self.models.iter().partition(|m| m.ssl().is_some());
        if !ssl.is_empty() && (self.encoders.is_empty() || self.augmentations.is_empty()) {
            return Err(Error::Config("grid lists no encoders or no augmentations".into()));
        }
        let mut cells = Vec::new();
        for &e in &self.encoders {
            for &a in &self.augmentations {
                for &m in &ssl {
                    cells.push(self.cell(m, Some(e), Some(a))?);
                }
            }
        }
        for &m in &baselines {
            cells.push(self.cell(m, None, None)?);
        }
        let mut names: Vec<&str> = cells.iter().map(|c| c.config.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(
                "grid lists a model, encoder or augmentation twice".into(),
            ));
        }
        Ok(cells)
    }

    fn cell(&self, model: ModelKind, encoder: Option<EncoderKind>, augmentation: Option<AugmentKind>) -> Result<Cell> {
        let mut t = self.base.clone();
        t.entry("version")
            .or_insert(toml::Value::Integer(CONFIG_VERSION as i64));
        t.insert("model".into(), toml::Value::String(model.name().into()));
        let mut name = model.name().to_string();
        if model.ssl().is_none() {
            t.remove("encoder");
            t.remove("augmentation");
        }
        if let Some(e) = encoder {
            set_kind(&mut t, "encoder", e.name())?;
            name = format!("{name}-{}", e.name());
        }
        if let Some(a) = augmentation {
            set_kind(&mut t, "augmentation", a.name())?;
            name = format!("{name}-{}", a.name());
        }
        t.insert("name".into(), toml::Value::String(name.clone()));
        t.insert(
            "output_dir".into(),
            toml::Value::String(self.grid_dir().to_string_lossy().into_owned()),
        );
        for o in &self.overrides {
            let hit = o.model.is_none_or(|m| m == model)
                && o.encoder.is_none_or(|e| Some(e) == encoder)
                && o.augmentation.is_none_or(|a| Some(a) == augmentation);
            if hit {
                merge(&mut t, &o.set);
            }
        }
        let mut config: ExperimentConfig = toml::Value::Table(t)
            .try_into()
            .map_err(|e| Error::Config(format!("cell {name}: {e}")))?;
        if let Some(dir) = &self.base_dir {
            config.rebase(dir);
        }
        Ok(Cell {
            model,
            encoder,
            augmentation,
            config,
        })
    }
}

fn set_kind(t: &mut toml::Table, section: &str, kind: &str) -> Result<()> {
    let entry = t
        .entry(section)
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let table = entry
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{section}` must be a table")))?;
    table.insert("kind".into(), toml::Value::String(kind.into()));
    Ok(())
}

fn merge(dst: &mut toml::Table, src: &toml::Table) {
    for (k, v) in src {
        match (dst.get_mut(k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => merge(d, s),
            _ => {
                dst.insert(k.clone(), v.clone());
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "detail")]
pub enum CellStatus {
    Completed,
    /// Finished in an earlier invocation and skipped.
    Resumed,
    Failed(String),
    /// Not started, because the invocation stopped early.
    Pending,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellOutcome {
    pub name: String,
    pub status: CellStatus,
    pub record: Option<ExperimentRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridReport {
    pub cells: Vec<CellOutcome>,
    pub ranking: Vec<RankRow>,
    pub best: Vec<RankRow>,
}

#[derive(Clone, Copy, Debug)]
pub struct GridOptions {
    /// Overrides the config's worker count.
    pub workers: Option<usize>,
    /// Skip cells whose records are already complete.
    pub resume: bool,
    /// Stop after starting this many cells, as if interrupted.
    pub max_cells: Option<usize>,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            workers: None,
            resume: true,
            max_cells: None,
        }
    }
}

/// Runs the grid on a pool of worker threads. Each cell owns its model
/// state, so results do not depend on the worker count. Finished cells are
/// appended to `grid.jsonl` one at a time; rankings go to `ranking.csv`,
/// `best_per_model.csv` and `ranking.txt`.
pub fn run_grid(grid: &GridConfig, opts: GridOptions) -> Result<GridReport> {
    let cells = grid.cells()?;
    for c in &cells {
        c.config.validate()?;
    }
    let dir = grid.grid_dir();
    fs::create_dir_all(&dir)?;
    let journal = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("grid.jsonl"))?,
    );

    let mut outcomes: Vec<Option<CellOutcome>> = vec![None; cells.len()];
    let mut todo = Vec::new();
    for (i, c) in cells.iter().enumerate() {
        let previous = ExperimentRecord::load(&c.config.experiment_dir()).ok();
        match previous {
            Some(r) if opts.resume && r.is_complete_for(&c.config) && r.runs.iter().all(|x| x.succeeded()) => {
                outcomes[i] = Some(CellOutcome {
                    name: c.config.name.clone(),
                    status: CellStatus::Resumed,
                    record: Some(r),
                });
            }
            _ => todo.push(i),
        }
    }
    log::info!("grid {}: {} cells, {} to run", grid.name, cells.len(), todo.len());

    let workers = opts.workers.unwrap_or(grid.workers).max(1);
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= todo.len() || opts.max_cells.is_some_and(|m| k >= m) {
                    break;
                }
                let cell = &cells[todo[k]];
                let outcome = run_cell(cell);
                if let Ok(mut f) = journal.lock() {
                    let line = serde_json::json!({
                        "cell": outcome.name,
                        "status": outcome.status,
                        "f1": outcome.record.as_ref().and_then(|r| r.aggregate.as_ref()).map(|a| a.f1.mean),
                    });
                    if let Err(e) = writeln!(f, "{line}") {
                        log::error!("cannot append to grid journal: {e}");
                    }
                }
                results.lock().expect("results lock").push((todo[k], outcome));
            });
        }
    });
    for (i, o) in results.into_inner().expect("results lock") {
        outcomes[i] = Some(o);
    }
    let cells: Vec<CellOutcome> = outcomes
        .into_iter()
        .zip(&cells)
        .map(|(o, c)| {
            o.unwrap_or_else(|| CellOutcome {
                name: c.config.name.clone(),
                status: CellStatus::Pending,
                record: None,
            })
        })
        .collect();

    let records: Vec<ExperimentRecord> = cells.iter().filter_map(|c| c.record.clone()).collect();
    let ranking = report::rank(&records);
    let best = report::best_per_model(&ranking);
    report::write_csv(&ranking, &dir.join("ranking.csv"))?;
    report::write_csv(&best, &dir.join("best_per_model.csv"))?;
    fs::write(dir.join("ranking.txt"), report::render(&ranking))?;
    Ok(GridReport { cells, ranking, best })
}

fn run_cell(cell: &Cell) -> CellOutcome {
    let name = cell.config.name.clone();
    let result = catch_unwind(AssertUnwindSafe(|| {
        run_experiment(&cell.config, RunOptions { resume: true })
    }));
    let (status, record) = match result {
        Ok(Ok(r)) if r.aggregate.is_some() => (CellStatus::Completed, Some(r)),
        Ok(Ok(r)) => (CellStatus::Failed("every run failed".into()), Some(r)),
        Ok(Err(e)) => (CellStatus::Failed(e.to_string()), None),
        Err(_) => (CellStatus::Failed("panicked".into()), None),
    };
    if let CellStatus::Failed(why) = &status {
        log::error!("cell {name} failed: {why}");
    }
    CellOutcome { name, status, record }
}
