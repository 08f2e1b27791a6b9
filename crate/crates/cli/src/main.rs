use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use ncssl::data::{load_csv, preprocess, read_cache, write_cache, Schema};
use ncssl_cli::report;
use ncssl_cli::{run_experiment, run_grid, DatasetRef, ExperimentConfig, GridConfig, GridOptions, RunOptions};

#[derive(Parser)]
#[command(
    name = "ncssl",
    version,
    about = "Self-supervised anomaly detection experiments on network flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an experiment or grid config without running it.
    ValidateConfig {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Clean CSV files and write a dataset cache.
    Preprocess {
        #[arg(short, long)]
        schema: PathBuf,
        /// CSV file; repeat to concatenate several files.
        #[arg(short, long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run every seed of one experiment.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Dataset cache, or a CSV read with the config's schema.
        #[arg(short, long)]
        dataset: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        /// Recompute runs that already finished.
        #[arg(long)]
        fresh: bool,
    },
    /// Run an encoder × augmentation × model grid.
    Grid {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(short, long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        fresh: bool,
    },
    /// Rank every experiment found below a directory.
    Report {
        dir: PathBuf,
        /// Also write the ranking as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Only the best cell of each model.
        #[arg(long)]
        best: bool,
    },
}

fn is_grid(path: &Path) -> anyhow::Result<bool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(table.contains_key("base"))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::ValidateConfig { config } => {
            if is_grid(&config)? {
                let grid = GridConfig::load(&config)?;
                let cells = grid.cells()?;
                for c in &cells {
                    c.config.validate().with_context(|| format!("cell {}", c.config.name))?;
                }
                println!("ok: grid {} with {} cells", grid.name, cells.len());
            } else {
                let cfg = ExperimentConfig::load(&config)?;
                cfg.validate()?;
                println!("ok: {} ({})", cfg.name, &cfg.hash()[..12]);
            }
        }
        Command::Preprocess { schema, inputs, output } => {
            let schema = Schema::load(&schema)?;
            let mut table = load_csv(&inputs[0], &schema)?;
            for p in &inputs[1..] {
                table.append(load_csv(p, &schema)?)?;
            }
            let ds = preprocess(&table)?;
            write_cache(&ds, &output)?;
            println!(
                "{} rows read, {} rejected; {} samples × {} features, attack ratio {:.4}",
                table.rejects.rows_read,
                table.rejects.rejected.len(),
                ds.n_samples(),
                ds.n_features(),
                ds.attack_ratio()
            );
            println!("{}", serde_json::to_string_pretty(&ds.report)?);
        }
        Command::Run {
            config,
            dataset,
            output,
            seed,
            runs,
            fresh,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(path) = dataset {
                cfg.dataset = dataset_override(&cfg.dataset, path)?;
            }
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = runs {
                cfg.runs = r;
            }
            let record = run_experiment(&cfg, RunOptions { resume: !fresh })?;
            print!("{}", report::render(&report::rank(std::slice::from_ref(&record))));
            for r in &record.runs {
                if let Some(e) = &r.error {
                    eprintln!("seed {}: {} failed: {}", r.seed, e.stage, e.message);
                }
            }
            println!("artifacts in {}", cfg.experiment_dir().display());
            if record.aggregate.is_none() {
                bail!("every run failed");
            }
        }
        Command::Grid {
            config,
            output,
            workers,
            seed,
            fresh,
        } => {
            let mut grid = GridConfig::load(&config)?;
            if let Some(o) = output {
                grid.set_base("output_dir", toml::Value::String(o.to_string_lossy().into_owned()));
            }
            if let Some(s) = seed {
                grid.set_base("seed", toml::Value::Integer(s as i64));
            }
            let rep = run_grid(
                &grid,
                GridOptions {
                    workers,
                    resume: !fresh,
                    max_cells: None,
                },
            )?;
            print!("{}", report::render(&rep.ranking));
            println!("\nbest per model:");
            print!("{}", report::render(&rep.best));
            for c in &rep.cells {
                if let ncssl_cli::CellStatus::Failed(why) = &c.status {
                    eprintln!("cell {} failed: {why}", c.name);
                }
            }
            println!("reports in {}", grid.grid_dir().display());
        }
        Command::Report { dir, csv, best } => {
            let records = report::collect_records(&dir)?;
            if records.is_empty() {
                bail!("no experiment records below {}", dir.display());
            }
            let mut rows = report::rank(&records);
            if best {
                rows = report::best_per_model(&rows);
            }
            print!("{}", report::render(&rows));
            if let Some(path) = csv {
                report::write_csv(&rows, &path)?;
            }
        }
    }
    Ok(())
}

/// A cache file replaces the dataset outright; anything else is read as a
/// CSV with the schema of the configured CSV dataset.
fn dataset_override(current: &DatasetRef, path: PathBuf) -> anyhow::Result<DatasetRef> {
    if read_cache(&path).is_ok() {
        return Ok(DatasetRef::Cache { path, subsample: None });
    }
    match current {
        DatasetRef::Csv { schema, subsample, .. } => Ok(DatasetRef::Csv {
            paths: vec![path],
            schema: schema.clone(),
            subsample: *subsample,
        }),
        _ => bail!(
            "{} is not a dataset cache and the config names no CSV schema",
            path.display()
        ),
    }
}
