//! `semloc` — dataset simulation, map building, localization and
//! evaluation on synthetic landmark worlds.

use anyhow::Context;
use clap::{Parser, Subcommand};

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use semloc_cli::dataset::simulate_from_config;
use semloc_cli::experiment::{run_experiment, ExperimentSpec, FilterSelection};
use semloc_cli::localize::{run_localization, FilterKind, LocalizeOptions};
use semloc_cli::mapping::build_maps;
use semloc_cli::report::{evaluate, storage_report, write_error_trace};
use semloc_core::io::{read_estimates_file, read_trajectory_file, write_estimates_file};
use semloc_core::map::{decode_map, encode_map};
use semloc_core::motion::OdometrySimConfig;
use semloc_core::sim::{ConditionModel, WorldConfig};

/// Landmark-map localization on synthetic worlds.
#[derive(Parser)]
#[command(name = "semloc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset: world + condition -> dataset directory.
    Simulate {
        /// World config TOML; omit for the built-in default world.
        #[arg(long)]
        world: Option<PathBuf>,
        /// Condition TOML; omit for a clean condition.
        #[arg(long)]
        condition: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also export label frames as PGM files into this directory.
        #[arg(long)]
        pgm_dir: Option<PathBuf>,
    },
    /// Build the semantic and dense maps from a mapping dataset.
    Map {
        /// Dataset directory produced by `simulate`.
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory for semantic.smap and dense.smap.
        #[arg(long)]
        out: PathBuf,
        /// Also write a JSON debug dump of the semantic map.
        #[arg(long)]
        json_dump: Option<PathBuf>,
    },
    /// Localize a dataset against a map, writing a pose CSV.
    Localize {
        #[arg(long)]
        dataset: PathBuf,
        /// Map file (semantic.smap for --filter semantic, dense.smap for sift).
        #[arg(long)]
        map: PathBuf,
        #[arg(long, value_enum)]
        filter: FilterKind,
        /// Output estimates CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Particle count for the semantic filter.
        #[arg(long)]
        particles: Option<usize>,
        /// Read label frames from this PGM directory instead of labels.lseq.
        #[arg(long)]
        pgm_labels: Option<PathBuf>,
    },
    /// Compare a pose CSV against ground truth.
    Evaluate {
        /// Estimates CSV from `localize`.
        #[arg(long)]
        estimates: PathBuf,
        /// Ground-truth trajectory CSV.
        #[arg(long)]
        truth: PathBuf,
        /// Comma-separated thresholds in meters.
        #[arg(long, default_value = "0.5,1.0,2.0", value_delimiter = ',')]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        burn_in: usize,
        /// Evaluate the 3-D error instead of the horizontal one.
        #[arg(long)]
        metric_3d: bool,
        /// Write the evaluation summary JSON here (default: stdout only).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the per-step error trace CSV here.
        #[arg(long)]
        errors_out: Option<PathBuf>,
    },
    /// Report the per-point storage breakdown of a map pair.
    Storage {
        #[arg(long)]
        semantic_map: PathBuf,
        #[arg(long)]
        dense_map: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full experiment spec: map once, localize every condition.
    Run {
        /// Experiment spec TOML; omit for the built-in default.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the filter selection from the spec.
        #[arg(long, value_enum)]
        filters: Option<FilterSelection>,
        /// Override the spec seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { world, condition, out, seed, pgm_dir } => {
            let world_cfg: WorldConfig = match world {
                Some(path) => toml::from_str(&fs::read_to_string(&path).with_context(|| format!("reading {path:?}"))?)?,
                None => WorldConfig::default(),
            };
            let condition: ConditionModel = match condition {
                Some(path) => toml::from_str(&fs::read_to_string(&path).with_context(|| format!("reading {path:?}"))?)?,
                None => ConditionModel::default(),
            };
            let summary = simulate_from_config(
                &world_cfg,
                &condition,
                &OdometrySimConfig::default(),
                seed,
                &out,
                pgm_dir.as_deref(),
            )?;
            println!(
                "dataset {:?}: {} frames, {} landmarks",
                summary.dir, summary.frames, summary.landmarks
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Map { dataset, out, json_dump } => {
            let built = build_maps(&dataset)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("semantic.smap"), encode_map(&built.semantic))?;
            fs::write(out.join("dense.smap"), encode_map(&built.dense))?;
            if let Some(path) = json_dump {
                fs::write(&path, serde_json::to_string_pretty(&built.semantic.debug_dump())? + "\n")?;
            }
            println!(
                "maps written to {:?}: {} semantic points ({} unobserved), {} dense points ({} unobserved)",
                out,
                built.semantic.points().len(),
                built.dropped_semantic,
                built.dense.points().len(),
                built.dropped_dense
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Localize { dataset, map, filter, out, seed, particles, pgm_labels } => {
            let mut opts = LocalizeOptions { seed, pgm_labels, ..LocalizeOptions::default() };
            if let Some(n) = particles {
                opts.semantic.num_particles = n;
            }
            let rows = run_localization(&dataset, &map, filter, &opts)?;
            write_estimates_file(&out, &rows)?;
            println!("{} estimates written to {:?}", rows.len(), out);
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { estimates, truth, thresholds, burn_in, metric_3d, out, errors_out } => {
            let rows = read_estimates_file(&estimates)?;
            let truth = read_trajectory_file(&truth)?;
            let eval = evaluate(&rows, &truth, &thresholds, burn_in, !metric_3d)?;
            let summary = serde_json::json!({
                "thresholds": thresholds,
                "fractions": eval.fractions,
                "mean_error": eval.mean_error,
                "max_error": eval.max_error,
                "steps": eval.steps,
                "burn_in": eval.burn_in,
                "diverged": eval.diverged,
            });
            let text = serde_json::to_string_pretty(&summary)? + "\n";
            if let Some(path) = out {
                fs::write(path, &text)?;
            }
            print!("{text}");
            if let Some(path) = errors_out {
                write_error_trace(std::io::BufWriter::new(fs::File::create(path)?), &eval.trace)?;
            }
            Ok(if eval.diverged { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::Storage { semantic_map, dense_map, out } => {
            let semantic = decode_map(&fs::read(&semantic_map)?)?;
            let dense = decode_map(&fs::read(&dense_map)?)?;
            let report = storage_report(&semantic, &dense)?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            if let Some(path) = out {
                fs::write(path, &text)?;
            }
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { spec, out, filters, seed } => {
            let mut spec = match spec {
                Some(path) => ExperimentSpec::load(&path)?,
                None => ExperimentSpec::default(),
            };
            if let Some(f) = filters {
                spec.filters = f;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let report = run_experiment(&spec, &out)?;
            for s in &report.sequences {
                let fr: Vec<String> = s.fractions.iter().map(|f| format!("{f:.3}")).collect();
                println!(
                    "{:<10} {:<9} fractions [{}] mean {:.3} m{}",
                    s.condition,
                    s.filter,
                    fr.join(", "),
                    s.mean_error,
                    if s.diverged { "  DIVERGED" } else { "" }
                );
            }
            println!("report written to {:?}", out.join("report.json"));
            Ok(if report.any_divergence() { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
    }
}
