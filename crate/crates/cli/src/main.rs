//! `ssl-batchlab`: train small semi-supervised models under different batch
//! composition strategies, audit samplers, sweep hyperparameters, and export
//! metric plots.
//!
//! Exit codes: 0 success, 2 configuration error, 3 divergence or sampler
//! infeasibility at runtime, 1 anything else.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use batchlab_cli::config::{self, RunConfig};
use batchlab_cli::{audit, runner, svg, sweep};
use batchlab_core::{metrics, Error};

#[derive(Parser)]
#[command(name = "ssl-batchlab", version, about = "Batch-composition experiments for semi-supervised learning")]
struct Cli {
    /// Parallel worker count for replicate runs and sweep trials
    /// (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output root; falls back to $SSL_BATCHLAB_DIR, then ./runs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute every seed replicate of a run config and summarize.
    Run {
        config: PathBuf,
        /// Scale the sample budget (e.g. 6 for a six-times-longer run).
        #[arg(long)]
        budget_multiplier: Option<f64>,
    },
    /// Random-search over hyperparameters; writes a leaderboard and the best
    /// config.
    Sweep { spec: PathBuf },
    /// Replay the configured sampler and write per-sample exposure counts.
    AuditSampler {
        config: PathBuf,
        /// Number of batches to draw.
        #[arg(long)]
        steps: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Render metrics.csv as SVG charts (four files under <run_dir>/plots/).
    ExportPlots {
        run_dir: PathBuf,
        /// Overlay more runs (repeatable): another run directory, or a JSON
        /// manifest {"runs": [{"dir": ..., "label": ...}]}.
        #[arg(long = "compare", value_name = "PATH")]
        compare: Vec<PathBuf>,
        /// Log-scale y axis for the loss panel.
        #[arg(long)]
        log_loss: bool,
    },
    /// Continue training from a checkpoint, optionally overriding config keys.
    Resume {
        ckpt: PathBuf,
        /// Config overrides as dotted key=value (repeatable), e.g.
        /// --override fixmatch.lambda_s=0.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn out_root(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| std::env::var_os("SSL_BATCHLAB_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Split(_) | Error::Format { .. } => 2,
        Error::Infeasible(_) | Error::Divergence { .. } => 3,
        Error::Io { .. } => 1,
    }
}

/// Chained run errors keep the underlying kind in the message; recover the
/// right exit code for the common wrapped cases.
fn classify(err: &Error) -> u8 {
    let direct = exit_code_for(err);
    if direct == 2 {
        let text = err.to_string();
        if text.contains("diverged") || text.contains("non-finite") || text.contains("infeasible") {
            return 3;
        }
    }
    direct
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify(&e))
        }
    }
}

fn dispatch(cli: &Cli) -> batchlab_core::Result<()> {
    let root = out_root(&cli.out);
    match &cli.cmd {
        Cmd::Run {
            config,
            budget_multiplier,
        } => {
            let mut run_config = RunConfig::load(config)?;
            if let Some(m) = budget_multiplier {
                run_config.train.budget_multiplier = *m;
            }
            let summary = runner::execute(&run_config, &root, cli.jobs)?;
            println!("{}", summary.one_line());
            println!("artifacts: {}", root.join(&run_config.name).display());
            Ok(())
        }
        Cmd::Sweep { spec } => {
            let spec = sweep::SweepSpec::load(spec)?;
            let outcome = sweep::run_sweep(&spec, &root, cli.jobs)?;
            let ok = outcome
                .leaderboard
                .iter()
                .filter(|r| r.status == "ok")
                .count();
            println!(
                "sweep {}: {}/{} trials succeeded",
                spec.name,
                ok,
                outcome.leaderboard.len()
            );
            for record in outcome.leaderboard.iter().take(5) {
                println!(
                    "  {} val={} ({})",
                    record.dir,
                    record
                        .best_val_accuracy
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "-".into()),
                    record.status
                );
            }
            if outcome.best_config.is_some() {
                println!(
                    "best config: {}",
                    root.join(&spec.name).join("best_config.json").display()
                );
            }
            Ok(())
        }
        Cmd::AuditSampler {
            config,
            steps,
            csv_out,
        } => {
            let run_config = RunConfig::load(config)?;
            let csv = audit::audit_csv(&run_config, *steps)?;
            match csv_out {
                Some(path) => std::fs::write(path, csv)
                    .map_err(|e| Error::io(format!("writing {}", path.display()), e))?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Cmd::ExportPlots {
            run_dir,
            compare,
            log_loss,
        } => {
            let mut series = vec![load_series(run_dir, None)?];
            for path in compare {
                if path.is_dir() {
                    series.push(load_series(path, None)?);
                } else {
                    series.extend(load_compare_manifest(path)?);
                }
            }
            let out_dir = run_dir.join("plots");
            let written = svg::export_plots(&series, &out_dir, *log_loss)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Cmd::Resume { ckpt, overrides } => {
            let run_config = config::resume_config(ckpt, overrides)?;
            let summary = runner::execute(&run_config, &root, cli.jobs)?;
            println!("{}", summary.one_line());
            println!("artifacts: {}", root.join(&run_config.name).display());
            Ok(())
        }
    }
}

/// Build one plot series from a run directory: its metrics plus a style
/// derived from config.json (implicit samplers draw dashed).
fn load_series(dir: &Path, label: Option<String>) -> batchlab_core::Result<svg::RunSeries> {
    let rows = metrics::read_csv(&dir.join("metrics.csv"))?;
    let (mut derived_label, mut dashed) = (
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string()),
        false,
    );
    let config_path = dir.join("config.json");
    if config_path.is_file() {
        if let Ok(config) = RunConfig::load(&config_path) {
            dashed = config.sampler.mode == batchlab_core::SamplerMode::Implicit;
            derived_label = format!("{} ({:?})", config.name, config.sampler.mode).to_lowercase();
        }
    }
    Ok(svg::RunSeries {
        label: label.unwrap_or(derived_label),
        dashed,
        rows,
    })
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareManifest {
    runs: Vec<CompareEntry>,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareEntry {
    dir: PathBuf,
    #[serde(default)]
    label: Option<String>,
}

fn load_compare_manifest(path: &Path) -> batchlab_core::Result<Vec<svg::RunSeries>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let manifest: CompareManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    if manifest.runs.is_empty() {
        return Err(Error::Config(format!(
            "{}: compare manifest lists no runs",
            path.display()
        )));
    }
    manifest
        .runs
        .into_iter()
        .map(|entry| load_series(&entry.dir, entry.label))
        .collect()
}
