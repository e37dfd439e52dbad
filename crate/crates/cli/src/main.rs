use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bimp_core::data::Split;
use bimp_core::grid::{config_hash, parse_grid, run_grid, write_run, RunSummary};
use bimp_core::metrics::sparsity_report;
use bimp_core::nn::Checkpoint;
use bimp_core::pipeline::{parse_config, retrain_from, run, ExperimentConfig, PipelineKind, RunOptions, RunResult};
use bimp_core::report::{emit_report, plot_to_csv, read_rows_jsonl, schedule_plotdata, ReportFormat, ResultRow};
use bimp_core::schedules::{schedule_csv, translate, BaseSchedule, LrSchedule};
use bimp_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

const OUT_ENV: &str = "BIMP_OUT_DIR";

#[derive(Parser)]
#[command(name = "bimp", version, about = "Iterative magnitude pruning with budgeted retraining")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment (or grid) config in TOML.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to $BIMP_OUT_DIR, then ./bimp-out.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Plotdata,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
            Format::Plotdata => ReportFormat::Plotdata,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedulePhase {
    Dense,
    Retrain,
}

#[derive(Subcommand)]
enum Command {
    /// Dense training only; writes the final checkpoint for `prune`.
    Train(Common),
    /// Prune-retrain cycles of a one-shot or iterative config starting from a checkpoint.
    Prune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the config's pipeline end to end.
    Experiment(Common),
    /// Run a grid of configs and seeds.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Print the (step, lr) pairs of the configured schedule.
    ScheduleDump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "dense")]
        phase: SchedulePhase,
        /// Steps per epoch; 1 dumps one value per epoch.
        #[arg(long, default_value_t = 1)]
        steps_per_epoch: usize,
        /// Discount applied to restarting retrain schemes.
        #[arg(long, default_value_t = 1.0)]
        discount: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Re-emit result rows (results.jsonl) in another format.
    Report {
        /// A results.jsonl file or a directory containing one.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("bimp-out"))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_config(c: &Common) -> Result<(ExperimentConfig, Split)> {
    let mut cfg = parse_config(&read(&c.config)?)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let split = cfg.data.load(c.config.parent())?;
    Ok((cfg, split))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Trace, result, mask table, final checkpoint and a one-row results.csv.
fn write_outputs(dir: &Path, cfg: &ExperimentConfig, r: &RunResult) -> Result<()> {
    mkdir(dir)?;
    let hash = config_hash(cfg)?;
    for f in write_run(dir, &hash, r)? {
        println!("wrote {}", f.display());
    }
    write(&dir.join("mask.csv"), &r.mask.to_csv())?;
    write(
        &dir.join("sparsity.json"),
        &serde_json::to_string_pretty(&sparsity_report(&r.mask))?,
    )?;
    r.checkpoint.save(&dir.join("final.ckpt.json"))?;
    let row = ResultRow::from_config(
        cfg,
        hash,
        String::new(),
        vec![r.seed],
        0,
        &[r.final_eval.accuracy],
        &[r.flops.speedup],
        &[r.sparsity()],
    );
    emit_report(&[row], ReportFormat::Csv, dir)?;
    Ok(())
}

fn summarize(r: &RunResult) {
    let s = RunSummary::of(r);
    println!(
        "{} seed {}: accuracy {:.4}, sparsity {:.4}, speedup {:.3}, {} steps",
        s.pipeline, s.seed, s.accuracy, s.sparsity, s.flops.speedup, s.total_steps
    );
}

fn run_cli(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Train(c) => {
            let (mut cfg, split) = load_config(&c)?;
            cfg.pipeline = PipelineKind::Dense;
            let dir = out_dir(&c.out);
            let opts = RunOptions {
                checkpoint_dir: Some(dir.join("checkpoints")),
            };
            let r = run(&cfg, &split, &opts)?;
            write_outputs(&dir, &cfg, &r)?;
            summarize(&r);
        }
        Command::Prune { common, checkpoint } => {
            let (cfg, split) = load_config(&common)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dir = out_dir(&common.out);
            let opts = RunOptions {
                checkpoint_dir: Some(dir.join("checkpoints")),
            };
            let r = retrain_from(&cfg, &split, &ckpt, &opts)?;
            write_outputs(&dir, &cfg, &r)?;
            summarize(&r);
        }
        Command::Experiment(c) => {
            let (cfg, split) = load_config(&c)?;
            let dir = out_dir(&c.out);
            let opts = RunOptions {
                checkpoint_dir: Some(dir.join("checkpoints")),
            };
            let r = run(&cfg, &split, &opts)?;
            write_outputs(&dir, &cfg, &r)?;
            summarize(&r);
        }
        Command::Grid { common, workers, format } => {
            let mut grid = parse_grid(&read(&common.config)?)?;
            if let Some(s) = common.seed {
                grid.seeds = vec![s];
            }
            let dir = out_dir(&common.out);
            let outcome = run_grid(&grid, workers, common.config.parent(), Some(&dir.join("runs")))?;
            for r in &outcome.runs {
                if let Err(e) = &r.result {
                    eprintln!("cell {} seed {} failed: {e}", outcome.cells[r.cell].hash, r.seed);
                }
            }
            // Keep the machine-readable rows around for `report`.
            emit_report(&outcome.rows, ReportFormat::Json, &dir)?;
            let path = emit_report(&outcome.rows, format.into(), &dir)?;
            println!("wrote {}", path.display());
            let best = &outcome.rows[outcome.best];
            println!(
                "best cell {} [{}]: mean accuracy {:.4}",
                best.config_hash,
                best.overrides,
                best.accuracy_mean.unwrap_or(f64::NAN)
            );
        }
        Command::ScheduleDump {
            config,
            phase,
            steps_per_epoch,
            discount,
            format,
        } => {
            let cfg = parse_config(&read(&config)?)?;
            if steps_per_epoch == 0 {
                return Err(Error::Input("--steps-per-epoch must be positive".into()));
            }
            let dense_epochs = match (&cfg.bimp, cfg.pipeline) {
                (Some(b), PipelineKind::Bimp) => b.initial_epochs,
                _ => cfg.train.epochs,
            };
            let mut kind = cfg.train.schedule.clone();
            if let Some(lr) = cfg.bimp.as_ref().and_then(|b| b.initial_lr) {
                kind = kind.with_initial_lr(lr);
            }
            let origin = BaseSchedule::new(kind, dense_epochs * steps_per_epoch, cfg.train.warmup)?;
            let sched: Box<dyn LrSchedule> = match phase {
                SchedulePhase::Dense => Box::new(origin),
                SchedulePhase::Retrain => {
                    let rt = cfg.retrain.epochs.ok_or_else(|| Error::Config {
                        path: "retrain.epochs".into(),
                        msg: "needed to dump the retrain schedule".into(),
                    })? * steps_per_epoch;
                    match &cfg.retrain.tuned {
                        Some(k) => Box::new(BaseSchedule::new(k.clone(), rt, cfg.retrain.warmup)?),
                        None => Box::new(
                            translate(&origin, cfg.retrain.scheme(), rt, discount)?
                                .with_warmup(cfg.retrain.warmup)?
                                .with_initial_lr(cfg.retrain.lr.unwrap_or(cfg.train.schedule.initial_lr()))?,
                        ),
                    }
                }
            };
            match format {
                Format::Csv => print!("{}", schedule_csv(sched.as_ref())),
                Format::Plotdata => print!("{}", plot_to_csv(&schedule_plotdata("lr", sched.as_ref()))?),
                Format::Json => {
                    for t in 0..sched.horizon() {
                        println!("{}", serde_json::json!({ "step": t, "lr": sched.lr(t) }));
                    }
                }
            }
        }
        Command::Report { input, out, format } => {
            let file = if input.is_dir() { input.join("results.jsonl") } else { input };
            let rows = read_rows_jsonl(&read(&file)?)?;
            let path = emit_report(&rows, format.into(), &out_dir(&out))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run_cli(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
