use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use voxfuse::storage::Split;
use voxfuse_cli::commands::{self, DetSource, TrackRuns, TrackSource};
use voxfuse_cli::config::{self, RunConfig};
use voxfuse_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "voxfuse", version, about = "Voxel-based lidar/camera/radar fusion detector")]
struct Cli {
    /// TOML run config; missing keys take their defaults.
    #[arg(long, global = true, env = "VOXFUSE_CONFIG")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum YawLoss {
    /// Regress the raw yaw residual.
    Simple,
    /// Sine of the residual plus a direction bin.
    SinBin,
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory written by `generate`.
    #[arg(long, env = "VOXFUSE_DATA")]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset of scenes into a directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Restrict both splits to one weather mode (clear, rain, night).
        #[arg(long)]
        weather: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Train a detector and write checkpoints, curves and a report.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        run: PathBuf,
        /// Sensors fed to the network, e.g. `lidar+radar`.
        #[arg(long)]
        modality: Option<String>,
        #[arg(long, value_enum)]
        yaw_loss: Option<YawLoss>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Score detections on a split.
    Eval {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, required_unless_present_any = ["oracle", "empty"])]
        run: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Use ground truth as detections.
        #[arg(long, conflicts_with = "empty")]
        oracle: bool,
        /// Use no detections.
        #[arg(long)]
        empty: bool,
        /// Output directory; defaults to `<run>/eval_<split>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score every configured variant; writes table.csv.
    Compare {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated variant specs, e.g. `lidar,lidar+radar:no-aug`.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Track detections over time and score the tracked boxes.
    Track {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        lidar_run: Option<PathBuf>,
        #[arg(long)]
        radar_run: Option<PathBuf>,
        #[arg(long)]
        early_run: Option<PathBuf>,
        #[arg(long, conflicts_with = "empty")]
        oracle: bool,
        #[arg(long)]
        empty: bool,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut overrides = cli.overrides;
    let extra = |o: &mut Vec<String>, k: &str, v: String| o.push(format!("{k}={v}"));
    match &cli.cmd {
        Cmd::Generate { weather: Some(w), .. } => {
            let mode: voxfuse::scenegen::WeatherMode = w.parse()?;
            extra(&mut overrides, "dataset.train_weather", format!("[\"{}\"]", mode.name()));
            extra(&mut overrides, "dataset.val_weather", format!("[\"{}\"]", mode.name()));
        }
        Cmd::Train { modality, yaw_loss, epochs, seed, .. } => {
            if let Some(m) = modality {
                let m: voxfuse::trainer::Modality = m.parse()?;
                let t = format!("{{ lidar = {}, rgb = {}, radar = {}, depth = {} }}", m.lidar, m.rgb, m.radar, m.depth);
                extra(&mut overrides, "train.modality", t);
            }
            if let Some(y) = yaw_loss {
                let v = match y {
                    YawLoss::Simple => "\"direct\"",
                    YawLoss::SinBin => "\"sin_bin\"",
                };
                extra(&mut overrides, "train.yaw_mode", v.into());
            }
            if let Some(e) = epochs {
                extra(&mut overrides, "train.epochs", e.to_string());
            }
            if let Some(s) = seed {
                extra(&mut overrides, "train.seed", s.to_string());
            }
        }
        Cmd::Compare { variants, seeds, .. } => {
            if !variants.is_empty() {
                let quoted: Vec<String> = variants.iter().map(|v| format!("{v:?}")).collect();
                extra(&mut overrides, "compare.variants", format!("[{}]", quoted.join(",")));
            }
            if !seeds.is_empty() {
                let s: Vec<String> = seeds.iter().map(u64::to_string).collect();
                extra(&mut overrides, "compare.seeds", format!("[{}]", s.join(",")));
            }
        }
        _ => {}
    }
    let cfg: RunConfig = config::load(cli.config.as_deref(), &overrides)?;
    match cli.cmd {
        Cmd::Generate { out, force, .. } => {
            let m = commands::cmd_generate(&cfg, &out, force)?;
            println!("wrote {} train / {} val scenes to {}", m.train.scenes, m.val.scenes, out.display());
        }
        Cmd::Train { data, run, force, .. } => {
            let r = commands::cmd_train(&cfg, &data.data, &run, force)?;
            let best = r.curves.iter().find(|c| c.epoch == r.best_epoch);
            println!(
                "trained {} epochs on {} frames; best epoch {} (val AP {})",
                r.epochs_run,
                r.train_frames,
                r.best_epoch,
                best.map(|c| c.val_ap).filter(|v| v.is_finite()).map_or("n/a".into(), |v| format!("{v:.4}"))
            );
        }
        Cmd::Eval { data, run, split, oracle, empty, out } => {
            let source = if oracle {
                DetSource::Oracle
            } else if empty {
                DetSource::Empty
            } else {
                DetSource::Model
            };
            let split: Split = split.into();
            let out = match (out, &run) {
                (Some(o), _) => o,
                (None, Some(r)) => r.join(format!("eval_{}", split.name())),
                (None, None) => return Err(CliError::Config("--out is required with --oracle or --empty".into())),
            };
            let ev = commands::cmd_eval(run.as_deref(), &data.data, split, source, &out)?;
            println!("mean AP {:.4}; metrics in {}", ev.mean_ap(), out.display());
        }
        Cmd::Compare { data, out, .. } => {
            let rows = commands::cmd_compare(&cfg, &data.data, &out)?;
            println!("{:<40} {:>8} {:>8} {:>8} {:>8}", "variant", "clear", "rain", "night", "all");
            for r in rows {
                println!("{:<40} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", r.name, r.cells[0], r.cells[1], r.cells[2], r.cells[3]);
            }
        }
        Cmd::Track { data, lidar_run, radar_run, early_run, oracle, empty, split, out } => {
            let source = if oracle {
                TrackSource::Oracle
            } else if empty {
                TrackSource::Empty
            } else {
                TrackSource::Models
            };
            let runs = TrackRuns { lidar: lidar_run, radar: radar_run, early: early_run };
            let rows = commands::cmd_track(&cfg, &data.data, &runs, split.into(), source, &out)?;
            for r in rows {
                println!("{:<28} AP {:.4}", r.name, r.cells[3]);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
