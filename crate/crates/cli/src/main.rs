mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{CliError, Exit};
use config::{RunConfig, Value};

#[derive(Parser, Debug)]
#[command(name = "idvo", version, about = "Direct monocular visual odometry with an inertia prior")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override any config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset with ground-truth poses and depths.
    Synth {
        /// Per-frame translation noise.
        #[arg(long)]
        jitter: Option<f64>,
        #[arg(long)]
        frames: Option<usize>,
        /// Frame size, WxH.
        #[arg(long)]
        resolution: Option<String>,
    },
    /// Optimize every snippet of a dataset and chain the trajectory.
    Optimize {
        /// Dataset directory.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        snippet_len: Option<usize>,
        #[arg(long, value_enum)]
        ablate: Vec<Ablation>,
        /// Resize frames to WxH on load.
        #[arg(long)]
        resize: Option<String>,
    },
    /// Evaluate poses, depths or smoothness.
    Eval {
        #[arg(value_enum)]
        mode: EvalMode,
        /// Estimated poses file, or depth PFM file or directory.
        #[arg(long)]
        est: PathBuf,
        /// Ground-truth poses file, or depth PFM file or directory.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        /// Scale analytic gradients by 1.01 to exercise the failure path.
        #[arg(long)]
        corrupt: bool,
    },
    /// Write the hard edge mask for a speed and steering rate as a PNG.
    MaskPreview {
        /// Speed in scene units per frame.
        #[arg(long)]
        speed: f64,
        /// Steering rate in radians per frame.
        #[arg(long, default_value_t = 0.0)]
        yaw: f64,
        #[arg(long)]
        resolution: Option<String>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    NoInertia,
    NoDhem,
    NoRcnn,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Ate,
    Depth,
    Smoothness,
}

fn resolve(common: &Common, extra: &[(&str, String)]) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path).map_err(|e| CliError::usage(e.0))?;
    }
    cfg.apply_env(std::env::vars()).map_err(|e| CliError::usage(e.0))?;
    let mut flags: Vec<(String, String)> = Vec::new();
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        flags.push((k.trim().into(), v.trim().into()));
    }
    if let Some(out) = &common.out {
        flags.push(("out".into(), out.display().to_string()));
    }
    if let Some(seed) = common.seed {
        flags.push(("seed".into(), seed.render()));
    }
    if let Some(t) = common.threads {
        flags.push(("threads".into(), t.render()));
    }
    flags.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    cfg.apply_pairs(&flags, "command line").map_err(|e| CliError::usage(e.0))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut extra: Vec<(&str, String)> = Vec::new();
    match &cli.command {
        Command::Synth { jitter, frames, resolution } => {
            if let Some(j) = jitter {
                extra.push(("jitter_translation", j.render()));
            }
            if let Some(f) = frames {
                extra.push(("synth_frames", f.render()));
            }
            if let Some(r) = resolution {
                extra.push(("resolution", r.clone()));
            }
        }
        Command::Optimize { dataset, snippet_len, ablate, resize } => {
            if let Some(d) = dataset {
                extra.push(("dataset", d.display().to_string()));
            }
            if let Some(n) = snippet_len {
                extra.push(("snippet_len", n.render()));
            }
            if let Some(r) = resize {
                extra.push(("resolution", r.clone()));
            }
            for a in ablate {
                match a {
                    Ablation::NoInertia => extra.push(("w_inertia", "0".into())),
                    Ablation::NoDhem => extra.push(("dhem", "false".into())),
                    Ablation::NoRcnn => {
                        return Err(CliError::usage(
                            "ablation no-rcnn does not apply: there is no recurrent pose network in the direct optimizer",
                        ))
                    }
                }
            }
        }
        Command::MaskPreview { resolution: Some(r), .. } => extra.push(("resolution", r.clone())),
        _ => {}
    }
    let cfg = resolve(&cli.common, &extra)?;
    idvo_core::par::with_threads(cfg.threads, || match cli.command {
        Command::Synth { .. } => commands::synth(&cfg),
        Command::Optimize { .. } => commands::optimize(&cfg),
        Command::Eval { mode, est, gt } => commands::eval(&cfg, mode, &est, gt.as_deref(), cli.common.out.is_some()),
        Command::Gradcheck { corrupt } => commands::gradcheck(&cfg, corrupt, cli.common.out.is_some()),
        Command::MaskPreview { speed, yaw, .. } => commands::mask_preview(&cfg, speed, yaw),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Exit::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
