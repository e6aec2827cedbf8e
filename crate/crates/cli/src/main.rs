//! `sssd-ecg`: reproducible experiment runner.
//!
//! Every subcommand resolves its configuration (profile, `--config` file,
//! flags), validates it, writes `config.resolved.json` into `--out`, and only
//! then starts work. Inputs are opened read-only.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, ModelKind};

#[derive(Parser, Debug)]
#[command(name = "sssd-ecg", version, about = "Label-conditional 12-lead ECG synthesis experiments")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalArgs {
    /// JSON configuration laid over the built-in profile.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for data-parallel stages (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Generator family.
    #[arg(long, global = true, value_enum)]
    model: Option<ModelKind>,
    /// Start from the reduced single-machine profile.
    #[arg(long, global = true)]
    desk_scale: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a deterministic toy corpus.
    MakeToy,
    /// Train the selected generator; writes a checkpoint and loss curve.
    Train {
        /// Dataset directory (default: the toy corpus).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sample records for one label set.
    Generate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated statement codes.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
        /// Number of records.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Generate one record per real record with the same labels and fold.
    SynthCopy {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Real/synthetic classifier protocol; writes metrics.json.
    Evaluate {
        /// Real dataset (default: the toy corpus).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<PathBuf>,
        /// Shuffle synthetic labels across records (negative control).
        #[arg(long)]
        shuffle_labels: bool,
    },
    /// Median and quartile beat shapes per dataset and lead.
    Beatplot {
        /// `NAME=DIR`, repeatable.
        #[arg(long = "dataset", value_parser = parse_named)]
        datasets: Vec<(String, PathBuf)>,
        /// Also include the configured corpus as `real`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Samples along `α from + (1 - α) to` with a shared noise trajectory.
    Interpolate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        from: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        to: Option<Vec<String>>,
    },
    /// Check the limb-lead identities on every record of a dataset.
    Leadcheck {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok((name.to_string(), PathBuf::from(dir))),
        _ => Err(format!("expected NAME=DIR, got {s:?}")),
    }
}

/// Flags override the file; subcommand flags override their config keys.
fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let g = &cli.global;
    let mut cfg = ExperimentConfig::resolve(g.desk_scale, g.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(m) = g.model {
        cfg.model_kind = m;
    }
    match &cli.command {
        Command::MakeToy => {}
        Command::Train { data } | Command::SynthCopy { data, .. } | Command::Leadcheck { data, .. } => {
            if let Some(d) = data {
                cfg.data.corpus = Some(d.clone());
            }
        }
        Command::Evaluate {
            data,
            synthetic,
            shuffle_labels,
        } => {
            if let Some(d) = data {
                cfg.data.corpus = Some(d.clone());
            }
            if let Some(s) = synthetic {
                cfg.evaluate.synthetic = Some(s.clone());
            }
            cfg.evaluate.shuffle_synthetic_labels |= shuffle_labels;
        }
        Command::Generate { labels, n, .. } => {
            if let Some(l) = labels {
                cfg.generate.labels = l.clone();
            }
            if let Some(n) = n {
                cfg.generate.n = *n;
            }
        }
        Command::Beatplot { datasets, data } => {
            if let Some(d) = data {
                cfg.data.corpus = Some(d.clone());
            }
            for (name, dir) in datasets {
                cfg.analysis.datasets.insert(name.clone(), dir.clone());
            }
        }
        Command::Interpolate { from, to, .. } => {
            if let Some(f) = from {
                cfg.analysis.from = f.clone();
            }
            if let Some(t) = to {
                cfg.analysis.to = t.clone();
            }
        }
    }
    if let Command::Generate { checkpoint, .. }
    | Command::SynthCopy { checkpoint, .. }
    | Command::Interpolate { checkpoint, .. } = &cli.command
    {
        if let Some(c) = checkpoint {
            cfg.generate.checkpoint = Some(c.clone());
        }
    }
    let paths = [&mut cfg.data.corpus, &mut cfg.evaluate.synthetic, &mut cfg.generate.checkpoint];
    for p in paths.into_iter().flatten() {
        commands::absolutize(p);
    }
    cfg.analysis.datasets.values_mut().for_each(commands::absolutize);
    commands::adopt_checkpoint(&mut cfg, g.model.is_some())?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    commands::guard_inputs(&cfg)?;
    cfg.write_resolved(&cfg.out)?;
    let task = || match &cli.command {
        Command::MakeToy => commands::make_toy(&cfg),
        Command::Train { .. } => commands::train(&cfg),
        Command::Generate { .. } => commands::generate(&cfg),
        Command::SynthCopy { .. } => commands::synth_copy(&cfg),
        Command::Evaluate { .. } => commands::evaluate(&cfg),
        Command::Beatplot { .. } => commands::beatplot(&cfg),
        Command::Interpolate { .. } => commands::interpolate(&cfg),
        Command::Leadcheck { tolerance, .. } => commands::leadcheck(&cfg, *tolerance),
    };
    if cfg.workers > 0 {
        sssd_nn::par::with_threads(cfg.workers, task)
    } else {
        task()
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors and 0 for --help.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
