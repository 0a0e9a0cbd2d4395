use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use codano_core::{CodanoError, ErrorClass};

mod commands;
mod config;

use config::{split_dotted, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "codano",
    version,
    about = "Codomain attention neural operators for multiphysics PDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Shared {
    /// TOML configuration file; `--section.key value` flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Force serial execution.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a Kolmogorov or Rayleigh-Bénard dataset.
    Simulate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        system: Option<String>,
        #[arg(long)]
        re: Option<f64>,
        /// Grid resolution along x.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        snapshots: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        burn_in: Option<f64>,
        #[arg(long)]
        preset: Option<String>,
        /// Keep this fraction of points as an irregular point cloud.
        #[arg(long)]
        irregular: Option<f64>,
    },
    /// Masked-reconstruction pretraining.
    Pretrain {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Supervised next-step fine-tuning of a pretrained checkpoint.
    Finetune {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        few_shot: Option<usize>,
        #[arg(long)]
        freeze_encoder: bool,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Held-out relative L² errors of a checkpoint.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Evaluate on a grid with this many points along x.
        #[arg(long)]
        query_resolution: Option<usize>,
        #[arg(long)]
        head: Option<String>,
        #[arg(long)]
        save_predictions: bool,
    },
    /// Radially binned energy spectrum of the velocity fields in a dataset.
    Spectrum {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Use one snapshot instead of the average over all.
        #[arg(long)]
        snapshot: Option<usize>,
    },
    /// Finite-difference check of the gradients of a tiny model.
    Gradcheck {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        corrupt: Option<String>,
    },
}

fn push<T: ToString>(ov: &mut Vec<(String, String)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        ov.push((key.to_string(), v.to_string()));
    }
}

fn path(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| format!("'{}'", p.display()))
}

fn quoted(s: Option<String>) -> Option<String> {
    s.map(|s| format!("'{s}'"))
}

fn run(dotted: Vec<(String, String)>, command: Command) -> anyhow::Result<()> {
    let mut ov = Vec::new();
    let mut base = RunConfig::default();
    let (shared, kind) = match command {
        Command::Simulate {
            shared,
            system,
            re,
            n,
            snapshots,
            dt,
            burn_in,
            preset,
            irregular,
        } => {
            push(&mut ov, "sim.system", quoted(system));
            push(&mut ov, "sim.re", re);
            push(&mut ov, "sim.resolution", n);
            push(&mut ov, "sim.snapshots", snapshots);
            push(&mut ov, "sim.dt", dt);
            push(&mut ov, "sim.burn_in", burn_in);
            push(&mut ov, "sim.preset", quoted(preset));
            push(&mut ov, "io.irregular_keep", irregular);
            (shared, commands::Kind::Simulate)
        }
        Command::Pretrain {
            shared,
            dataset,
            resume,
            epochs,
            checkpoint_every,
        } => {
            push(&mut ov, "io.dataset", path(dataset));
            push(&mut ov, "io.checkpoint", path(resume));
            push(&mut ov, "train.epochs", epochs);
            push(&mut ov, "io.checkpoint_every", checkpoint_every);
            (shared, commands::Kind::Pretrain)
        }
        Command::Finetune {
            shared,
            checkpoint,
            dataset,
            few_shot,
            freeze_encoder,
            epochs,
        } => {
            push(&mut ov, "io.checkpoint", path(checkpoint));
            push(&mut ov, "io.dataset", path(dataset));
            push(&mut ov, "train.few_shot", few_shot);
            push(&mut ov, "train.freeze_encoder", freeze_encoder.then_some(true));
            push(&mut ov, "train.epochs", epochs);
            (shared, commands::Kind::Finetune)
        }
        Command::Eval {
            shared,
            checkpoint,
            dataset,
            query_resolution,
            head,
            save_predictions,
        } => {
            push(&mut ov, "io.checkpoint", path(checkpoint));
            push(&mut ov, "io.dataset", path(dataset));
            push(&mut ov, "io.query_resolution", query_resolution);
            push(&mut ov, "io.head", quoted(head));
            push(&mut ov, "io.save_predictions", save_predictions.then_some(true));
            (shared, commands::Kind::Eval)
        }
        Command::Spectrum {
            shared,
            dataset,
            snapshot,
        } => {
            push(&mut ov, "io.dataset", path(dataset));
            push(&mut ov, "io.snapshot", snapshot);
            (shared, commands::Kind::Spectrum)
        }
        Command::Gradcheck { shared, tol, corrupt } => {
            base.model = config::gradcheck_model();
            push(&mut ov, "io.tol", tol);
            push(&mut ov, "io.corrupt", quoted(corrupt));
            (shared, commands::Kind::Gradcheck)
        }
    };
    if shared.deterministic {
        ov.push(("deterministic".into(), "true".into()));
    }
    ov.extend(dotted);
    let cfg = RunConfig::resolve(base, shared.config.as_deref(), &ov, shared.seed)?;
    cfg.echo(&shared.out)?;
    commands::dispatch(kind, &cfg, &shared.out)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CodanoError>().map(CodanoError::class) {
        Some(ErrorClass::Usage) => 2,
        Some(ErrorClass::Data) => 3,
        Some(ErrorClass::Numeric) => 4,
        Some(ErrorClass::Io) => 5,
        None if err.downcast_ref::<std::io::Error>().is_some() => 5,
        None => 4,
    }
}

fn main() -> ExitCode {
    let (args, dotted) = match split_dotted(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(dotted, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
