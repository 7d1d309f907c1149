use std::path::PathBuf;
use std::process::ExitCode;

use brain3d::trainer::Phase;
use brain3d_cli::{
    cmd_evaluate, cmd_explain, cmd_generate, cmd_synth, cmd_train, CliResult, DirLock, ExperimentConfig, Layout,
    SplitName, DATA_DIR_ENV,
};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "brain3d", version, about = "Synthetic brain MRI report generation pipeline")]
struct Cli {
    /// Experiment configuration (JSON). Defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed, overriding the one in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment directory. Falls back to $BRAIN3D_DATA_DIR, then ./brain3d-run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    #[value(name = "1")]
    One,
    #[value(name = "2a")]
    TwoA,
    #[value(name = "2b")]
    TwoB,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::One => Phase::One,
            PhaseArg::TwoA => Phase::TwoA,
            PhaseArg::TwoB => Phase::TwoB,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the synthetic cohort and its train/val/test split.
    Synth,
    /// Run one training phase (phase 1 includes the text warm-up).
    Train {
        #[arg(long, value_enum)]
        phase: PhaseArg,
    },
    /// Write generated reports for a split as JSON lines.
    Generate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitName>,
    },
    /// Score predictions against the gold reports.
    Evaluate {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitName>,
    },
    /// Supervoxel attribution map for one subject.
    Explain {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        subject: String,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), cli.seed)?;
    let root = cli
        .out
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("brain3d-run"));
    let layout = Layout::new(root);
    let _lock = DirLock::acquire(&layout.root)?;
    match cli.command {
        Command::Synth => {
            let (n, s) = cmd_synth(&cfg, &layout)?;
            println!(
                "wrote {n} subjects to {} (train {}, val {}, test {})",
                layout.cohort().display(),
                s.train.len(),
                s.val.len(),
                s.test.len()
            );
        }
        Command::Train { phase } => {
            let phase = Phase::from(phase);
            let t = cmd_train(&cfg, &layout, phase)?;
            if let Some(last) = t.log.last() {
                let val = if t.n_val > 0 {
                    format!("val loss {:.4}", last.val_loss)
                } else {
                    "no validation subjects".to_string()
                };
                println!(
                    "phase {} on {} subjects: {} epochs, final train loss {:.4}, {val}",
                    phase.as_str(),
                    t.n_train,
                    t.log.len(),
                    last.train_loss
                );
            }
            println!("provenance: {}", t.provenance.join(" -> "));
            println!("checkpoint: {}", layout.checkpoint(phase).display());
        }
        Command::Generate { checkpoint, split } => {
            let split = split.unwrap_or(cfg.eval.split);
            let recs = cmd_generate(&cfg, &layout, checkpoint.as_deref(), split)?;
            println!("wrote {} reports to {}", recs.len(), layout.predictions(split).display());
        }
        Command::Evaluate { predictions, split } => {
            let split = split.unwrap_or(cfg.eval.split);
            let report = cmd_evaluate(&cfg, &layout, predictions.as_deref(), split)?;
            for (name, m) in &report.metrics {
                println!("{name:<28} {:.4}  [{:.4}, {:.4}]", m.mean, m.low, m.high);
            }
            println!("report: {}", layout.evaluation(split).display());
        }
        Command::Explain { checkpoint, subject } => {
            let s = cmd_explain(&cfg, &layout, checkpoint.as_deref(), &subject)?;
            println!(
                "{}: {} supervoxels, surrogate R^2 {:.3}; wrote {}",
                s.subject_id,
                s.k_sv,
                s.r2,
                layout.explain(&subject, "bvol").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
