use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use dham_cli::commands;
use dham_cli::config::{Overrides, RunConfig};
use dham_cli::data::SyntheticSpec;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dham",
    about = "Train and analyze networks with annealed winner-takes-all activations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    outdir: Option<PathBuf>,
    /// Activation mode override: baseline, anneal, or wta.
    #[arg(long)]
    mode: Option<String>,
    /// Fixed group size ℓ (switches grouping to fixed_l).
    #[arg(long)]
    ell: Option<usize>,
    /// Fixed group count c (switches grouping to fixed_c).
    #[arg(long)]
    c: Option<usize>,
    #[arg(long = "t-init")]
    t_init: Option<f64>,
    #[arg(long = "t-final")]
    t_final: Option<f64>,
    /// Use only the first N training examples.
    #[arg(long)]
    limit: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::parse_file(path)?,
            None => RunConfig::default(),
        };
        Ok(base.with_overrides(&Overrides {
            seed: self.seed,
            outdir: self.outdir.clone(),
            mode: self.mode.clone(),
            ell: self.ell,
            c: self.c,
            t_init: self.t_init,
            t_final: self.t_final,
            limit: self.limit,
        }))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint + training report.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Static multiplication counts over the ℓ grid (no checkpoint needed).
    Count {
        #[command(flatten)]
        common: Common,
    },
    /// Win-proportion statistics per feature map.
    Wins {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Restrict statistics to one class label.
        #[arg(long)]
        class: Option<u16>,
    },
    /// Accuracy under Gaussian/shot/impulse noise.
    Noise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Few-shot nearest-class-mean transfer evaluation.
    Fewshot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sparse associative memory demos.
    Sam {
        #[command(subcommand)]
        sub: SamCommand,
    },
    /// Generate a synthetic dataset in the CIFAR-10 binary layout.
    GenData {
        #[arg(long)]
        outdir: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 500)]
        train_per_class: usize,
        #[arg(long, default_value_t = 100)]
        val_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 55.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 48.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.45)]
        class_sep: f64,
    },
}

#[derive(Subcommand)]
enum SamCommand {
    /// Store the worked example and retrieve it from full and partial probes.
    Demo {
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo capacity sweep over stored-pair counts.
    Capacity {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 4)]
        cluster_size: usize,
        #[arg(long, default_value_t = 4)]
        out_clusters: usize,
        #[arg(long, default_value_t = 4)]
        out_cluster_size: usize,
        /// Comma-separated stored-pair counts.
        #[arg(long, default_value = "1,2,4,8,16,32,64,128")]
        counts: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { common } => {
            commands::cmd_train(&common.resolve()?)?;
        }
        Command::Eval { common, checkpoint } => {
            commands::cmd_eval(&common.resolve()?, &checkpoint)?;
        }
        Command::Count { common } => {
            commands::cmd_count(&common.resolve()?)?;
        }
        Command::Wins {
            common,
            checkpoint,
            class,
        } => {
            commands::cmd_wins(&common.resolve()?, &checkpoint, class)?;
        }
        Command::Noise { common, checkpoint } => {
            commands::cmd_noise(&common.resolve()?, &checkpoint)?;
        }
        Command::Fewshot { common, checkpoint } => {
            commands::cmd_fewshot(&common.resolve()?, &checkpoint)?;
        }
        Command::Sam { sub } => match sub {
            SamCommand::Demo { common } => commands::cmd_sam_demo(&common.resolve()?)?,
            SamCommand::Capacity {
                common,
                clusters,
                cluster_size,
                out_clusters,
                out_cluster_size,
                counts,
                trials,
            } => {
                let counts: Vec<usize> = counts
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<std::result::Result<_, _>>()?;
                commands::cmd_sam_capacity(
                    &common.resolve()?,
                    clusters,
                    cluster_size,
                    out_clusters,
                    out_cluster_size,
                    &counts,
                    trials,
                )?;
            }
        },
        Command::GenData {
            outdir,
            classes,
            train_per_class,
            val_per_class,
            seed,
            amplitude,
            noise,
            class_sep,
        } => {
            commands::cmd_gen_data(
                &SyntheticSpec {
                    classes,
                    train_per_class,
                    val_per_class,
                    seed,
                    amplitude,
                    noise,
                    class_sep,
                },
                &outdir,
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
