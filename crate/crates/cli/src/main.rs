use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use daptain::audio::Split;
use daptain::{Error, Result};
use daptain_cli::{
    cmd_bound, cmd_enhance, cmd_evaluate, cmd_synth, cmd_train, exit_code, EnhanceInput, Overrides, RunConfig,
    EXIT_CONFIG,
};

#[derive(Parser)]
#[command(name = "daptain", version, about = "Domain-adapted autoencoder speech enhancement")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shrinks corpus sizes and training epochs, in (0, 1].
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Maximum worker threads for per-clip work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// baseline, iw or minimax.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the synthetic two-domain corpus and its manifests.
    Synth,
    /// Trains a model from the configured manifests.
    Train {
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Enhances a WAV file or the mixtures of a manifest.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        input: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Restrict a manifest to train, validation or test.
        #[arg(long)]
        split: Option<String>,
    },
    /// Scores enhanced outputs against clean speech.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// `name=dir` pairs; each dir holds `<id>.wav` files.
        #[arg(long = "enhanced", value_name = "NAME=DIR")]
        enhanced: Vec<String>,
    },
    /// Reports the importance-weighting generalization bound between two corpora.
    Bound {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "validation" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!("unknown split {other:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = cli.common;
    let overrides = Overrides {
        seed: c.seed,
        scale: c.scale,
        threads: c.threads,
        method: c.method,
        out: c.out,
    };
    let mut cfg = RunConfig::resolve(c.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth => {
            let s = cmd_synth(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&s).expect("serializable"));
        }
        Command::Train { source, target } => {
            if source.is_some() {
                cfg.source_manifest = source;
            }
            if target.is_some() {
                cfg.target_manifest = target;
            }
            let out = cmd_train(&cfg)?;
            let last = out.log.last().expect("at least one epoch");
            println!(
                "epochs {} final validation loss {:.6} variance gap {:.3}",
                out.log.len(),
                last.val_loss,
                last.variance_gap
            );
        }
        Command::Enhance {
            checkpoint,
            input,
            manifest,
            split,
        } => {
            let input = match (input, manifest) {
                (Some(p), _) => EnhanceInput::Wav(p),
                (None, Some(path)) => EnhanceInput::Manifest {
                    path,
                    split: split.as_deref().map(parse_split).transpose()?,
                },
                (None, None) => return Err(Error::Config("give --input or --manifest".into())),
            };
            let written = cmd_enhance(&cfg, &checkpoint, &input)?;
            println!("wrote {} files to {}", written.len(), cfg.output_dir.display());
        }
        Command::Evaluate { manifest, enhanced } => {
            let pairs = enhanced
                .iter()
                .map(|s| {
                    s.split_once('=')
                        .map(|(n, d)| (n.to_string(), PathBuf::from(d)))
                        .ok_or_else(|| Error::Config(format!("--enhanced expects NAME=DIR, got {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let s = cmd_evaluate(&cfg, &manifest, &pairs)?;
            println!("{}", serde_json::to_string_pretty(&s).expect("serializable"));
        }
        Command::Bound { source, target, delta } => {
            let r = cmd_bound(&cfg, &source, &target, delta)?;
            println!("{}", serde_json::to_string_pretty(&r).expect("serializable"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DAPTAIN_LOG", "info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
