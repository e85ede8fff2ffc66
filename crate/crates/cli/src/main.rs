use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use esper_core::config::ExperimentConfig;
use esper_core::run::{Experiment, FinetuneInit};
use esper_core::style::Regime;
use esper_core::Error;

#[derive(Parser)]
#[command(
    name = "esper",
    version,
    about = "Train a prefix adapter that steers a frozen language model toward input features"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config. Without it the run directory's stored config is used.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Run directory; defaults to `run.output_dir` from the config.
    #[arg(long)]
    run_dir: Option<PathBuf>,

    /// `section.key=value` overrides applied on top of the config.
    #[arg(value_name = "OVERRIDE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct Target {
    #[arg(long, default_value = "test")]
    split: String,

    /// Adapter checkpoint; defaults to the best RL checkpoint of the run.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FtRegime {
    Mlp,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum FtInit {
    Rl,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Write the resolved config (defaults plus overrides) as TOML.
    Config {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate scenes, style corpus and vocabulary.
    GenData(Common),
    /// Compute the per-input feature cache.
    CacheFeatures(Common),
    /// Train the language model on the style corpus.
    PretrainStyle(Common),
    /// Reinforcement-learning training of the adapter.
    TrainRl {
        #[command(flatten)]
        common: Common,
        /// Start from this adapter checkpoint instead of a fresh adapter.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Supervised finetuning on paired captions.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "mlp")]
        regime: FtRegime,
        #[arg(long, value_enum, default_value = "rl")]
        init: FtInit,
    },
    /// Greedy outputs for a split as `id<TAB>text`.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
    },
    /// Cosine, oracle ratio, BLEU-4 and CIDEr-D on a split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
    },
    /// Likelihood ranking of gold captions among distractors.
    Rank {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
    },
    /// SVG training curves from the metrics log.
    Plot(Common),
    /// Every stage from data generation to test-set evaluation.
    Pipeline(Common),
}

fn experiment(c: &Common) -> Result<Experiment> {
    match &c.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path, &c.overrides)?;
            let dir = c
                .run_dir
                .clone()
                .unwrap_or_else(|| cfg.run.output_dir.clone());
            Ok(Experiment::create(cfg, dir)?)
        }
        None => {
            let dir = c
                .run_dir
                .clone()
                .context("pass --config or --run-dir pointing at an existing run")?;
            Ok(Experiment::open(dir, &c.overrides)?)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Config { common, out } => {
            let cfg = match &common.config {
                Some(p) => ExperimentConfig::load(p, &common.overrides)?,
                None => ExperimentConfig::from_toml_str("", &common.overrides)?,
            };
            match out {
                Some(p) => cfg.save(&p)?,
                None => print!("{}", cfg.to_toml_string()),
            }
        }
        Command::GenData(c) => {
            let e = experiment(&c)?;
            e.gen_data()?;
            println!("wrote {}", e.path("data").display());
        }
        Command::CacheFeatures(c) => {
            let e = experiment(&c)?;
            e.cache_features()?;
            println!("wrote {}", e.path("data/features.espf").display());
        }
        Command::PretrainStyle(c) => {
            let fp = experiment(&c)?.pretrain_style()?;
            println!("backbone fingerprint {fp}");
        }
        Command::TrainRl { common, init } => {
            let e = experiment(&common)?;
            let out = e.train_rl(init.as_deref())?;
            println!(
                "epochs {} batches {} val cosine {:?} -> best {:?}{}",
                out.epochs_run,
                out.batches_run,
                out.initial_val_cosine,
                out.best_val_cosine,
                if out.stopped_early {
                    " (early stop)"
                } else {
                    ""
                }
            );
        }
        Command::Finetune {
            common,
            regime,
            init,
        } => {
            let e = experiment(&common)?;
            let regime = match regime {
                FtRegime::Mlp => Regime::AdapterOnly,
                FtRegime::Full => Regime::Full,
            };
            let init = match init {
                FtInit::Rl => FinetuneInit::Rl,
                FtInit::Random => FinetuneInit::Random,
            };
            let out = e.finetune(regime, init)?;
            println!("val nll by epoch {:?}", out.val_nll);
            println!("wrote {}", e.finetune_dir(regime, init).display());
        }
        Command::Generate { common, target } => {
            let path =
                experiment(&common)?.generate(&target.split, target.checkpoint.as_deref())?;
            println!("wrote {}", path.display());
        }
        Command::Evaluate { common, target } => {
            let e = experiment(&common)?;
            let r = e.evaluate(&target.split, target.checkpoint.as_deref())?;
            println!(
                "split {} n {} checkpoint {}",
                r.split, r.count, r.checkpoint_hash
            );
            println!("mean cosine {:.4}", r.mean_cosine);
            if let Some(v) = r.oracle_ratio {
                println!("oracle ratio {v:.4}");
            }
            if let Some(v) = r.bleu4 {
                println!("bleu4 {v:.4}");
            }
            if let Some(v) = r.cider {
                println!("cider {v:.4}");
            }
            println!("wrote {}", e.report_path(&target.split).display());
        }
        Command::Rank { common, target } => {
            let r = experiment(&common)?.rank(&target.split, target.checkpoint.as_deref())?;
            println!(
                "split {} n {} mrr {:.4} r@1 {:.4}",
                r.split, r.count, r.mrr, r.recall_at_1
            );
        }
        Command::Plot(c) => {
            for p in experiment(&c)?.plot()? {
                println!("wrote {}", p.display());
            }
        }
        Command::Pipeline(c) => {
            let e = experiment(&c)?;
            log::info!("generating data");
            e.gen_data()?;
            e.cache_features()?;
            log::info!("pretraining style backbone");
            e.pretrain_style()?;
            log::info!("reinforcement learning");
            e.train_rl(None)?;
            e.plot()?;
            e.generate("test", None)?;
            let r = e.evaluate("test", None)?;
            println!("test mean cosine {:.4}", r.mean_cosine);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<Error>() {
                Some(Error::Config(diags)) => {
                    eprintln!("invalid config:");
                    for d in diags {
                        eprintln!("  {d}");
                    }
                }
                _ => eprintln!("error: {e:#}"),
            }
            ExitCode::from(2)
        }
    }
}
