use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use uncmap_core::harness::{self, ExperimentConfig, Split, VerifyOptions};
use uncmap_core::noise_sim::{confusion_with_flip, Layout};

#[derive(Parser, Debug)]
#[command(name = "uncmap", version, about = "Uncertainty-aware map estimation and trajectory prediction experiments")]
struct Cli {
    #[command(flatten)]
    flags: ConfigFlags,
    #[command(subcommand)]
    command: Command,
}

/// Experiment settings. Values in `--config` take precedence over flags.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    master_seed: Option<u64>,
    /// Comma-separated layouts: straight, curve, intersection, parking.
    #[arg(long, global = true, value_delimiter = ',')]
    layouts: Option<Vec<Layout>>,
    #[arg(long, global = true)]
    train_scenes: Option<usize>,
    #[arg(long, global = true)]
    val_scenes: Option<usize>,
    #[arg(long, global = true)]
    test_scenes: Option<usize>,
    /// Laplace scale of positional jitter, metres.
    #[arg(long, global = true)]
    pos_scale_b: Option<f64>,
    /// Class flip probability, spread evenly over the other classes.
    #[arg(long, global = true)]
    confusion_eps: Option<f64>,
    #[arg(long, global = true)]
    map_epochs: Option<usize>,
    #[arg(long, global = true)]
    map_lr: Option<f64>,
    #[arg(long, global = true)]
    pred_epochs: Option<usize>,
    #[arg(long, global = true)]
    pred_lr: Option<f64>,
    #[arg(long, global = true, action = ArgAction::Set)]
    unc_pos: Option<bool>,
    #[arg(long, global = true, action = ArgAction::Set)]
    unc_sem: Option<bool>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train/val/test scenes with noisy observations and a manifest.
    GenData,
    /// Train the dual-head map estimator.
    TrainMap,
    /// Write estimated uncertain maps of one split as JSON.
    Estimate {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Train the predictor variant picked by --unc-pos/--unc-sem.
    TrainPred,
    /// Score the trained predictor on the test split.
    Eval,
    /// Train and score all four variants, writing ablation.csv.
    Ablate,
    /// Render one scene as SVG.
    Render {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Run the self-check suite; exits nonzero on any failure.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negate the closed-form KL (the run must then fail).
        #[arg(long)]
        inject_kl_sign_flip: bool,
    },
    /// Print the effective config as TOML.
    ShowConfig,
}

fn apply_flags(cfg: &mut ExperimentConfig, f: &ConfigFlags) {
    if let Some(v) = f.master_seed {
        cfg.master_seed = v;
    }
    if let Some(v) = &f.layouts {
        cfg.layouts = v.clone();
    }
    if let Some(v) = f.train_scenes {
        cfg.train_scenes = v;
    }
    if let Some(v) = f.val_scenes {
        cfg.val_scenes = v;
    }
    if let Some(v) = f.test_scenes {
        cfg.test_scenes = v;
    }
    if let Some(v) = f.pos_scale_b {
        cfg.noise.pos_scale_b = v;
    }
    if let Some(v) = f.confusion_eps {
        cfg.noise.confusion = confusion_with_flip(v);
    }
    if let Some(v) = f.map_epochs {
        cfg.map_train.epochs = v;
    }
    if let Some(v) = f.map_lr {
        cfg.map_train.learning_rate = v;
    }
    if let Some(v) = f.pred_epochs {
        cfg.predictor_train.epochs = v;
    }
    if let Some(v) = f.pred_lr {
        cfg.predictor_train.learning_rate = v;
    }
    if let Some(v) = f.unc_pos {
        cfg.unc_pos = v;
    }
    if let Some(v) = f.unc_sem {
        cfg.unc_sem = v;
    }
    if let Some(v) = &f.output_dir {
        cfg.output_dir = v.clone();
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn build_config(f: &ConfigFlags) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    apply_flags(&mut cfg, f);
    if let Some(path) = &f.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
        let mut table: toml::Table = cfg.to_toml()?.parse()?;
        merge(&mut table, file);
        cfg = ExperimentConfig::from_toml(&toml::to_string(&table)?).with_context(|| format!("config {}", path.display()))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::Verify { seed, inject_kl_sign_flip } = cli.command {
        let report = harness::run_verify(VerifyOptions {
            seed,
            flip_kl_sign: inject_kl_sign_flip,
        });
        print!("{}", report.to_text());
        return Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    }
    let cfg = build_config(&cli.flags)?;
    match cli.command {
        Command::GenData => {
            let m = harness::cmd_gen_data(&cfg)?;
            println!("wrote {} scene files to {}", m.files.len(), cfg.output_dir.display());
            println!("data_checksum {}", m.data_checksum);
        }
        Command::TrainMap => {
            let trace = harness::cmd_train_map(&cfg)?;
            if let (Some(a), Some(b)) = (trace.initial(), trace.last()) {
                println!("map loss {:.6} -> {:.6} over {} epochs", a.total, b.total, b.epoch);
            }
        }
        Command::Estimate { split } => {
            let path = harness::cmd_estimate(&cfg, split.into())?;
            println!("wrote {}", path.display());
        }
        Command::TrainPred => {
            let trace = harness::cmd_train_pred(&cfg)?;
            if let (Some(a), Some(b)) = (trace.0.first(), trace.0.last()) {
                println!("{} predictor loss {:.6} -> {:.6}", cfg.variant(), a.total, b.total);
            }
        }
        Command::Eval => {
            let r = harness::cmd_eval(&cfg)?;
            println!(
                "{}: minADE {:.4} minFDE {:.4} MR {:.4} over {} agents",
                cfg.variant(),
                r.min_ade,
                r.min_fde,
                r.miss_rate,
                r.n_agents
            );
        }
        Command::Ablate => {
            let t = harness::cmd_ablate(&cfg)?;
            print!("{}", t.to_csv());
        }
        Command::Render { split, index } => {
            let path = harness::cmd_render(&cfg, split.into(), index)?;
            println!("wrote {}", path.display());
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()?),
        Command::Verify { .. } => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
