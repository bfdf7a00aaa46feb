use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use clap::{Parser, Subcommand, ValueEnum};
use prosub_core::data::{generate_synthetic, load_dataset, save_dataset, NormalizationMode, SyntheticSpec};
use prosub_core::harness::{
    compare, emit_reports, evaluate_checkpoint, load_reports, run_sequential, DataSource, ExperimentConfig, Method,
    RunReport, THREADS_ENV,
};
use prosub_core::subsample::AnnealMode;

#[derive(Debug, Parser)]
#[command(name = "prosub", version, about = "Progressive subsampling experiment runner")]
#[command(after_help = format!("Worker threads: set {THREADS_ENV} (defaults to all cores)."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train over the target schedule and write reports and checkpoints.
    Run(RunArgs),
    /// Reconstruction MSE of a saved checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Paired Wilcoxon comparison of test MSE between two run directories.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic dataset (binary, or CSV for a .csv path).
    Generate {
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Prosub,
    ProsubNoNas,
    Sardu,
    SarduBof,
    SarduNas,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Prosub => Method::Prosub,
            MethodArg::ProsubNoNas => Method::ProsubNoNas,
            MethodArg::Sardu => Method::Sardu,
            MethodArg::SarduBof => Method::SarduBof,
            MethodArg::SarduNas => Method::SarduNas,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AnnealArg {
    Progressive,
    Instant,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormalizationArg {
    Global,
    PerMeasurement,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Dataset file (binary with JSON sidecar, or CSV).
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// JSON synthetic dataset spec.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// Strictly descending targets, e.g. 500,250,100.
    #[arg(long, value_delimiter = ',')]
    m_schedule: Option<Vec<usize>>,
    /// `T_1,T` of the first target.
    #[arg(long, value_delimiter = ',')]
    first_stage: Option<Vec<usize>>,
    /// `T_1,T` of each later target.
    #[arg(long, value_delimiter = ',')]
    later_stages: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    anneal_window: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Repeat or comma-separate for several seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long)]
    folds: Option<usize>,
    /// Hidden-unit choices searched by the tuner.
    #[arg(long, value_delimiter = ',')]
    units: Option<Vec<usize>>,
    #[arg(long)]
    nas_trials: Option<usize>,
    #[arg(long)]
    exploration: Option<f64>,
    #[arg(long, value_enum)]
    anneal: Option<AnnealArg>,
    /// Use the latest batch score instead of the moving average.
    #[arg(long)]
    no_score_average: bool,
    /// Remove all measurements at the last step.
    #[arg(long)]
    single_shot: bool,
    #[arg(long, value_enum)]
    normalization: Option<NormalizationArg>,
    #[arg(long)]
    out: PathBuf,
}

fn read_synthetic(path: &Path) -> anyhow::Result<SyntheticSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: SyntheticSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    spec.validate()?;
    Ok(spec)
}

fn pair(flag: &str, v: Vec<usize>) -> anyhow::Result<(usize, usize)> {
    match v[..] {
        [split, total] => Ok((split, total)),
        _ => bail!("--{flag} takes two values T_1,T, got {v:?}"),
    }
}

fn build_config(args: RunArgs) -> anyhow::Result<ExperimentConfig> {
    let data = match (&args.data, &args.synthetic) {
        (Some(p), _) => Some(DataSource::Path(p.clone())),
        (None, Some(p)) => Some(DataSource::Synthetic(read_synthetic(p)?)),
        (None, None) => None,
    };
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            // Flags may supply the required fields the file leaves out.
            if let Some(obj) = value.as_object_mut() {
                if let Some(d) = &data {
                    obj.insert("data".into(), serde_json::to_value(d)?);
                }
                if let Some(m) = args.method {
                    obj.insert("method".into(), serde_json::to_value(Method::from(m))?);
                }
                if let Some(s) = &args.m_schedule {
                    obj.insert("m_schedule".into(), serde_json::to_value(s)?);
                }
            }
            // Validated below, once the flags are applied.
            serde_json::from_value::<ExperimentConfig>(value).with_context(|| format!("config {}", path.display()))?
        }
        None => {
            let (Some(data), Some(method), Some(schedule)) = (data, args.method, args.m_schedule.clone()) else {
                bail!("without --config, --method, --m-schedule and one of --data/--synthetic are required");
            };
            ExperimentConfig::new(data, method.into(), schedule)
        }
    };
    if let Some(v) = args.first_stage {
        config.first_stage = pair("first-stage", v)?;
    }
    if let Some(v) = args.later_stages {
        config.later_stages = pair("later-stages", v)?;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.anneal_window {
        config.anneal_window = v;
    }
    if let Some(v) = args.batch {
        config.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.seed {
        config.seeds = v;
    }
    if let Some(v) = args.folds {
        config.folds = v;
    }
    if let Some(v) = args.units {
        config.unit_choices = v;
    }
    if let Some(v) = args.nas_trials {
        config.nas_trials = v;
    }
    if let Some(v) = args.exploration {
        config.exploration = v;
    }
    if let Some(v) = args.anneal {
        config.ablation.anneal = match v {
            AnnealArg::Progressive => AnnealMode::Progressive,
            AnnealArg::Instant => AnnealMode::Instant,
        };
    }
    if args.no_score_average {
        config.ablation.average_scores = false;
    }
    if args.single_shot {
        config.ablation.single_shot = true;
    }
    if let Some(v) = args.normalization {
        config.normalization = Some(match v {
            NormalizationArg::Global => NormalizationMode::GlobalMax99,
            NormalizationArg::PerMeasurement => NormalizationMode::PerMeasurementMax99,
        });
    }
    config.output_dir = Some(args.out);
    config.validate_static().context("invalid configuration after applying flags")?;
    Ok(config)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.6}"))
}

fn print_summary(reports: &[RunReport]) {
    println!("{:>6} {:>6} {:>12} {:>12} {:>8}", "seed", "M", "val_mse", "test_mse", "epochs");
    for r in reports {
        let epochs: usize = r.folds.iter().map(|f| f.total_epochs).sum();
        println!(
            "{:>6} {:>6} {:>12} {:>12} {:>8}",
            r.seed,
            r.target,
            fmt_opt(r.mean_val_mse()),
            fmt_opt(r.mean_test_mse()),
            epochs
        );
    }
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let config = build_config(args)?;
            let out = config.output_dir.clone().expect("set from --out");
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("config.json"), serde_json::to_vec_pretty(&config)?)?;
            let reports = run_sequential(&config)?;
            emit_reports(&reports, &out)?;
            print_summary(&reports);
            println!("reports written to {}", out.display());
        }
        Command::Evaluate { checkpoint, data } => {
            let dataset = load_dataset(&data)?;
            let mse = evaluate_checkpoint(&checkpoint, &dataset)?;
            println!("{}", serde_json::json!({ "mse": mse, "samples": dataset.n_samples() }));
        }
        Command::Compare { a, b, json } => {
            let ra = load_reports(&a).with_context(|| format!("loading reports from {}", a.display()))?;
            let rb = load_reports(&b).with_context(|| format!("loading reports from {}", b.display()))?;
            let comparison = compare(&ra, &rb)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&comparison)?);
            } else {
                print!("{}", comparison.render(ra[0].method.name(), rb[0].method.name()));
            }
        }
        Command::Generate { synthetic, out } => {
            let dataset = generate_synthetic(&read_synthetic(&synthetic)?)?;
            save_dataset(&dataset, &out)?;
            println!(
                "wrote {} samples x {} measurements to {}",
                dataset.n_samples(),
                dataset.n_measurements(),
                out.display()
            );
        }
    }
    Ok(())
}
