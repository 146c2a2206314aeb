use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ttpredict::error::{Error, Result};
use ttpredict::evaluation::{cv_seed, grid_search, holdout_split, ParamGrid};
use ttpredict::features::{
    build_samples, write_feature_csv, FeatureConfig, FeatureMode, FeatureSet,
};
use ttpredict::harness::experiment::toml_error;
use ttpredict::harness::{
    run_ablation, run_experiment, run_prematch, synth_generate, DataSource, ExperimentConfig,
    ModelBundle, SynthConfig,
};
use ttpredict::match_data::{read_matches, serialize_matches, MatchRecord};
use ttpredict::models::{Family, ModelSpec};
use ttpredict::util::format_sig;

#[derive(Parser)]
#[command(
    name = "ttpredict",
    version,
    about = "Table-tennis match outcome prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic matches as JSON.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the feature matrix of a match file as CSV.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::PerMatch)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Set::Full)]
        feature_set: Set,
    },
    /// Fit one model on every sample and save it.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: Family,
        /// Hyperparameter overrides: inline JSON or a path to a JSON file.
        #[arg(long)]
        params: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        save: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::PerMatch)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Set::Full)]
        feature_set: Set,
    },
    /// Score a saved model on a match file.
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Rank a hyperparameter grid by cross-validated accuracy.
    Gridsearch {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: Family,
        /// Grid as inline JSON or a path to a JSON file, e.g. {"c":[0.1,1]}.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = ttpredict::evaluation::DEFAULT_GRID_CAP)]
        cap: usize,
    },
    /// Compare models with and without the derived features.
    Ablate(RunArgs),
    /// Evaluate on pre-match aggregate features.
    Prematch(RunArgs),
    /// Full comparison: split, tuning, cross-validation and test evaluation.
    Experiment(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON, or TOML with a .toml extension).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Match file; replaces the config's input.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    /// Repeat the run once per seed, each in its own `seed-N` directory.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    test_seeds: Vec<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    PerMatch,
    Aggregate,
}

impl From<Mode> for FeatureMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::PerMatch => FeatureMode::PerMatch,
            Mode::Aggregate => FeatureMode::AggregateExcludingTarget,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Set {
    Full,
    WithoutDerived,
}

impl From<Set> for FeatureSet {
    fn from(s: Set) -> Self {
        match s {
            Set::Full => FeatureSet::Full,
            Set::WithoutDerived => FeatureSet::WithoutDerived,
        }
    }
}

fn load(path: &Path) -> Result<Vec<MatchRecord>> {
    read_matches(io::BufReader::new(File::open(path)?))
}

/// Inline JSON when the argument looks like an object, otherwise a file path.
fn json_arg<T: serde::de::DeserializeOwned>(arg: &str) -> Result<T> {
    let trimmed = arg.trim_start();
    if trimmed.starts_with('{') {
        Ok(serde_json::from_str(trimmed)?)
    } else {
        Ok(serde_json::from_slice(&fs::read(arg)?)?)
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn synth_config(path: Option<&Path>) -> Result<SynthConfig> {
    let Some(path) = path else {
        return Ok(SynthConfig::default());
    };
    let text = fs::read_to_string(path)?;
    let cfg: SynthConfig = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| toml_error(e, &text))?
    } else {
        serde_json::from_str(&text)?
    };
    Ok(cfg)
}

fn experiment_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &args.input {
        cfg.input = DataSource::Path(p.clone());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One (config, output directory) pair per requested seed.
fn runs(args: &RunArgs) -> Result<Vec<(ExperimentConfig, PathBuf)>> {
    let cfg = experiment_config(args)?;
    if args.test_seeds.is_empty() {
        return Ok(vec![(cfg, args.out_dir.clone())]);
    }
    Ok(args
        .test_seeds
        .iter()
        .map(|&seed| {
            let dir = args.out_dir.join(format!("seed-{seed}"));
            (
                ExperimentConfig {
                    seed,
                    ..cfg.clone()
                },
                dir,
            )
        })
        .collect())
}

fn seed_header(cfg: &ExperimentConfig, args: &RunArgs) {
    if !args.test_seeds.is_empty() {
        println!("seed {}", cfg.seed);
    }
}

fn print_rows(rows: &[ttpredict::evaluation::ModelRow]) {
    for r in rows {
        println!(
            "{}: acc_val {} ± {}, acc_test {}",
            r.model,
            format_sig(r.cv.mean.accuracy, 4),
            format_sig(r.cv.standard_error.accuracy, 2),
            format_sig(r.test.accuracy, 4)
        );
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { config, out, seed } => {
            let mut cfg = synth_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let matches = synth_generate(&cfg)?;
            let mut w = open_out(out.as_deref())?;
            w.write_all(&serialize_matches(&matches)?)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Command::Features {
            input,
            out,
            mode,
            feature_set,
        } => {
            let set = build_samples(
                &load(&input)?,
                mode.into(),
                feature_set.into(),
                &FeatureConfig::default(),
            )?;
            let mut w = open_out(out.as_deref())?;
            write_feature_csv(&mut w, &set)?;
            w.flush()?;
        }
        Command::Train {
            input,
            model,
            params,
            seed,
            save,
            mode,
            feature_set,
        } => {
            let mut spec = ModelSpec::preset(model);
            if let Some(p) = params {
                spec = spec.with_overrides(&json_arg(&p)?)?;
            }
            let bundle = ModelBundle::train(
                &load(&input)?,
                &spec,
                mode.into(),
                feature_set.into(),
                &FeatureConfig::default(),
                seed,
            )?;
            fs::write(&save, bundle.to_json()?)?;
            log::info!("saved {} to {}", spec.label(), save.display());
        }
        Command::Evaluate {
            input,
            model_file,
            out_dir,
        } => {
            let bundle = ModelBundle::from_json(&fs::read(&model_file)?)?;
            let name = bundle.model.family().to_string();
            let eval = bundle.evaluate(&load(&input)?, &name)?;
            eval.write_to(&out_dir)?;
            println!(
                "{name}: accuracy {}, f1 {}, auc {}",
                format_sig(eval.metrics.accuracy, 4),
                format_sig(eval.metrics.f1, 4),
                format_sig(eval.roc.auc, 4)
            );
        }
        Command::Gridsearch {
            input,
            model,
            grid,
            k,
            seed,
            cap,
        } => {
            let grid: ParamGrid = json_arg(&grid)?;
            let cfg = FeatureConfig::default();
            let samples = build_samples(
                &load(&input)?,
                FeatureMode::PerMatch,
                FeatureSet::Full,
                &cfg,
            )?
            .samples;
            let holdout = holdout_split(&samples, seed)?;
            let ranked = grid_search(
                &ModelSpec::preset(model),
                &grid,
                &samples,
                &holdout.pool_idx,
                k,
                cv_seed(seed),
                cap,
            )?;
            let mut out = io::stdout().lock();
            writeln!(out, "rank,params,acc_val,acc_val_se,f1_val")?;
            for (i, p) in ranked.iter().enumerate() {
                writeln!(
                    out,
                    "{},\"{}\",{},{},{}",
                    i + 1,
                    p.key().replace('"', "\"\""),
                    format_sig(p.cv.mean.accuracy, 9),
                    format_sig(p.cv.standard_error.accuracy, 9),
                    format_sig(p.cv.mean.f1, 9)
                )?;
            }
        }
        Command::Ablate(args) => {
            for (cfg, dir) in runs(&args)? {
                seed_header(&cfg, &args);
                let report = run_ablation(&cfg, &dir)?;
                for (a, b) in report.full.rows.iter().zip(&report.without_derived.rows) {
                    println!(
                        "{}: acc_val full {} vs without {}",
                        a.model,
                        format_sig(a.cv.mean.accuracy, 4),
                        format_sig(b.cv.mean.accuracy, 4)
                    );
                }
            }
        }
        Command::Prematch(args) => {
            for (cfg, dir) in runs(&args)? {
                seed_header(&cfg, &args);
                let report = run_prematch(&cfg, &dir)?;
                println!(
                    "dropped {} matches for insufficient history",
                    report.dropped.len()
                );
                print_rows(&report.rows);
            }
        }
        Command::Experiment(args) => {
            for (cfg, dir) in runs(&args)? {
                seed_header(&cfg, &args);
                let report = run_experiment(&cfg, &dir)?;
                println!(
                    "baseline accuracy {}",
                    format_sig(report.baseline_accuracy, 4)
                );
                print_rows(&report.rows);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
