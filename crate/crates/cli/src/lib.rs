//! Command-line front end: loads a JSON experiment config, applies flag
//! overrides, runs one mode and writes `report.json` plus `report.csv`.
//!
//! Exit status is 0 on success, 2 for configuration or usage errors, 3 for
//! data errors, 4 for provider errors and 1 for anything else.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use genofeat::harness::{
    generate_synthetic, run_experiment, DatasetSource, ExperimentConfig, HarnessError, LabelRule, Method, Mode,
    ProviderSettings, SyntheticSpec,
};
use genofeat::models::ClassifierKind;
use genofeat::Error;

#[derive(Debug, Parser)]
#[command(
    name = "genofeat",
    version,
    about = "Knowledge-driven feature selection and engineering for genotype tables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare selection strategies across shot counts.
    Select {
        #[command(flatten)]
        common: Common,
        /// Strategies to compare; repeat the flag or separate with commas.
        #[arg(long = "strategy", value_delimiter = ',')]
        strategies: Vec<StrategyArg>,
        /// Number of variants each strategy keeps.
        #[arg(long)]
        d_prime: Option<usize>,
    },
    /// Build K engineered feature sets and score the ensemble.
    Engineer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eng: EngineeringArgs,
    },
    /// Run any mode with every override available.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long = "strategy", value_delimiter = ',')]
        strategies: Vec<StrategyArg>,
        #[arg(long)]
        d_prime: Option<usize>,
        #[command(flatten)]
        eng: EngineeringArgs,
    },
    /// Ask for variants from the phenotype name alone and score them.
    Nominate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        phenotype: Option<String>,
        /// How many variants to request.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Re-run a configured experiment from a recorded response cache, offline.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Treat cache misses as empty responses instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Write a synthetic planted-signal dataset as CSV, with its ground truth.
    Synth {
        /// Output CSV path; the ground truth goes next to it as `<stem>.truth.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 500)]
        variants: usize,
        #[arg(long, default_value_t = 13)]
        additive: usize,
        #[arg(long, default_value_t = 1)]
        interactions: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, value_enum, default_value_t = RuleArg::Liability)]
        rule: RuleArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Genotype CSV to use instead of the configured dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    /// Directory for reports, partial results and saved models.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Shot counts, comma separated and strictly ascending.
    #[arg(long, value_delimiter = ',')]
    shots: Vec<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long = "classifier", value_delimiter = ',')]
    classifiers: Vec<ClassifierArg>,
    /// Response cache (JSONL). Live providers record into it; `replay` reads it.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Provider override: the offline oracle or an OpenAI-compatible endpoint.
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    #[arg(long)]
    save_models: bool,
}

#[derive(Debug, Args)]
struct EngineeringArgs {
    /// Ensemble size.
    #[arg(long)]
    k: Option<usize>,
    /// Base variants for engineering, comma separated.
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Hierarchical,
    Sequential,
    Lasso,
    Pca,
    Gini,
    Random,
}

impl From<StrategyArg> for Method {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Hierarchical => Method::Hierarchical,
            StrategyArg::Sequential => Method::Sequential,
            StrategyArg::Lasso => Method::Lasso,
            StrategyArg::Pca => Method::Pca,
            StrategyArg::Gini => Method::Gini,
            StrategyArg::Random => Method::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Select,
    Engineer,
    Nominate,
    Full,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Select => Mode::SelectCompare,
            ModeArg::Engineer => Mode::Engineer,
            ModeArg::Nominate => Mode::Nominate,
            ModeArg::Full => Mode::FullPipeline,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ClassifierArg {
    Logistic,
    Forest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProviderArg {
    Oracle,
    Openai,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RuleArg {
    Liability,
    Carrier,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(parsed.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.category().exit_code()
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    HarnessError::Config(msg.into()).into()
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
    .into()
}

fn base_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(path) = &common.data {
        let label_column = common.label_column.clone().unwrap_or_else(|| "label".into());
        cfg.dataset = DatasetSource::Csv {
            path: path.clone(),
            label_column,
            gene_map: None,
        };
    } else if let (Some(label), DatasetSource::Csv { label_column, .. }) = (&common.label_column, &mut cfg.dataset) {
        *label_column = label.clone();
    }
    if !common.shots.is_empty() {
        cfg.shot_counts = common.shots.clone();
    }
    if let Some(r) = common.repeats {
        cfg.repeats = r;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if !common.classifiers.is_empty() {
        cfg.classifiers = common
            .classifiers
            .iter()
            .map(|c| match c {
                ClassifierArg::Logistic => ClassifierKind::Logistic,
                ClassifierArg::Forest => ClassifierKind::Forest,
            })
            .collect();
    }
    match common.provider {
        Some(ProviderArg::Openai) if !matches!(cfg.provider, ProviderSettings::Openai(_)) => {
            cfg.provider = ProviderSettings::Openai(Default::default());
        }
        Some(ProviderArg::Oracle) if !matches!(cfg.provider, ProviderSettings::Oracle(_)) => {
            cfg.provider = ProviderSettings::Oracle(Default::default());
        }
        _ => {}
    }
    if let Some(c) = &common.cache {
        cfg.cache = Some(c.clone());
    }
    if let Some(o) = &common.output {
        cfg.output_dir = Some(o.clone());
    }
    if common.save_models {
        cfg.save_models = true;
    }
    Ok(cfg)
}

fn apply_strategies(cfg: &mut ExperimentConfig, strategies: &[StrategyArg], d_prime: Option<usize>) {
    if !strategies.is_empty() {
        cfg.methods = strategies.iter().map(|&s| s.into()).collect();
    }
    if let Some(d) = d_prime {
        cfg.selection.d_prime = d;
    }
}

fn apply_engineering(cfg: &mut ExperimentConfig, eng: &EngineeringArgs) {
    if let Some(k) = eng.k {
        cfg.engineering.k = k;
    }
    if !eng.features.is_empty() {
        cfg.engineering_features = Some(eng.features.clone());
    }
    if let Some(t) = eng.temperature {
        cfg.engineering.temperature = t;
    }
}

fn execute(command: Command) -> Result<(), Error> {
    let cfg = match command {
        Command::Select {
            common,
            strategies,
            d_prime,
        } => {
            let mut cfg = base_config(&common)?;
            cfg.mode = Mode::SelectCompare;
            apply_strategies(&mut cfg, &strategies, d_prime);
            cfg
        }
        Command::Engineer { common, eng } => {
            let mut cfg = base_config(&common)?;
            cfg.mode = Mode::Engineer;
            apply_engineering(&mut cfg, &eng);
            cfg
        }
        Command::Evaluate {
            common,
            mode,
            strategies,
            d_prime,
            eng,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            apply_strategies(&mut cfg, &strategies, d_prime);
            apply_engineering(&mut cfg, &eng);
            cfg
        }
        Command::Nominate { common, phenotype, n } => {
            let mut cfg = base_config(&common)?;
            cfg.mode = Mode::Nominate;
            if let Some(p) = phenotype {
                cfg.phenotype = p;
            }
            if let Some(n) = n {
                cfg.nominate_n = n;
            }
            cfg
        }
        Command::Replay { common, mode, lenient } => {
            let mut cfg = base_config(&common)?;
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            let cache = match (&common.cache, &cfg.provider) {
                (Some(c), _) => c.clone(),
                (None, ProviderSettings::Replay(r)) => r.cache.clone(),
                (None, _) => return Err(config_error("replay needs --cache or a replay provider in the config")),
            };
            cfg.provider = cfg.provider.replay_of(cache);
            if let ProviderSettings::Replay(r) = &mut cfg.provider {
                r.lenient = lenient;
            }
            cfg.cache = None;
            cfg
        }
        Command::Synth {
            out,
            samples,
            variants,
            additive,
            interactions,
            classes,
            rule,
            seed,
        } => {
            let spec = SyntheticSpec {
                n_samples: samples,
                n_variants: variants,
                n_additive: additive,
                n_interactions: interactions,
                n_classes: classes,
                label_rule: match rule {
                    RuleArg::Liability => LabelRule::Liability,
                    RuleArg::Carrier => LabelRule::Carrier,
                },
                seed,
                ..Default::default()
            };
            return write_synthetic(&spec, &out);
        }
    };
    run_and_write(&cfg)
}

fn write_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<(), Error> {
    let (ds, truth) = generate_synthetic(spec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    genofeat::dataset::save_dataset(&ds, out)?;
    let truth_path = out.with_extension("truth.json");
    let text = serde_json::to_string_pretty(&truth).expect("truth serializes") + "\n";
    std::fs::write(&truth_path, text).map_err(|e| io_error(&truth_path, e))?;
    println!("{}", out.display());
    println!("{}", truth_path.display());
    Ok(())
}

fn run_and_write(cfg: &ExperimentConfig) -> Result<(), Error> {
    cfg.validate()?;
    let report = run_experiment(cfg)?;
    for w in &report.artifacts.warnings {
        log::info!("{w}");
    }
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let (json, csv) = report.write(&dir, "report")?;
    println!("{}", json.display());
    println!("{}", csv.display());
    Ok(())
}
