//! `cavityfill` command line: each pipeline stage reads and writes files, so
//! stages can be chained and inspected one at a time.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or numeric error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, load_csv, load_csv_with_origin, Dataset, ImbalanceSpec, Origin, SyntheticSpec};
use crate::error::Error;
use crate::experiment::{emit_report, run_campaign, write_atomic, CampaignResult, EpisodeConfig, ReportFormat};
use crate::gaussian::fit_full;
use crate::metrics::{confusion, score};
use crate::net::{self, Activation, FeatureSet, NetworkParams, NetworkSpec, TrainConfig};
use crate::resample::{generate, plan_balance, Strategy};
use crate::rng::Stream;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cavityfill", version, about = "Pseudo-feature generation for imbalanced classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate Gaussian-cluster data as CSV.
    GenData(GenDataArgs),
    /// Decimate minor classes of a dataset.
    Imbalance(ImbalanceArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Extract penultimate-layer features of a dataset.
    Extract(ExtractArgs),
    /// Rebalance a feature CSV with a strategy.
    Augment(AugmentArgs),
    /// Retrain the final layer of a network on a feature CSV.
    Retrain(RetrainArgs),
    /// Score a network on a dataset.
    Eval(EvalArgs),
    /// Run a full campaign from a JSON config.
    Campaign(CampaignArgs),
    /// Regenerate tables from a campaign.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_name = "INT")]
    pub classes: usize,
    #[arg(long, value_name = "INT")]
    pub per_class: usize,
    #[arg(long, value_name = "INT")]
    pub dims: usize,
    /// Standard deviation of each cluster.
    #[arg(long, value_name = "FLOAT", default_value_t = 0.8)]
    pub spread: f64,
    #[arg(long, value_name = "INT")]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Hold out this fraction per class into --test-out.
    #[arg(long, value_name = "FLOAT", requires = "test_out")]
    pub test_fraction: Option<f64>,
    #[arg(long, value_name = "PATH", requires = "test_fraction")]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImbalanceArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Comma-separated minor class ids.
    #[arg(long, value_name = "LIST", value_delimiter = ',', required = true)]
    pub minors: Vec<usize>,
    #[arg(long, value_name = "INT", default_value_t = 10)]
    pub factor: usize,
    #[arg(long, value_name = "INT")]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimizerArgs {
    #[arg(long, value_name = "INT", default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, value_name = "INT", default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, value_name = "FLOAT", default_value_t = 1e-3)]
    pub lr: f64,
}

impl OptimizerArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Tanh,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "64,32")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ActivationArg::Relu)]
    pub activation: ActivationArg,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    #[arg(long, value_name = "INT")]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// baseline, under, over, smote[:K], perturb, cavity or cavity-diag.
    #[arg(long, value_name = "NAME")]
    pub strategy: Strategy,
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "INT")]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Also write the fitted per-class Gaussians (cavity only).
    #[arg(long, value_name = "PATH")]
    pub models_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrainArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Feature CSV, optionally with an origin column.
    #[arg(long, value_name = "PATH")]
    pub features: PathBuf,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    #[arg(long, value_name = "INT")]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Comma-separated minor class ids for the minor-class averages.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub minors: Vec<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CampaignArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, value_name = "INT", default_value_t = 0)]
    pub threads: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    All,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A campaign.json written by `campaign`.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

/// Network file written by `train` and `retrain`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ModelFile = serde_json::from_str(&text)?;
        model.params.check(&model.spec)?;
        Ok(model)
    }

    fn save(&self, path: &Path) -> Result<(), Error> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn write_dataset(data: &Dataset, path: &Path) -> Result<(), Error> {
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_atomic(path, &buf)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Imbalance(a) => imbalance(a),
        Command::Train(a) => train(a),
        Command::Extract(a) => extract(a),
        Command::Augment(a) => augment(a),
        Command::Retrain(a) => retrain(a),
        Command::Eval(a) => eval(a),
        Command::Campaign(a) => campaign(a),
        Command::Report(a) => report(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        n_classes: a.classes,
        samples_per_class: a.per_class,
        n_dims: a.dims,
        cluster_spread: a.spread,
        seed: a.seed,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    if let Some(f) = a.test_fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(usage("--test-fraction must lie in (0, 1)"));
        }
    }
    let data = dataset::make_synthetic(&spec)?;
    match (a.test_fraction, a.test_out) {
        (Some(f), Some(test_out)) => {
            let (train, test) = dataset::split(&data, f, &mut Stream::keyed(a.seed, &[0x73706c74]))?;
            write_dataset(&train, &a.out)?;
            write_dataset(&test, &test_out)?;
        }
        _ => write_dataset(&data, &a.out)?,
    }
    Ok(())
}

fn imbalance(a: ImbalanceArgs) -> Result<(), Failure> {
    if a.factor == 0 {
        return Err(usage("--factor must be at least 1"));
    }
    let spec = ImbalanceSpec {
        minor_class_ids: a.minors.into_iter().collect(),
        reduction_factor: a.factor,
    };
    let data = load_csv(&a.input)?;
    let out = dataset::synthesize_imbalanced(&data, &spec, &mut Stream::new(a.seed))?;
    write_dataset(&out, &a.out)?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = a.optimizer.config(a.seed);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if a.hidden.contains(&0) {
        return Err(usage("--hidden widths must be positive"));
    }
    let data = load_csv(&a.data)?;
    let activation = match a.activation {
        ActivationArg::Relu => Activation::Relu,
        ActivationArg::Tanh => Activation::Tanh,
    };
    let mut widths = vec![data.n_dims()];
    widths.extend(&a.hidden);
    widths.push(data.n_classes());
    let spec = NetworkSpec::new(widths, activation)?;
    let params = net::init(&spec, a.seed)?;
    let params = net::train(&params, &spec, &data, &cfg)?;
    ModelFile { spec, params }.save(&a.out)?;
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<(), Failure> {
    let model = ModelFile::load(&a.model)?;
    let data = load_csv(&a.data)?;
    let split = net::split_at_penultimate(&model.params, &model.spec)?;
    let feats = split.features(data.features().view())?;
    let out = Dataset::new(feats, data.labels().to_vec(), data.n_classes())?;
    write_dataset(&out, &a.out)?;
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<(), Failure> {
    if a.models_out.is_some() && a.strategy != Strategy::CavityFull {
        return Err(usage("--models-out is only available with --strategy cavity"));
    }
    let data = load_csv(&a.input)?;
    let features = FeatureSet::from_dataset(&data);
    let aug = generate(a.strategy, &features, &mut Stream::new(a.seed))?;
    let mut buf = Vec::new();
    aug.write_csv(&mut buf)?;
    write_atomic(&a.out, &buf)?;
    if let Some(path) = a.models_out {
        let plan = plan_balance(&features.counts())?;
        let mut text = String::new();
        for (c, &n) in plan.pseudo.iter().enumerate() {
            if n > 0 {
                text.push_str(&format!("class {c}\n"));
                text.push_str(&fit_full(features.class(c).view())?.to_text());
            }
        }
        write_atomic(&path, text.as_bytes())?;
    }
    Ok(())
}

fn retrain(a: RetrainArgs) -> Result<(), Failure> {
    let cfg = a.optimizer.config(a.seed);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let model = ModelFile::load(&a.model)?;
    let split = net::split_at_penultimate(&model.params, &model.spec)?;
    let (data, origins) = load_csv_with_origin(&a.features)?;
    let n_classes = split.n_classes();
    if data.n_classes() > n_classes {
        return Err(Error::ClassOutOfRange { class: data.n_classes() - 1, n_classes }.into());
    }
    let (real_rows, pseudo_rows): (Vec<usize>, Vec<usize>) = match &origins {
        Some(o) => (0..data.n_samples()).partition(|&i| o[i] == Origin::Real),
        None => ((0..data.n_samples()).collect(), Vec::new()),
    };
    let group = |rows: &[usize]| -> Result<FeatureSet, Error> {
        let mut classes = vec![Vec::new(); n_classes];
        for &r in rows {
            classes[data.labels()[r]].push(r);
        }
        let mats = classes
            .iter()
            .map(|idx| data.features().select(ndarray::Axis(0), idx))
            .collect();
        FeatureSet::new(mats, data.n_dims())
    };
    let real = group(&real_rows)?;
    let pseudo = group(&pseudo_rows)?;
    let retrained = net::retrain_head(&split, &real, &pseudo, &cfg)?;
    let (params, spec) = net::reassemble(&retrained)?;
    ModelFile { spec, params }.save(&a.out)?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let model = ModelFile::load(&a.model)?;
    let data = load_csv(&a.data)?;
    let predicted = net::predict(&model.params, &model.spec, data.features().view())?;
    let cm = confusion(data.labels(), &predicted, model.spec.n_classes())?;
    let minors: BTreeSet<usize> = a.minors.into_iter().collect();
    let report = score(&cm, &minors)?;
    let json = report.to_json();
    match a.out {
        Some(path) => write_atomic(&path, json.as_bytes())?,
        None => println!("{json}"),
    }
    Ok(())
}

fn campaign(a: CampaignArgs) -> Result<(), Failure> {
    let cfg = match EpisodeConfig::load(&a.config) {
        Ok(cfg) => cfg,
        Err(e @ Error::Io { .. }) => return Err(e.into()),
        Err(e) => return Err(usage(format!("{}: {e}", a.config.display()))),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads)
        .build()
        .map_err(|e| usage(format!("--threads: {e}")))?;
    let result = pool.install(|| run_campaign(&cfg, cfg.episodes))?;
    emit_report(&result, &a.out, &[ReportFormat::Json, ReportFormat::Csv])?;
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let result = CampaignResult::from_json(&text)?;
    let formats: &[ReportFormat] = match a.format {
        FormatArg::Json => &[ReportFormat::Json],
        FormatArg::Csv => &[ReportFormat::Csv],
        FormatArg::All => &[ReportFormat::Json, ReportFormat::Csv],
    };
    emit_report(&result, &a.out, formats)?;
    Ok(())
}
