//! Campaign harness: for every episode and every number of minor classes,
//! decimate the chosen minors, train the network once, then retrain its head
//! under each strategy and score it on an untouched balanced test set.
//!
//! Seeds: every random stream is `Stream::keyed(seed, &[episode, n_minor,
//! tag, ...])` (see [`crate::rng::sub_seed`]), where `tag` names the purpose
//! (minor draw, decimation, stage-1 init, stage-1 shuffling, head training,
//! strategy generation) and strategy streams append the strategy id.
//! Generators then key per-class sub-streams by class id.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, class_counts, Dataset, ImbalanceSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{confusion, score, ScoreReport};
use crate::net::{self, argmax_rows, Activation, FeatureSet, NetworkSpec, SplitNetwork, TrainConfig};
use crate::resample::{generate, Strategy};
use crate::rng::{sub_seed, Stream};

const TAG_SPLIT: u64 = 0x73706c74;
const TAG_MINORS: u64 = 1;
const TAG_DECIMATE: u64 = 2;
const TAG_INIT: u64 = 3;
const TAG_TRAIN: u64 = 4;
const TAG_HEAD: u64 = 5;
const TAG_STRATEGY: u64 = 6;

/// Where the balanced data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian clusters, split into train/test with `test_fraction`.
    Synthetic {
        classes: usize,
        per_class: usize,
        dims: usize,
        spread: f64,
        seed: u64,
        test_fraction: f64,
    },
    /// A CSV file; the test set is `test_path` if given, otherwise a
    /// stratified `test_fraction` split of `path`.
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_fraction: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

/// Campaign configuration; the JSON config file deserializes into this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub dataset: DataSource,
    pub reduction_factor: usize,
    pub minor_sweep: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub network: NetworkConfig,
    /// Stage-1 training; its `seed` is ignored in favour of derived seeds.
    pub train: TrainConfig,
    /// Head retraining; its `seed` is ignored in favour of derived seeds.
    pub head_train: TrainConfig,
    pub episodes: usize,
    pub seed: u64,
}

impl EpisodeConfig {
    /// Desk-scale default: 10 Gaussian classes in 16 dimensions, 500 training
    /// and 125 test samples per class, minors cut to 50, #minor swept 1..9,
    /// the six compared strategies, 20 episodes.
    pub fn desk_default() -> Self {
        EpisodeConfig {
            dataset: DataSource::Synthetic {
                classes: 10,
                per_class: 625,
                dims: 16,
                spread: 0.8,
                seed: 1,
                test_fraction: 0.2,
            },
            reduction_factor: 10,
            minor_sweep: (1..=9).collect(),
            strategies: Strategy::COMPARED.to_vec(),
            network: NetworkConfig { hidden: vec![64, 32], activation: Activation::Relu },
            train: TrainConfig::default(),
            head_train: TrainConfig::default(),
            episodes: 20,
            seed: 2018,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: EpisodeConfig = serde_json::from_str(text)?;
        cfg.validate_shape()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Checks that need no data.
    pub fn validate_shape(&self) -> Result<()> {
        if self.reduction_factor < 2 {
            return Err(Error::invalid("reduction_factor must be at least 2"));
        }
        if self.minor_sweep.is_empty() || self.minor_sweep.contains(&0) {
            return Err(Error::invalid("minor_sweep must be non-empty and positive"));
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid("no strategies given"));
        }
        let mut seen = BTreeSet::new();
        if !self.strategies.iter().all(|s| seen.insert(s.id())) {
            return Err(Error::invalid("strategies must be distinct"));
        }
        if self.episodes == 0 {
            return Err(Error::invalid("episodes must be at least 1"));
        }
        self.train.validate()?;
        self.head_train.validate()?;
        if let DataSource::Synthetic { classes, per_class, dims, spread, test_fraction, .. } = &self.dataset {
            if *classes < 2 || *per_class < 2 || *dims == 0 || !(*spread > 0.0) {
                return Err(Error::invalid("synthetic dataset sizes must be positive with >= 2 classes"));
            }
            if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                return Err(Error::invalid("test_fraction must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    /// Balanced training pool and test set. Deterministic in the config.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let mut split_rng = Stream::keyed(self.seed, &[TAG_SPLIT]);
        let (train, test) = match &self.dataset {
            DataSource::Synthetic { classes, per_class, dims, spread, seed, test_fraction } => {
                let spec = SyntheticSpec {
                    n_classes: *classes,
                    samples_per_class: *per_class,
                    n_dims: *dims,
                    cluster_spread: *spread,
                    seed: *seed,
                };
                dataset::split(&dataset::make_synthetic(&spec)?, *test_fraction, &mut split_rng)?
            }
            DataSource::Csv { path, test_path, test_fraction } => {
                let data = dataset::load_csv(path)?;
                match (test_path, test_fraction) {
                    (Some(t), _) => (data, dataset::load_csv(t)?),
                    (None, Some(f)) => dataset::split(&data, *f, &mut split_rng)?,
                    (None, None) => return Err(Error::invalid("csv dataset needs test_path or test_fraction")),
                }
            }
        };
        if train.n_dims() != test.n_dims() {
            return Err(Error::DimensionMismatch {
                expected: train.n_dims(),
                got: test.n_dims(),
                context: "test set columns",
            });
        }
        let n_classes = train.n_classes().max(test.n_classes());
        if let Some(&bad) = self.minor_sweep.iter().find(|&&m| m >= n_classes) {
            return Err(Error::invalid(format!("#minor {bad} must be below the class count {n_classes}")));
        }
        Ok((train, test))
    }

    pub fn network_spec(&self, input_dim: usize, n_classes: usize) -> Result<NetworkSpec> {
        let mut widths = vec![input_dim];
        widths.extend(&self.network.hidden);
        widths.push(n_classes);
        NetworkSpec::new(widths, self.network.activation)
    }
}

/// Stage-1 network and the features every strategy in a cell group shares.
pub struct Stage1 {
    pub split: SplitNetwork,
    pub train_features: FeatureSet,
    pub test_features: Array2<f64>,
    pub test_labels: Vec<usize>,
}

/// Trains the full network on (imbalanced) `data` and extracts penultimate
/// features of both training and test data.
pub fn train_stage1(data: &Dataset, test: &Dataset, spec: &NetworkSpec, init_seed: u64, cfg: &TrainConfig) -> Result<Stage1> {
    let params = net::init(spec, init_seed)?;
    let params = net::train(&params, spec, data, cfg)?;
    let split = net::split_at_penultimate(&params, spec)?;
    let train_features = net::extract_features(&split, data)?;
    let test_features = split.features(test.features().view())?;
    Ok(Stage1 {
        split,
        train_features,
        test_features,
        test_labels: test.labels().to_vec(),
    })
}

/// One strategy on a trained stage-1 network: build the head's training set in
/// feature space, retrain the head, score the reassembled network on the test
/// set.
pub fn run_cell(
    stage1: &Stage1,
    strategy: Strategy,
    head_cfg: &TrainConfig,
    minor_ids: &BTreeSet<usize>,
    rng: &mut Stream,
) -> Result<ScoreReport> {
    let aug = generate(strategy, &stage1.train_features, rng)?;
    let retrained = net::retrain_head(&stage1.split, &aug.real, &aug.pseudo, head_cfg)?;
    let predicted = argmax_rows(&retrained.head_probs(stage1.test_features.view())?);
    let cm = confusion(&stage1.test_labels, &predicted, retrained.n_classes())?;
    score(&cm, minor_ids)
}

/// All strategies for one `n_minor` within one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub n_minor: usize,
    pub minor_ids: Vec<usize>,
    pub train_counts: Vec<usize>,
    pub reports: Vec<StrategyReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub report: ScoreReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub groups: Vec<GroupResult>,
}

fn run_group(cfg: &EpisodeConfig, pool: &Dataset, test: &Dataset, episode: usize, n_minor: usize) -> Result<GroupResult> {
    let key = |tag: u64| [episode as u64, n_minor as u64, tag];
    let n_classes = pool.n_classes().max(test.n_classes());
    let minor_ids: BTreeSet<usize> = Stream::keyed(cfg.seed, &key(TAG_MINORS))
        .choose_sorted(n_classes, n_minor)
        .into_iter()
        .collect();
    let imbalance = ImbalanceSpec { minor_class_ids: minor_ids.clone(), reduction_factor: cfg.reduction_factor };
    let data = dataset::synthesize_imbalanced(pool, &imbalance, &mut Stream::keyed(cfg.seed, &key(TAG_DECIMATE)))?;

    let spec = cfg.network_spec(pool.n_dims(), n_classes)?;
    let train_cfg = cfg.train.with_seed(sub_seed(cfg.seed, &key(TAG_TRAIN)));
    let stage1 = train_stage1(&data, test, &spec, sub_seed(cfg.seed, &key(TAG_INIT)), &train_cfg)?;
    let head_cfg = cfg.head_train.with_seed(sub_seed(cfg.seed, &key(TAG_HEAD)));

    let reports = cfg
        .strategies
        .iter()
        .map(|&strategy| {
            let mut rng = Stream::keyed(cfg.seed, &[episode as u64, n_minor as u64, TAG_STRATEGY, strategy.id()]);
            let report = run_cell(&stage1, strategy, &head_cfg, &minor_ids, &mut rng)?;
            Ok(StrategyReport { strategy, report })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupResult {
        n_minor,
        minor_ids: minor_ids.into_iter().collect(),
        train_counts: class_counts(&data),
        reports,
    })
}

/// One sweep over `cfg.minor_sweep` with freshly drawn minors per entry.
pub fn run_episode(cfg: &EpisodeConfig, episode: usize) -> Result<EpisodeResult> {
    cfg.validate_shape()?;
    let (pool, test) = cfg.load_data()?;
    let groups = cfg
        .minor_sweep
        .iter()
        .map(|&m| run_group(cfg, &pool, &test, episode, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(EpisodeResult { episode, groups })
}

/// The eight reported scores of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub minor_accuracy: f64,
    pub minor_precision: f64,
    pub minor_recall: f64,
    pub minor_f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
    MinorAccuracy,
    MinorPrecision,
    MinorRecall,
    MinorF1,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Accuracy,
        Metric::Precision,
        Metric::Recall,
        Metric::F1,
        Metric::MinorAccuracy,
        Metric::MinorPrecision,
        Metric::MinorRecall,
        Metric::MinorF1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::MinorAccuracy => "minor_accuracy",
            Metric::MinorPrecision => "minor_precision",
            Metric::MinorRecall => "minor_recall",
            Metric::MinorF1 => "minor_f1",
        }
    }
}

impl Scores {
    /// Global accuracy, macro precision/recall/F1 and the minor macro scores
    /// (zero if the report has no minor classes).
    pub fn from_report(r: &ScoreReport) -> Self {
        let m = r.minor.as_ref();
        Scores {
            accuracy: r.accuracy,
            precision: r.macro_precision,
            recall: r.macro_recall,
            f1: r.macro_f1,
            minor_accuracy: m.map_or(0.0, |m| m.accuracy),
            minor_precision: m.map_or(0.0, |m| m.precision),
            minor_recall: m.map_or(0.0, |m| m.recall),
            minor_f1: m.map_or(0.0, |m| m.f1),
        }
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
            Metric::MinorAccuracy => self.minor_accuracy,
            Metric::MinorPrecision => self.minor_precision,
            Metric::MinorRecall => self.minor_recall,
            Metric::MinorF1 => self.minor_f1,
        }
    }

    fn from_fn(f: impl Fn(Metric) -> f64) -> Self {
        Scores {
            accuracy: f(Metric::Accuracy),
            precision: f(Metric::Precision),
            recall: f(Metric::Recall),
            f1: f(Metric::F1),
            minor_accuracy: f(Metric::MinorAccuracy),
            minor_precision: f(Metric::MinorPrecision),
            minor_recall: f(Metric::MinorRecall),
            minor_f1: f(Metric::MinorF1),
        }
    }
}

/// Mean and population standard deviation over episodes for one
/// `(n_minor, strategy)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_minor: usize,
    pub strategy: Strategy,
    pub episodes: usize,
    pub mean: Scores,
    pub sd: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub config: EpisodeConfig,
    pub n_episodes: usize,
    pub episodes: Vec<EpisodeResult>,
    pub aggregate: Vec<Aggregate>,
}

/// One flattened `(n_minor, strategy, episode)` record.
pub struct CellScores {
    pub n_minor: usize,
    pub strategy: Strategy,
    pub episode: usize,
    pub scores: Scores,
}

impl CampaignResult {
    /// Assembles episodes (in any order) into a result sorted by episode index,
    /// with aggregates computed over them.
    pub fn from_episodes(config: EpisodeConfig, mut episodes: Vec<EpisodeResult>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::invalid("campaign has no episodes"));
        }
        episodes.sort_by_key(|e| e.episode);
        let aggregate = aggregate(&config, &episodes);
        Ok(CampaignResult { n_episodes: episodes.len(), config, episodes, aggregate })
    }

    /// Every cell, sorted by `(n_minor, strategy id, episode)`.
    pub fn cells(&self) -> Vec<CellScores> {
        let mut cells: Vec<CellScores> = self
            .episodes
            .iter()
            .flat_map(|e| {
                e.groups.iter().flat_map(move |g| {
                    g.reports.iter().map(move |r| CellScores {
                        n_minor: g.n_minor,
                        strategy: r.strategy,
                        episode: e.episode,
                        scores: Scores::from_report(&r.report),
                    })
                })
            })
            .collect();
        cells.sort_by_key(|c| (c.n_minor, c.strategy.id(), c.episode));
        cells
    }

    pub fn aggregate_for(&self, n_minor: usize, strategy: Strategy) -> Option<&Aggregate> {
        self.aggregate.iter().find(|a| a.n_minor == n_minor && a.strategy == strategy)
    }

    /// Strategies present, in report column order.
    pub fn strategies(&self) -> Vec<Strategy> {
        let mut s = self.config.strategies.clone();
        s.sort_by_key(|s| s.id());
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn aggregate(cfg: &EpisodeConfig, episodes: &[EpisodeResult]) -> Vec<Aggregate> {
    let mut strategies = cfg.strategies.clone();
    strategies.sort_by_key(|s| s.id());
    let mut out = Vec::new();
    for &m in &cfg.minor_sweep {
        for &s in &strategies {
            let samples: Vec<Scores> = episodes
                .iter()
                .flat_map(|e| e.groups.iter().filter(|g| g.n_minor == m))
                .flat_map(|g| g.reports.iter().filter(|r| r.strategy == s))
                .map(|r| Scores::from_report(&r.report))
                .collect();
            let n = samples.len() as f64;
            let mean = Scores::from_fn(|k| samples.iter().map(|x| x.get(k)).sum::<f64>() / n);
            let sd = Scores::from_fn(|k| {
                let mu = mean.get(k);
                (samples.iter().map(|x| (x.get(k) - mu).powi(2)).sum::<f64>() / n).sqrt()
            });
            out.push(Aggregate { n_minor: m, strategy: s, episodes: samples.len(), mean, sd });
        }
    }
    out
}

/// Runs `n_episodes` episodes (indices `0..n_episodes`) on the current rayon
/// pool. Cell groups run in parallel; the result does not depend on the
/// schedule.
pub fn run_campaign(cfg: &EpisodeConfig, n_episodes: usize) -> Result<CampaignResult> {
    cfg.validate_shape()?;
    if n_episodes == 0 {
        return Err(Error::invalid("n_episodes must be at least 1"));
    }
    let (pool, test) = cfg.load_data()?;
    let jobs: Vec<(usize, usize)> = (0..n_episodes)
        .flat_map(|e| cfg.minor_sweep.iter().map(move |&m| (e, m)))
        .collect();
    let groups = jobs
        .par_iter()
        .map(|&(e, m)| run_group(cfg, &pool, &test, e, m))
        .collect::<Result<Vec<_>>>()?;
    let mut groups = groups.into_iter();
    let episodes = (0..n_episodes)
        .map(|episode| EpisodeResult {
            episode,
            groups: groups.by_ref().take(cfg.minor_sweep.len()).collect(),
        })
        .collect();
    CampaignResult::from_episodes(cfg.clone(), episodes)
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Table with one row per `#Minor` and one column per strategy holding the
/// episode mean of `metric`.
pub fn metric_table(result: &CampaignResult, metric: Metric) -> String {
    let strategies = result.strategies();
    let mut out = String::from("#Minor");
    for s in &strategies {
        out.push(',');
        out.push_str(s.title());
    }
    out.push('\n');
    for &m in &result.config.minor_sweep {
        out.push_str(&m.to_string());
        for &s in &strategies {
            out.push(',');
            if let Some(a) = result.aggregate_for(m, s) {
                out.push_str(&a.mean.get(metric).to_string());
            }
        }
        out.push('\n');
    }
    out
}

/// Long format: `n_minor,strategy,episode,metric,value`, one row per score.
pub fn long_table(result: &CampaignResult) -> String {
    let mut out = String::from("n_minor,strategy,episode,metric,value\n");
    for c in result.cells() {
        for metric in Metric::ALL {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.n_minor,
                c.strategy,
                c.episode,
                metric.name(),
                c.scores.get(metric)
            ));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Writes `campaign.json` and/or `table_<metric>.csv` (×8) plus `long.csv`
/// into `dir`. Returns the written paths.
pub fn emit_report(result: &CampaignResult, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    if result.episodes.is_empty() {
        return Err(Error::invalid("empty campaign result"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        let path = dir.join("campaign.json");
        write_atomic(&path, result.to_json()?.as_bytes())?;
        written.push(path);
    }
    if formats.contains(&ReportFormat::Csv) {
        for metric in Metric::ALL {
            let path = dir.join(format!("table_{}.csv", metric.name()));
            write_atomic(&path, metric_table(result, metric).as_bytes())?;
            written.push(path);
        }
        let path = dir.join("long.csv");
        write_atomic(&path, long_table(result).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
