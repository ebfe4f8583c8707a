//! Rebalancing strategies applied to per-class feature sets: plain baseline,
//! random under/oversampling, SMOTE interpolation, Gaussian perturbation of
//! real rows, and cavity filling (sampling from per-class Gaussian fits).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_rows, Origin};
use crate::error::{Error, Result};
use crate::gaussian::{fit_diagonal, fit_full, sample_diagonal, sample_full};
use crate::net::FeatureSet;
use crate::rng::Stream;

pub const DEFAULT_SMOTE_K: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    Baseline,
    Undersample,
    Oversample,
    Smote { k: usize },
    Perturb,
    CavityFull,
    CavityDiagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CavityVariant {
    Full,
    Diagonal,
}

impl Strategy {
    /// The six compared methods, in report column order.
    pub const COMPARED: [Strategy; 6] = [
        Strategy::Baseline,
        Strategy::Undersample,
        Strategy::Oversample,
        Strategy::Smote { k: DEFAULT_SMOTE_K },
        Strategy::Perturb,
        Strategy::CavityFull,
    ];

    /// Stable numeric id, used for seeding and column ordering.
    pub fn id(self) -> u64 {
        match self {
            Strategy::Baseline => 0,
            Strategy::Undersample => 1,
            Strategy::Oversample => 2,
            Strategy::Smote { .. } => 3,
            Strategy::Perturb => 4,
            Strategy::CavityFull => 5,
            Strategy::CavityDiagonal => 6,
        }
    }

    /// Column title in report tables.
    pub fn title(self) -> &'static str {
        match self {
            Strategy::Baseline => "Baseline",
            Strategy::Undersample => "Under",
            Strategy::Oversample => "Over",
            Strategy::Smote { .. } => "SMOTE",
            Strategy::Perturb => "Perturbed",
            Strategy::CavityFull => "Cavity Filling",
            Strategy::CavityDiagonal => "Cavity Diagonal",
        }
    }

    pub fn is_generative(self) -> bool {
        matches!(
            self,
            Strategy::Smote { .. } | Strategy::Perturb | Strategy::CavityFull | Strategy::CavityDiagonal
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Baseline => f.write_str("baseline"),
            Strategy::Undersample => f.write_str("under"),
            Strategy::Oversample => f.write_str("over"),
            Strategy::Smote { k } if *k == DEFAULT_SMOTE_K => f.write_str("smote"),
            Strategy::Smote { k } => write!(f, "smote:{k}"),
            Strategy::Perturb => f.write_str("perturb"),
            Strategy::CavityFull => f.write_str("cavity"),
            Strategy::CavityDiagonal => f.write_str("cavity-diag"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts `baseline`, `under`, `over`, `smote`, `smote:K`, `perturb`,
    /// `cavity`, `cavity-diag`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => Strategy::Baseline,
            "under" => Strategy::Undersample,
            "over" => Strategy::Oversample,
            "smote" => Strategy::Smote { k: DEFAULT_SMOTE_K },
            "perturb" => Strategy::Perturb,
            "cavity" => Strategy::CavityFull,
            "cavity-diag" => Strategy::CavityDiagonal,
            other => match other.strip_prefix("smote:").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Strategy::Smote { k },
                _ => {
                    return Err(Error::invalid(format!(
                        "unknown strategy {other:?} (expected baseline, under, over, smote[:K], perturb, cavity, cavity-diag)"
                    )))
                }
            },
        })
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

/// Per-class targets and the number of pseudo-samples needed to reach them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BalancePlan {
    pub targets: Vec<usize>,
    pub pseudo: Vec<usize>,
}

/// Raises every class to the largest class count.
pub fn plan_balance(counts: &[usize]) -> Result<BalancePlan> {
    if counts.is_empty() {
        return Err(Error::invalid("no classes to balance"));
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ClassTooSmall { class, count: 0, needed: 1 });
    }
    let max = *counts.iter().max().unwrap();
    Ok(BalancePlan {
        targets: vec![max; counts.len()],
        pseudo: counts.iter().map(|&c| max - c).collect(),
    })
}

fn class_stream(rng: &mut Stream) -> impl Fn(usize) -> Stream {
    let base = rng.next_u64();
    move |class| Stream::keyed(base, &[class as u64])
}

fn require_nonempty(features: &FeatureSet) -> Result<()> {
    if let Some(class) = features.counts().iter().position(|&c| c == 0) {
        return Err(Error::ClassTooSmall { class, count: 0, needed: 1 });
    }
    Ok(())
}

/// Reduces every class to the smallest class count, keeping original order.
pub fn undersample(features: &FeatureSet, rng: &mut Stream) -> Result<FeatureSet> {
    require_nonempty(features)?;
    let min = features.counts().into_iter().min().unwrap_or(0);
    let stream_for = class_stream(rng);
    let classes = features
        .classes()
        .iter()
        .enumerate()
        .map(|(c, m)| m.select(Axis(0), &stream_for(c).choose_sorted(m.nrows(), min)))
        .collect();
    FeatureSet::new(classes, features.feature_dim())
}

/// Raises every class to the largest count by appending uniformly drawn
/// copies of its own rows.
pub fn oversample(features: &FeatureSet, rng: &mut Stream) -> Result<FeatureSet> {
    require_nonempty(features)?;
    let max = features.counts().into_iter().max().unwrap_or(0);
    let stream_for = class_stream(rng);
    let classes = features
        .classes()
        .iter()
        .enumerate()
        .map(|(c, m)| {
            let mut s = stream_for(c);
            let n = m.nrows();
            let rows: Vec<usize> = (0..n).chain((n..max).map(|_| s.index(n))).collect();
            m.select(Axis(0), &rows)
        })
        .collect();
    FeatureSet::new(classes, features.feature_dim())
}

/// Indices of the `k` nearest other points of every row (Euclidean, ties to
/// the lower index).
pub fn nearest_neighbors(points: ArrayView2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = points.nrows();
    (0..n)
        .map(|i| {
            let xi = points.row(i);
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d2 = xi.iter().zip(points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                    (d2, j)
                })
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            dists.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// SMOTE: `x + λ (x_nn − x)` with `x` a uniformly chosen row, `x_nn` one of
/// its `min(k, n − 1)` nearest neighbors and `λ` uniform on [0, 1).
pub fn smote(points: ArrayView2<f64>, k: usize, n_pseudo: usize, rng: &mut Stream) -> Result<Array2<f64>> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::ClassTooSmall { class: 0, count: n, needed: 2 });
    }
    if k == 0 {
        return Err(Error::invalid("smote needs k >= 1"));
    }
    let k = k.min(n - 1);
    let d = points.ncols();
    let mut out = Array2::zeros((n_pseudo, d));
    if n_pseudo == 0 {
        return Ok(out);
    }
    let knn = nearest_neighbors(points, k);
    for mut row in out.rows_mut() {
        let i = rng.index(n);
        let j = knn[i][rng.index(k)];
        let lambda = rng.uniform();
        let (x, nn) = (points.row(i), points.row(j));
        for t in 0..d {
            row[t] = x[t] + lambda * (nn[t] - x[t]);
        }
    }
    Ok(out)
}

/// Uniformly chosen real rows plus zero-mean Gaussian noise whose
/// per-dimension variance is the class's MLE variance.
pub fn perturb(points: ArrayView2<f64>, n_pseudo: usize, rng: &mut Stream) -> Result<Array2<f64>> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::ClassTooSmall { class: 0, count: n, needed: 2 });
    }
    let sd = points.var_axis(Axis(0), 0.0).mapv(f64::sqrt);
    let d = points.ncols();
    let mut out = Array2::zeros((n_pseudo, d));
    for mut row in out.rows_mut() {
        let src = points.row(rng.index(n));
        for t in 0..d {
            row[t] = src[t] + sd[t] * rng.normal();
        }
    }
    Ok(out)
}

fn relabel_class_error(e: Error, class: usize) -> Error {
    match e {
        Error::ClassTooSmall { count, needed, .. } => Error::ClassTooSmall { class, count, needed },
        other => other,
    }
}

/// Pseudo-features only: for each class with a positive planned count, fit a
/// Gaussian to its real rows and draw exactly that many samples.
pub fn cavity(features: &FeatureSet, plan: &BalancePlan, variant: CavityVariant, rng: &mut Stream) -> Result<FeatureSet> {
    generate_per_class(features, plan, rng, |x, n, s| {
        if x.nrows() < 2 {
            return Err(Error::ClassTooSmall { class: 0, count: x.nrows(), needed: 2 });
        }
        Ok(match variant {
            CavityVariant::Full => sample_full(&fit_full(x)?, n, s),
            CavityVariant::Diagonal => sample_diagonal(&fit_diagonal(x)?, n, s),
        })
    })
}

fn generate_per_class(
    features: &FeatureSet,
    plan: &BalancePlan,
    rng: &mut Stream,
    generate: impl Fn(ArrayView2<f64>, usize, &mut Stream) -> Result<Array2<f64>>,
) -> Result<FeatureSet> {
    if plan.pseudo.len() != features.n_classes() {
        return Err(Error::DimensionMismatch {
            expected: features.n_classes(),
            got: plan.pseudo.len(),
            context: "balance plan classes",
        });
    }
    let stream_for = class_stream(rng);
    let d = features.feature_dim();
    let classes = plan
        .pseudo
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n == 0 {
                return Ok(Array2::zeros((0, d)));
            }
            generate(features.class(c).view(), n, &mut stream_for(c)).map_err(|e| relabel_class_error(e, c))
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureSet::new(classes, d)
}

/// Head training set split by origin. For under/oversampling the resampled
/// rows are all counted as real.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub real: FeatureSet,
    pub pseudo: FeatureSet,
}

impl Augmented {
    /// Per class, real rows followed by pseudo rows.
    pub fn merged(&self) -> Result<FeatureSet> {
        self.real.concat(&self.pseudo)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.real.counts().iter().zip(self.pseudo.counts()).map(|(a, b)| a + b).collect()
    }

    /// Dataset CSV plus an `origin` column, class by class.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.real.feature_dim();
        let total: usize = self.counts().iter().sum();
        let mut x = Array2::zeros((total, d));
        let mut labels = Vec::with_capacity(total);
        let mut origins = Vec::with_capacity(total);
        let mut at = 0;
        for c in 0..self.real.n_classes() {
            for (m, origin) in [(self.real.class(c), Origin::Real), (self.pseudo.class(c), Origin::Pseudo)] {
                for row in m.rows() {
                    x.row_mut(at).assign(&row);
                    labels.push(c);
                    origins.push(origin);
                    at += 1;
                }
            }
        }
        write_rows(out, &x, &labels, Some(&origins))
    }
}

/// Runs `strategy`, keeping real and generated rows apart.
pub fn generate(strategy: Strategy, features: &FeatureSet, rng: &mut Stream) -> Result<Augmented> {
    let none = || FeatureSet::empty(features.n_classes(), features.feature_dim());
    let (real, pseudo) = match strategy {
        Strategy::Baseline => (features.clone(), none()),
        Strategy::Undersample => (undersample(features, rng)?, none()),
        Strategy::Oversample => (oversample(features, rng)?, none()),
        Strategy::Smote { k } => {
            let plan = plan_balance(&features.counts())?;
            let pseudo = generate_per_class(features, &plan, rng, |x, n, s| smote(x, k, n, s))?;
            (features.clone(), pseudo)
        }
        Strategy::Perturb => {
            let plan = plan_balance(&features.counts())?;
            let pseudo = generate_per_class(features, &plan, rng, perturb)?;
            (features.clone(), pseudo)
        }
        Strategy::CavityFull | Strategy::CavityDiagonal => {
            let plan = plan_balance(&features.counts())?;
            let variant = if strategy == Strategy::CavityFull {
                CavityVariant::Full
            } else {
                CavityVariant::Diagonal
            };
            (features.clone(), cavity(features, &plan, variant, rng)?)
        }
    };
    Ok(Augmented { real, pseudo })
}

/// The head's training set under `strategy`: real rows first, then pseudo
/// rows, per class.
pub fn apply(strategy: Strategy, features: &FeatureSet, rng: &mut Stream) -> Result<FeatureSet> {
    generate(strategy, features, rng)?.merged()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn blob(n: usize, d: usize, center: f64, seed: u64) -> Array2<f64> {
        let mut s = Stream::new(seed);
        Array2::from_shape_simple_fn((n, d), || center + s.normal())
    }

    fn imbalanced(counts: &[usize], d: usize) -> FeatureSet {
        let classes = counts
            .iter()
            .enumerate()
            .map(|(c, &n)| blob(n, d, c as f64 * 3.0, c as u64))
            .collect();
        FeatureSet::new(classes, d).unwrap()
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            Strategy::Baseline,
            Strategy::Undersample,
            Strategy::Oversample,
            Strategy::Smote { k: 5 },
            Strategy::Smote { k: 3 },
            Strategy::Perturb,
            Strategy::CavityFull,
            Strategy::CavityDiagonal,
        ] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("smote:0".parse::<Strategy>().is_err());
        assert!("ros".parse::<Strategy>().is_err());
        assert_eq!(serde_json::to_string(&Strategy::CavityDiagonal).unwrap(), "\"cavity-diag\"");
    }

    #[test]
    fn plans() {
        let mut counts = vec![5000; 6];
        counts.extend([500; 4]);
        let plan = plan_balance(&counts).unwrap();
        assert_eq!(plan.pseudo, [0, 0, 0, 0, 0, 0, 4500, 4500, 4500, 4500]);
        assert_eq!(plan_balance(&[4, 4]).unwrap().pseudo, [0, 0]);
        assert_eq!(plan_balance(&[7, 3, 2]).unwrap().pseudo, [0, 4, 5]);
        assert!(plan_balance(&[3, 0]).is_err());
        assert!(plan_balance(&[]).is_err());
    }

    #[test]
    fn undersample_to_minimum_preserving_order() {
        let fs = imbalanced(&[40, 10, 25], 2);
        let out = undersample(&fs, &mut Stream::new(1)).unwrap();
        assert_eq!(out.counts(), vec![10; 3]);
        for c in 0..3 {
            // Rows are an ordered subsequence of the input rows.
            let src = fs.class(c);
            let mut at = 0;
            for row in out.class(c).rows() {
                while src.row(at) != row {
                    at += 1;
                }
                at += 1;
            }
        }
        let balanced = imbalanced(&[5, 5], 2);
        assert_eq!(undersample(&balanced, &mut Stream::new(0)).unwrap(), balanced);
    }

    #[test]
    fn oversample_retains_originals() {
        let fs = imbalanced(&[30, 3], 2);
        let out = oversample(&fs, &mut Stream::new(2)).unwrap();
        assert_eq!(out.counts(), vec![30, 30]);
        assert_eq!(out.class(1).slice(ndarray::s![..3, ..]), fs.class(1));
        for row in out.class(1).rows() {
            assert!(fs.class(1).rows().into_iter().any(|r| r == row));
        }
        let balanced = imbalanced(&[4, 4], 1);
        assert_eq!(oversample(&balanced, &mut Stream::new(0)).unwrap(), balanced);
    }

    #[test]
    fn smote_on_two_points_stays_on_diagonal() {
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        let out = smote(x.view(), 1, 200, &mut Stream::new(3)).unwrap();
        for row in out.rows() {
            assert_eq!(row[0], row[1]);
            assert!((0.0..=1.0).contains(&row[0]));
        }
    }

    #[test]
    fn smote_collinear() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| if j == 0 { i as f64 } else { 2.0 * i as f64 + 1.0 });
        let out = smote(x.view(), 3, 500, &mut Stream::new(4)).unwrap();
        for row in out.rows() {
            assert!((row[1] - (2.0 * row[0] + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn smote_errors_and_clamping() {
        assert!(smote(array![[1.0]].view(), 5, 1, &mut Stream::new(0)).is_err());
        // k larger than the class clamps to n - 1.
        assert_eq!(smote(array![[0.0], [1.0], [2.0]].view(), 50, 10, &mut Stream::new(0)).unwrap().nrows(), 10);
    }

    #[test]
    fn knn_tie_breaks_low_index() {
        let x = array![[0.0], [1.0], [-1.0], [2.0]];
        let knn = nearest_neighbors(x.view(), 2);
        assert_eq!(knn[0], vec![1, 2]);
        assert_eq!(knn[1], vec![0, 3]);
    }

    #[test]
    fn perturb_behaviour() {
        let x = array![[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]];
        let out = perturb(x.view(), 300, &mut Stream::new(5)).unwrap();
        assert!(out.column(1).iter().all(|&v| v == 5.0));
        assert_eq!(perturb(x.view(), 0, &mut Stream::new(5)).unwrap().nrows(), 0);
        assert!(perturb(array![[1.0, 2.0]].view(), 3, &mut Stream::new(5)).is_err());
    }

    #[test]
    fn perturb_noise_scale() {
        // Two-point class with variances (1, 4): points at mean ± sd.
        let x = array![[-1.0, -2.0], [1.0, 2.0]];
        let mut s = Stream::new(6);
        let out = perturb(x.view(), 100_000, &mut s).unwrap();
        // Replay the stream to recover each row's source.
        let mut noise = Vec::new();
        let mut replay = Stream::new(6);
        for row in out.rows() {
            let src = x.row(replay.index(2));
            noise.push([row[0] - src[0], row[1] - src[1]]);
            replay.normal();
            replay.normal();
        }
        for (t, sd) in [(0, 1.0), (1, 2.0)] {
            let m = noise.iter().map(|n| n[t]).sum::<f64>() / noise.len() as f64;
            let v = noise.iter().map(|n| (n[t] - m).powi(2)).sum::<f64>() / noise.len() as f64;
            assert!((v.sqrt() / sd - 1.0).abs() < 0.02, "dim {t}: {}", v.sqrt());
        }
    }

    #[test]
    fn cavity_counts_and_errors() {
        let fs = imbalanced(&[50, 5, 50], 3);
        let plan = plan_balance(&fs.counts()).unwrap();
        let pseudo = cavity(&fs, &plan, CavityVariant::Full, &mut Stream::new(7)).unwrap();
        assert_eq!(pseudo.counts(), vec![0, 45, 0]);
        let zero = BalancePlan { targets: vec![50; 3], pseudo: vec![0; 3] };
        assert_eq!(cavity(&fs, &zero, CavityVariant::Diagonal, &mut Stream::new(7)).unwrap().total(), 0);

        let tiny = imbalanced(&[10, 1], 2);
        let plan = plan_balance(&tiny.counts()).unwrap();
        assert!(matches!(
            cavity(&tiny, &plan, CavityVariant::Full, &mut Stream::new(0)),
            Err(Error::ClassTooSmall { class: 1, count: 1, needed: 2 })
        ));
    }

    #[test]
    fn apply_balances_and_keeps_real_rows() {
        let fs = imbalanced(&[60, 6, 20], 2);
        assert_eq!(apply(Strategy::Baseline, &fs, &mut Stream::new(0)).unwrap(), fs);
        assert_eq!(apply(Strategy::Undersample, &fs, &mut Stream::new(0)).unwrap().counts(), vec![6; 3]);
        for s in [Strategy::Smote { k: 5 }, Strategy::Perturb, Strategy::CavityFull, Strategy::CavityDiagonal] {
            let aug = generate(s, &fs, &mut Stream::new(9)).unwrap();
            assert_eq!(aug.counts(), vec![60; 3], "{s}");
            assert_eq!(aug.real, fs);
            let merged = aug.merged().unwrap();
            for c in 0..3 {
                let n = fs.class(c).nrows();
                assert_eq!(merged.class(c).slice(ndarray::s![..n, ..]), fs.class(c));
            }
            // Deterministic per seed.
            assert_eq!(generate(s, &fs, &mut Stream::new(9)).unwrap(), aug);
        }
    }

    #[test]
    fn augmented_csv_has_origin_column() {
        let fs = imbalanced(&[3, 2], 1);
        let aug = generate(Strategy::CavityFull, &fs, &mut Stream::new(1)).unwrap();
        let mut buf = Vec::new();
        aug.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "f0,label,origin");
        assert_eq!(lines.len(), 7);
        assert!(lines[1..4].iter().all(|l| l.ends_with(",0,real")));
        assert!(lines[4..6].iter().all(|l| l.ends_with(",1,real")));
        assert!(lines[6].ends_with(",1,pseudo"));
    }
}
