//! Per-class Gaussian models of feature vectors: full covariance with a
//! regularized Cholesky factor, and an independent (diagonal) variant.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Relative diagonal jitter, as a fraction of the mean variance.
pub const RELATIVE_JITTER: f64 = 1e-6;
/// Floor on the jitter, for all-zero covariances.
pub const MIN_JITTER: f64 = 1e-10;
/// Number of ×10 jitter escalations tried after the base value.
pub const MAX_ESCALATIONS: u32 = 6;

/// Full-covariance Gaussian. `covariance` already includes `epsilon` on its
/// diagonal and `cholesky` factors it.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianModel {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    pub cholesky: Array2<f64>,
    pub epsilon: f64,
    pub n_fit: usize,
    /// How many times the base jitter had to be multiplied by 10.
    pub escalations: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalModel {
    pub mean: Array1<f64>,
    pub variances: Array1<f64>,
}

impl GaussianModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Plain-text form: a `gaussian-model 1` tag line, then `dim`, `n_fit`,
    /// `epsilon`, `mean` lines and a `covariance` block (row-major, one row
    /// per line). Reals carry 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fmt = |v: &f64| format!("{v:.16e}");
        let join = |it: &mut dyn Iterator<Item = &f64>| it.map(fmt).collect::<Vec<_>>().join(" ");
        writeln!(s, "gaussian-model 1").unwrap();
        writeln!(s, "dim {}", self.dim()).unwrap();
        writeln!(s, "n_fit {}", self.n_fit).unwrap();
        writeln!(s, "epsilon {}", fmt(&self.epsilon)).unwrap();
        writeln!(s, "mean {}", join(&mut self.mean.iter())).unwrap();
        writeln!(s, "covariance").unwrap();
        for row in self.covariance.rows() {
            writeln!(s, "{}", join(&mut row.iter())).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<GaussianModel> {
        let bad = |msg: &str| Error::invalid(format!("gaussian model text: {msg}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {name}")))?;
            line.strip_prefix(name)
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| bad(&format!("expected {name}, found {line:?}")))
        };
        if field("gaussian-model")? != "1" {
            return Err(bad("unsupported version"));
        }
        let dim: usize = field("dim")?.parse().map_err(|_| bad("dim"))?;
        let n_fit: usize = field("n_fit")?.parse().map_err(|_| bad("n_fit"))?;
        let epsilon: f64 = field("epsilon")?.parse().map_err(|_| bad("epsilon"))?;
        let parse_vec = |s: &str| -> Result<Vec<f64>> {
            let v: Vec<f64> = s
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(&format!("number {t:?}"))))
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(bad("row length does not match dim"));
            }
            Ok(v)
        };
        let mean = Array1::from(parse_vec(&field("mean")?)?);
        field("covariance")?;
        let mut cov = Vec::with_capacity(dim * dim);
        for _ in 0..dim {
            cov.extend(parse_vec(&field("")?)?);
        }
        let covariance = Array2::from_shape_vec((dim, dim), cov).expect("square");
        let cholesky = cholesky(&covariance).ok_or_else(|| bad("covariance is not positive definite"))?;
        Ok(GaussianModel { mean, covariance, cholesky, epsilon, n_fit, escalations: 0 })
    }
}

/// Lower-triangular `L` with `L Lᵀ = a`, or `None` if `a` is not numerically
/// positive definite.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

fn check_fit_input(features: &ArrayView2<f64>) -> Result<()> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples to fit, got {n}")));
    }
    if features.ncols() == 0 {
        return Err(Error::invalid("cannot fit zero-dimensional features"));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("features to fit".into()));
    }
    Ok(())
}

/// Sample mean and maximum-likelihood (divide by n) covariance, exactly
/// symmetric.
pub fn mean_and_covariance(features: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = features.nrows() as f64;
    let mean = features.mean_axis(Axis(0)).expect("non-empty");
    let centered = &features - &mean;
    let mut cov = centered.t().dot(&centered) / n;
    let d = cov.nrows();
    for i in 0..d {
        for j in 0..i {
            cov[[j, i]] = cov[[i, j]];
        }
    }
    (mean, cov)
}

/// Fits a full-covariance Gaussian. The jitter starts at
/// `max(1e-6 * mean variance, 1e-10)` and is multiplied by 10 (up to six
/// times) until the Cholesky factorization succeeds.
pub fn fit_full(features: ArrayView2<f64>) -> Result<GaussianModel> {
    check_fit_input(&features)?;
    let (mean, raw) = mean_and_covariance(features);
    let d = raw.nrows();
    let mut epsilon = (RELATIVE_JITTER * raw.diag().sum() / d as f64).max(MIN_JITTER);
    for escalations in 0..=MAX_ESCALATIONS {
        let mut covariance = raw.clone();
        covariance.diag_mut().mapv_inplace(|v| v + epsilon);
        if let Some(l) = cholesky(&covariance) {
            return Ok(GaussianModel {
                mean,
                covariance,
                cholesky: l,
                epsilon,
                n_fit: features.nrows(),
                escalations,
            });
        }
        if escalations < MAX_ESCALATIONS {
            epsilon *= 10.0;
        }
    }
    Err(Error::NotPositiveDefinite { attempts: MAX_ESCALATIONS as usize + 1, epsilon })
}

pub fn fit_diagonal(features: ArrayView2<f64>) -> Result<DiagonalModel> {
    check_fit_input(&features)?;
    let mean = features.mean_axis(Axis(0)).expect("non-empty");
    let variances = features.var_axis(Axis(0), 0.0);
    Ok(DiagonalModel { mean, variances })
}

/// `n` rows of `mean + L z` with `z` standard normal.
pub fn sample_full(model: &GaussianModel, n: usize, rng: &mut Stream) -> Array2<f64> {
    let d = model.dim();
    let mut out = Array2::zeros((n, d));
    let mut z = vec![0.0; d];
    for mut row in out.rows_mut() {
        z.iter_mut().for_each(|v| *v = rng.normal());
        for i in 0..d {
            let l = model.cholesky.row(i);
            let mut acc = model.mean[i];
            for k in 0..=i {
                acc += l[k] * z[k];
            }
            row[i] = acc;
        }
    }
    out
}

pub fn sample_diagonal(model: &DiagonalModel, n: usize, rng: &mut Stream) -> Array2<f64> {
    let sd = model.variances.mapv(f64::sqrt);
    let d = model.mean.len();
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        for j in 0..d {
            row[j] = model.mean[j] + sd[j] * rng.normal();
        }
    }
    out
}
