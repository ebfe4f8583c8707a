//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code paths it is used to check.
#![allow(dead_code)]

use cavityfill::net::{NetworkParams, NetworkSpec};
use cavityfill::rng::Stream;
use ndarray::{Array1, Array2};

/// Mean and divide-by-n covariance with explicit double loops.
pub fn naive_mean_cov(x: &Array2<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = x.dim();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += x[[i, j]];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in 0..d {
            let mut s = 0.0;
            for i in 0..n {
                s += (x[[i, a]] - mean[a]) * (x[[i, b]] - mean[b]);
            }
            cov[a][b] = s / n as f64;
        }
    }
    (mean, cov)
}

/// k nearest other rows by full sort of squared distances, ties to lower index.
pub fn brute_knn(x: &Array2<f64>, i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..x.nrows())
        .filter(|&j| j != i)
        .map(|j| {
            let mut s = 0.0;
            for t in 0..x.ncols() {
                s += (x[[i, t]] - x[[j, t]]).powi(2);
            }
            (s, j)
        })
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Euclidean distance from `p` to the segment `[a, b]`.
pub fn dist_to_segment(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let ap: Vec<f64> = a.iter().zip(p).map(|(x, y)| y - x).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 == 0.0 {
        0.0
    } else {
        (ap.iter().zip(&ab).map(|(u, v)| u * v).sum::<f64>() / len2).clamp(0.0, 1.0)
    };
    a.iter()
        .zip(&ab)
        .zip(p)
        .map(|((x, v), q)| (x + t * v - q).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull (Andrew's monotone chain).
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Whether `p` lies inside a counter-clockwise hull, allowing `tol` of
/// signed distance outside each edge.
pub fn inside_hull(hull: &[(f64, f64)], p: (f64, f64), tol: f64) -> bool {
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        cross(a, b, p) / len >= -tol
    })
}

pub fn rows_as_pairs(x: &Array2<f64>) -> Vec<(f64, f64)> {
    x.rows().into_iter().map(|r| (r[0], r[1])).collect()
}

/// Mean cross-entropy of a feed-forward softmax network, written from scratch
/// with per-sample loops.
pub fn reference_loss(params: &NetworkParams, spec: &NetworkSpec, x: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let mut h: Vec<f64> = x.row(i).to_vec();
        for (l, layer) in params.layers.iter().enumerate() {
            let (fan_in, fan_out) = layer.weights.dim();
            let mut z = vec![0.0; fan_out];
            for o in 0..fan_out {
                z[o] = layer.bias[o];
                for k in 0..fan_in {
                    z[o] += h[k] * layer.weights[[k, o]];
                }
            }
            if l + 1 < params.layers.len() {
                for v in &mut z {
                    *v = match spec.activation {
                        cavityfill::net::Activation::Relu => v.max(0.0),
                        cavityfill::net::Activation::Tanh => v.tanh(),
                    };
                }
            }
            h = z;
        }
        let max = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + h.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - h[y];
    }
    total / labels.len() as f64
}

/// Central finite differences of [`reference_loss`] for every parameter, in
/// the same layout as the network.
pub fn finite_difference_gradients(
    params: &NetworkParams,
    spec: &NetworkSpec,
    x: &Array2<f64>,
    labels: &[usize],
    step: f64,
) -> NetworkParams {
    let mut grads = params.clone();
    let mut probe = params.clone();
    for l in 0..params.layers.len() {
        for idx in 0..params.layers[l].weights.len() {
            let (r, c) = (idx / params.layers[l].weights.ncols(), idx % params.layers[l].weights.ncols());
            let orig = params.layers[l].weights[[r, c]];
            probe.layers[l].weights[[r, c]] = orig + step;
            let up = reference_loss(&probe, spec, x, labels);
            probe.layers[l].weights[[r, c]] = orig - step;
            let down = reference_loss(&probe, spec, x, labels);
            probe.layers[l].weights[[r, c]] = orig;
            grads.layers[l].weights[[r, c]] = (up - down) / (2.0 * step);
        }
        for o in 0..params.layers[l].bias.len() {
            let orig = params.layers[l].bias[o];
            probe.layers[l].bias[o] = orig + step;
            let up = reference_loss(&probe, spec, x, labels);
            probe.layers[l].bias[o] = orig - step;
            let down = reference_loss(&probe, spec, x, labels);
            probe.layers[l].bias[o] = orig;
            grads.layers[l].bias[o] = (up - down) / (2.0 * step);
        }
    }
    grads
}

/// Largest `|a - n| / max(|a|, |n|, 1e-6)` over all parameters.
pub fn max_relative_error(analytic: &NetworkParams, numeric: &NetworkParams) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.layers.iter().zip(&numeric.layers) {
        for (x, y) in a.weights.iter().chain(a.bias.iter()).zip(n.weights.iter().chain(n.bias.iter())) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Binary logistic regression by plain full-batch gradient descent; returns
/// training accuracy.
pub fn logistic_oracle_accuracy(x: &Array2<f64>, labels: &[usize], iters: usize) -> f64 {
    let (n, d) = x.dim();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..iters {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for i in 0..n {
            let z: f64 = b + (0..d).map(|j| w[j] * x[[i, j]]).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - labels[i] as f64;
            for j in 0..d {
                gw[j] += err * x[[i, j]];
            }
            gb += err;
        }
        for j in 0..d {
            w[j] -= 0.5 * gw[j] / n as f64;
        }
        b -= 0.5 * gb / n as f64;
    }
    let correct = (0..n)
        .filter(|&i| {
            let z: f64 = b + (0..d).map(|j| w[j] * x[[i, j]]).sum::<f64>();
            (z > 0.0) as usize == labels[i]
        })
        .count();
    correct as f64 / n as f64
}

/// Equal-prior Bayes classifier for isotropic Gaussians with known means:
/// nearest mean.
pub fn bayes_nearest_mean(means: &Array2<f64>, x: &Array2<f64>) -> Vec<usize> {
    x.rows()
        .into_iter()
        .map(|row| {
            let mut best = (f64::INFINITY, 0);
            for (c, m) in means.rows().into_iter().enumerate() {
                let d: f64 = row.iter().zip(m.iter()).map(|(a, b)| (a - b).powi(2)).sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        })
        .collect()
}

pub fn random_matrix(rng: &mut Stream, n: usize, d: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || scale * rng.normal())
}

pub fn random_vector(rng: &mut Stream, d: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(d, || scale * rng.normal())
}
