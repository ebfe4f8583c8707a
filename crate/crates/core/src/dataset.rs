//! Labeled datasets: CSV ingestion, synthetic clusters, imbalance synthesis
//! and stratified splitting.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Labeled sample matrix, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("dataset must be non-empty, got {n}x{d}")));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
                context: "labels vs feature rows",
            });
        }
        if n_classes == 0 {
            return Err(Error::invalid("n_classes must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::ClassOutOfRange { class: bad, n_classes });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Dataset { features, labels, n_classes })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_dims(&self) -> usize {
        self.features.ncols()
    }

    /// Row indices of one class, in dataset order.
    pub fn rows_of_class(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect()
    }

    /// New dataset from the given rows (in the given order), keeping `n_classes`.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let features = self.features.select(Axis(0), rows);
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Dataset::new(features, labels, self.n_classes)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.features, &self.labels, None)
    }
}

/// Which minor classes to decimate, and by how much.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub minor_class_ids: BTreeSet<usize>,
    pub reduction_factor: usize,
}

/// Isotropic Gaussian clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub n_dims: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.samples_per_class == 0 || self.n_dims == 0 {
            return Err(Error::invalid("synthetic spec sizes must be positive"));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::invalid(format!(
                "cluster_spread must be positive, got {}",
                self.cluster_spread
            )));
        }
        Ok(())
    }
}

pub fn class_counts(data: &Dataset) -> Vec<usize> {
    let mut counts = vec![0; data.n_classes];
    for &l in &data.labels {
        counts[l] += 1;
    }
    counts
}

/// Cluster means of [`make_synthetic`]: a digit-scrambled Halton sequence
/// mapped onto `[-1, 1]^d`. Digit permutations come from the spec seed and
/// keep digit 0 fixed.
pub fn synthetic_means(spec: &SyntheticSpec) -> Array2<f64> {
    let primes = first_primes(spec.n_dims);
    let mut stream = Stream::keyed(spec.seed, &[0x6d65_616e]);
    let perms: Vec<Vec<u64>> = primes
        .iter()
        .map(|&p| {
            let mut perm: Vec<u64> = (1..p).collect();
            stream.shuffle(&mut perm);
            perm.insert(0, 0);
            perm
        })
        .collect();
    Array2::from_shape_fn((spec.n_classes, spec.n_dims), |(c, j)| {
        2.0 * scrambled_radical_inverse(c as u64 + 1, primes[j], &perms[j]) - 1.0
    })
}

fn scrambled_radical_inverse(mut i: u64, base: u64, perm: &[u64]) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut x = 0.0;
    while i > 0 {
        x += perm[(i % base) as usize] as f64 * scale;
        i /= base;
        scale *= inv;
    }
    x
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(n);
    let mut cand = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= cand).all(|&p| cand % p != 0) {
            primes.push(cand);
        }
        cand += 1;
    }
    primes
}

/// Rows are grouped by class: all of class 0 first, then class 1, and so on.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let means = synthetic_means(spec);
    let n = spec.n_classes * spec.samples_per_class;
    let mut stream = Stream::keyed(spec.seed, &[0x7361_6d70]);
    let mut features = Array2::zeros((n, spec.n_dims));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let class = i / spec.samples_per_class;
        for (j, v) in row.iter_mut().enumerate() {
            *v = means[[class, j]] + spec.cluster_spread * stream.normal();
        }
        labels.push(class);
    }
    Dataset::new(features, labels, spec.n_classes)
}

/// Keeps `floor(count / factor)` uniformly chosen rows of every minor class.
/// Major classes and relative row order are untouched.
pub fn synthesize_imbalanced(data: &Dataset, spec: &ImbalanceSpec, rng: &mut Stream) -> Result<Dataset> {
    if spec.reduction_factor == 0 {
        return Err(Error::invalid("reduction_factor must be at least 1"));
    }
    if spec.minor_class_ids.is_empty() {
        return Err(Error::invalid("no minor classes given"));
    }
    if let Some(&bad) = spec.minor_class_ids.iter().find(|&&c| c >= data.n_classes) {
        return Err(Error::ClassOutOfRange { class: bad, n_classes: data.n_classes });
    }
    let counts = class_counts(data);
    for &c in &spec.minor_class_ids {
        if counts[c] < spec.reduction_factor {
            return Err(Error::ClassTooSmall {
                class: c,
                count: counts[c],
                needed: spec.reduction_factor,
            });
        }
    }

    let mut keep = vec![true; data.n_samples()];
    for &c in &spec.minor_class_ids {
        let rows = data.rows_of_class(c);
        let survivors = rows.len() / spec.reduction_factor;
        let mut drop = vec![true; rows.len()];
        for pos in rng.choose_sorted(rows.len(), survivors) {
            drop[pos] = false;
        }
        for (r, d) in rows.iter().zip(drop) {
            if d {
                keep[*r] = false;
            }
        }
    }
    let rows: Vec<usize> = (0..data.n_samples()).filter(|&i| keep[i]).collect();
    data.select_rows(&rows)
}

/// Stratified split. Per class, the test share is `floor(count * fraction)`
/// clamped to `[1, count - 1]`. Both halves keep the input's row order.
pub fn split(data: &Dataset, test_fraction: f64, rng: &mut Stream) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut is_test = vec![false; data.n_samples()];
    for (class, &count) in class_counts(data).iter().enumerate() {
        if count == 0 {
            continue;
        }
        if count < 2 {
            return Err(Error::ClassTooSmall { class, count, needed: 2 });
        }
        let n_test = ((count as f64 * test_fraction).floor() as usize).clamp(1, count - 1);
        let rows = data.rows_of_class(class);
        for pos in rng.choose_sorted(count, n_test) {
            is_test[rows[pos]] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..data.n_samples()).partition(|&i| is_test[i]);
    Ok((data.select_rows(&train)?, data.select_rows(&test)?))
}

/// Whether a CSV row is a real sample or a generated pseudo-sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Real,
    Pseudo,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::Pseudo => "pseudo",
        }
    }
}

/// Reads `f0,...,f{d-1},label` CSV.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    load_csv_with_origin(path).map(|(d, _)| d)
}

/// Like [`load_csv`], also accepting a trailing `origin` column
/// (`real`/`pseudo`). Returns the origins when that column is present.
pub fn load_csv_with_origin(path: impl AsRef<Path>) -> Result<(Dataset, Option<Vec<Origin>>)> {
    let path = path.as_ref();
    let parse_err = |line: u64, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(Error::EmptyDataset(path.to_path_buf())),
        Some(r) => r.map_err(|e| csv_error(path, e))?,
    };
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let has_origin = cols.last() == Some(&"origin");
    let n_meta = if has_origin { 2 } else { 1 };
    if cols.len() < n_meta + 1 || cols[cols.len() - n_meta] != "label" {
        return Err(parse_err(1, "header must be f0,...,f{d-1},label[,origin]".into()));
    }
    let d = cols.len() - n_meta;
    for (j, c) in cols[..d].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(parse_err(1, format!("expected column f{j}, found {c:?}")));
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut origins = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != cols.len() {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", cols.len(), record.len()),
            ));
        }
        for (j, field) in record.iter().take(d).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("column f{j}: {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column f{j}: non-finite value")));
            }
            values.push(v);
        }
        let label_field = record[d].trim();
        let label: usize = label_field
            .parse()
            .map_err(|_| parse_err(line, format!("label {label_field:?} is not a non-negative integer")))?;
        labels.push(label);
        if has_origin {
            origins.push(match record[d + 1].trim() {
                "real" => Origin::Real,
                "pseudo" => Origin::Pseudo,
                other => return Err(parse_err(line, format!("origin {other:?} is not real/pseudo"))),
            });
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features = Array2::from_shape_vec((labels.len(), d), values).expect("row-major shape");
    let data = Dataset::new(features, labels, n_classes)?;
    Ok((data, has_origin.then_some(origins)))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

/// Writes feature rows with a label column and an optional origin column.
/// Values use the shortest representation that round-trips exactly.
pub(crate) fn write_rows<W: Write>(
    out: W,
    features: &Array2<f64>,
    labels: &[usize],
    origins: Option<&[Origin]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = features.ncols();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    if origins.is_some() {
        header.push("origin".into());
    }
    let to_err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    w.write_record(&header).map_err(to_err)?;
    let mut fields = Vec::with_capacity(d + 2);
    for (i, row) in features.rows().into_iter().enumerate() {
        fields.clear();
        fields.extend(row.iter().map(|v| v.to_string()));
        fields.push(labels[i].to_string());
        if let Some(o) = origins {
            fields.push(o[i].as_str().to_string());
        }
        w.write_record(&fields).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv write: {e}")))?;
    Ok(())
}
