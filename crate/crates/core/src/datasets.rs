//! Seeded dataset generators, CSV ingestion and train/test splitting.
//!
//! Every generated column draws from its own ChaCha8 stream (stream = column
//! index) under the caller's seed, so widening a dataset with extra noise
//! columns never changes the values of the existing ones.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Coefficients of the relevant features of [`gen_synthetic`].
pub const SYNTHETIC_COEFFICIENTS: [f64; 5] = [0.2, 0.3, 0.1, 0.05, 0.5];
pub const SYNTHETIC_THRESHOLD: f64 = 7.5;

/// Stream reserved for target noise so it never collides with a column.
const TARGET_STREAM: u64 = 1 << 40;
const AUX_STREAM: u64 = 1 << 41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub importance: Option<f64>,
    pub relevant: bool,
}

impl FeatureMeta {
    fn generated(name: String, importance: f64) -> Self {
        Self {
            name,
            importance: Some(importance),
            relevant: importance != 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Tensor,
    y: Vec<f64>,
    features: Vec<FeatureMeta>,
    task: Task,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<f64>, features: Vec<FeatureMeta>, task: Task) -> Result<Self> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::EmptyDataset(format!(
                "{} rows, {} features",
                x.rows(),
                x.cols()
            )));
        }
        if y.len() != x.rows() {
            return Err(Error::dim(
                "dataset",
                format!("{} targets for {} rows", y.len(), x.rows()),
            ));
        }
        if features.len() != x.cols() {
            return Err(Error::dim(
                "dataset",
                format!("{} feature names for {} columns", features.len(), x.cols()),
            ));
        }
        if task == Task::Classification && y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract(
                "classification targets must be 0 or 1".into(),
            ));
        }
        Ok(Self {
            x,
            y,
            features,
            task,
        })
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn features(&self) -> &[FeatureMeta] {
        &self.features
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn n_samples(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    /// Ground-truth importances, when every feature carries one.
    pub fn ground_truth(&self) -> Option<Vec<f64>> {
        self.features.iter().map(|f| f.importance).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            features: self.features.clone(),
            task: self.task,
        }
    }

    /// Keeps the listed feature columns.
    pub fn project(&self, cols: &[usize]) -> Self {
        Self {
            x: self.x.select_cols(cols),
            y: self.y.clone(),
            features: cols.iter().map(|&c| self.features[c].clone()).collect(),
            task: self.task,
        }
    }

    /// Column means, the single-reference background used for Shapley values.
    pub fn feature_means(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        (0..self.n_features())
            .map(|c| self.x.column(c).iter().sum::<f64>() / n)
            .collect()
    }
}

fn column_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform_column(seed: u64, stream: u64, n: usize, low: f64, high: f64) -> Vec<f64> {
    let mut rng = column_rng(seed, stream);
    (0..n).map(|_| rng.random_range(low..high)).collect()
}

fn from_columns(columns: &[Vec<f64>], n: usize) -> Tensor {
    let d = columns.len();
    let mut data = Vec::with_capacity(n * d);
    for r in 0..n {
        data.extend(columns.iter().map(|c| c[r]));
    }
    Tensor::new(n, d, data).expect("columns share a length")
}

fn feature_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("f{i}")).collect()
}

fn check_rows(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("a dataset needs at least one row".into()));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    Ok(())
}

pub fn synthetic_label(relevant: &[f64]) -> f64 {
    let z: f64 = relevant
        .iter()
        .zip(SYNTHETIC_COEFFICIENTS)
        .map(|(x, c)| x * c)
        .sum();
    if z > SYNTHETIC_THRESHOLD {
        1.0
    } else {
        0.0
    }
}

/// Five relevant features on `[4, 10]` followed by `noise` features on
/// `[0, 1]`; the label thresholds a fixed weighted sum of the relevant ones.
pub fn gen_synthetic(n: usize, noise: usize, seed: u64) -> Result<Dataset> {
    check_rows(n)?;
    let d = 5 + noise;
    let columns: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let (low, high) = if j < 5 { (4.0, 10.0) } else { (0.0, 1.0) };
            uniform_column(seed, j as u64, n, low, high)
        })
        .collect();
    let x = from_columns(&columns, n);
    let y = (0..n).map(|r| synthetic_label(&x.row(r)[..5])).collect();
    let features = feature_names(d)
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            FeatureMeta::generated(name, SYNTHETIC_COEFFICIENTS.get(j).copied().unwrap_or(0.0))
        })
        .collect();
    Dataset::new(x, y, features, Task::Classification)
}

pub fn friedman1_target(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

pub fn friedman2_target(x: &[f64]) -> f64 {
    let inner = x[1] * x[2] - 1.0 / (x[1] * x[3]);
    (x[0] * x[0] + inner * inner).sqrt()
}

fn gaussian_noise(seed: u64, n: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let mut rng = column_rng(seed, TARGET_STREAM);
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

/// Ten `U[0, 1]` features; only the first five enter the target.
///
/// Relevance is binary here: relevant features carry importance 1.
pub fn gen_friedman1(n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    check_rows(n)?;
    check_sigma(sigma)?;
    let columns: Vec<Vec<f64>> = (0..10)
        .map(|j| uniform_column(seed, j, n, 0.0, 1.0))
        .collect();
    let x = from_columns(&columns, n);
    let noise = gaussian_noise(seed, n, sigma);
    let y = (0..n).map(|r| friedman1_target(x.row(r)) + noise[r]).collect();
    let features = feature_names(10)
        .into_iter()
        .enumerate()
        .map(|(j, name)| FeatureMeta::generated(name, if j < 5 { 1.0 } else { 0.0 }))
        .collect();
    Dataset::new(x, y, features, Task::Regression)
}

pub fn gen_friedman2(n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    check_rows(n)?;
    check_sigma(sigma)?;
    let bounds = [(0.0, 100.0), (40.0 * PI, 560.0 * PI), (0.0, 1.0), (1.0, 11.0)];
    let columns: Vec<Vec<f64>> = bounds
        .iter()
        .enumerate()
        .map(|(j, &(lo, hi))| uniform_column(seed, j as u64, n, lo, hi))
        .collect();
    let x = from_columns(&columns, n);
    let noise = gaussian_noise(seed, n, sigma);
    let y = (0..n).map(|r| friedman2_target(x.row(r)) + noise[r]).collect();
    let features = feature_names(4)
        .into_iter()
        .map(|name| FeatureMeta::generated(name, 1.0))
        .collect();
    Dataset::new(x, y, features, Task::Regression)
}

/// Distance between the two class means along every informative axis.
pub const CLASS_SEPARATION: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationParams {
    pub n: usize,
    pub d: usize,
    pub informative: usize,
    pub redundant: usize,
    pub duplicate: usize,
}

/// Two Gaussian classes on the informative features, followed by
/// redundant linear combinations of them, duplicated informative columns
/// and standard-normal noise, in that column order.
///
/// Class `c` has mean `±CLASS_SEPARATION / 2` on each informative axis with
/// a seeded sign per axis. Half the rows (rounded down) are class 0.
pub fn gen_classification(p: ClassificationParams, seed: u64) -> Result<Dataset> {
    check_rows(p.n)?;
    if p.informative == 0 {
        return Err(Error::Config("at least one informative feature is required".into()));
    }
    if p.informative + p.redundant + p.duplicate > p.d {
        return Err(Error::Config(format!(
            "{} informative + {} redundant + {} duplicate exceed {} features",
            p.informative, p.redundant, p.duplicate, p.d
        )));
    }
    let n = p.n;
    let mut aux = column_rng(seed, AUX_STREAM);
    let mut labels: Vec<f64> = (0..n).map(|i| if i < n / 2 { 0.0 } else { 1.0 }).collect();
    labels.shuffle(&mut aux);
    let signs: Vec<f64> = (0..p.informative)
        .map(|_| if aux.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(p.d);
    for (j, sign) in signs.iter().enumerate() {
        let mut rng = column_rng(seed, j as u64);
        let col = labels
            .iter()
            .map(|&y| {
                let centre = sign * CLASS_SEPARATION / 2.0 * if y == 1.0 { 1.0 } else { -1.0 };
                let z: f64 = StandardNormal.sample(&mut rng);
                centre + z
            })
            .collect();
        columns.push(col);
    }
    for _ in 0..p.redundant {
        let coeffs: Vec<f64> = (0..p.informative)
            .map(|_| aux.random_range(-1.0..1.0))
            .collect();
        let col = (0..n)
            .map(|r| (0..p.informative).map(|i| coeffs[i] * columns[i][r]).sum())
            .collect();
        columns.push(col);
    }
    for _ in 0..p.duplicate {
        let source = aux.random_range(0..p.informative);
        columns.push(columns[source].clone());
    }
    let first_noise = columns.len();
    for j in first_noise..p.d {
        let mut rng = column_rng(seed, j as u64);
        columns.push((0..n).map(|_| StandardNormal.sample(&mut rng)).collect());
    }

    let x = from_columns(&columns, n);
    let features = feature_names(p.d)
        .into_iter()
        .enumerate()
        .map(|(j, name)| FeatureMeta::generated(name, if j < p.informative { 1.0 } else { 0.0 }))
        .collect();
    Dataset::new(x, labels, features, Task::Classification)
}

/// Appends `k` irrelevant `U[low, high]` columns named `rand1..randk`.
pub fn augment_random_features(
    ds: &Dataset,
    k: usize,
    low: f64,
    high: f64,
    seed: u64,
) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::Config("augmentation needs k >= 1".into()));
    }
    if !(low < high) {
        return Err(Error::Config(format!("empty range [{low}, {high}]")));
    }
    let n = ds.n_samples();
    let columns: Vec<Vec<f64>> = (0..k)
        .map(|j| uniform_column(seed, j as u64, n, low, high))
        .collect();
    let x = ds.x.hstack(&from_columns(&columns, n))?;
    let mut features = ds.features.clone();
    features.extend((1..=k).map(|i| FeatureMeta::generated(format!("rand{i}"), 0.0)));
    Dataset::new(x, ds.y.clone(), features, ds.task)
}

/// Seeded shuffle, then the first `ceil(n * fraction)` rows train.
pub fn split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = ds.n_samples();
    let n_train = ((n as f64 * fraction) - 1e-9).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!(
            "splitting {n} rows at {fraction} leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((ds.select_rows(&idx[..n_train]), ds.select_rows(&idx[n_train..])))
}

/// Reads a headered CSV whose last column, named `y`, is the target.
///
/// The task is classification when every target is 0 or 1.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    match headers.last() {
        Some(last) if last == "y" && headers.len() >= 2 => {}
        _ => {
            return Err(Error::Parse {
                row: 1,
                column: headers.last().cloned().unwrap_or_default(),
                detail: "the last column must be the target `y` after at least one feature".into(),
            })
        }
    }
    let d = headers.len() - 1;
    let mut data = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                detail: format!("{} cells, expected {}", record.len(), headers.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                column: headers[c].clone(),
                detail: format!("`{cell}` is not a number"),
            })?;
            if c < d {
                data.push(value);
            } else {
                y.push(value);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    let task = if y.iter().all(|&v| v == 0.0 || v == 1.0) {
        Task::Classification
    } else {
        Task::Regression
    };
    let features = headers[..d]
        .iter()
        .map(|name| FeatureMeta {
            name: name.clone(),
            importance: None,
            relevant: false,
        })
        .collect();
    let x = Tensor::new(y.len(), d, data)?;
    Dataset::new(x, y, features, task)
}

/// Writes `ds` as CSV with a trailing newline; reals use the shortest
/// representation that parses back to the same value.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = ds.features.iter().map(|f| f.name.as_str()).collect();
    header.push("y");
    writer.write_record(&header)?;
    for r in 0..ds.n_samples() {
        let mut cells: Vec<String> = ds.x.row(r).iter().map(|v| v.to_string()).collect();
        cells.push(ds.y[r].to_string());
        writer.write_record(&cells)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// A generator together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "generator", content = "params")]
pub enum Generator {
    Synthetic { n: usize, noise: usize },
    Friedman1 { n: usize, sigma: f64 },
    Friedman2 { n: usize, sigma: f64 },
    Classification(ClassificationParams),
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::Synthetic { .. } => "synthetic",
            Generator::Friedman1 { .. } => "friedman1",
            Generator::Friedman2 { .. } => "friedman2",
            Generator::Classification(_) => "classification",
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        match *self {
            Generator::Synthetic { n, noise } => gen_synthetic(n, noise, seed),
            Generator::Friedman1 { n, sigma } => gen_friedman1(n, sigma, seed),
            Generator::Friedman2 { n, sigma } => gen_friedman2(n, sigma, seed),
            Generator::Classification(p) => gen_classification(p, seed),
        }
    }

    pub fn sidecar(&self, seed: u64, ds: &Dataset) -> Sidecar {
        let params = match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(mut m)) => m.remove("params").unwrap_or_default(),
            _ => serde_json::Value::Null,
        };
        Sidecar {
            generator: self.name().to_string(),
            params,
            seed,
            ground_truth_importance: ds.ground_truth().unwrap_or_default(),
        }
    }
}

/// Metadata written next to a generated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: u64,
    pub ground_truth_importance: Vec<f64>,
}

impl Sidecar {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_threshold_examples() {
        // z = 11.5 and z = 4.6
        assert_eq!(synthetic_label(&[10.0; 5]), 1.0);
        assert_eq!(synthetic_label(&[4.0; 5]), 0.0);
        // z = 0.5 * 15 = 7.5 exactly; the threshold is strict
        assert_eq!(synthetic_label(&[0.0, 0.0, 0.0, 0.0, 15.0]), 0.0);
        assert_eq!(synthetic_label(&[0.0, 0.0, 0.0, 0.0, 15.000001]), 1.0);
    }

    #[test]
    fn synthetic_layout() {
        let ds = gen_synthetic(200, 5, 42).unwrap();
        assert_eq!(ds.n_features(), 10);
        assert_eq!(
            ds.ground_truth().unwrap(),
            vec![0.2, 0.3, 0.1, 0.05, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert!(ds.features()[..5].iter().all(|f| f.relevant));
        assert!(ds.features()[5..].iter().all(|f| !f.relevant));
        for r in 0..ds.n_samples() {
            assert_eq!(synthetic_label(&ds.x().row(r)[..5]), ds.y()[r]);
        }
    }

    #[test]
    fn noise_columns_do_not_perturb_relevant_draws() {
        let narrow = gen_synthetic(50, 1, 9).unwrap();
        let wide = gen_synthetic(50, 11, 9).unwrap();
        assert_eq!(wide.project(&[0, 1, 2, 3, 4, 5]).x(), narrow.x());
        assert_eq!(wide.y(), narrow.y());
    }

    #[test]
    fn friedman_examples() {
        let y = friedman1_target(&[0.5; 10]);
        let expected = 10.0 * (PI / 4.0).sin() + 5.0 + 2.5;
        assert!((y - expected).abs() < 1e-12);
        assert!((y - 14.5711).abs() < 1e-4);

        let a = friedman1_target(&[0.3, 0.7, 0.5, 0.1, 0.9]);
        let b = 10.0 * (PI * 0.21f64).sin() + 1.0 + 4.5;
        assert!((a - b).abs() < 1e-12);

        // x0 = 0 and x1*x2 = 1/(x1*x3): x1 = 2, x3 = 1, x2 = 1/4
        assert_eq!(friedman2_target(&[0.0, 2.0, 0.25, 1.0]), 0.0);
        let (x1, x3) = (200.0, 3.0);
        let y = friedman2_target(&[5.0, x1, 0.0, x3]);
        assert!((y - (25.0 + 1.0 / (x1 * x3 * x1 * x3)).sqrt()).abs() < 1e-12);
        // inner term 4: x1*x2 - 1/(x1*x3) = 4 with x1 = 1, x3 = 1, x2 = 5
        assert_eq!(friedman2_target(&[3.0, 1.0, 5.0, 1.0]), 5.0);
    }

    #[test]
    fn friedman_generation_is_deterministic() {
        assert_eq!(gen_friedman1(30, 0.0, 3).unwrap(), gen_friedman1(30, 0.0, 3).unwrap());
        assert_eq!(gen_friedman2(30, 1.0, 3).unwrap(), gen_friedman2(30, 1.0, 3).unwrap());
        assert_ne!(gen_friedman1(30, 0.0, 3).unwrap().x(), gen_friedman1(30, 0.0, 4).unwrap().x());
        let f2 = gen_friedman2(500, 0.0, 1).unwrap();
        let bounds = [(0.0, 100.0), (40.0 * PI, 560.0 * PI), (0.0, 1.0), (1.0, 11.0)];
        for (j, (lo, hi)) in bounds.iter().enumerate() {
            assert!(f2.x().column(j).iter().all(|v| v >= lo && v < hi));
        }
        assert!(gen_friedman1(10, -1.0, 0).is_err());
    }

    #[test]
    fn classification_copies_and_counts() {
        let p = ClassificationParams {
            n: 100,
            d: 10,
            informative: 3,
            redundant: 2,
            duplicate: 2,
        };
        let ds = gen_classification(p, 5).unwrap();
        let n1: f64 = ds.y().iter().sum();
        assert_eq!(n1, 50.0);
        for dup in [5, 6] {
            let col = ds.x().column(dup);
            assert!((0..3).any(|src| ds.x().column(src) == col));
        }
        assert_eq!(ds, gen_classification(p, 5).unwrap());
        let bad = ClassificationParams { informative: 8, ..p };
        assert!(gen_classification(bad, 5).is_err());
    }

    #[test]
    fn augmentation_appends_bounded_noise() {
        let ds = gen_synthetic(40, 0, 1).unwrap();
        let aug = augment_random_features(&ds, 17, -100.0, 100.0, 2).unwrap();
        assert_eq!(aug.n_features(), 22);
        for j in 5..22 {
            assert!(aug.x().column(j).iter().all(|v| (-100.0..=100.0).contains(v)));
            assert_eq!(aug.features()[j].importance, Some(0.0));
        }
        assert_eq!(&aug.project(&[0, 1, 2, 3, 4]), &ds);
        assert!(augment_random_features(&ds, 0, -1.0, 1.0, 0).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = gen_synthetic(10, 0, 0).unwrap();
        let (train, test) = split(&ds, 0.8, 11).unwrap();
        assert_eq!((train.n_samples(), test.n_samples()), (8, 2));
        let mut rows: Vec<Vec<u64>> = train
            .x()
            .data()
            .chunks(5)
            .chain(test.x().data().chunks(5))
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut original: Vec<Vec<u64>> = ds
            .x()
            .data()
            .chunks(5)
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        original.sort();
        assert_eq!(rows, original);
        assert_eq!(split(&ds, 0.8, 11).unwrap(), (train, test));

        let one = gen_synthetic(1, 0, 0).unwrap();
        assert!(split(&one, 0.5, 0).is_err());
        assert!(split(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn csv_parse_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        std::fs::write(&good, "f1,f2,y\n1,2,0\n3,4,1").unwrap();
        let ds = load_csv(&good).unwrap();
        assert_eq!((ds.n_samples(), ds.n_features()), (2, 2));
        assert_eq!(ds.task(), Task::Classification);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "f1,f2,y\nabc,2,0\n").unwrap();
        match load_csv(&bad) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "f1");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "f1,y\n").unwrap();
        assert!(matches!(load_csv(&empty), Err(Error::EmptyDataset(_))));
        assert!(matches!(load_csv(dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn saved_csv_ends_with_newline() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        save_csv(&gen_friedman1(3, 0.0, 0).unwrap(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("f1,f2,f3,f4,f5,f6,f7,f8,f9,f10,y\n"));
        assert!(text.ends_with('\n'));
    }
}
