//! Shapley-value baselines and ranking comparison metrics.
//!
//! Both [`exact_shapley`] and [`kernel_shap`] use a single reference point:
//! features absent from a coalition take their background value.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::scores::{Ranking, RankingSource};
use crate::tensor::Tensor;

/// Largest feature count [`exact_shapley`] will enumerate.
pub const MAX_EXACT_FEATURES: usize = 15;
pub const DEFAULT_SAMPLES: usize = 100;
pub const DEFAULT_COALITIONS: usize = 2048;

/// Anything that maps a batch of rows to one output per row.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    fn predict_batch(&self, x: &Tensor) -> Result<Vec<f64>>;
}

impl Predictor for Model {
    fn n_features(&self) -> usize {
        self.d_in()
    }

    fn predict_batch(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.predict(x)
    }
}

/// A predictor defined by a per-row closure.
pub struct FnPredictor<F> {
    d: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnPredictor<F> {
    pub fn new(d: usize, f: F) -> Self {
        Self { d, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn n_features(&self) -> usize {
        self.d
    }

    fn predict_batch(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok((0..x.rows()).map(|r| (self.f)(x.row(r))).collect())
    }
}

fn check_point(op: &'static str, model: &dyn Predictor, x: &[f64], background: &[f64]) -> Result<()> {
    let d = model.n_features();
    if x.len() != d || background.len() != d {
        return Err(Error::dim(
            op,
            format!(
                "sample of {} and background of {} for a model over {d}",
                x.len(),
                background.len()
            ),
        ));
    }
    Ok(())
}

/// Rows of `x` with absent features (mask bit clear) set to the background.
fn masked_inputs(masks: &[Vec<bool>], x: &[f64], background: &[f64]) -> Tensor {
    let d = x.len();
    let mut data = Vec::with_capacity(masks.len() * d);
    for mask in masks {
        data.extend((0..d).map(|j| if mask[j] { x[j] } else { background[j] }));
    }
    Tensor::new(masks.len(), d, data).expect("one value per feature")
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Brute-force Shapley values over all `2^d` coalitions.
pub fn exact_shapley(model: &dyn Predictor, x: &[f64], background: &[f64]) -> Result<Vec<f64>> {
    check_point("exact_shapley", model, x, background)?;
    let d = x.len();
    if d > MAX_EXACT_FEATURES {
        return Err(Error::Config(format!(
            "exact Shapley enumeration supports at most {MAX_EXACT_FEATURES} features, got {d}"
        )));
    }
    let masks: Vec<Vec<bool>> = (0..1usize << d)
        .map(|m| (0..d).map(|j| m >> j & 1 == 1).collect())
        .collect();
    let values = model.predict_batch(&masked_inputs(&masks, x, background))?;
    // |S|! (d - |S| - 1)! / d! = 1 / (d * C(d - 1, |S|))
    let weight: Vec<f64> = (0..d).map(|s| 1.0 / (d as f64 * binomial(d - 1, s))).collect();
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for m in 0..1usize << d {
            if m & bit == 0 {
                let size = m.count_ones() as usize;
                *p += weight[size] * (values[m | bit] - values[m]);
            }
        }
    }
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapResult {
    /// Shapley values, one row per explained sample.
    pub phi: Tensor,
    /// Mean absolute Shapley value per feature.
    pub global: Vec<f64>,
    /// Model output at the background point.
    pub base_value: f64,
    pub n_samples: usize,
    /// Coalitions evaluated per sample, counting the empty and full ones.
    pub n_coalitions: usize,
    pub elapsed_ms: f64,
}

/// Shapley kernel weight of a coalition of `size` out of `d` features.
pub fn shapley_kernel(d: usize, size: usize) -> f64 {
    (d as f64 - 1.0) / (binomial(d, size) * size as f64 * (d - size) as f64)
}

/// Coalitions (excluding the empty and full ones) with regression weights.
struct CoalitionPlan {
    masks: Vec<Vec<bool>>,
    weights: Vec<f64>,
}

fn mask_from(members: impl IntoIterator<Item = usize>, d: usize) -> Vec<bool> {
    let mut mask = vec![false; d];
    for j in members {
        mask[j] = true;
    }
    mask
}

fn combinations(d: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + d - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Every proper coalition with its kernel weight.
fn full_plan(d: usize) -> CoalitionPlan {
    let mut masks = Vec::new();
    let mut weights = Vec::new();
    for m in 1..(1usize << d) - 1 {
        let mask: Vec<bool> = (0..d).map(|j| m >> j & 1 == 1).collect();
        weights.push(shapley_kernel(d, m.count_ones() as usize));
        masks.push(mask);
    }
    CoalitionPlan { masks, weights }
}

/// Enumerates whole coalition sizes (smallest and largest first) while the
/// budget covers them, then samples the remaining sizes in complementary
/// pairs. Weights of sampled coalitions are proportional to how often they
/// were drawn and share the kernel mass of the sizes not enumerated.
fn sampled_plan(d: usize, budget: usize, rng: &mut ChaCha8Rng) -> CoalitionPlan {
    // sizes s and d - s form one class; the middle size of an even d is unpaired
    let n_sizes = (d - 1).div_ceil(2);
    let n_paired = (d - 1) / 2;
    // kernel mass of each size class s and its complement d - s
    let mut size_mass: Vec<f64> = (1..=n_sizes)
        .map(|s| {
            let w = (d as f64 - 1.0) / (s as f64 * (d - s) as f64);
            if s <= n_paired {
                2.0 * w
            } else {
                w
            }
        })
        .collect();
    let total: f64 = size_mass.iter().sum();
    size_mass.iter_mut().for_each(|w| *w /= total);

    let mut masks = Vec::new();
    let mut weights = Vec::new();
    let mut left = budget;
    let mut mass_left = 1.0;
    let mut next_size = 0;
    while next_size < n_sizes {
        let s = next_size + 1;
        let paired = s <= n_paired;
        let count = binomial(d, s) * if paired { 2.0 } else { 1.0 };
        let share = size_mass[next_size] / mass_left;
        if (left as f64) * share < count - 1e-8 {
            break;
        }
        let w = size_mass[next_size] / count;
        combinations(d, s, |members| {
            let mask = mask_from(members.iter().copied(), d);
            if paired {
                masks.push(mask.iter().map(|b| !b).collect());
                weights.push(w);
            }
            masks.push(mask);
            weights.push(w);
        });
        left -= count.round() as usize;
        mass_left -= size_mass[next_size];
        next_size += 1;
    }

    if next_size < n_sizes && left > 0 {
        let remaining: Vec<(usize, f64)> = (next_size..n_sizes)
            .map(|i| (i + 1, size_mass[i] / mass_left))
            .collect();
        let mut drawn: Vec<(Vec<bool>, f64)> = Vec::new();
        let mut position: std::collections::HashMap<Vec<bool>, usize> = std::collections::HashMap::new();
        let mut record = |mask: Vec<bool>, drawn: &mut Vec<(Vec<bool>, f64)>| -> bool {
            match position.get(&mask) {
                Some(&i) => {
                    drawn[i].1 += 1.0;
                    false
                }
                None => {
                    position.insert(mask.clone(), drawn.len());
                    drawn.push((mask, 1.0));
                    true
                }
            }
        };
        let mut distinct = 0;
        let mut attempts = 0;
        let max_attempts = 4 * budget + 100;
        while distinct < left && attempts < max_attempts {
            attempts += 1;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut size = remaining.last().map_or(1, |r| r.0);
            for &(s, p) in &remaining {
                acc += p;
                if u < acc {
                    size = s;
                    break;
                }
            }
            let members = index::sample(rng, d, size);
            let mask = mask_from(members.iter(), d);
            let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
            let pair = size <= n_paired;
            if record(mask, &mut drawn) {
                distinct += 1;
            }
            if pair && distinct < left && record(complement, &mut drawn) {
                distinct += 1;
            }
        }
        let draws: f64 = drawn.iter().map(|(_, c)| c).sum();
        for (mask, c) in drawn {
            masks.push(mask);
            weights.push(mass_left * c / draws);
        }
    }
    CoalitionPlan { masks, weights }
}

/// Weighted least squares with `sum(phi) = delta` imposed by eliminating the
/// last coefficient.
fn solve_constrained(
    plan: &CoalitionPlan,
    targets: &[f64],
    delta: f64,
    d: usize,
) -> Result<Vec<f64>> {
    if d == 1 {
        return Ok(vec![delta]);
    }
    let m = plan.masks.len();
    let unknowns = d - 1;
    let mut a = DMatrix::<f64>::zeros(m, unknowns);
    let mut b = DVector::<f64>::zeros(m);
    for (row, (mask, (&w, &t))) in plan.masks.iter().zip(plan.weights.iter().zip(targets)).enumerate() {
        let sw = w.sqrt();
        let last = if mask[d - 1] { 1.0 } else { 0.0 };
        for j in 0..unknowns {
            let zj = if mask[j] { 1.0 } else { 0.0 };
            a[(row, j)] = sw * (zj - last);
        }
        b[row] = sw * (t - last * delta);
    }
    let svd = a.svd(true, true);
    let s = &svd.singular_values;
    let max = s.max();
    if m < unknowns || max == 0.0 || s.min() / max < 1e-10 {
        return Err(Error::SingularRegression(d));
    }
    let head = svd
        .solve(&b, 0.0)
        .map_err(|_| Error::SingularRegression(d))?;
    let mut phi: Vec<f64> = head.iter().copied().collect();
    let rest: f64 = phi.iter().sum();
    phi.push(delta - rest);
    Ok(phi)
}

/// Kernel SHAP estimates for every row of `x`.
///
/// With `n_coalitions >= 2^d` every coalition is evaluated and the result
/// equals the exact Shapley values. Sample `k` draws from its own stream of
/// the seeded generator, so results do not depend on scheduling.
pub fn kernel_shap(
    model: &dyn Predictor,
    x: &Tensor,
    background: &[f64],
    n_coalitions: usize,
    seed: u64,
) -> Result<ShapResult> {
    let started = Instant::now();
    let d = model.n_features();
    if x.cols() != d || background.len() != d {
        return Err(Error::dim(
            "kernel_shap",
            format!(
                "{} columns and background of {} for a model over {d}",
                x.cols(),
                background.len()
            ),
        ));
    }
    if x.rows() == 0 {
        return Err(Error::EmptyDataset("no samples to explain".into()));
    }
    if n_coalitions < d + 2 {
        return Err(Error::Config(format!(
            "kernel SHAP needs at least d + 2 = {} coalitions, got {n_coalitions}",
            d + 2
        )));
    }
    let base = model.predict_batch(&Tensor::row_vector(background))?[0];
    let exhaustive = d < usize::BITS as usize - 1 && (1usize << d) <= n_coalitions;
    let shared = if exhaustive { Some(full_plan(d)) } else { None };

    let rows: Vec<Result<Vec<f64>>> = (0..x.rows())
        .into_par_iter()
        .map(|k| {
            let sample = x.row(k);
            let owned;
            let plan = match &shared {
                Some(p) => p,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(k as u64);
                    owned = sampled_plan(d, n_coalitions - 2, &mut rng);
                    &owned
                }
            };
            let fx = model.predict_batch(&Tensor::row_vector(sample))?[0];
            let values = model.predict_batch(&masked_inputs(&plan.masks, sample, background))?;
            let targets: Vec<f64> = values.iter().map(|v| v - base).collect();
            solve_constrained(plan, &targets, fx - base, d)
        })
        .collect();

    let mut data = Vec::with_capacity(x.rows() * d);
    for row in rows {
        data.extend(row?);
    }
    let phi = Tensor::new(x.rows(), d, data)?;
    let global = mean_abs_columns(&phi);
    let n_coalitions = if exhaustive { 1usize << d } else { n_coalitions };
    Ok(ShapResult {
        phi,
        global,
        base_value: base,
        n_samples: x.rows(),
        n_coalitions,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

fn mean_abs_columns(phi: &Tensor) -> Vec<f64> {
    let n = phi.rows() as f64;
    (0..phi.cols())
        .map(|c| phi.column(c).iter().map(|v| v.abs()).sum::<f64>() / n)
        .collect()
}

/// Ranking by mean absolute Shapley value.
pub fn global_importance(shap: &ShapResult) -> Ranking {
    Ranking::from_values(shap.global.clone(), RankingSource::Shap)
}

/// Picks `k` distinct rows (all of them when `k >= n`), in ascending order.
pub fn choose_samples(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rows = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec();
    rows.sort_unstable();
    rows
}

fn check_same_features(a: &Ranking, b: &Ranking) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(
            "ranking comparison",
            format!("{} features against {}", a.len(), b.len()),
        ));
    }
    Ok(())
}

fn rho_from_positions(pa: &[usize], pb: &[usize]) -> Result<f64> {
    let m = pa.len();
    if m < 2 {
        return Err(Error::Contract(format!(
            "spearman needs at least 2 features, got {m}"
        )));
    }
    let sum_sq: f64 = pa
        .iter()
        .zip(pb)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    let m = m as f64;
    Ok(1.0 - 6.0 * sum_sq / (m * (m * m - 1.0)))
}

/// Spearman correlation of two rankings over the same features.
pub fn spearman(a: &Ranking, b: &Ranking) -> Result<f64> {
    check_same_features(a, b)?;
    rho_from_positions(&a.positions(), &b.positions())
}

/// Spearman correlation over a subset of features, each ranking re-ranked
/// within the subset.
pub fn spearman_on(a: &Ranking, b: &Ranking, features: &[usize]) -> Result<f64> {
    check_same_features(a, b)?;
    if let Some(&f) = features.iter().find(|&&f| f >= a.len()) {
        return Err(Error::dim("spearman_on", format!("feature {f} of {}", a.len())));
    }
    let relative = |r: &Ranking| -> Vec<usize> {
        let kept: Vec<usize> = r.order.iter().copied().filter(|f| features.contains(f)).collect();
        features
            .iter()
            .map(|f| kept.iter().position(|k| k == f).expect("feature kept"))
            .collect()
    };
    rho_from_positions(&relative(a), &relative(b))
}

/// Spearman correlation against a ground-truth ranking, over the features
/// with nonzero ground-truth importance.
pub fn spearman_vs_ground_truth(ours: &Ranking, gt: &Ranking) -> Result<f64> {
    let relevant: Vec<usize> = (0..gt.len()).filter(|&f| gt.values[f] != 0.0).collect();
    spearman_on(ours, gt, &relevant)
}

/// One row of a rank-agreement table. Features are numbered from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub position: usize,
    pub ground_truth: usize,
    pub ours: usize,
    pub shap: usize,
    pub ours_matches: bool,
    pub shap_matches: bool,
}

/// For each of the top `k` ground-truth positions, the features the two
/// methods put there.
pub fn rank_match_table(ours: &Ranking, shap: &Ranking, gt: &Ranking, k: usize) -> Result<Vec<MatchRecord>> {
    check_same_features(ours, gt)?;
    check_same_features(shap, gt)?;
    if k > gt.len() {
        return Err(Error::Config(format!("top-{k} of {} features", gt.len())));
    }
    Ok((0..k)
        .map(|p| MatchRecord {
            position: p + 1,
            ground_truth: gt.order[p] + 1,
            ours: ours.order[p] + 1,
            shap: shap.order[p] + 1,
            ours_matches: ours.order[p] == gt.order[p],
            shap_matches: shap.order[p] == gt.order[p],
        })
        .collect())
}

/// Population variance of each feature's rank position across runs.
pub fn rank_stability(rankings: &[Ranking]) -> Result<Vec<f64>> {
    if rankings.len() < 2 {
        return Err(Error::Contract(format!(
            "rank stability needs at least 2 rankings, got {}",
            rankings.len()
        )));
    }
    let d = rankings[0].len();
    if rankings.iter().any(|r| r.len() != d) {
        return Err(Error::dim("rank_stability", "rankings over different features"));
    }
    let positions: Vec<Vec<usize>> = rankings.iter().map(Ranking::positions).collect();
    let n = rankings.len() as f64;
    Ok((0..d)
        .map(|f| {
            let mean = positions.iter().map(|p| p[f] as f64).sum::<f64>() / n;
            positions.iter().map(|p| (p[f] as f64 - mean).powi(2)).sum::<f64>() / n
        })
        .collect())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
