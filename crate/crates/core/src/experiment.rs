//! End-to-end pipelines shared by the command line and the test suites:
//! split, fit, explain and compare.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{split, Dataset};
use crate::error::Result;
use crate::explain::{choose_samples, global_importance, kernel_shap, mean, rank_stability, ShapResult};
use crate::model::{Model, ModelConfig};
use crate::scores::Ranking;
use crate::train::{train, TrainConfig, TrainReport};

pub const TRAIN_FRACTION: f64 = 0.8;

/// A trained model with the split it was trained on.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Model,
    pub report: TrainReport,
    pub train: Dataset,
    pub test: Dataset,
}

/// Splits 80/20 with `split_seed`, builds the model with `model_seed` and
/// trains it.
pub fn fit(ds: &Dataset, config: ModelConfig, cfg: &TrainConfig, split_seed: u64, model_seed: u64) -> Result<Fitted> {
    let (train_ds, test_ds) = split(ds, TRAIN_FRACTION, split_seed)?;
    let mut model = Model::build(config, model_seed)?;
    let report = train(&mut model, &train_ds, &test_ds, cfg)?;
    Ok(Fitted {
        model,
        report,
        train: train_ds,
        test: test_ds,
    })
}

/// Kernel SHAP on up to `samples` random test rows, against the mean of the
/// training rows.
pub fn explain_test_rows(
    model: &Model,
    train_ds: &Dataset,
    test_ds: &Dataset,
    samples: usize,
    coalitions: usize,
    seed: u64,
) -> Result<ShapResult> {
    let rows = choose_samples(test_ds.n_samples(), samples, seed);
    let x = test_ds.x().select_rows(&rows);
    kernel_shap(model, &x, &train_ds.feature_means(), coalitions, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub runs: usize,
    pub base_seed: u64,
    pub samples: usize,
    pub coalitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: usize,
    pub scores_rankings: Vec<Ranking>,
    pub shap_rankings: Vec<Ranking>,
    pub scores_variance: Vec<f64>,
    pub shap_variance: Vec<f64>,
    pub scores_mean_variance: f64,
    pub shap_mean_variance: f64,
    /// Whether the scores rankings vary no more than the SHAP rankings.
    pub scores_at_least_as_stable: bool,
}

/// Retrains a gated model `runs` times on one fixed split, changing only
/// the model seed, and explains each run both ways.
///
/// Run `i` uses model seed `base_seed + i`; the split and the explained
/// rows come from `base_seed`. SHAP explains the same trained model whose
/// scores are ranked.
pub fn stability_study(
    ds: &Dataset,
    config: &ModelConfig,
    cfg: &TrainConfig,
    study: &StabilityConfig,
) -> Result<StabilityReport> {
    let (train_ds, test_ds) = split(ds, TRAIN_FRACTION, study.base_seed)?;
    let mut gated = config.clone();
    gated.gated = true;
    let runs: Vec<Result<(Ranking, Ranking)>> = (0..study.runs)
        .into_par_iter()
        .map(|i| {
            let seed = study.base_seed.wrapping_add(i as u64);
            let mut model = Model::build(gated.clone(), seed)?;
            let mut run_cfg = cfg.clone();
            run_cfg.seed = seed;
            let report = train(&mut model, &train_ds, &test_ds, &run_cfg)?;
            let shap = explain_test_rows(
                &model,
                &train_ds,
                &test_ds,
                study.samples,
                study.coalitions,
                study.base_seed,
            )?;
            let ours = report.ranking.expect("gated model yields a ranking");
            Ok((ours, global_importance(&shap)))
        })
        .collect();
    let mut scores_rankings = Vec::with_capacity(study.runs);
    let mut shap_rankings = Vec::with_capacity(study.runs);
    for run in runs {
        let (a, b) = run?;
        scores_rankings.push(a);
        shap_rankings.push(b);
    }
    let scores_variance = rank_stability(&scores_rankings)?;
    let shap_variance = rank_stability(&shap_rankings)?;
    let scores_mean_variance = mean(&scores_variance);
    let shap_mean_variance = mean(&shap_variance);
    Ok(StabilityReport {
        runs: study.runs,
        scores_rankings,
        shap_rankings,
        scores_variance,
        shap_variance,
        scores_mean_variance,
        shap_mean_variance,
        scores_at_least_as_stable: scores_mean_variance <= shap_mean_variance,
    })
}
