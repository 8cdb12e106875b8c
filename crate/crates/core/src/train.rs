//! Full-batch Adam training with per-epoch loss/accuracy records and a
//! trajectory of the scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, BCE_CLIP};
use crate::datasets::{Dataset, Task};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scores::{extract_ranking, sparsity_penalty_node, Ranking, SparsityKind};
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Bce,
    Mse,
}

impl LossKind {
    /// BCE for classification, MSE for regression.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => LossKind::Bce,
            Task::Regression => LossKind::Mse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    #[default]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "lambda")]
pub enum Regularization {
    #[default]
    None,
    Entropy(f64),
    L1(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub loss: LossKind,
    #[serde(default)]
    pub batch: BatchMode,
    pub seed: u64,
    pub record_scores_every: usize,
    #[serde(default)]
    pub regularization: Regularization,
}

impl TrainConfig {
    pub fn new(epochs: usize, loss: LossKind) -> Self {
        Self {
            epochs,
            lr: DEFAULT_LR,
            loss,
            batch: BatchMode::Full,
            seed: 0,
            record_scores_every: 10,
            regularization: Regularization::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if self.record_scores_every == 0 {
            return Err(Error::Config("record_scores_every must be at least 1".into()));
        }
        match self.regularization {
            Regularization::Entropy(l) | Regularization::L1(l) if !(l >= 0.0 && l.is_finite()) => {
                Err(Error::Config(format!("penalty weight must be >= 0, got {l}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresSnapshot {
    pub epoch: usize,
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub per_epoch: Vec<EpochRecord>,
    pub scores_trajectory: Vec<ScoresSnapshot>,
    pub ranking: Option<Ranking>,
    pub wall_time_ms: f64,
    pub ranking_extraction_time_ms: f64,
}

impl TrainReport {
    /// Scores trajectory as CSV with columns `epoch, s_1, ..., s_d`.
    pub fn trajectory_csv(&self) -> String {
        let d = self.scores_trajectory.first().map_or(0, |s| s.s.len());
        let mut out = String::from("epoch");
        for i in 1..=d {
            let _ = write!(out, ",s_{i}");
        }
        out.push('\n');
        for snap in &self.scores_trajectory {
            let _ = write!(out, "{}", snap.epoch);
            for v in &snap.s {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Bias-corrected Adam moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, adam: Adam) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(
            "adam_step",
            format!(
                "{} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = adam.beta1 * state.m[i] + (1.0 - adam.beta1) * g;
        state.v[i] = adam.beta2 * state.v[i] + (1.0 - adam.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= adam.lr * m_hat / (v_hat.sqrt() + adam.eps);
    }
    Ok(())
}

fn check_lengths(op: &'static str, pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::dim(
            op,
            format!("{} predictions for {} targets", pred.len(), target.len()),
        ));
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clipped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths("bce_loss", pred, target)?;
    if target.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Contract("bce targets must be 0 or 1".into()));
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths("mse_loss", pred, target)?;
    let total: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(total / pred.len() as f64)
}

/// How predictions and targets are turned into classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AccuracyRule {
    /// Predictions above 0.5 are class 1.
    Classification,
    /// Both sides are binarized at the train-split median target.
    Regression { median: f64 },
}

pub fn accuracy(pred: &[f64], target: &[f64], rule: AccuracyRule) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred
        .iter()
        .zip(target)
        .filter(|(&p, &t)| match rule {
            AccuracyRule::Classification => (p > 0.5) == (t == 1.0),
            AccuracyRule::Regression { median } => (p > median) == (t > median),
        })
        .count();
    hits as f64 / pred.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Min-max scaling fitted on the training targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub min: f64,
    pub max: f64,
}

impl TargetScaler {
    pub fn fit(y: &[f64]) -> Self {
        let min = y.iter().copied().fold(f64::INFINITY, f64::min);
        let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { min, max }
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let span = if self.max > self.min { self.max - self.min } else { 1.0 };
        y.iter().map(|v| (v - self.min) / span).collect()
    }
}

/// Targets as seen by the loss, and the accuracy rule for the task.
pub fn prepared_targets(train: &Dataset, test: &Dataset) -> (Vec<f64>, Vec<f64>, AccuracyRule) {
    match train.task() {
        Task::Classification => (
            train.y().to_vec(),
            test.y().to_vec(),
            AccuracyRule::Classification,
        ),
        Task::Regression => {
            let scaler = TargetScaler::fit(train.y());
            let ytr = scaler.apply(train.y());
            let yte = scaler.apply(test.y());
            let rule = AccuracyRule::Regression {
                median: median(&ytr),
            };
            (ytr, yte, rule)
        }
    }
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric { .. } => Error::Diverged { epoch },
        other => other,
    }
}

/// Trains `model` in place on the full training set for `cfg.epochs` epochs.
///
/// Per-epoch records hold the data loss and training accuracy evaluated
/// before that epoch's update. Regression targets are min-max scaled with
/// training statistics.
pub fn train(model: &mut Model, train_ds: &Dataset, test_ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let started = Instant::now();
    for ds in [train_ds, test_ds] {
        if ds.n_features() != model.d_in() {
            return Err(Error::dim(
                "train",
                format!("{} features for a model over {}", ds.n_features(), model.d_in()),
            ));
        }
    }
    if cfg.loss == LossKind::Bce && train_ds.task() != Task::Classification {
        return Err(Error::Contract("bce loss requires classification targets".into()));
    }
    let (y_train, y_test, rule) = prepared_targets(train_ds, test_ds);
    let target = Tensor::col_vector(&y_train);
    let adam = Adam::with_lr(cfg.lr);

    let mut states: BTreeMap<String, AdamState> = model
        .parameters()
        .iter()
        .map(|(name, t)| (name.clone(), AdamState::new(t.len())))
        .collect();
    let mut scores_state = model.scores().map(|s| AdamState::new(s.len()));

    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    let mut trajectory = Vec::new();
    if let Some(s) = model.scores() {
        trajectory.push(ScoresSnapshot {
            epoch: 0,
            s: s.scores().to_vec(),
        });
    }

    for epoch in 1..=cfg.epochs {
        let on_numeric = diverged(epoch);
        let mut graph = Graph::new();
        let x = graph.leaf(train_ds.x().clone());
        let y = graph.leaf(target.clone());
        let bound = model.bind(&mut graph, x).map_err(&on_numeric)?;
        let data_loss = match cfg.loss {
            LossKind::Bce => graph.bce_loss(bound.output, y),
            LossKind::Mse => graph.mse_loss(bound.output, y),
        }
        .map_err(&on_numeric)?;
        let total = match (cfg.regularization, bound.weights) {
            (Regularization::Entropy(l), Some(w)) if l > 0.0 => {
                let p = sparsity_penalty_node(&mut graph, w, SparsityKind::Entropy, l)?;
                graph.add(data_loss, p).map_err(&on_numeric)?
            }
            (Regularization::L1(l), Some(w)) if l > 0.0 => {
                let p = sparsity_penalty_node(&mut graph, w, SparsityKind::L1, l)?;
                graph.add(data_loss, p).map_err(&on_numeric)?
            }
            _ => data_loss,
        };
        let loss = graph.value(data_loss).item()?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let preds = graph.value(bound.output).data();
        per_epoch.push(EpochRecord {
            epoch,
            loss,
            accuracy: accuracy(preds, &y_train, rule),
        });

        let grads = graph.backward(total)?;
        for (name, node) in &bound.parameters {
            let g = grads.get_or_zeros(&graph, *node);
            let mut value = model.parameters()[name].clone();
            let state = states.get_mut(name).expect("state per parameter");
            adam_step(value.data_mut(), g.data(), state, adam)?;
            if !value.all_finite() {
                return Err(Error::Diverged { epoch });
            }
            model.set_parameter(name, value)?;
        }
        if let (Some(node), Some(state), Some(layer)) =
            (bound.scores, scores_state.as_mut(), model.scores_mut())
        {
            let g = grads.get_or_zeros(&graph, node);
            let mut s = layer.scores().to_vec();
            adam_step(&mut s, g.data(), state, adam)?;
            layer.set_scores(s).map_err(|_| Error::Diverged { epoch })?;
            if epoch % cfg.record_scores_every == 0 || epoch == cfg.epochs {
                trajectory.push(ScoresSnapshot {
                    epoch,
                    s: layer.scores().to_vec(),
                });
            }
        }
    }

    let train_pred = model.predict(train_ds.x()).map_err(diverged(cfg.epochs))?;
    let final_train_loss = match cfg.loss {
        LossKind::Bce => bce_loss(&train_pred, &y_train)?,
        LossKind::Mse => mse_loss(&train_pred, &y_train)?,
    };
    let test_pred = model.predict(test_ds.x()).map_err(diverged(cfg.epochs))?;

    let (ranking, ranking_extraction_time_ms) = match model.scores() {
        Some(layer) => {
            let t0 = Instant::now();
            let r = extract_ranking(layer);
            (Some(r), t0.elapsed().as_secs_f64() * 1e3)
        }
        None => (None, 0.0),
    };

    Ok(TrainReport {
        final_train_loss,
        train_accuracy: accuracy(&train_pred, &y_train, rule),
        test_accuracy: accuracy(&test_pred, &y_test, rule),
        per_epoch,
        scores_trajectory: trajectory,
        ranking,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        ranking_extraction_time_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_friedman1, gen_synthetic, split, FeatureMeta};
    use crate::model::ModelConfig;

    #[test]
    fn adam_ignores_zero_gradient() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut st, Adam::with_lr(0.1)).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        // closed form: m_hat = g exactly, v_hat = g^2 exactly, so every step is
        // lr * |g| / (|g| + eps)
        let adam = Adam::with_lr(0.01);
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        let g = 3.0;
        let mut last = 0.0;
        for _ in 0..200 {
            let before = p[0];
            adam_step(&mut p, &[g], &mut st, adam).unwrap();
            last = before - p[0];
        }
        let expected = adam.lr * g / (g + adam.eps);
        assert!((last - expected).abs() < 1e-12);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = vec![0.5, 0.1];
            let mut st = AdamState::new(2);
            for i in 0..10 {
                adam_step(&mut p, &[i as f64, -1.0], &mut st, Adam::with_lr(0.01)).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(mse_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let l = bce_loss(&[0.5; 4], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&[0.5], &[2.0]).is_err());
        assert!(mse_loss(&[0.5], &[0.1, 0.2]).is_err());
        assert!(bce_loss(&[0.0], &[1.0]).unwrap().is_finite());
    }

    #[test]
    fn accuracy_examples() {
        let t = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(accuracy(&[0.1, 0.9, 0.8, 0.2], &t, AccuracyRule::Classification), 1.0);
        assert_eq!(accuracy(&[1.0, 0.0, 0.0, 1.0], &t, AccuracyRule::Classification), 0.0);
        assert_eq!(accuracy(&[0.1, 0.9, 0.2, 0.9], &t, AccuracyRule::Classification), 0.5);
        let rule = AccuracyRule::Regression { median: 0.5 };
        assert_eq!(accuracy(&[0.6, 0.4], &[0.9, 0.1], rule), 1.0);
    }

    #[test]
    fn median_and_scaler() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let s = TargetScaler::fit(&[2.0, 4.0, 6.0]);
        assert_eq!(s.apply(&[2.0, 4.0, 8.0]), vec![0.0, 0.5, 1.5]);
    }

    fn one_row() -> Dataset {
        Dataset::new(
            Tensor::row_vector(&[0.3, -0.2]),
            vec![1.0],
            vec![
                FeatureMeta { name: "a".into(), importance: None, relevant: true },
                FeatureMeta { name: "b".into(), importance: None, relevant: true },
            ],
            Task::Classification,
        )
        .unwrap()
    }

    #[test]
    fn memorizes_a_single_sample() {
        let ds = one_row();
        let mut model = Model::build(ModelConfig::mlp(2, vec![4], true), 0).unwrap();
        let mut cfg = TrainConfig::new(8000, LossKind::Bce);
        cfg.lr = 0.05;
        let report = train(&mut model, &ds, &ds, &cfg).unwrap();
        assert!(report.final_train_loss < 1e-6, "{}", report.final_train_loss);
        assert_eq!(report.per_epoch.len(), 8000);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let ds = one_row();
        let mut model = Model::build(ModelConfig::mlp(2, vec![4], true), 1).unwrap();
        let before = model.clone();
        let mut cfg = TrainConfig::new(20, LossKind::Bce);
        cfg.lr = 0.0;
        let report = train(&mut model, &ds, &ds, &cfg).unwrap();
        assert_eq!(model, before);
        assert!(report.per_epoch.iter().all(|r| r.loss == report.per_epoch[0].loss));
    }

    #[test]
    fn trajectory_is_recorded_every_k_epochs() {
        let ds = gen_synthetic(50, 2, 0).unwrap();
        let (tr, te) = split(&ds, 0.8, 0).unwrap();
        let mut model = Model::build(ModelConfig::mlp(7, vec![4], true), 0).unwrap();
        let mut cfg = TrainConfig::new(25, LossKind::Bce);
        cfg.record_scores_every = 10;
        let report = train(&mut model, &tr, &te, &cfg).unwrap();
        let epochs: Vec<usize> = report.scores_trajectory.iter().map(|s| s.epoch).collect();
        assert_eq!(epochs, vec![0, 10, 20, 25]);
        let csv = report.trajectory_csv();
        assert!(csv.starts_with("epoch,s_1,s_2,s_3,s_4,s_5,s_6,s_7\n0,0,0,"));
        assert_eq!(csv.lines().count(), 5);
        assert!(report.ranking.is_some());
    }

    #[test]
    fn rejects_bce_on_regression_and_width_mismatch() {
        let ds = gen_friedman1(20, 0.0, 0).unwrap();
        let (tr, te) = split(&ds, 0.8, 0).unwrap();
        let mut model = Model::build(ModelConfig::mlp(10, vec![4], false), 0).unwrap();
        assert!(train(&mut model, &tr, &te, &TrainConfig::new(2, LossKind::Bce)).is_err());
        let report = train(&mut model, &tr, &te, &TrainConfig::new(2, LossKind::Mse)).unwrap();
        assert!(report.ranking.is_none());
        let mut small = Model::build(ModelConfig::mlp(3, vec![4], false), 0).unwrap();
        assert!(matches!(
            train(&mut small, &tr, &te, &TrainConfig::new(2, LossKind::Mse)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn huge_learning_rate_reports_divergence_epoch() {
        let ds = gen_friedman1(40, 0.0, 1).unwrap();
        let (tr, te) = split(&ds, 0.8, 0).unwrap();
        let mut model = Model::build(ModelConfig::mlp(10, vec![8], true), 0).unwrap();
        let mut cfg = TrainConfig::new(50, LossKind::Mse);
        cfg.lr = 1e300;
        match train(&mut model, &tr, &te, &cfg) {
            Err(Error::Diverged { epoch }) => assert!((1..=50).contains(&epoch)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
