//! The learnable score vector, its softmax weights and the rankings derived
//! from them.
//!
//! A [`ScoresLayer`] holds one unbounded score per gated unit. Inputs are
//! multiplied element-wise by `softmax(scores)` before the next linear map,
//! so the layer output is linear in the input and nonlinear in the scores.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "values")]
pub enum ScoresInit {
    #[default]
    Zero,
    /// i.i.d. uniform on `[-1, 1]`.
    RandomUniform,
    FromValues(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresLayer {
    scores: Vec<f64>,
}

impl ScoresLayer {
    pub fn init(d: usize, strategy: &ScoresInit, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("a scores layer needs at least one unit".into()));
        }
        let scores = match strategy {
            ScoresInit::Zero => vec![0.0; d],
            ScoresInit::RandomUniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect()
            }
            ScoresInit::FromValues(values) => {
                if values.len() != d {
                    return Err(Error::dim(
                        "init_scores",
                        format!("{} initial values for {d} units", values.len()),
                    ));
                }
                values.clone()
            }
        };
        Self::from_scores(scores)
    }

    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Config("a scores layer needs at least one unit".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric { op: "scores" });
        }
        Ok(Self { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn set_scores(&mut self, scores: Vec<f64>) -> Result<()> {
        if scores.len() != self.scores.len() {
            return Err(Error::dim(
                "scores",
                format!("{} values for {} units", scores.len(), self.scores.len()),
            ));
        }
        *self = Self::from_scores(scores)?;
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        scores_to_weights(&self.scores).expect("scores are finite by construction")
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::row_vector(&self.scores)
    }
}

/// Softmax of the scores, computed on the max-shifted values.
pub fn scores_to_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::dim("scores_to_weights", "empty score vector"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric {
            op: "scores_to_weights",
        });
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Scales column `i` of every row of `x` by `weights[i]`.
pub fn gate(weights: &[f64], x: &Tensor) -> Result<Tensor> {
    if weights.len() != x.cols() {
        return Err(Error::dim(
            "gate",
            format!("{} weights for {} columns", weights.len(), x.cols()),
        ));
    }
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        for (v, w) in row.iter_mut().zip(weights) {
            *v *= w;
        }
    }
    Ok(out)
}

/// Closed-form derivatives of the gated hidden layer
/// `y_k = sum_i W[i][k] * w_i * x_i` with `w = softmax(s)`.
///
/// Returns `(dy_dw, dy_ds)` where `dy_dw` is `d x K` with entry `(i, k)`
/// equal to `dy_k / dW[i][k] = w_i * x_i`, and `dy_ds` is `K x d` with entry
/// `(k, l)` equal to `sum_i W[i][k] * w_i * (delta_il - w_l) * x_i`.
pub fn analytic_grads(w: &Tensor, scores: &[f64], x: &[f64]) -> Result<(Tensor, Tensor)> {
    let (d, k_units) = w.shape();
    if scores.len() != d || x.len() != d {
        return Err(Error::dim(
            "analytic_grads",
            format!(
                "W is {d}x{k_units}, scores have {}, input has {}",
                scores.len(),
                x.len()
            ),
        ));
    }
    let ws = scores_to_weights(scores)?;
    let mut dy_dw = Tensor::zeros(d, k_units);
    for i in 0..d {
        for k in 0..k_units {
            dy_dw.set(i, k, ws[i] * x[i]);
        }
    }
    let mut dy_ds = Tensor::zeros(k_units, d);
    for k in 0..k_units {
        // sum_i W[i][k] w_i x_i, shared by every l
        let gated: f64 = (0..d).map(|i| w.get(i, k) * ws[i] * x[i]).sum();
        for l in 0..d {
            let direct = w.get(l, k) * ws[l] * x[l];
            dy_ds.set(k, l, direct - ws[l] * gated);
        }
    }
    Ok((dy_dw, dy_ds))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingSource {
    Scores,
    Shap,
    GroundTruth,
}

/// Features ordered by descending importance; ties go to the lower index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub order: Vec<usize>,
    pub values: Vec<f64>,
    pub source: RankingSource,
}

impl Ranking {
    pub fn from_values(values: Vec<f64>, source: RankingSource) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| match values[b].total_cmp(&values[a]) {
            Ordering::Equal => a.cmp(&b),
            o => o,
        });
        Self {
            order,
            values,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Zero-based position of every feature, indexed by feature.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (p, &f) in self.order.iter().enumerate() {
            pos[f] = p;
        }
        pos
    }

    /// The order with features numbered from 1.
    pub fn one_indexed(&self) -> Vec<usize> {
        self.order.iter().map(|f| f + 1).collect()
    }
}

pub fn extract_ranking(layer: &ScoresLayer) -> Ranking {
    Ranking::from_values(layer.weights(), RankingSource::Scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparsityKind {
    Entropy,
    L1,
}

/// `lambda * H(w)` for entropy, `lambda * sum |w_i|` for l1.
///
/// For softmax weights the l1 term is the constant `lambda`.
pub fn sparsity_penalty(weights: &[f64], kind: SparsityKind, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let raw: f64 = match kind {
        SparsityKind::Entropy => weights
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| -w * w.ln())
            .sum(),
        SparsityKind::L1 => weights.iter().map(|w| w.abs()).sum(),
    };
    lambda * raw
}

/// Records the penalty on a graph, given the node holding the `1 x d`
/// softmax weights.
pub fn sparsity_penalty_node(
    graph: &mut Graph,
    weights: NodeId,
    kind: SparsityKind,
    lambda: f64,
) -> Result<NodeId> {
    let term = match kind {
        SparsityKind::Entropy => {
            let logs = graph.ln(weights)?;
            let plogp = graph.hadamard(weights, logs)?;
            let total = graph.sum(plogp)?;
            graph.scale(total, -1.0)?
        }
        SparsityKind::L1 => {
            let a = graph.abs(weights)?;
            graph.sum(a)?
        }
    };
    graph.scale(term, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_strategies() {
        let zero = ScoresLayer::init(5, &ScoresInit::Zero, 0).unwrap();
        assert_eq!(zero.scores(), &[0.0; 5]);
        assert!(zero.weights().iter().all(|&w| (w - 0.2).abs() < 1e-15));

        let gt = vec![0.2, 0.3, 0.1, 0.05, 0.5];
        let copied = ScoresLayer::init(5, &ScoresInit::FromValues(gt.clone()), 0).unwrap();
        assert_eq!(copied.scores(), gt.as_slice());

        let a = ScoresLayer::init(3, &ScoresInit::RandomUniform, 7).unwrap();
        let b = ScoresLayer::init(3, &ScoresInit::RandomUniform, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.scores().iter().all(|s| (-1.0..=1.0).contains(s)));

        assert!(ScoresLayer::init(4, &ScoresInit::FromValues(gt), 0).is_err());
        assert!(ScoresLayer::init(0, &ScoresInit::Zero, 0).is_err());
    }

    #[test]
    fn weights_examples() {
        assert_eq!(scores_to_weights(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let w = scores_to_weights(&[2f64.ln(), 0.0]).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(scores_to_weights(&[f64::NAN]).is_err());
    }

    #[test]
    fn large_scores_do_not_overflow() {
        // exp(-1000) underflows to 0 in f64; the shifted form gives exactly [1, 0]
        let w = scores_to_weights(&[1000.0, 0.0]).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
        let w = scores_to_weights(&[1000.0, 999.0]).unwrap();
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((w[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn gate_examples() {
        let x = Tensor::row_vector(&[3.0, 7.0]);
        assert_eq!(gate(&[1.0, 0.0], &x).unwrap().data(), &[3.0, 0.0]);
        let x = Tensor::from_rows(&[vec![2.0, 4.0], vec![6.0, 8.0]]).unwrap();
        assert_eq!(gate(&[0.5, 0.5], &x).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(gate(&[1.0], &x).is_err());
    }

    #[test]
    fn analytic_grad_examples() {
        let w = Tensor::col_vector(&[1.0, 1.0]);
        let (_, dy_ds) = analytic_grads(&w, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(dy_ds.get(0, 0), 0.0);
        let (dy_dw, _) = analytic_grads(&w, &[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_eq!(dy_dw.get(0, 0), 1.0);
        assert!(analytic_grads(&w, &[0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn ranking_examples() {
        let layer = ScoresLayer::from_scores(vec![0.05, 0.3, 0.1, 0.01, 0.5]).unwrap();
        let r = extract_ranking(&layer);
        assert_eq!(r.order, vec![4, 1, 2, 0, 3]);
        assert_eq!(r.one_indexed(), vec![5, 2, 3, 1, 4]);
        assert_eq!(r.source, RankingSource::Scores);

        let uniform = ScoresLayer::init(6, &ScoresInit::Zero, 0).unwrap();
        assert_eq!(extract_ranking(&uniform).order, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn penalty_examples() {
        let uniform = [0.25; 4];
        let h = sparsity_penalty(&uniform, SparsityKind::Entropy, 1.0);
        assert!((h - 4f64.ln()).abs() < 1e-12);

        let peaked = scores_to_weights(&[40.0, 0.0, 0.0]).unwrap();
        let h = sparsity_penalty(&peaked, SparsityKind::Entropy, 1.0);
        assert!((0.0..1e-14).contains(&h));

        assert_eq!(sparsity_penalty(&uniform, SparsityKind::Entropy, 0.0), 0.0);
        assert!((sparsity_penalty(&uniform, SparsityKind::L1, 0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn penalty_node_matches_closed_form() {
        let s = [0.3, -0.2, 0.9, 0.0];
        let w = scores_to_weights(&s).unwrap();
        for kind in [SparsityKind::Entropy, SparsityKind::L1] {
            let mut g = Graph::new();
            let node = g.leaf(Tensor::row_vector(&w));
            let p = sparsity_penalty_node(&mut g, node, kind, 0.7).unwrap();
            let expected = sparsity_penalty(&w, kind, 0.7);
            assert!((g.value(p).item().unwrap() - expected).abs() < 1e-14);
        }
    }
}
