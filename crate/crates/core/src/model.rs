//! Vanilla and scores-gated predictors over an MLP or a single attention
//! block, ending in one sigmoid unit.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scores::{ScoresInit, ScoresLayer};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Backbone {
    Mlp { hidden: Vec<usize> },
    /// One single-head self-attention block over per-feature tokens.
    Attention { model_dim: usize, ffn_dim: usize },
}

impl Default for Backbone {
    fn default() -> Self {
        Backbone::Mlp {
            hidden: vec![32, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_in: usize,
    pub backbone: Backbone,
    pub gated: bool,
    /// Index of the linear layer whose input is gated; 0 gates the features.
    pub gate_layer: usize,
    #[serde(default)]
    pub scores_init: ScoresInit,
}

impl ModelConfig {
    pub fn mlp(d_in: usize, hidden: Vec<usize>, gated: bool) -> Self {
        Self {
            d_in,
            backbone: Backbone::Mlp { hidden },
            gated,
            gate_layer: 0,
            scores_init: ScoresInit::Zero,
        }
    }

    pub fn attention(d_in: usize, model_dim: usize, ffn_dim: usize, gated: bool) -> Self {
        Self {
            d_in,
            backbone: Backbone::Attention { model_dim, ffn_dim },
            gated,
            gate_layer: 0,
            scores_init: ScoresInit::Zero,
        }
    }

    pub fn with_init(mut self, init: ScoresInit) -> Self {
        self.scores_init = init;
        self
    }

    /// Number of layers a gate may precede.
    pub fn n_layers(&self) -> usize {
        match &self.backbone {
            Backbone::Mlp { hidden } => hidden.len() + 1,
            Backbone::Attention { .. } => 1,
        }
    }

    /// Width of the gated layer's input.
    pub fn gate_width(&self) -> usize {
        match &self.backbone {
            Backbone::Mlp { hidden } if self.gate_layer > 0 => hidden[self.gate_layer - 1],
            _ => self.d_in,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 {
            return Err(Error::Config("d_in must be at least 1".into()));
        }
        match &self.backbone {
            Backbone::Mlp { hidden } => {
                if hidden.contains(&0) {
                    return Err(Error::Config("hidden widths must be positive".into()));
                }
            }
            Backbone::Attention { model_dim, ffn_dim } => {
                if *model_dim == 0 || *ffn_dim == 0 {
                    return Err(Error::Config(
                        "attention dimensions must be positive".into(),
                    ));
                }
            }
        }
        if self.gate_layer >= self.n_layers() {
            return Err(Error::Config(format!(
                "gate layer {} but the model has {} layers",
                self.gate_layer,
                self.n_layers()
            )));
        }
        Ok(())
    }
}

/// `(name, rows, cols, fan_in)` of every parameter, in initialization order.
fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, usize, usize, usize)> {
    let mut shapes = Vec::new();
    match &cfg.backbone {
        Backbone::Mlp { hidden } => {
            let mut widths = vec![cfg.d_in];
            widths.extend(hidden);
            widths.push(1);
            for (i, pair) in widths.windows(2).enumerate() {
                shapes.push((format!("layer{i}.weight"), pair[0], pair[1], pair[0]));
                shapes.push((format!("layer{i}.bias"), 1, pair[1], pair[0]));
            }
        }
        Backbone::Attention { model_dim: m, ffn_dim: f } => {
            let (d, m, f) = (cfg.d_in, *m, *f);
            // token embeddings scale a single scalar, hence fan-in 1
            for (name, rows, cols, fan) in [
                ("embed", d, m, 1),
                ("position", d, m, 1),
                ("attn.query", m, m, m),
                ("attn.key", m, m, m),
                ("attn.value", m, m, m),
                ("ffn.w1", m, f, m),
                ("ffn.b1", 1, f, m),
                ("ffn.w2", f, m, f),
                ("ffn.b2", 1, m, f),
                ("head.weight", m, 1, m),
                ("head.bias", 1, 1, m),
            ] {
                shapes.push((name.to_string(), rows, cols, fan));
            }
        }
    }
    shapes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    config: ModelConfig,
    parameters: BTreeMap<String, Tensor>,
    scores: Option<ScoresLayer>,
}

/// Graph nodes bound to a model for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    pub parameters: BTreeMap<String, NodeId>,
    pub scores: Option<NodeId>,
    /// Softmax of the scores, `1 x width`.
    pub weights: Option<NodeId>,
    /// Predictions, `b x 1`.
    pub output: NodeId,
}

impl Model {
    /// Draws every weight from `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut parameters = BTreeMap::new();
        for (name, rows, cols, fan_in) in parameter_shapes(&config) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            parameters.insert(name, Tensor::new(rows, cols, data)?);
        }
        let scores = if config.gated {
            Some(ScoresLayer::init(
                config.gate_width(),
                &config.scores_init,
                seed,
            )?)
        } else {
            None
        };
        Ok(Self {
            config,
            parameters,
            scores,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &BTreeMap<String, Tensor> {
        &self.parameters
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.parameters.get(name)
    }

    /// Replaces a parameter with a tensor of the same shape.
    pub fn set_parameter(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .parameters
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::dim(
                "set_parameter",
                format!("{name} is {:?}, got {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn scores(&self) -> Option<&ScoresLayer> {
        self.scores.as_ref()
    }

    pub fn scores_mut(&mut self) -> Option<&mut ScoresLayer> {
        self.scores.as_mut()
    }

    pub fn is_gated(&self) -> bool {
        self.scores.is_some()
    }

    pub fn d_in(&self) -> usize {
        self.config.d_in
    }

    /// Scalar count including the scores.
    pub fn parameter_count(&self) -> usize {
        self.parameters.values().map(Tensor::len).sum::<usize>()
            + self.scores.as_ref().map_or(0, ScoresLayer::len)
    }

    /// Records the forward pass of `x` (a `b x d_in` node) on `graph`.
    pub fn bind(&self, graph: &mut Graph, x: NodeId) -> Result<Bound> {
        let (_, cols) = graph.value(x).shape();
        if cols != self.config.d_in {
            return Err(Error::dim(
                "forward",
                format!("{cols} input columns for a model over {}", self.config.d_in),
            ));
        }
        let parameters: BTreeMap<String, NodeId> = self
            .parameters
            .iter()
            .map(|(name, t)| (name.clone(), graph.leaf(t.clone())))
            .collect();
        let (scores, weights) = match &self.scores {
            Some(layer) => {
                let s = graph.leaf(layer.as_tensor());
                let w = graph.softmax_rows(s)?;
                (Some(s), Some(w))
            }
            None => (None, None),
        };
        let logit = match &self.config.backbone {
            Backbone::Mlp { hidden } => {
                mlp_forward(graph, &parameters, weights, self.config.gate_layer, hidden.len(), x)?
            }
            Backbone::Attention { model_dim, .. } => {
                attention_forward(graph, &parameters, weights, *model_dim, x)?
            }
        };
        let output = graph.sigmoid(logit)?;
        Ok(Bound {
            parameters,
            scores,
            weights,
            output,
        })
    }

    /// Predictions in `(0, 1)`, one per row of `x`.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut graph = Graph::new();
        let input = graph.leaf(x.clone());
        let bound = self.bind(&mut graph, input)?;
        Ok(graph.value(bound.output).data().to_vec())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Model = serde_json::from_str(text)?;
        model.config.validate()?;
        let expected = parameter_shapes(&model.config);
        let consistent = expected.len() == model.parameters.len()
            && expected.iter().all(|(name, r, c, _)| {
                model.parameters.get(name).map(Tensor::shape) == Some((*r, *c))
            });
        let scores_ok = match &model.scores {
            Some(s) => model.config.gated && s.len() == model.config.gate_width(),
            None => !model.config.gated,
        };
        if !consistent || !scores_ok {
            return Err(Error::Contract(
                "serialized parameters do not match the model configuration".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn mlp_forward(
    graph: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    weights: Option<NodeId>,
    gate_layer: usize,
    n_hidden: usize,
    x: NodeId,
) -> Result<NodeId> {
    let mut h = x;
    for layer in 0..=n_hidden {
        if layer == gate_layer {
            if let Some(w) = weights {
                h = graph.hadamard(h, w)?;
            }
        }
        let z = graph.matmul(h, params[&format!("layer{layer}.weight")])?;
        let z = graph.add(z, params[&format!("layer{layer}.bias")])?;
        h = if layer < n_hidden { graph.relu(z)? } else { z };
    }
    Ok(h)
}

/// Each row of `x` becomes `d` tokens `x_j * embed_j + position_j`, which go
/// through one residual attention block and one residual feed-forward block
/// and are mean-pooled into the head.
fn attention_forward(
    graph: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    weights: Option<NodeId>,
    model_dim: usize,
    x: NodeId,
) -> Result<NodeId> {
    let x = match weights {
        Some(w) => graph.hadamard(x, w)?,
        None => x,
    };
    let rows = graph.value(x).rows();
    let scale = 1.0 / (model_dim as f64).sqrt();
    let mut pooled = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = graph.select_row(x, r)?;
        let column = graph.transpose(row)?;
        let tokens = graph.hadamard(column, params["embed"])?;
        let tokens = graph.add(tokens, params["position"])?;
        let block = attention_block_nodes(graph, params, tokens, scale)?;
        pooled.push(graph.mean_rows(block)?);
    }
    let pooled = graph.concat_rows(&pooled)?;
    let logit = graph.matmul(pooled, params["head.weight"])?;
    graph.add(logit, params["head.bias"])
}

fn attention_block_nodes(
    graph: &mut Graph,
    params: &BTreeMap<String, NodeId>,
    tokens: NodeId,
    scale: f64,
) -> Result<NodeId> {
    let q = graph.matmul(tokens, params["attn.query"])?;
    let k = graph.matmul(tokens, params["attn.key"])?;
    let v = graph.matmul(tokens, params["attn.value"])?;
    let kt = graph.transpose(k)?;
    let logits = graph.matmul(q, kt)?;
    let logits = graph.scale(logits, scale)?;
    let attn = graph.softmax_rows(logits)?;
    let mixed = graph.matmul(attn, v)?;
    let h = graph.add(tokens, mixed)?;
    let f = graph.matmul(h, params["ffn.w1"])?;
    let f = graph.add(f, params["ffn.b1"])?;
    let f = graph.relu(f)?;
    let f = graph.matmul(f, params["ffn.w2"])?;
    let f = graph.add(f, params["ffn.b2"])?;
    graph.add(h, f)
}

/// Attention weights of the block for one `d x m` token matrix, given the
/// query and key projections.
pub fn attention_matrix(tokens: &Tensor, query: &Tensor, key: &Tensor) -> Result<Tensor> {
    let q = tokens.matmul(query)?;
    let k = tokens.matmul(key)?;
    let scale = 1.0 / (query.cols() as f64).sqrt();
    let logits = q.matmul(&k.transpose())?.map(|v| v * scale);
    Ok(crate::autodiff::softmax_rows(&logits))
}

/// Runs the attention block of `model` on a `d x m` token matrix.
pub fn attention_block(model: &Model, tokens: &Tensor) -> Result<Tensor> {
    let Backbone::Attention { model_dim, .. } = model.config.backbone else {
        return Err(Error::Contract("the model has no attention block".into()));
    };
    if tokens.shape() != (model.config.d_in, model_dim) {
        return Err(Error::dim(
            "attention_block",
            format!(
                "tokens are {:?}, expected ({}, {model_dim})",
                tokens.shape(),
                model.config.d_in
            ),
        ));
    }
    let mut graph = Graph::new();
    let params: BTreeMap<String, NodeId> = model
        .parameters
        .iter()
        .map(|(name, t)| (name.clone(), graph.leaf(t.clone())))
        .collect();
    let input = graph.leaf(tokens.clone());
    let out = attention_block_nodes(&mut graph, &params, input, 1.0 / (model_dim as f64).sqrt())?;
    Ok(graph.value(out).clone())
}
