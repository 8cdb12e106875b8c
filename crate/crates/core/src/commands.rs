//! Command-line interface: argument definitions, command implementations
//! and run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::datasets::{
    augment_random_features, load_csv, save_csv, ClassificationParams, Generator, Sidecar,
};
use crate::error::{Error, Result};
use crate::experiment::{explain_test_rows, fit, stability_study, StabilityConfig, TRAIN_FRACTION};
use crate::explain::{rank_match_table, spearman, spearman_vs_ground_truth, DEFAULT_COALITIONS, DEFAULT_SAMPLES};
use crate::model::{Backbone, Model, ModelConfig};
use crate::scores::{extract_ranking, Ranking, RankingSource, ScoresInit};
use crate::train::{LossKind, Regularization, TrainConfig, TrainReport, DEFAULT_LR};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "scoregate", version, about = "Softmax-gated feature scores, Shapley baselines and ranking comparisons")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset as CSV plus a JSON sidecar with its ground truth.
    Gen(GenArgs),
    /// Append uniform noise columns to a CSV dataset.
    Augment(AugmentArgs),
    /// Train a vanilla or gated model with an internal 80/20 split.
    Train(TrainArgs),
    /// Extract the feature ranking of a trained gated model.
    Rank(RankArgs),
    /// Explain a model with Kernel SHAP on random test rows.
    Shap(ShapArgs),
    /// Compare rankings with each other and with a ground truth.
    Compare(CompareArgs),
    /// Retrain several times and compare rank variance of scores and SHAP.
    Stability(StabilityArgs),
    /// Export the scores trajectory of a training report as CSV.
    Plot(PlotArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Synth,
    Friedman1,
    Friedman2,
    Clf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Noise features appended to the five relevant ones (synth).
    #[arg(long, default_value_t = 5)]
    pub noise: usize,
    /// Standard deviation of the target noise (friedman1, friedman2).
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Total feature count (clf).
    #[arg(long, default_value_t = 20)]
    pub d: usize,
    #[arg(long, default_value_t = 5)]
    pub informative: usize,
    #[arg(long, default_value_t = 2)]
    pub redundant: usize,
    #[arg(long, default_value_t = 2)]
    pub duplicate: usize,
    #[arg(long, env = "SCOREGATE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = -100.0, allow_hyphen_values = true)]
    pub low: f64,
    #[arg(long, default_value_t = 100.0, allow_hyphen_values = true)]
    pub high: f64,
    #[arg(long, env = "SCOREGATE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Vanilla,
    Scores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackboneKind {
    Mlp,
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    Zero,
    Random,
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Bce,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyKind {
    None,
    Entropy,
    L1,
}

/// Model and optimizer options shared by `train` and `stability`.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = BackboneKind::Mlp)]
    pub backbone: BackboneKind,
    /// Hidden widths of the MLP backbone.
    #[arg(long, value_delimiter = ',', default_values_t = vec![32, 16])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub model_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub ffn_dim: usize,
    /// Layer whose input is gated; 0 gates the features.
    #[arg(long, default_value_t = 0)]
    pub gate_layer: usize,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,
    /// Defaults to bce for 0/1 targets and mse otherwise.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, value_enum, default_value_t = PenaltyKind::None)]
    pub penalty: PenaltyKind,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10)]
    pub record_every: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Scores)]
    pub model: ModelKind,
    #[command(flatten)]
    pub opts: ModelArgs,
    #[arg(long, value_enum, default_value_t = InitKind::Zero)]
    pub init: InitKind,
    /// Sidecar JSON whose ground-truth importances seed `--init gt`.
    #[arg(long)]
    pub init_values: Option<PathBuf>,
    #[arg(long, env = "SCOREGATE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long)]
    pub out_report: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long = "model")]
    pub model_path: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ShapArgs {
    #[arg(long = "model")]
    pub model_path: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_COALITIONS)]
    pub coalitions: usize,
    /// Seeds the 80/20 split, the explained rows and the coalition sampler;
    /// use the training seed to explain that run's test rows.
    #[arg(long, env = "SCOREGATE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Output of `rank` or `shap`, or a bare ranking; repeat for each input.
    #[arg(long = "ranking", required = true)]
    pub rankings: Vec<PathBuf>,
    /// Dataset sidecar holding the ground-truth importances.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub opts: ModelArgs,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, env = "SCOREGATE_SEED", default_value_t = 0)]
    pub base_seed: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_COALITIONS)]
    pub coalitions: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Written next to every output as `<output>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, enough to replay the run.
    pub args: Vec<String>,
    pub resolved_params: BTreeMap<String, Value>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

struct Record {
    resolved: BTreeMap<String, Value>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Record {
    fn new() -> Self {
        Self {
            resolved: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn param(mut self, key: &str, value: impl Serialize) -> Self {
        self.resolved
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }

    fn seed(mut self, key: &str, value: u64) -> Self {
        self.seeds.insert(key.to_string(), value);
        self
    }
}

/// Runs a parsed command; `argv` is recorded in the manifest for replay.
pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let (name, record) = match cli.command {
        Command::Gen(a) => ("gen", cmd_gen(&a)?),
        Command::Augment(a) => ("augment", cmd_augment(&a)?),
        Command::Train(a) => ("train", cmd_train(&a)?),
        Command::Rank(a) => ("rank", cmd_rank(&a)?),
        Command::Shap(a) => ("shap", cmd_shap(&a)?),
        Command::Compare(a) => ("compare", cmd_compare(&a)?),
        Command::Stability(a) => ("stability", cmd_stability(&a)?),
        Command::Plot(a) => ("plot", cmd_plot(&a)?),
        Command::Replay(a) => return cmd_replay(&a),
    };
    let manifest = RunManifest {
        command: name.to_string(),
        args: argv.to_vec(),
        resolved_params: record.resolved,
        seeds: record.seeds,
        inputs: record.inputs,
        outputs: record.outputs.clone(),
        tool_version: TOOL_VERSION.to_string(),
    };
    let anchor = record.outputs.last().expect("every command writes an output");
    write_json(&RunManifest::path_for(anchor), &manifest)
}

fn generator_for(a: &GenArgs) -> Generator {
    match a.dataset {
        DatasetKind::Synth => Generator::Synthetic {
            n: a.n,
            noise: a.noise,
        },
        DatasetKind::Friedman1 => Generator::Friedman1 {
            n: a.n,
            sigma: a.sigma,
        },
        DatasetKind::Friedman2 => Generator::Friedman2 {
            n: a.n,
            sigma: a.sigma,
        },
        DatasetKind::Clf => Generator::Classification(ClassificationParams {
            n: a.n,
            d: a.d,
            informative: a.informative,
            redundant: a.redundant,
            duplicate: a.duplicate,
        }),
    }
}

fn cmd_gen(a: &GenArgs) -> Result<Record> {
    let generator = generator_for(a);
    let ds = generator.generate(a.seed)?;
    save_csv(&ds, &a.out)?;
    let meta = sidecar_path(&a.out);
    write_json(&meta, &generator.sidecar(a.seed, &ds))?;
    let mut rec = Record::new()
        .param("generator", &generator)
        .seed("data", a.seed);
    rec.outputs = vec![meta, a.out.clone()];
    Ok(rec)
}

fn cmd_augment(a: &AugmentArgs) -> Result<Record> {
    let ds = load_csv(&a.data)?;
    let out = augment_random_features(&ds, a.k, a.low, a.high, a.seed)?;
    save_csv(&out, &a.out)?;
    let mut rec = Record::new()
        .param("k", a.k)
        .param("low", a.low)
        .param("high", a.high)
        .seed("augment", a.seed);
    rec.inputs = vec![a.data.clone()];
    rec.outputs = vec![a.out.clone()];
    Ok(rec)
}

fn model_config(opts: &ModelArgs, d: usize, gated: bool, init: ScoresInit) -> ModelConfig {
    let backbone = match opts.backbone {
        BackboneKind::Mlp => Backbone::Mlp {
            hidden: opts.hidden.clone(),
        },
        BackboneKind::Attention => Backbone::Attention {
            model_dim: opts.model_dim,
            ffn_dim: opts.ffn_dim,
        },
    };
    ModelConfig {
        d_in: d,
        backbone,
        gated,
        gate_layer: opts.gate_layer,
        scores_init: init,
    }
}

fn train_config(opts: &ModelArgs, ds: &crate::datasets::Dataset, seed: u64) -> TrainConfig {
    let loss = match opts.loss {
        Some(LossArg::Bce) => LossKind::Bce,
        Some(LossArg::Mse) => LossKind::Mse,
        None => LossKind::for_task(ds.task()),
    };
    let regularization = match opts.penalty {
        PenaltyKind::None => Regularization::None,
        PenaltyKind::Entropy => Regularization::Entropy(opts.lambda),
        PenaltyKind::L1 => Regularization::L1(opts.lambda),
    };
    TrainConfig {
        epochs: opts.epochs,
        lr: opts.lr,
        loss,
        batch: Default::default(),
        seed,
        record_scores_every: opts.record_every,
        regularization,
    }
}

fn cmd_train(a: &TrainArgs) -> Result<Record> {
    let ds = load_csv(&a.data)?;
    let init = match a.init {
        InitKind::Zero => ScoresInit::Zero,
        InitKind::Random => ScoresInit::RandomUniform,
        InitKind::Gt => {
            let path = a.init_values.clone().unwrap_or_else(|| sidecar_path(&a.data));
            ScoresInit::FromValues(Sidecar::load(path)?.ground_truth_importance)
        }
    };
    let gated = a.model == ModelKind::Scores;
    let config = model_config(&a.opts, ds.n_features(), gated, init);
    let cfg = train_config(&a.opts, &ds, a.seed);
    let fitted = fit(&ds, config.clone(), &cfg, a.seed, a.seed)?;
    fitted.model.save(&a.out_model)?;
    write_json(&a.out_report, &fitted.report)?;
    let mut rec = Record::new()
        .param("model", &config)
        .param("train", &cfg)
        .param("train_fraction", TRAIN_FRACTION)
        .seed("split", a.seed)
        .seed("model", a.seed);
    rec.inputs = vec![a.data.clone()];
    rec.inputs.extend(a.init_values.clone());
    rec.outputs = vec![a.out_model.clone(), a.out_report.clone()];
    Ok(rec)
}

/// Output of the `rank` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOutput {
    pub ranking: Ranking,
    pub one_indexed: Vec<usize>,
    pub elapsed_ms: f64,
}

fn cmd_rank(a: &RankArgs) -> Result<Record> {
    let model = Model::load(&a.model_path)?;
    let layer = model.scores().ok_or_else(|| {
        Error::Contract("ranking requested from an ungated model; train with --model scores".into())
    })?;
    let t0 = Instant::now();
    let ranking = extract_ranking(layer);
    let elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
    let one_indexed = ranking.one_indexed();
    write_json(
        &a.out,
        &RankOutput {
            ranking,
            one_indexed,
            elapsed_ms,
        },
    )?;
    let mut rec = Record::new();
    rec.inputs = vec![a.model_path.clone()];
    rec.outputs = vec![a.out.clone()];
    Ok(rec)
}

/// Output of the `shap` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapOutput {
    pub result: crate::explain::ShapResult,
    pub ranking: Ranking,
    pub one_indexed: Vec<usize>,
    pub elapsed_ms: f64,
}

fn cmd_shap(a: &ShapArgs) -> Result<Record> {
    let model = Model::load(&a.model_path)?;
    let ds = load_csv(&a.data)?;
    let (train_ds, test_ds) = crate::datasets::split(&ds, TRAIN_FRACTION, a.seed)?;
    let result = explain_test_rows(&model, &train_ds, &test_ds, a.samples, a.coalitions, a.seed)?;
    let ranking = crate::explain::global_importance(&result);
    let one_indexed = ranking.one_indexed();
    let elapsed_ms = result.elapsed_ms;
    write_json(
        &a.out,
        &ShapOutput {
            result,
            ranking,
            one_indexed,
            elapsed_ms,
        },
    )?;
    let mut rec = Record::new()
        .param("samples", a.samples)
        .param("coalitions", a.coalitions)
        .seed("split", a.seed)
        .seed("samples", a.seed)
        .seed("coalitions", a.seed);
    rec.inputs = vec![a.model_path.clone(), a.data.clone()];
    rec.outputs = vec![a.out.clone()];
    Ok(rec)
}

/// Reads the ranking held by a `rank` or `shap` output, or a bare ranking.
pub fn load_ranking(path: &Path) -> Result<Ranking> {
    let value = read_json(path)?;
    let ranking = value.get("ranking").cloned().unwrap_or(value);
    serde_json::from_value(ranking).map_err(Error::from)
}

fn cmd_compare(a: &CompareArgs) -> Result<Record> {
    let rankings: Vec<Ranking> = a.rankings.iter().map(|p| load_ranking(p)).collect::<Result<_>>()?;
    let gt = match &a.ground_truth {
        Some(path) => Some(Ranking::from_values(
            Sidecar::load(path)?.ground_truth_importance,
            RankingSource::GroundTruth,
        )),
        None => None,
    };
    let d = rankings[0].len();
    if rankings.iter().chain(gt.iter()).any(|r| r.len() != d) {
        return Err(Error::dim("compare", "rankings over different feature counts"));
    }
    let mut matrix = Vec::new();
    for x in &rankings {
        let row: Vec<f64> = rankings.iter().map(|y| spearman(x, y)).collect::<Result<_>>()?;
        matrix.push(row);
    }
    let mut out = json!({
        "inputs": a.rankings,
        "orders": rankings.iter().map(Ranking::one_indexed).collect::<Vec<_>>(),
        "spearman": matrix,
    });
    if let Some(gt) = &gt {
        let relevant = gt.values.iter().filter(|v| **v != 0.0).count();
        let k = a.top_k.unwrap_or(relevant.max(1)).min(d);
        let vs_gt: Vec<f64> = rankings
            .iter()
            .map(|r| spearman_vs_ground_truth(r, gt))
            .collect::<Result<_>>()?;
        out["ground_truth"] = json!(gt.one_indexed());
        out["spearman_vs_ground_truth"] = json!(vs_gt);
        let ours = rankings.iter().find(|r| r.source == RankingSource::Scores);
        let shap = rankings.iter().find(|r| r.source == RankingSource::Shap);
        let (ours, shap) = match (ours, shap) {
            (Some(o), Some(s)) => (o, s),
            _ => (&rankings[0], rankings.get(1).unwrap_or(&rankings[0])),
        };
        let table = rank_match_table(ours, shap, gt, k)?;
        out["ours_matches"] = json!(table.iter().filter(|r| r.ours_matches).count());
        out["shap_matches"] = json!(table.iter().filter(|r| r.shap_matches).count());
        out["table"] = serde_json::to_value(table)?;
    }
    write_json(&a.out, &out)?;
    let mut rec = Record::new().param("top_k", a.top_k);
    rec.inputs = a.rankings.clone();
    rec.inputs.extend(a.ground_truth.clone());
    rec.outputs = vec![a.out.clone()];
    Ok(rec)
}

fn cmd_stability(a: &StabilityArgs) -> Result<Record> {
    let ds = load_csv(&a.data)?;
    let config = model_config(&a.opts, ds.n_features(), true, ScoresInit::Zero);
    let cfg = train_config(&a.opts, &ds, a.base_seed);
    let study = StabilityConfig {
        runs: a.runs,
        base_seed: a.base_seed,
        samples: a.samples,
        coalitions: a.coalitions,
    };
    let report = stability_study(&ds, &config, &cfg, &study)?;
    write_json(&a.out, &report)?;
    let mut rec = Record::new()
        .param("model", &config)
        .param("train", &cfg)
        .param("study", &study)
        .seed("base", a.base_seed);
    rec.inputs = vec![a.data.clone()];
    rec.outputs = vec![a.out.clone()];
    Ok(rec)
}

fn cmd_plot(a: &PlotArgs) -> Result<Record> {
    let text = std::fs::read_to_string(&a.report).map_err(|e| Error::io(&a.report, e))?;
    let report: TrainReport = serde_json::from_str(&text)?;
    if report.scores_trajectory.is_empty() {
        return Err(Error::Contract(
            "the report has no scores trajectory (ungated model)".into(),
        ));
    }
    std::fs::write(&a.out, report.trajectory_csv()).map_err(|e| Error::io(&a.out, e))?;
    let mut rec = Record::new();
    rec.inputs = vec![a.report.clone()];
    rec.outputs = vec![a.out.clone()];
    Ok(rec)
}

fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    let manifest = RunManifest::load(&a.manifest)?;
    let mut argv = vec!["scoregate".to_string()];
    argv.extend(manifest.args.iter().cloned());
    let cli = Cli::try_parse_from(&argv)
        .map_err(|e| Error::Config(format!("manifest arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Config("a manifest cannot replay another replay".into()));
    }
    run(cli, &manifest.args)
}
