//! Declarative model specs, the three member networks plus the stacking
//! head, and the training loop with early stopping.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use cse_tensor::rng::{name_key, stream_key};
use cse_tensor::{
    batch_loss, predict_logits, train_step, Adam, AdamConfig, Container, LayerKind, LayerSpec, Mode, Module, ParamSet,
    Rng, Tape, Tensor, Var,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Fold, SegmentId, WINDOW};
use crate::error::{CoreError, Result};
use crate::evaluation::{confusion, metrics, predict_class, MetricsReport};
use crate::features::{build_adjacency, SegmentFeatures, NODES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Skeleton graph convolution + GRU over keypoints.
    M1,
    /// Stacked GRUs over the context channels.
    M2,
    /// 1D convolution over the trajectory vector.
    M3,
    /// Dense head over concatenated member logits.
    Cse,
}

impl ModelKind {
    pub const MEMBERS: [ModelKind; 3] = [ModelKind::M1, ModelKind::M2, ModelKind::M3];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::M1 => "m1",
            ModelKind::M2 => "m2",
            ModelKind::M3 => "m3",
            ModelKind::Cse => "cse",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(ModelKind::M1),
            "m2" => Ok(ModelKind::M2),
            "m3" => Ok(ModelKind::M3),
            "cse" => Ok(ModelKind::Cse),
            _ => Err(CoreError::UnknownCategory {
                field: "model",
                value: s.to_string(),
                valid: "m1, m2, m3, cse".into(),
            }),
        }
    }
}

/// Parses a comma-separated member list such as `m1,m3`.
pub fn parse_members(s: &str) -> Result<Vec<ModelKind>> {
    let mut out: Vec<ModelKind> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let k: ModelKind = part.parse()?;
        if k == ModelKind::Cse {
            return Err(CoreError::Invalid("cse is not a member model".into()));
        }
        if !out.contains(&k) {
            out.push(k);
        }
    }
    if out.is_empty() {
        return Err(CoreError::Invalid("member set must not be empty".into()));
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct M1Config {
    pub channels: usize,
    pub width: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for M1Config {
    fn default() -> Self {
        Self {
            channels: 16,
            width: 3,
            hidden: 16,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct M2Config {
    pub hidden_a: usize,
    pub hidden_b: usize,
}

impl Default for M2Config {
    fn default() -> Self {
        Self { hidden_a: 3, hidden_b: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct M3Config {
    pub channels: usize,
    pub width: usize,
    pub dropout: f64,
}

impl Default for M3Config {
    fn default() -> Self {
        Self {
            channels: 5,
            width: 15,
            dropout: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub layers: Vec<LayerSpec>,
    pub inputs: Vec<InputSpec>,
    pub outputs: usize,
}

fn input(name: &str, shape: &[usize]) -> InputSpec {
    InputSpec {
        name: name.into(),
        shape: shape.to_vec(),
    }
}

impl ModelSpec {
    pub fn m1(cfg: M1Config) -> Self {
        let (c, t) = (cfg.channels, WINDOW);
        let layers = vec![
            LayerSpec::new(
                "gc",
                LayerKind::GraphConv {
                    nodes: NODES,
                    c_in: 2,
                    c_out: c,
                    width: cfg.width,
                },
                &[t, NODES, 2],
            ),
            LayerSpec::new("relu", LayerKind::Relu, &[t, NODES, c]),
            LayerSpec::new("dropout", LayerKind::Dropout { rate: cfg.dropout }, &[t, NODES, c]),
            LayerSpec::new("skip", LayerKind::ConvPoint { c_in: 2, c_out: c }, &[t, NODES, 2]),
            LayerSpec::new("add", LayerKind::Add, &[t, NODES, c]),
            LayerSpec::new("flatten", LayerKind::Flatten, &[t, NODES, c]),
            LayerSpec::new(
                "gru",
                LayerKind::Gru {
                    inputs: NODES * c,
                    hidden: cfg.hidden,
                    return_all: false,
                },
                &[t, NODES * c],
            ),
            LayerSpec::new("fc", LayerKind::Dense { inputs: cfg.hidden, outputs: 2 }, &[cfg.hidden]),
        ];
        Self {
            kind: ModelKind::M1,
            layers,
            inputs: vec![input("keypoints", &[t, NODES, 2])],
            outputs: 2,
        }
    }

    pub fn m2(cfg: M2Config) -> Self {
        let t = WINDOW;
        let (ha, hb) = (cfg.hidden_a, cfg.hidden_b);
        let layers = vec![
            LayerSpec::new(
                "gru_a",
                LayerKind::Gru {
                    inputs: 5,
                    hidden: ha,
                    return_all: true,
                },
                &[t, 5],
            ),
            LayerSpec::new("concat_a", LayerKind::Concat, &[t, ha + 2]),
            LayerSpec::new(
                "gru_b",
                LayerKind::Gru {
                    inputs: ha + 2,
                    hidden: hb,
                    return_all: false,
                },
                &[t, ha + 2],
            ),
            LayerSpec::new("concat_b", LayerKind::Concat, &[hb + 4]),
            LayerSpec::new("fc", LayerKind::Dense { inputs: hb + 4, outputs: 2 }, &[hb + 4]),
        ];
        Self {
            kind: ModelKind::M2,
            layers,
            inputs: vec![
                input("data1", &[t, 5]),
                input("data2", &[t, 2]),
                input("data3", &[1]),
                input("data4", &[3]),
            ],
            outputs: 2,
        }
    }

    pub fn m3(cfg: M3Config) -> Self {
        let (t, c) = (WINDOW, cfg.channels);
        let layers = vec![
            LayerSpec::new(
                "conv",
                LayerKind::Conv1d {
                    c_in: 5,
                    c_out: c,
                    width: cfg.width,
                },
                &[t, 5],
            ),
            LayerSpec::new("relu", LayerKind::Relu, &[t, c]),
            LayerSpec::new("dropout", LayerKind::Dropout { rate: cfg.dropout }, &[t, c]),
            LayerSpec::new("flatten", LayerKind::Flatten, &[t, c]),
            LayerSpec::new("fc", LayerKind::Dense { inputs: t * c, outputs: 2 }, &[t * c]),
        ];
        Self {
            kind: ModelKind::M3,
            layers,
            inputs: vec![input("trajectory", &[t, 5])],
            outputs: 2,
        }
    }

    /// Dense head over `members` concatenated 2-unit member outputs.
    pub fn cse(members: usize) -> Self {
        let w = 2 * members;
        Self {
            kind: ModelKind::Cse,
            layers: vec![LayerSpec::new("fc", LayerKind::Dense { inputs: w, outputs: 2 }, &[w])],
            inputs: vec![input("scores", &[w])],
            outputs: 2,
        }
    }

    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::M1 => Self::m1(M1Config::default()),
            ModelKind::M2 => Self::m2(M2Config::default()),
            ModelKind::M3 => Self::m3(M3Config::default()),
            ModelKind::Cse => Self::cse(3),
        }
    }

    pub fn layer(&self, name: &str) -> Result<&LayerSpec> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| CoreError::Invalid(format!("{} spec has no layer `{name}`", self.kind)))
    }

    fn dropout_rate(&self) -> Result<f64> {
        match self.layer("dropout")?.kind {
            LayerKind::Dropout { rate } => Ok(rate),
            _ => Err(CoreError::Invalid("layer `dropout` is not a dropout layer".into())),
        }
    }

    /// Hex SHA-256 over the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            l.validate()?;
        }
        let terminal = self.layers.last().map(|l| &l.kind);
        match terminal {
            Some(LayerKind::Dense { outputs: 2, .. }) => Ok(()),
            _ => Err(CoreError::Invalid(format!("{} must end in a dense layer of width 2", self.kind))),
        }
    }
}

/// A spec with its parameters; implements the tape `Module` interface.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    params: ParamSet,
    graph: Option<Arc<Tensor>>,
}

impl Network {
    pub fn new(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let params = ParamSet::init(&spec.layers, rng)?;
        let graph = (spec.kind == ModelKind::M1).then(|| build_adjacency().normalized);
        Ok(Self { spec, params, graph })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    /// Sets every parameter to zero.
    pub fn zero_params(&mut self) {
        for i in 0..self.params.len() {
            self.params.value_mut(i).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Input tensors this member reads from a segment's features.
    pub fn inputs(&self, f: &SegmentFeatures) -> Result<Vec<Tensor>> {
        member_inputs(self.spec.kind, f)
    }

    /// Pre-sigmoid 2-unit output in eval mode.
    pub fn logits(&self, inputs: &[Tensor]) -> Result<[f64; 2]> {
        let v = predict_logits(self, inputs)?;
        Ok([v[0], v[1]])
    }

    pub fn checkpoint(&self) -> Container {
        let tag = format!("{}:{}", self.spec.kind, self.spec.content_hash());
        Container::from_params(tag, &self.params)
    }

    pub fn load_checkpoint(&mut self, c: &Container) -> Result<()> {
        let want = format!("{}:{}", self.spec.kind, self.spec.content_hash());
        if c.tag != want {
            return Err(CoreError::Invalid(format!(
                "checkpoint `{}` was produced by a different spec (expected `{want}`)",
                c.tag
            )));
        }
        Ok(self.params.load_values(&c.records)?)
    }

    fn ids(&self, layer: &str, suffixes: &[&str]) -> cse_tensor::Result<Vec<usize>> {
        suffixes.iter().map(|s| self.params.id(&format!("{layer}.{s}"))).collect()
    }

    fn gru_ids(&self, layer: &str) -> cse_tensor::Result<[usize; 4]> {
        let v = self.ids(layer, &["w_ih", "w_hh", "b_ih", "b_hh"])?;
        Ok([v[0], v[1], v[2], v[3]])
    }

    fn dense(&self, tape: &mut Tape, x: Var, layer: &str) -> cse_tensor::Result<Var> {
        let p = self.ids(layer, &["weight", "bias"])?;
        tape.dense(&self.params, x, p[0], p[1], layer)
    }

    fn conv(&self, tape: &mut Tape, x: Var, layer: &str) -> cse_tensor::Result<Var> {
        let p = self.ids(layer, &["weight", "bias"])?;
        tape.conv(&self.params, x, p[0], p[1], layer)
    }

    fn expect_inputs(&self, inputs: &[Tensor]) -> cse_tensor::Result<()> {
        let bad = inputs.len() != self.spec.inputs.len()
            || inputs.iter().zip(&self.spec.inputs).any(|(t, s)| t.shape() != s.shape.as_slice());
        if bad {
            return Err(cse_tensor::KernelError::InvalidLayer {
                layer: format!("{} input", self.spec.kind),
                reason: format!(
                    "expected shapes {:?}, got {:?}",
                    self.spec.inputs.iter().map(|s| &s.shape).collect::<Vec<_>>(),
                    inputs.iter().map(|t| t.shape()).collect::<Vec<_>>()
                ),
            });
        }
        Ok(())
    }
}

fn rate_of(spec: &ModelSpec) -> cse_tensor::Result<f64> {
    spec.dropout_rate().map_err(|e| cse_tensor::KernelError::InvalidLayer {
        layer: "dropout".into(),
        reason: e.to_string(),
    })
}

impl Module for Network {
    fn name(&self) -> &str {
        self.spec.kind.as_str()
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, inputs: &[Tensor], mode: Mode, rng: &mut Rng) -> cse_tensor::Result<Var> {
        self.expect_inputs(inputs)?;
        match self.spec.kind {
            ModelKind::M1 => {
                let graph = self.graph.as_ref().expect("m1 carries its graph");
                let x = tape.input(inputs[0].clone(), "keypoints");
                let agg = tape.aggregate(x, graph, "gc.aggregate")?;
                let h = self.conv(tape, agg, "gc")?;
                let h = tape.relu(h, "relu");
                let h = tape.dropout(h, rate_of(&self.spec)?, mode, rng, "dropout")?;
                let skip = self.conv(tape, x, "skip")?;
                let h = tape.add(h, skip, "add")?;
                let s = tape.value(h).shape().to_vec();
                let h = tape.reshape(h, vec![s[0], s[1] * s[2]], "flatten")?;
                let h = tape.gru(&self.params, h, self.gru_ids("gru")?, false, "gru")?;
                self.dense(tape, h, "fc")
            }
            ModelKind::M2 => {
                let d1 = tape.input(inputs[0].clone(), "data1");
                let d2 = tape.input(inputs[1].clone(), "data2");
                let d3 = tape.input(inputs[2].clone(), "data3");
                let d4 = tape.input(inputs[3].clone(), "data4");
                let ha = tape.gru(&self.params, d1, self.gru_ids("gru_a")?, true, "gru_a")?;
                let cat = tape.concat(&[ha, d2], "concat_a")?;
                let hb = tape.gru(&self.params, cat, self.gru_ids("gru_b")?, false, "gru_b")?;
                let cat = tape.concat(&[hb, d3, d4], "concat_b")?;
                self.dense(tape, cat, "fc")
            }
            ModelKind::M3 => {
                let x = tape.input(inputs[0].clone(), "trajectory");
                let h = self.conv(tape, x, "conv")?;
                let h = tape.relu(h, "relu");
                let h = tape.dropout(h, rate_of(&self.spec)?, mode, rng, "dropout")?;
                let n = tape.value(h).len();
                let h = tape.reshape(h, vec![n], "flatten")?;
                self.dense(tape, h, "fc")
            }
            ModelKind::Cse => {
                let x = tape.input(inputs[0].clone(), "scores");
                self.dense(tape, x, "fc")
            }
        }
    }
}

pub fn member_inputs(kind: ModelKind, f: &SegmentFeatures) -> Result<Vec<Tensor>> {
    Ok(match kind {
        ModelKind::M1 => vec![f.keypoints.clone()],
        ModelKind::M2 => vec![
            f.context.data1.clone(),
            f.context.data2.clone(),
            f.context.data3.clone(),
            f.context.data4.clone(),
        ],
        ModelKind::M3 => vec![f.trajectory.clone()],
        ModelKind::Cse => return Err(CoreError::Invalid("cse reads member scores, not segment features".into())),
    })
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Recipe {
    pub epochs: usize,
    pub batch: usize,
    pub patience: usize,
    pub adam: AdamConfig,
}

impl Default for Recipe {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 32,
            patience: 10,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub history: Vec<EpochLog>,
}

/// Labeled model inputs.
pub struct Examples {
    pub inputs: Vec<Vec<Tensor>>,
    pub labels: Vec<usize>,
}

impl Examples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn refs(&self) -> Vec<&[Tensor]> {
        self.inputs.iter().map(|v| v.as_slice()).collect()
    }
}

/// Minibatch Adam. With validation data, keeps the parameters of the epoch
/// with the lowest validation loss and stops after `patience` epochs without
/// improvement; otherwise trains for exactly `recipe.epochs`.
pub fn fit(net: &mut Network, train: &Examples, val: Option<&Examples>, recipe: &Recipe, rng: &mut Rng) -> Result<FitLog> {
    if train.is_empty() {
        return Err(CoreError::Invalid(format!("{}: empty training set", net.kind())));
    }
    let mut opt = Adam::new(recipe.adam, &net.params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = FitLog {
        best_epoch: 0,
        best_val_loss: None,
        history: Vec::new(),
    };
    let val_refs = val.map(|v| v.refs());
    let mut best_params: Option<ParamSet> = None;
    let mut since_best = 0;
    let batch = recipe.batch.max(1);
    for epoch in 1..=recipe.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let xs: Vec<&[Tensor]> = chunk.iter().map(|&i| train.inputs[i].as_slice()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            total += train_step(net, &xs, &ys, &mut opt, rng)? * chunk.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = match (&val_refs, val) {
            (Some(refs), Some(v)) if !v.is_empty() => Some(batch_loss(net, refs, &v.labels, Mode::Eval, rng, false)?),
            _ => None,
        };
        log.history.push(EpochLog { train_loss, val_loss });
        match val_loss {
            Some(vl) => {
                if log.best_val_loss.is_none_or(|b| vl < b) {
                    log.best_val_loss = Some(vl);
                    log.best_epoch = epoch;
                    best_params = Some(net.params.clone());
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= recipe.patience {
                        break;
                    }
                }
            }
            None => log.best_epoch = epoch,
        }
    }
    if let Some(p) = best_params {
        net.params = p;
    }
    Ok(log)
}

/// Segment features addressed by identity.
pub struct FeatureStore<'a> {
    features: &'a [SegmentFeatures],
    index: HashMap<&'a SegmentId, usize>,
}

impl<'a> FeatureStore<'a> {
    pub fn new(features: &'a [SegmentFeatures]) -> Self {
        let index = features.iter().enumerate().map(|(i, f)| (&f.id, i)).collect();
        Self { features, index }
    }

    pub fn get(&self, id: &SegmentId) -> Result<&'a SegmentFeatures> {
        self.index
            .get(id)
            .map(|&i| &self.features[i])
            .ok_or_else(|| CoreError::Invalid(format!("no features for segment {id}")))
    }

    pub fn all(&self) -> &'a [SegmentFeatures] {
        self.features
    }

    pub fn examples(&self, kind: ModelKind, ids: &[SegmentId]) -> Result<Examples> {
        let mut ex = Examples {
            inputs: Vec::with_capacity(ids.len()),
            labels: Vec::with_capacity(ids.len()),
        };
        for id in ids {
            let f = self.get(id)?;
            ex.inputs.push(member_inputs(kind, f)?);
            ex.labels.push(f.label as usize);
        }
        Ok(ex)
    }
}

/// RNG for one (member, fold) training run; independent of execution order.
pub fn training_rng(seed: u64, kind: ModelKind, fold: u64) -> Rng {
    Rng::new(seed, stream_key(&[name_key(kind.as_str()), fold]))
}

/// Stream id used for full-pool refits.
pub const REFIT_FOLD: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub log: FitLog,
    pub val_metrics: Option<MetricsReport>,
    /// Pre-sigmoid outputs on the validation segments, in fold order.
    pub val_scores: Vec<(SegmentId, [f64; 2])>,
}

/// Trains one member on a fold and scores its validation segments.
pub fn train_model(spec: &ModelSpec, fold_index: usize, fold: &Fold, data: &FeatureStore, seed: u64, recipe: &Recipe) -> Result<TrainOutcome> {
    if let Some(id) = fold.validation.iter().find(|id| fold.train.binary_search(id).is_ok()) {
        return Err(CoreError::Invalid(format!("segment {id} is in both train and validation")));
    }
    let mut rng = training_rng(seed, spec.kind, fold_index as u64);
    let mut init = rng.substream(&[0]);
    let mut net = Network::new(spec.clone(), &mut init)?;
    let train = data.examples(spec.kind, &fold.train)?;
    let val = data.examples(spec.kind, &fold.validation)?;
    let log = fit(&mut net, &train, Some(&val), recipe, &mut rng)?;
    let mut val_scores = Vec::with_capacity(val.len());
    for (id, x) in fold.validation.iter().zip(&val.inputs) {
        val_scores.push((id.clone(), net.logits(x)?));
    }
    let val_metrics = score_metrics(&val_scores, &val.labels);
    Ok(TrainOutcome {
        network: net,
        log,
        val_metrics,
        val_scores,
    })
}

/// Trains on `ids` for a fixed number of epochs with no validation.
pub fn refit_model(spec: &ModelSpec, ids: &[SegmentId], data: &FeatureStore, seed: u64, recipe: &Recipe, epochs: usize) -> Result<(Network, FitLog)> {
    let mut rng = training_rng(seed, spec.kind, REFIT_FOLD);
    let mut init = rng.substream(&[0]);
    let mut net = Network::new(spec.clone(), &mut init)?;
    let train = data.examples(spec.kind, ids)?;
    let recipe = Recipe {
        epochs: epochs.max(1),
        ..*recipe
    };
    let log = fit(&mut net, &train, None, &recipe, &mut rng)?;
    Ok((net, log))
}

fn score_metrics(scores: &[(SegmentId, [f64; 2])], labels: &[usize]) -> Option<MetricsReport> {
    if scores.is_empty() {
        return None;
    }
    let y: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    let pred: Vec<u8> = scores.iter().map(|(_, s)| predict_class(s)).collect();
    let conf: Vec<f64> = scores.iter().map(|(_, s)| cse_tensor::sigmoid(s[1])).collect();
    let counts = confusion(&y, &pred).ok()?;
    Some(metrics(&counts, &conf, &y))
}
