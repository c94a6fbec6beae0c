//! Metrics, complexity profiling and ensemble sensitivity statistics.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use cse_tensor::{LayerKind, LayerSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::models::{ModelKind, ModelSpec};

/// Class from a 2-unit output: 1 only when unit 1 is strictly larger, so
/// exact ties resolve to 0. The sigmoid is monotonic, so this is also the
/// argmax over per-unit sigmoids.
pub fn predict_class(s: &[f64; 2]) -> u8 {
    (s[1] > s[0]) as u8
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<Confusion> {
    if y_true.len() != y_pred.len() {
        return Err(CoreError::Invalid(format!(
            "{} labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut c = Confusion::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fn_ += 1,
            _ => return Err(CoreError::Invalid(format!("non-binary value in ({t}, {p})"))),
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Threshold metrics from `counts`; AUC from `scores` (positive-class
/// confidences) against `y_true`.
pub fn metrics(counts: &Confusion, scores: &[f64], y_true: &[u8]) -> MetricsReport {
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    // harmonic mean of precision and recall, in counts so it rounds once
    let f1 = ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn_);
    MetricsReport {
        accuracy: ratio(counts.tp + counts.tn, counts.total()),
        precision,
        recall,
        f1,
        auc: auc(scores, y_true),
        confusion: *counts,
    }
}

/// Mann–Whitney AUC with midranks for ties; `None` for a single class.
pub fn auc(scores: &[f64], y_true: &[u8]) -> Option<f64> {
    let pos = y_true.iter().filter(|&&y| y == 1).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 || scores.len() != y_true.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the mean of i+1..=j+1
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| y_true[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from the highest threshold down, starting at (0, 0).
pub fn roc_points(scores: &[f64], y_true: &[u8]) -> Vec<RocPoint> {
    let pos = y_true.iter().filter(|&&y| y == 1).count();
    let neg = y_true.len() - pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if y_true[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint {
            threshold: t,
            fpr: ratio(fp, neg),
            tpr: ratio(tp, pos),
        });
    }
    out
}

/// FLOP counting rules used by `profile_flops`.
pub const FLOP_CONVENTION: &str = "forward pass per 32-frame segment; multiply-accumulate = 2 FLOPs; \
bias add and elementwise ops (relu, sigmoid, add) = 1 FLOP per element; dropout at inference, flatten and concat = 0; \
graph aggregation = dense K x K matmul per frame and channel; GRU step = 6h(in+h) + 17h";

pub fn layer_params(layer: &LayerSpec) -> usize {
    layer.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
}

pub fn layer_flops(layer: &LayerSpec) -> Result<u64> {
    let shape = &layer.input_shape;
    let elems: usize = shape.iter().product();
    let bad = |what: &str| {
        Err(CoreError::Invalid(format!(
            "layer `{}`: {what} (input shape {shape:?})",
            layer.name
        )))
    };
    let flops = match layer.kind {
        LayerKind::Dense { inputs, outputs } => {
            if elems != inputs {
                return bad("dense input width mismatch");
            }
            2 * inputs * outputs + outputs
        }
        LayerKind::Conv1d { c_in, c_out, width } => {
            if shape.len() != 2 || shape[1] != c_in {
                return bad("conv1d expects [T, C_in]");
            }
            shape[0] * (2 * width * c_in * c_out + c_out)
        }
        LayerKind::ConvPoint { c_in, c_out } => {
            if shape.last() != Some(&c_in) {
                return bad("point conv channel mismatch");
            }
            (elems / c_in) * (2 * c_in * c_out + c_out)
        }
        LayerKind::GraphConv {
            nodes,
            c_in,
            c_out,
            width,
        } => {
            if shape.len() != 3 || shape[1] != nodes || shape[2] != c_in {
                return bad("graph conv expects [T, K, C_in]");
            }
            let t = shape[0];
            t * c_in * 2 * nodes * nodes + t * nodes * (2 * width * c_in * c_out + c_out)
        }
        LayerKind::Gru { inputs, hidden, .. } => {
            if shape.len() != 2 || shape[1] != inputs {
                return bad("gru expects [T, in]");
            }
            shape[0] * (6 * hidden * (inputs + hidden) + 17 * hidden)
        }
        LayerKind::Relu | LayerKind::Sigmoid | LayerKind::Add => elems,
        LayerKind::Dropout { .. } | LayerKind::Flatten | LayerKind::Concat => 0,
    };
    Ok(flops as u64)
}

pub fn profile_params(spec: &ModelSpec) -> usize {
    spec.layers.iter().map(layer_params).sum()
}

pub fn profile_flops(spec: &ModelSpec) -> Result<u64> {
    spec.layers.iter().map(layer_flops).sum()
}

/// Target sizes (params, FLOPs; both in thousands) the shipped
/// configurations are dimensioned against.
pub fn complexity_target(kind: ModelKind) -> Option<(f64, f64)> {
    match kind {
        ModelKind::M1 => Some((12.5, 1540.0)),
        ModelKind::M2 => Some((0.22, 6.92)),
        ModelKind::M3 => Some((0.7, 24.6)),
        ModelKind::Cse => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub model: String,
    pub params: usize,
    pub flops: u64,
    pub target_params_k: Option<f64>,
    pub target_flops_k: Option<f64>,
    /// `params / (target · 1000)`.
    pub params_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub convention: String,
    pub rows: Vec<ComplexityRow>,
}

impl ComplexityReport {
    pub fn row(&self, model: &str) -> Option<&ComplexityRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

/// One row per member, one for the stacking head, and one for the whole
/// ensemble (members + head).
pub fn complexity_report(members: &[ModelSpec]) -> Result<ComplexityReport> {
    let mut rows = Vec::new();
    let mut total = (0usize, 0u64);
    for spec in members {
        let (params, flops) = (profile_params(spec), profile_flops(spec)?);
        total.0 += params;
        total.1 += flops;
        let target = complexity_target(spec.kind);
        rows.push(ComplexityRow {
            model: spec.kind.to_string(),
            params,
            flops,
            target_params_k: target.map(|t| t.0),
            target_flops_k: target.map(|t| t.1),
            params_ratio: target.map(|t| params as f64 / (t.0 * 1000.0)),
        });
    }
    let head = ModelSpec::cse(members.len());
    let (hp, hf) = (profile_params(&head), profile_flops(&head)?);
    rows.push(ComplexityRow {
        model: "cse_head".into(),
        params: hp,
        flops: hf,
        target_params_k: None,
        target_flops_k: None,
        params_ratio: None,
    });
    let names: Vec<String> = members.iter().map(|s| s.kind.to_string()).collect();
    rows.push(ComplexityRow {
        model: format!("cse({})", names.join("+")),
        params: total.0 + hp,
        flops: total.1 + hf,
        target_params_k: None,
        target_flops_k: None,
        params_ratio: None,
    });
    Ok(ComplexityReport {
        convention: FLOP_CONVENTION.into(),
        rows,
    })
}

/// Agreement and error-overlap statistics between a baseline and an
/// additional model, plus the merged model's error rate. Ratios are over the
/// number of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub samples: usize,
    pub baseline_false: f64,
    pub additional_false: f64,
    pub common_predictions: f64,
    pub common_false: f64,
    pub union_false: f64,
    pub merged_false: f64,
    /// Pearson correlation of the two confidence vectors; `None` when either
    /// has zero variance.
    pub correlation: Option<f64>,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn sensitivity(
    base_pred: &[u8],
    base_conf: &[f64],
    add_pred: &[u8],
    add_conf: &[f64],
    merged_pred: &[u8],
    y_true: &[u8],
) -> Result<SensitivityReport> {
    let n = y_true.len();
    let lens = [base_pred.len(), base_conf.len(), add_pred.len(), add_conf.len(), merged_pred.len()];
    if lens.iter().any(|&l| l != n) {
        return Err(CoreError::Invalid(format!("misaligned inputs: {lens:?} vs {n} labels")));
    }
    if n == 0 {
        return Err(CoreError::Invalid("no samples".into()));
    }
    if base_conf.iter().chain(add_conf).any(|c| !(0.0..=1.0).contains(c)) {
        return Err(CoreError::Invalid("confidences must lie in [0, 1]".into()));
    }
    let (mut bf, mut af, mut same, mut both, mut either, mut mf) = (0, 0, 0, 0, 0, 0);
    for i in 0..n {
        let b_wrong = base_pred[i] != y_true[i];
        let a_wrong = add_pred[i] != y_true[i];
        bf += b_wrong as usize;
        af += a_wrong as usize;
        same += (base_pred[i] == add_pred[i]) as usize;
        both += (b_wrong && a_wrong) as usize;
        either += (b_wrong || a_wrong) as usize;
        mf += (merged_pred[i] != y_true[i]) as usize;
    }
    let r = |c: usize| c as f64 / n as f64;
    Ok(SensitivityReport {
        samples: n,
        baseline_false: r(bf),
        additional_false: r(af),
        common_predictions: r(same),
        common_false: r(both),
        union_false: r(either),
        merged_false: r(mf),
        correlation: pearson(base_conf, add_conf),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Tsv,
}

impl TableFormat {
    pub fn delimiter(self) -> u8 {
        match self {
            TableFormat::Csv => b',',
            TableFormat::Tsv => b'\t',
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Tsv => "tsv",
        }
    }
}

impl FromStr for TableFormat {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "tsv" => Ok(Self::Tsv),
            _ => Err(CoreError::UnknownCategory {
                field: "format",
                value: s.into(),
                valid: "csv, tsv".into(),
            }),
        }
    }
}

/// Writes a header plus rows as a delimited table.
pub fn write_table<W: Write>(w: W, format: TableFormat, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().delimiter(format.delimiter()).from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush().map_err(|e| CoreError::io("<table>", e))?;
    Ok(())
}

pub fn write_table_file(path: &Path, format: TableFormat, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    write_table(std::io::BufWriter::new(f), format, header, rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CoreError::io(path, e))
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".into())
}

pub fn complexity_rows(report: &ComplexityReport) -> Vec<Vec<String>> {
    report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.params.to_string(),
                r.flops.to_string(),
                fmt_opt(r.target_params_k),
                fmt_opt(r.target_flops_k),
                fmt_opt(r.params_ratio),
            ]
        })
        .collect()
}

pub const COMPLEXITY_HEADER: [&str; 6] = ["model", "params", "flops", "target_params_k", "target_flops_k", "params_ratio"];
