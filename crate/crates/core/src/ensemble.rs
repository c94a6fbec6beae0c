//! Out-of-fold stacking: member fold training, OOF score assembly, the
//! stacking head, and ensemble inference.

use std::io::Write;
use std::path::Path;

use cse_tensor::{sigmoid, AdamConfig, Container};
use serde::{Deserialize, Serialize};

use crate::dataset::{FoldPlan, SegmentId};
use crate::error::{CoreError, Result};
use crate::evaluation::{predict_class, TableFormat};
use crate::features::SegmentFeatures;
use crate::models::{
    fit, member_inputs, refit_model, train_model, training_rng, Examples, FeatureStore, FitLog, ModelKind, ModelSpec,
    Network, Recipe,
};

/// Member scores for one pool segment, produced by the fold in which the
/// segment was validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofRow {
    pub id: SegmentId,
    pub fold: usize,
    pub label: u8,
    /// One 2-unit output per member, in `OofFeatures::members` order.
    pub scores: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofFeatures {
    pub members: Vec<ModelKind>,
    pub member_hashes: Vec<String>,
    /// Sorted by segment id.
    pub rows: Vec<OofRow>,
}

impl OofFeatures {
    pub fn width(&self) -> usize {
        2 * self.members.len()
    }

    pub fn features(row: &OofRow) -> Vec<f64> {
        row.scores.iter().flat_map(|s| s.iter().copied()).collect()
    }

    /// Keeps only the listed members (in the given order).
    pub fn subset(&self, members: &[ModelKind]) -> Result<OofFeatures> {
        let idx: Vec<usize> = members
            .iter()
            .map(|m| {
                self.members
                    .iter()
                    .position(|k| k == m)
                    .ok_or_else(|| CoreError::MissingMember(m.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(OofFeatures {
            members: members.to_vec(),
            member_hashes: idx.iter().map(|&i| self.member_hashes[i].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| OofRow {
                    scores: idx.iter().map(|&i| r.scores[i]).collect(),
                    ..r.clone()
                })
                .collect(),
        })
    }

    /// Long-form table: one line per (segment, member).
    pub fn write_table<W: Write>(&self, w: W, format: TableFormat) -> Result<()> {
        let mut out = csv::WriterBuilder::new().delimiter(format.delimiter()).from_writer(w);
        out.write_record(["clip", "ped", "index", "fold", "member", "member_hash", "s0", "s1", "label"])?;
        for r in &self.rows {
            for ((m, h), s) in self.members.iter().zip(&self.member_hashes).zip(&r.scores) {
                out.write_record([
                    r.id.clip.clone(),
                    r.id.ped.clone(),
                    r.id.index.to_string(),
                    r.fold.to_string(),
                    m.to_string(),
                    h.clone(),
                    format!("{:e}", s[0]),
                    format!("{:e}", s[1]),
                    r.label.to_string(),
                ])?;
            }
        }
        out.flush().map_err(|e| CoreError::io("<oof table>", e))?;
        Ok(())
    }

    pub fn save_table(&self, path: &Path, format: TableFormat) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        self.write_table(std::io::BufWriter::new(f), format)
    }

    pub fn load_table(path: &Path, format: TableFormat) -> Result<OofFeatures> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(format.delimiter())
            .from_path(path)?;
        let mut members: Vec<(ModelKind, String)> = Vec::new();
        let mut rows: Vec<OofRow> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or_default();
            let bad = |what: &str| CoreError::Invalid(format!("{}: bad {what} at line {:?}", path.display(), rec.position().map(|p| p.line())));
            let id = SegmentId::new(field(0), field(1), field(2).parse().map_err(|_| bad("index"))?);
            let fold: usize = field(3).parse().map_err(|_| bad("fold"))?;
            let member: ModelKind = field(4).parse()?;
            let hash = field(5).to_string();
            let s = [
                field(6).parse::<f64>().map_err(|_| bad("s0"))?,
                field(7).parse::<f64>().map_err(|_| bad("s1"))?,
            ];
            let label: u8 = field(8).parse().map_err(|_| bad("label"))?;
            if !members.iter().any(|(m, _)| *m == member) {
                members.push((member, hash));
            }
            match rows.last_mut() {
                Some(r) if r.id == id => r.scores.push(s),
                _ => rows.push(OofRow {
                    id,
                    fold,
                    label,
                    scores: vec![s],
                }),
            }
        }
        if rows.iter().any(|r| r.scores.len() != members.len()) {
            return Err(CoreError::Invalid(format!("{}: ragged member scores", path.display())));
        }
        Ok(OofFeatures {
            members: members.iter().map(|(m, _)| *m).collect(),
            member_hashes: members.into_iter().map(|(_, h)| h).collect(),
            rows,
        })
    }
}

/// One member trained on one fold.
#[derive(Debug, Clone)]
pub struct FoldRun {
    pub member: ModelKind,
    pub fold: usize,
    pub network: Network,
    pub log: FitLog,
    pub val_scores: Vec<(SegmentId, [f64; 2])>,
}

/// Trains every member on every fold, visiting folds in `order` (all folds
/// ascending when `None`). Results do not depend on the order.
pub fn train_members(
    specs: &[ModelSpec],
    plan: &FoldPlan,
    data: &FeatureStore,
    seed: u64,
    recipe: &Recipe,
    order: Option<&[usize]>,
) -> Result<Vec<FoldRun>> {
    let default: Vec<usize> = (0..plan.folds.len()).collect();
    let order = order.unwrap_or(&default);
    let mut runs = Vec::new();
    for spec in specs {
        for &f in order {
            let fold = plan
                .folds
                .get(f)
                .ok_or_else(|| CoreError::Invalid(format!("fold {f} out of range")))?;
            let out = train_model(spec, f, fold, data, seed, recipe)?;
            runs.push(FoldRun {
                member: spec.kind,
                fold: f,
                network: out.network,
                log: out.log,
                val_scores: out.val_scores,
            });
        }
    }
    Ok(runs)
}

/// Builds the OOF table from per-fold validation scores.
pub fn assemble_oof(specs: &[ModelSpec], plan: &FoldPlan, runs: &[FoldRun], data: &FeatureStore) -> Result<OofFeatures> {
    let mut rows: Vec<OofRow> = Vec::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        for id in &fold.validation {
            rows.push(OofRow {
                id: id.clone(),
                fold: f,
                label: data.get(id)?.label,
                scores: Vec::with_capacity(specs.len()),
            });
        }
    }
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    for spec in specs {
        for f in 0..plan.folds.len() {
            let run = runs
                .iter()
                .find(|r| r.member == spec.kind && r.fold == f)
                .ok_or_else(|| CoreError::MissingFold {
                    member: spec.kind.to_string(),
                    fold: f,
                })?;
            if run.val_scores.len() != plan.folds[f].validation.len() {
                return Err(CoreError::MissingFold {
                    member: spec.kind.to_string(),
                    fold: f,
                });
            }
            for (id, s) in &run.val_scores {
                let i = rows
                    .binary_search_by(|r| r.id.cmp(id))
                    .map_err(|_| CoreError::Invalid(format!("fold {f} scored unknown segment {id}")))?;
                if rows[i].fold != f {
                    return Err(CoreError::Invalid(format!("segment {id} scored by fold {f} but validated in fold {}", rows[i].fold)));
                }
                rows[i].scores.push(*s);
            }
        }
    }
    Ok(OofFeatures {
        members: specs.iter().map(|s| s.kind).collect(),
        member_hashes: specs.iter().map(|s| s.content_hash()).collect(),
        rows,
    })
}

pub fn collect_oof(specs: &[ModelSpec], plan: &FoldPlan, data: &FeatureStore, seed: u64, recipe: &Recipe) -> Result<(OofFeatures, Vec<FoldRun>)> {
    let runs = train_members(specs, plan, data, seed, recipe, None)?;
    let oof = assemble_oof(specs, plan, &runs, data)?;
    Ok((oof, runs))
}

/// Number of OOF rows whose producing fold trained on that segment or did
/// not hold it out.
pub fn audit_leakage(oof: &OofFeatures, plan: &FoldPlan) -> usize {
    oof.rows
        .iter()
        .filter(|r| match plan.folds.get(r.fold) {
            Some(f) => f.train.binary_search(&r.id).is_ok() || f.validation.binary_search(&r.id).is_err(),
            None => true,
        })
        .count()
}

/// Median best epoch across a member's folds (lower median), at least 1.
pub fn refit_epochs(runs: &[FoldRun], member: ModelKind) -> usize {
    let mut e: Vec<usize> = runs.iter().filter(|r| r.member == member).map(|r| r.log.best_epoch).collect();
    if e.is_empty() {
        return 1;
    }
    e.sort_unstable();
    e[(e.len() - 1) / 2].max(1)
}

/// Default recipe for the stacking head: a 2m→2 dense layer is cheap, so it
/// trains longer with a larger step than the members.
pub fn head_recipe() -> Recipe {
    Recipe {
        epochs: 200,
        batch: 32,
        patience: 0,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
    }
}

#[derive(Debug, Clone)]
pub struct CseClassifier {
    pub members: Vec<ModelKind>,
    pub member_hashes: Vec<String>,
    pub head: Network,
    pub log: FitLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsePrediction {
    pub class: u8,
    /// Sigmoid of the positive unit.
    pub confidence: f64,
    pub logits: [f64; 2],
    pub member_scores: Vec<[f64; 2]>,
    /// Sigmoid of each member's positive unit.
    pub member_confidences: Vec<f64>,
}

impl CseClassifier {
    /// Applies the head to member outputs given in `members` order.
    pub fn predict_scores(&self, member_scores: &[[f64; 2]]) -> Result<CsePrediction> {
        if member_scores.len() != self.members.len() {
            return Err(CoreError::MissingMember(format!(
                "expected {} member outputs, got {}",
                self.members.len(),
                member_scores.len()
            )));
        }
        let x = cse_tensor::Tensor::vector(member_scores.iter().flat_map(|s| s.iter().copied()).collect());
        let logits = self.head.logits(&[x])?;
        Ok(CsePrediction {
            class: predict_class(&logits),
            confidence: sigmoid(logits[1]),
            logits,
            member_scores: member_scores.to_vec(),
            member_confidences: member_scores.iter().map(|s| sigmoid(s[1])).collect(),
        })
    }

    pub fn checkpoint(&self) -> Container {
        self.head.checkpoint()
    }
}

/// Trains the stacking head on OOF scores.
pub fn train_cse(oof: &OofFeatures, seed: u64, recipe: &Recipe) -> Result<CseClassifier> {
    let pos = oof.rows.iter().filter(|r| r.label == 1).count();
    if pos == 0 || pos == oof.rows.len() {
        return Err(CoreError::Invalid("stacking needs both classes in the OOF labels".into()));
    }
    let mut rng = training_rng(seed, ModelKind::Cse, 0);
    let mut init = rng.substream(&[0]);
    let mut head = Network::new(ModelSpec::cse(oof.members.len()), &mut init)?;
    let ex = Examples {
        inputs: oof
            .rows
            .iter()
            .map(|r| vec![cse_tensor::Tensor::vector(OofFeatures::features(r))])
            .collect(),
        labels: oof.rows.iter().map(|r| r.label as usize).collect(),
    };
    let log = fit(&mut head, &ex, None, recipe, &mut rng)?;
    Ok(CseClassifier {
        members: oof.members.clone(),
        member_hashes: oof.member_hashes.clone(),
        head,
        log,
    })
}

/// How a member produces test-time scores.
#[derive(Debug, Clone)]
pub enum MemberPredictor {
    /// One model refit on the whole pool.
    Refit(Network),
    /// Mean output of the fold models.
    FoldAverage(Vec<Network>),
}

impl MemberPredictor {
    pub fn kind(&self) -> ModelKind {
        match self {
            MemberPredictor::Refit(n) => n.kind(),
            MemberPredictor::FoldAverage(v) => v[0].kind(),
        }
    }

    pub fn scores(&self, f: &SegmentFeatures) -> Result<[f64; 2]> {
        let x = member_inputs(self.kind(), f)?;
        match self {
            MemberPredictor::Refit(n) => n.logits(&x),
            MemberPredictor::FoldAverage(nets) => {
                let mut acc = [0.0; 2];
                for n in nets {
                    let s = n.logits(&x)?;
                    acc[0] += s[0];
                    acc[1] += s[1];
                }
                let k = nets.len() as f64;
                Ok([acc[0] / k, acc[1] / k])
            }
        }
    }
}

/// Member refits on the full pool, each for its median best fold epoch.
pub fn refit_members(specs: &[ModelSpec], pool: &[SegmentId], data: &FeatureStore, seed: u64, recipe: &Recipe, runs: &[FoldRun]) -> Result<Vec<MemberPredictor>> {
    specs
        .iter()
        .map(|spec| {
            let epochs = refit_epochs(runs, spec.kind);
            let (net, _) = refit_model(spec, pool, data, seed, recipe, epochs)?;
            Ok(MemberPredictor::Refit(net))
        })
        .collect()
}

pub fn fold_average_members(specs: &[ModelSpec], runs: &[FoldRun]) -> Result<Vec<MemberPredictor>> {
    specs
        .iter()
        .map(|spec| {
            let nets: Vec<Network> = runs.iter().filter(|r| r.member == spec.kind).map(|r| r.network.clone()).collect();
            if nets.is_empty() {
                return Err(CoreError::MissingFold {
                    member: spec.kind.to_string(),
                    fold: 0,
                });
            }
            Ok(MemberPredictor::FoldAverage(nets))
        })
        .collect()
}

/// Stacking head plus the member predictors feeding it.
#[derive(Debug, Clone)]
pub struct CseModel {
    pub classifier: CseClassifier,
    pub members: Vec<MemberPredictor>,
}

pub fn cse_predict(model: &CseModel, f: &SegmentFeatures) -> Result<CsePrediction> {
    let mut scores = Vec::with_capacity(model.classifier.members.len());
    for kind in &model.classifier.members {
        let m = model
            .members
            .iter()
            .find(|m| m.kind() == *kind)
            .ok_or_else(|| CoreError::MissingMember(kind.to_string()))?;
        scores.push(m.scores(f)?);
    }
    model.classifier.predict_scores(&scores)
}

/// Reference soft vote: mean member confidence thresholded at 0.5 (ties to
/// class 0).
pub fn soft_vote(member_confidences: &[f64]) -> (u8, f64) {
    let mean = member_confidences.iter().sum::<f64>() / member_confidences.len().max(1) as f64;
    ((mean > 0.5) as u8, mean)
}
