//! End-to-end experiment: folds, member training, stacking, test scoring.

use cse_tensor::sigmoid;
use serde::{Deserialize, Serialize};

use crate::dataset::{kfold, labeled_ids, FoldPlan, Protocol, Segment, SegmentId};
use crate::ensemble::{
    collect_oof, cse_predict, fold_average_members, head_recipe, refit_members, train_cse, CseModel, CsePrediction,
    FoldRun, MemberPredictor, OofFeatures,
};
use crate::error::{CoreError, Result};
use crate::evaluation::{confusion, metrics, predict_class, sensitivity, MetricsReport, SensitivityReport};
use crate::features::SegmentFeatures;
use crate::models::{FeatureStore, M1Config, M2Config, M3Config, ModelKind, ModelSpec, Recipe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub members: Vec<ModelKind>,
    pub protocol: Protocol,
    pub folds: usize,
    pub fold_seed: u64,
    pub seed: u64,
    pub recipe: Recipe,
    pub head: Recipe,
    pub m1: M1Config,
    pub m2: M2Config,
    pub m3: M3Config,
    /// Score the test set with the mean of the fold models instead of
    /// refitting each member on the whole pool.
    pub fold_average: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            members: ModelKind::MEMBERS.to_vec(),
            protocol: Protocol::Stratified,
            folds: 5,
            fold_seed: 1,
            seed: 1,
            recipe: Recipe::default(),
            head: head_recipe(),
            m1: M1Config::default(),
            m2: M2Config::default(),
            m3: M3Config::default(),
            fold_average: false,
        }
    }
}

impl ExperimentConfig {
    pub fn specs(&self) -> Vec<ModelSpec> {
        self.members
            .iter()
            .map(|k| match k {
                ModelKind::M1 => ModelSpec::m1(self.m1),
                ModelKind::M2 => ModelSpec::m2(self.m2),
                ModelKind::M3 => ModelSpec::m3(self.m3),
                ModelKind::Cse => ModelSpec::cse(self.members.len()),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() || self.members.contains(&ModelKind::Cse) {
            return Err(CoreError::Invalid("members must be a non-empty subset of m1, m2, m3".into()));
        }
        if self.folds < 2 {
            return Err(CoreError::Invalid(format!("folds must be >= 2, got {}", self.folds)));
        }
        for spec in self.specs() {
            spec.validate()?;
        }
        Ok(())
    }
}

pub fn plan_folds(pool: &[Segment], cfg: &ExperimentConfig) -> Result<FoldPlan> {
    kfold(cfg.protocol, &labeled_ids(pool), cfg.folds, cfg.fold_seed)
}

/// Everything learned from the training pool.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub specs: Vec<ModelSpec>,
    pub plan: FoldPlan,
    pub oof: OofFeatures,
    pub runs: Vec<FoldRun>,
    pub model: CseModel,
}

/// Trains members per fold, assembles OOF scores, fits the stacking head and
/// prepares test-time member predictors.
pub fn fit_experiment(pool: &[SegmentFeatures], plan: FoldPlan, cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let specs = cfg.specs();
    let data = FeatureStore::new(pool);
    let (oof, runs) = collect_oof(&specs, &plan, &data, cfg.seed, &cfg.recipe)?;
    let classifier = train_cse(&oof, cfg.seed, &cfg.head)?;
    let members = if cfg.fold_average {
        fold_average_members(&specs, &runs)?
    } else {
        let ids: Vec<SegmentId> = pool.iter().map(|f| f.id.clone()).collect();
        refit_members(&specs, &ids, &data, cfg.seed, &cfg.recipe, &runs)?
    };
    Ok(Experiment {
        config: cfg.clone(),
        specs,
        plan,
        oof,
        runs,
        model: CseModel { classifier, members },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPrediction {
    pub id: SegmentId,
    pub label: u8,
    pub cse: CsePrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub members: Vec<ModelKind>,
    /// One entry per member followed by the ensemble.
    pub metrics: Vec<ModelMetrics>,
    pub predictions: Vec<TestPrediction>,
}

impl TestReport {
    pub fn metrics_for(&self, model: &str) -> Option<&MetricsReport> {
        self.metrics.iter().find(|m| m.model == model).map(|m| &m.metrics)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.predictions.iter().map(|p| p.label).collect()
    }

    pub fn member_scores(&self, member: ModelKind) -> Option<Vec<[f64; 2]>> {
        let i = self.members.iter().position(|m| *m == member)?;
        Some(self.predictions.iter().map(|p| p.cse.member_scores[i]).collect())
    }
}

fn report_from_scores(scores: &[[f64; 2]], y: &[u8]) -> Result<MetricsReport> {
    let pred: Vec<u8> = scores.iter().map(predict_class).collect();
    let conf: Vec<f64> = scores.iter().map(|s| sigmoid(s[1])).collect();
    Ok(metrics(&confusion(y, &pred)?, &conf, y))
}

pub fn evaluate(model: &CseModel, test: &[SegmentFeatures]) -> Result<TestReport> {
    if test.is_empty() {
        return Err(CoreError::EmptyTestSet);
    }
    let predictions = test
        .iter()
        .map(|f| {
            Ok(TestPrediction {
                id: f.id.clone(),
                label: f.label,
                cse: cse_predict(model, f)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let y: Vec<u8> = predictions.iter().map(|p| p.label).collect();
    let members = model.classifier.members.clone();
    let mut out = Vec::with_capacity(members.len() + 1);
    for (i, m) in members.iter().enumerate() {
        let s: Vec<[f64; 2]> = predictions.iter().map(|p| p.cse.member_scores[i]).collect();
        out.push(ModelMetrics {
            model: m.to_string(),
            metrics: report_from_scores(&s, &y)?,
        });
    }
    let s: Vec<[f64; 2]> = predictions.iter().map(|p| p.cse.logits).collect();
    out.push(ModelMetrics {
        model: ModelKind::Cse.to_string(),
        metrics: report_from_scores(&s, &y)?,
    });
    Ok(TestReport {
        members,
        metrics: out,
        predictions,
    })
}

/// Baseline-versus-additional analysis on the test set. The merged model is
/// a stacking head over the two members' OOF scores, applied to their test
/// scores.
pub fn pairwise_sensitivity(exp: &Experiment, report: &TestReport, baseline: ModelKind, additional: ModelKind) -> Result<SensitivityReport> {
    sensitivity_from_oof(&exp.oof, exp.config.seed, &exp.config.head, report, baseline, additional)
}

/// As [`pairwise_sensitivity`], from a stored OOF table.
pub fn sensitivity_from_oof(
    oof: &OofFeatures,
    seed: u64,
    head_recipe: &Recipe,
    report: &TestReport,
    baseline: ModelKind,
    additional: ModelKind,
) -> Result<SensitivityReport> {
    let oof = oof.subset(&[baseline, additional])?;
    let head = train_cse(&oof, seed, head_recipe)?;
    let sb = report
        .member_scores(baseline)
        .ok_or_else(|| CoreError::MissingMember(baseline.to_string()))?;
    let sa = report
        .member_scores(additional)
        .ok_or_else(|| CoreError::MissingMember(additional.to_string()))?;
    let mut merged = Vec::with_capacity(sb.len());
    for (b, a) in sb.iter().zip(&sa) {
        merged.push(head.predict_scores(&[*b, *a])?.class);
    }
    let bp: Vec<u8> = sb.iter().map(predict_class).collect();
    let ap: Vec<u8> = sa.iter().map(predict_class).collect();
    let bc: Vec<f64> = sb.iter().map(|s| sigmoid(s[1])).collect();
    let ac: Vec<f64> = sa.iter().map(|s| sigmoid(s[1])).collect();
    sensitivity(&bp, &bc, &ap, &ac, &merged, &report.labels())
}

/// Member predictors scored without the head, for callers that only need
/// per-member outputs.
pub fn member_scores(members: &[MemberPredictor], f: &SegmentFeatures) -> Result<Vec<[f64; 2]>> {
    members.iter().map(|m| m.scores(f)).collect()
}
