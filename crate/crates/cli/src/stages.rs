//! One function per subcommand. Each reads the previous stage's artifacts
//! under the output root and writes its own directory plus an echo.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cse_core::dataset::{
    class_counts, kfold, parse_annotations, segment_corpus, train_test_split, write_annotations, FoldPlan, Light,
    Road, Segment, SegmentId, SplitFile, Speed,
};
use cse_core::ensemble::{assemble_oof, audit_leakage, refit_members, train_cse, train_members, CseClassifier, CseModel, FoldRun, MemberPredictor, OofFeatures};
use cse_core::evaluation::{
    complexity_report, complexity_rows, fmt_opt, roc_points, write_json, write_table_file, TableFormat, COMPLEXITY_HEADER,
};
use cse_core::features::{featurize_all, load_feature_cache, save_feature_cache};
use cse_core::models::{FeatureStore, FitLog, ModelKind, ModelSpec, Network};
use cse_core::pipeline::{evaluate, sensitivity_from_oof, TestReport};
use cse_core::synth::generate_corpus;
use cse_core::CoreError;
use cse_tensor::{sigmoid, Container, Rng};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::user;
use crate::plot;
use crate::stage::Stage;

pub struct Ctx {
    pub cfg: RunConfig,
    pub root: PathBuf,
    pub force: bool,
}

impl Ctx {
    pub fn new(cfg: RunConfig, force: bool) -> Self {
        let root = cfg.out_root();
        Self { cfg, root, force }
    }

    fn corpus(&self) -> PathBuf {
        self.cfg.paths.corpus.clone().unwrap_or_else(|| self.root.join("synth").join("corpus.jsonl"))
    }

    fn split(&self) -> PathBuf {
        self.cfg.paths.split.clone().unwrap_or_else(|| self.root.join("synth").join("split.json"))
    }

    fn stage_file(&self, stage: &str, file: &str) -> PathBuf {
        self.root.join(stage).join(file)
    }

    fn table(&self, stem: &str) -> String {
        format!("{stem}.{}", self.cfg.run.format.extension())
    }

    fn fmt(&self) -> TableFormat {
        self.cfg.run.format
    }

    /// Starts a stage; `None` means a matching earlier run can be reused.
    fn begin(&self, name: &'static str, config: &impl Serialize, inputs: &[PathBuf]) -> Result<Option<Stage>> {
        let st = Stage::begin(&self.root, name, config, &self.cfg, inputs)?;
        if !self.force && st.up_to_date() {
            println!("{name}: up to date ({})", st.dir.display());
            return Ok(None);
        }
        st.clear()?;
        Ok(Some(st))
    }
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    let Some(st) = ctx.begin("synth", &ctx.cfg.synth, &[])? else {
        return Ok(());
    };
    let corpus = generate_corpus(&ctx.cfg.synth)?;
    for w in &corpus.warnings {
        eprintln!("synth: warning: {w}");
    }
    write_annotations(&st.path("corpus.jsonl"), &corpus.clips)?;
    corpus.split.save(&st.path("split.json"))?;
    write_json(&st.path("generator.json"), &corpus.echo())?;
    let peds: usize = corpus.clips.iter().map(|c| c.tracks.len()).sum();
    println!(
        "synth: {} clips, {peds} pedestrians (train {}, val {}, test {} clips) -> {}",
        corpus.clips.len(),
        corpus.split.train.len(),
        corpus.split.val.len(),
        corpus.split.test.len(),
        st.dir.display()
    );
    st.finish()
}

#[derive(Debug, Serialize, Deserialize)]
struct IngestSummary {
    corpus: String,
    clips: usize,
    pedestrians: usize,
    frames: usize,
    crossing: usize,
    not_crossing: usize,
    irrelevant: usize,
    stride: usize,
    segments: usize,
    positive_segments: usize,
    negative_segments: usize,
    warnings: Vec<String>,
}

pub fn ingest(ctx: &Ctx) -> Result<()> {
    let corpus_path = ctx.corpus();
    let Some(st) = ctx.begin("ingest", &ctx.cfg.run.stride, std::slice::from_ref(&corpus_path))? else {
        return Ok(());
    };
    let corpus = parse_annotations(&corpus_path)?;
    let (segments, seg_warnings) = segment_corpus(&corpus.clips, ctx.cfg.run.stride)?;
    let s = corpus.summary();
    let (pos, neg) = class_counts(&segments);
    let mut warnings = corpus.warnings.clone();
    warnings.extend(seg_warnings);
    let summary = IngestSummary {
        corpus: corpus_path.display().to_string(),
        clips: s.clips,
        pedestrians: s.pedestrians,
        frames: s.frames,
        crossing: s.crossing,
        not_crossing: s.not_crossing,
        irrelevant: s.irrelevant,
        stride: ctx.cfg.run.stride,
        segments: segments.len(),
        positive_segments: pos,
        negative_segments: neg,
        warnings,
    };
    for w in &summary.warnings {
        eprintln!("ingest: warning: {w}");
    }
    write_json(&st.path("summary.json"), &summary)?;
    println!(
        "ingest: {} clips, {} pedestrians ({} crossing, {} not crossing, {} irrelevant), {} segments ({pos} positive), {} warnings",
        s.clips,
        s.pedestrians,
        s.crossing,
        s.not_crossing,
        s.irrelevant,
        segments.len(),
        summary.warnings.len()
    );
    st.finish()
}

fn load_partition(ctx: &Ctx) -> Result<(Vec<Segment>, Vec<Segment>)> {
    let corpus_path = ctx.corpus();
    let split_path = ctx.split();
    let corpus = parse_annotations(&corpus_path)?;
    let split = SplitFile::load(&split_path)?;
    let (segments, _) = segment_corpus(&corpus.clips, ctx.cfg.run.stride)?;
    let part = train_test_split(segments, &split, &corpus.clips)?;
    if !part.unassigned.is_empty() {
        eprintln!("featurize: warning: {} clips are in no partition and were skipped", part.unassigned.len());
    }
    Ok((part.pool, part.test))
}

#[derive(Debug, Serialize, Deserialize)]
struct FeaturizeSummary {
    pool: usize,
    pool_positive: usize,
    test: usize,
    test_positive: usize,
    clamped_keypoints: usize,
}

pub fn featurize(ctx: &Ctx) -> Result<()> {
    let split = ctx.split();
    if !split.exists() {
        return Err(user(format!(
            "featurize: split file {} not found; run `cse synth` or pass --split",
            split.display()
        )));
    }
    let Some(st) = ctx.begin("featurize", &ctx.cfg.run.stride, &[ctx.corpus(), split])? else {
        return Ok(());
    };
    let (pool, test) = load_partition(ctx)?;
    let pool_f = featurize_all(&pool)?;
    let test_f = featurize_all(&test)?;
    save_feature_cache(&st.path("pool.features"), &pool_f)?;
    save_feature_cache(&st.path("test.features"), &test_f)?;
    let summary = FeaturizeSummary {
        pool: pool_f.len(),
        pool_positive: pool_f.iter().filter(|f| f.label == 1).count(),
        test: test_f.len(),
        test_positive: test_f.iter().filter(|f| f.label == 1).count(),
        clamped_keypoints: pool_f.iter().chain(&test_f).map(|f| f.clamped).sum(),
    };
    write_json(&st.path("summary.json"), &summary)?;
    println!(
        "featurize: pool {} segments ({} positive), test {} segments ({} positive)",
        summary.pool, summary.pool_positive, summary.test, summary.test_positive
    );
    st.finish()
}

/// Config fields that determine trained members.
#[derive(Serialize)]
struct TrainKey<'a> {
    members: &'a [ModelKind],
    protocol: cse_core::dataset::Protocol,
    folds: usize,
    seed: u64,
    recipe: &'a cse_core::models::Recipe,
    specs: Vec<String>,
}

fn train_key(ctx: &Ctx) -> (cse_core::pipeline::ExperimentConfig, Vec<String>) {
    let exp = ctx.cfg.experiment();
    let hashes = exp.specs().iter().map(|s| s.content_hash()).collect();
    (exp, hashes)
}

#[derive(Debug, Serialize, Deserialize)]
struct RunRecord {
    member: ModelKind,
    fold: usize,
    checkpoint: String,
    log: FitLog,
    val_scores: Vec<(SegmentId, [f64; 2])>,
}

fn checkpoint_name(member: ModelKind, fold: usize) -> String {
    format!("{member}_fold{fold}.ckpt")
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let pool_path = ctx.stage_file("featurize", "pool.features");
    let (exp, specs) = train_key(ctx);
    let key = TrainKey {
        members: &exp.members,
        protocol: exp.protocol,
        folds: exp.folds,
        seed: exp.seed,
        recipe: &exp.recipe,
        specs,
    };
    let Some(st) = ctx.begin("train", &key, std::slice::from_ref(&pool_path))? else {
        return Ok(());
    };
    let pool = load_feature_cache(&pool_path)?;
    let items: Vec<(SegmentId, u8)> = pool.iter().map(|f| (f.id.clone(), f.label)).collect();
    let plan = kfold(exp.protocol, &items, exp.folds, exp.fold_seed)?;
    write_json(&st.path("folds.json"), &plan)?;
    let data = FeatureStore::new(&pool);
    let specs = exp.specs();
    let runs = train_members(&specs, &plan, &data, exp.seed, &exp.recipe, None)?;
    let mut records = Vec::with_capacity(runs.len());
    for r in runs {
        let name = checkpoint_name(r.member, r.fold);
        r.network.checkpoint().save(&st.path(&name))?;
        records.push(RunRecord {
            member: r.member,
            fold: r.fold,
            checkpoint: name,
            log: r.log,
            val_scores: r.val_scores,
        });
    }
    write_json(&st.path("runs.json"), &records)?;
    for m in &exp.members {
        let logs: Vec<&RunRecord> = records.iter().filter(|r| r.member == *m).collect();
        let val: Vec<String> = logs.iter().map(|r| fmt_opt(r.log.best_val_loss)).collect();
        let epochs: Vec<String> = logs.iter().map(|r| r.log.best_epoch.to_string()).collect();
        println!("train: {m} best epochs [{}], val loss [{}]", epochs.join(", "), val.join(", "));
    }
    st.finish()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| user(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_network(spec: &ModelSpec, path: &Path) -> Result<Network> {
    let mut net = Network::new(spec.clone(), &mut Rng::new(0, 0))?;
    let c = Container::load(path).with_context(|| format!("loading {}", path.display()))?;
    net.load_checkpoint(&c).with_context(|| format!("loading {}", path.display()))?;
    Ok(net)
}

fn load_runs(ctx: &Ctx, specs: &[ModelSpec]) -> Result<(FoldPlan, Vec<FoldRun>)> {
    let plan: FoldPlan = read_json(&ctx.stage_file("train", "folds.json"))?;
    let records: Vec<RunRecord> = read_json(&ctx.stage_file("train", "runs.json"))?;
    let mut runs = Vec::new();
    for spec in specs {
        for r in records.iter().filter(|r| r.member == spec.kind) {
            runs.push(FoldRun {
                member: r.member,
                fold: r.fold,
                network: load_network(spec, &ctx.stage_file("train", &r.checkpoint))?,
                log: r.log.clone(),
                val_scores: r.val_scores.clone(),
            });
        }
    }
    Ok((plan, runs))
}

fn train_inputs(ctx: &Ctx) -> Vec<PathBuf> {
    vec![ctx.stage_file("train", "folds.json"), ctx.stage_file("train", "runs.json")]
}

/// How the ensemble was assembled, for `eval` to rebuild it.
#[derive(Debug, Serialize, Deserialize)]
struct ModelRecord {
    members: Vec<ModelKind>,
    member_hashes: Vec<String>,
    fold_average: bool,
    head_log: FitLog,
    oof_rows: usize,
    leakage: usize,
}

pub fn stack(ctx: &Ctx) -> Result<()> {
    let (exp, specs_hash) = train_key(ctx);
    let pool_path = ctx.stage_file("featurize", "pool.features");
    let mut inputs = train_inputs(ctx);
    inputs.push(pool_path.clone());
    let key = serde_json::json!({
        "specs": specs_hash,
        "seed": exp.seed,
        "head": exp.head,
        "recipe": exp.recipe,
        "fold_average": exp.fold_average,
        "format": ctx.fmt(),
    });
    let Some(st) = ctx.begin("stack", &key, &inputs)? else {
        return Ok(());
    };
    let specs = exp.specs();
    let (plan, runs) = load_runs(ctx, &specs)?;
    let pool = load_feature_cache(&pool_path)?;
    let data = FeatureStore::new(&pool);
    let oof = assemble_oof(&specs, &plan, &runs, &data)?;
    let leakage = audit_leakage(&oof, &plan);
    if leakage != 0 {
        anyhow::bail!("stack: {leakage} OOF rows were scored by a fold that trained on them");
    }
    oof.save_table(&st.path(&ctx.table("oof")), ctx.fmt())?;
    write_json(&st.path("oof.json"), &oof)?;
    let head = train_cse(&oof, exp.seed, &exp.head)?;
    head.checkpoint().save(&st.path("head.ckpt"))?;
    if !exp.fold_average {
        let ids: Vec<SegmentId> = pool.iter().map(|f| f.id.clone()).collect();
        let members = refit_members(&specs, &ids, &data, exp.seed, &exp.recipe, &runs)?;
        for m in members {
            if let MemberPredictor::Refit(net) = m {
                net.checkpoint().save(&st.path(&format!("{}_refit.ckpt", net.kind())))?;
            }
        }
    }
    let record = ModelRecord {
        members: head.members.clone(),
        member_hashes: head.member_hashes.clone(),
        fold_average: exp.fold_average,
        head_log: head.log.clone(),
        oof_rows: oof.rows.len(),
        leakage,
    };
    write_json(&st.path("model.json"), &record)?;
    println!(
        "stack: {} OOF rows x {} features, leakage {leakage}, head final loss {:.4}",
        oof.rows.len(),
        oof.width(),
        head.log.history.last().map(|e| e.train_loss).unwrap_or(f64::NAN)
    );
    st.finish()
}

fn load_model(ctx: &Ctx) -> Result<CseModel> {
    let record: ModelRecord = read_json(&ctx.stage_file("stack", "model.json"))?;
    let specs: Vec<ModelSpec> = ctx
        .cfg
        .experiment()
        .specs()
        .into_iter()
        .filter(|s| record.members.contains(&s.kind))
        .collect();
    if specs.len() != record.members.len() {
        return Err(user(format!(
            "stack was built for members {:?} but the config selects {:?}",
            record.members, ctx.cfg.run.members
        )));
    }
    for (s, h) in specs.iter().zip(&record.member_hashes) {
        if &s.content_hash() != h {
            return Err(user(format!("{}: model config changed since `stack`; rerun train and stack", s.kind)));
        }
    }
    let head_spec = ModelSpec::cse(record.members.len());
    let classifier = CseClassifier {
        members: record.members.clone(),
        member_hashes: record.member_hashes.clone(),
        head: load_network(&head_spec, &ctx.stage_file("stack", "head.ckpt"))?,
        log: record.head_log,
    };
    let members = if record.fold_average {
        let (_, runs) = load_runs(ctx, &specs)?;
        cse_core::ensemble::fold_average_members(&specs, &runs)?
    } else {
        specs
            .iter()
            .map(|s| Ok(MemberPredictor::Refit(load_network(s, &ctx.stage_file("stack", &format!("{}_refit.ckpt", s.kind)))?)))
            .collect::<Result<_>>()?
    };
    Ok(CseModel { classifier, members })
}

fn stack_inputs(ctx: &Ctx) -> Vec<PathBuf> {
    vec![ctx.stage_file("stack", "model.json"), ctx.stage_file("stack", "head.ckpt")]
}

pub const METRICS_HEADER: [&str; 10] = ["model", "accuracy", "precision", "recall", "f1", "auc", "tp", "fp", "tn", "fn"];

pub fn eval(ctx: &Ctx) -> Result<()> {
    let test_path = ctx.stage_file("featurize", "test.features");
    if !test_path.exists() {
        return Err(user(format!("eval: missing input {} (run `cse featurize` first)", test_path.display())));
    }
    let test = load_feature_cache(&test_path)?;
    if test.is_empty() {
        return Err(CoreError::EmptyTestSet.into());
    }
    let mut inputs = stack_inputs(ctx);
    inputs.push(test_path.clone());
    let key = serde_json::json!({ "format": ctx.fmt(), "members": ctx.cfg.run.members });
    let Some(st) = ctx.begin("eval", &key, &inputs)? else {
        return Ok(());
    };
    let model = load_model(ctx)?;
    let report = evaluate(&model, &test)?;
    write_json(&st.path("report.json"), &report)?;
    let rows: Vec<Vec<String>> = report
        .metrics
        .iter()
        .map(|m| {
            let r = &m.metrics;
            let c = &r.confusion;
            vec![
                m.model.clone(),
                format!("{:.6}", r.accuracy),
                format!("{:.6}", r.precision),
                format!("{:.6}", r.recall),
                format!("{:.6}", r.f1),
                fmt_opt(r.auc),
                c.tp.to_string(),
                c.fp.to_string(),
                c.tn.to_string(),
                c.fn_.to_string(),
            ]
        })
        .collect();
    write_table_file(&st.path(&ctx.table("metrics")), ctx.fmt(), &METRICS_HEADER, &rows)?;
    let mut header = vec!["clip", "ped", "index", "label", "cse_class", "cse_confidence"];
    let names: Vec<String> = report.members.iter().map(|m| format!("{m}_confidence")).collect();
    header.extend(names.iter().map(String::as_str));
    let preds: Vec<Vec<String>> = report
        .predictions
        .iter()
        .map(|p| {
            let mut row = vec![
                p.id.clip.clone(),
                p.id.ped.clone(),
                p.id.index.to_string(),
                p.label.to_string(),
                p.cse.class.to_string(),
                format!("{:.6}", p.cse.confidence),
            ];
            row.extend(p.cse.member_confidences.iter().map(|c| format!("{c:.6}")));
            row
        })
        .collect();
    write_table_file(&st.path(&ctx.table("predictions")), ctx.fmt(), &header, &preds)?;
    println!("eval: {} test segments", test.len());
    for r in &rows {
        println!("  {:<4} acc {} f1 {} auc {}", r[0], r[1], r[4], r[5]);
    }
    st.finish()
}

pub fn profile(ctx: &Ctx) -> Result<()> {
    let specs = ctx.cfg.experiment().specs();
    let hashes: Vec<String> = specs.iter().map(|s| s.content_hash()).collect();
    let key = serde_json::json!({ "specs": hashes, "format": ctx.fmt() });
    let Some(st) = ctx.begin("profile", &key, &[])? else {
        return Ok(());
    };
    let report = complexity_report(&specs)?;
    let rows = complexity_rows(&report);
    write_table_file(&st.path(&ctx.table("complexity")), ctx.fmt(), &COMPLEXITY_HEADER, &rows)?;
    write_json(&st.path("complexity.json"), &report)?;
    println!("profile ({})", report.convention);
    println!("  {:<14} {:>8} {:>12}", "model", "params", "flops");
    for r in &report.rows {
        println!("  {:<14} {:>8} {:>12}", r.model, r.params, r.flops);
    }
    st.finish()
}

pub const SENSITIVITY_HEADER: [&str; 11] = [
    "baseline",
    "additional",
    "samples",
    "common_predictions",
    "baseline_false",
    "additional_false",
    "common_false",
    "union_false",
    "merged_false",
    "correlation",
    "merged_minus_baseline_false",
];

pub fn analyze(ctx: &Ctx) -> Result<()> {
    let oof_path = ctx.stage_file("stack", "oof.json");
    let report_path = ctx.stage_file("eval", "report.json");
    let exp = ctx.cfg.experiment();
    let key = serde_json::json!({ "seed": exp.seed, "head": exp.head, "format": ctx.fmt() });
    let Some(st) = ctx.begin("analyze", &key, &[oof_path.clone(), report_path.clone()])? else {
        return Ok(());
    };
    let oof: OofFeatures = read_json(&oof_path)?;
    let report: TestReport = read_json(&report_path)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (i, &b) in report.members.iter().enumerate() {
        for &a in &report.members[i + 1..] {
            let s = sensitivity_from_oof(&oof, exp.seed, &exp.head, &report, b, a)?;
            rows.push(vec![
                b.to_string(),
                a.to_string(),
                s.samples.to_string(),
                format!("{:.6}", s.common_predictions),
                format!("{:.6}", s.baseline_false),
                format!("{:.6}", s.additional_false),
                format!("{:.6}", s.common_false),
                format!("{:.6}", s.union_false),
                format!("{:.6}", s.merged_false),
                fmt_opt(s.correlation),
                format!("{:.6}", s.merged_false - s.baseline_false),
            ]);
            records.push(serde_json::json!({ "baseline": b, "additional": a, "report": s }));
        }
    }
    if rows.is_empty() {
        return Err(user("analyze needs at least two members"));
    }
    write_table_file(&st.path(&ctx.table("sensitivity")), ctx.fmt(), &SENSITIVITY_HEADER, &rows)?;
    write_json(&st.path("sensitivity.json"), &records)?;
    println!("analyze: {} member pairs", rows.len());
    for r in &rows {
        println!("  {}+{} common {} common-false {} corr {}", r[0], r[1], r[3], r[6], r[9]);
    }
    st.finish()
}

/// Per-class frequency of each context attribute over all segments.
fn attribute_shares(segments: &[Segment]) -> Vec<(&'static str, Vec<String>, [Vec<f64>; 2])> {
    let mut speed = [vec![0.0; 5], vec![0.0; 5]];
    let mut light = [vec![0.0; 3], vec![0.0; 3]];
    let mut inter = [vec![0.0; 2], vec![0.0; 2]];
    let mut road = [vec![0.0; 3], vec![0.0; 3]];
    let mut n = [0.0_f64; 2];
    for s in segments {
        let y = s.label as usize;
        n[y] += 1.0;
        inter[y][s.at_intersection as usize] += 1.0;
        road[y][Road::ALL.iter().position(|r| *r == s.road).unwrap_or(0)] += 1.0;
        let k = s.frames.len().max(1) as f64;
        for f in &s.frames {
            speed[y][Speed::ALL.iter().position(|v| *v == f.speed).unwrap_or(0)] += 1.0 / k;
            light[y][Light::ALL.iter().position(|v| *v == f.light).unwrap_or(0)] += 1.0 / k;
        }
    }
    let norm = |mut v: [Vec<f64>; 2]| {
        for (c, row) in v.iter_mut().enumerate() {
            for x in row.iter_mut() {
                *x /= n[c].max(1.0);
            }
        }
        v
    };
    vec![
        ("speed", Speed::ALL.iter().map(|v| v.to_string()).collect(), norm(speed)),
        ("light", Light::ALL.iter().map(|v| v.to_string()).collect(), norm(light)),
        ("intersection", vec!["no".into(), "yes".into()], norm(inter)),
        ("road", Road::ALL.iter().map(|v| v.to_string()).collect(), norm(road)),
    ]
}

pub fn report(ctx: &Ctx) -> Result<()> {
    let report_path = ctx.stage_file("eval", "report.json");
    let corpus_path = ctx.corpus();
    let key = serde_json::json!({ "stride": ctx.cfg.run.stride, "format": ctx.fmt() });
    let Some(st) = ctx.begin("report", &key, &[report_path.clone(), corpus_path.clone()])? else {
        return Ok(());
    };
    let report: TestReport = read_json(&report_path)?;
    let y = report.labels();

    let cse = report
        .metrics_for("cse")
        .ok_or_else(|| user(format!("{}: no cse metrics", report_path.display())))?;
    let c = cse.confusion;
    let cells = vec![vec![c.tn as f64, c.fp as f64], vec![c.fn_ as f64, c.tp as f64]];
    let rows: Vec<Vec<String>> = [("0", &cells[0]), ("1", &cells[1])]
        .iter()
        .map(|(t, v)| vec![t.to_string(), v[0].to_string(), v[1].to_string()])
        .collect();
    write_table_file(&st.path(&ctx.table("confusion")), ctx.fmt(), &["true", "pred_0", "pred_1"], &rows)?;
    std::fs::write(
        st.path("confusion.svg"),
        plot::heatmap("CSE confusion (rows: true, cols: predicted)", &["not crossing", "crossing"], &["not crossing", "crossing"], &cells),
    )?;

    let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let mut roc_rows = Vec::new();
    let mut scored: Vec<(String, Vec<f64>)> = report
        .members
        .iter()
        .map(|m| (m.to_string(), report.member_scores(*m).unwrap_or_default().iter().map(|s| sigmoid(s[1])).collect()))
        .collect();
    scored.push(("cse".into(), report.predictions.iter().map(|p| p.cse.confidence).collect()));
    for (name, conf) in &scored {
        let pts = roc_points(conf, &y);
        for p in &pts {
            roc_rows.push(vec![name.clone(), format!("{:e}", p.threshold), format!("{:.6}", p.fpr), format!("{:.6}", p.tpr)]);
        }
        curves.push((name.clone(), pts.iter().map(|p| (p.fpr, p.tpr)).collect()));
    }
    write_table_file(&st.path(&ctx.table("roc")), ctx.fmt(), &["model", "threshold", "fpr", "tpr"], &roc_rows)?;
    let series: Vec<(&str, Vec<(f64, f64)>)> = curves.iter().map(|(n, p)| (n.as_str(), p.clone())).collect();
    std::fs::write(st.path("roc.svg"), plot::line_chart("ROC on the test set", "false positive rate", "true positive rate", &series))?;

    let corpus = parse_annotations(&corpus_path)?;
    let (segments, _) = segment_corpus(&corpus.clips, ctx.cfg.run.stride)?;
    let mut attr_rows = Vec::new();
    for (attr, cats, shares) in attribute_shares(&segments) {
        for (k, cat) in cats.iter().enumerate() {
            attr_rows.push(vec![
                attr.to_string(),
                cat.clone(),
                format!("{:.6}", shares[0][k]),
                format!("{:.6}", shares[1][k]),
            ]);
        }
        let names: Vec<&str> = cats.iter().map(String::as_str).collect();
        let svg = plot::bar_chart(
            &format!("{attr} by class"),
            "share of segments",
            &names,
            &[("not crossing", shares[0].clone()), ("crossing", shares[1].clone())],
        );
        std::fs::write(st.path(&format!("attribute_{attr}.svg")), svg)?;
    }
    write_table_file(
        &st.path(&ctx.table("attributes")),
        ctx.fmt(),
        &["attribute", "value", "not_crossing", "crossing"],
        &attr_rows,
    )?;
    println!("report: confusion, ROC and attribute charts -> {}", st.dir.display());
    st.finish()
}

/// Every stage in order; `synth` only runs when no corpus path was given.
pub fn pipeline(ctx: &Ctx) -> Result<()> {
    if ctx.cfg.paths.corpus.is_none() {
        synth(ctx)?;
    }
    ingest(ctx)?;
    featurize(ctx)?;
    train(ctx)?;
    stack(ctx)?;
    eval(ctx)?;
    profile(ctx)?;
    analyze(ctx)?;
    report(ctx)
}

