//! Synthetic annotation corpora with controllable class signal per channel.
//!
//! Each pedestrian carries a label and, per input channel (pose, context,
//! trajectory), an "expressed" flag. An expressed channel shows the
//! pattern of the pedestrian's own class; an unexpressed one shows the
//! opposite class. Expression probabilities and the correlation between the
//! three flags steer how often, and how jointly, the member models err.

use std::f64::consts::PI;

use cse_tensor::rng::stream_key;
use cse_tensor::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    AnnotatedClip, BBox, FrameRecord, Light, PedestrianTrack, Road, SourceLabel, Speed, SplitFile, WINDOW,
};
use crate::error::{CoreError, Result};

/// Probability that each channel shows the pedestrian's own class, and the
/// correlation of those events across channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub pose: f64,
    pub context: f64,
    pub trajectory: f64,
    /// In `[-1, 1]`. Each pedestrian is coupled with probability `|rho|`,
    /// otherwise its flags are drawn independently. A coupled pedestrian
    /// shares one draw across channels when `rho > 0`; when `rho < 0` its
    /// channel flips are mutually exclusive (at most one misleading channel
    /// while the flip rates sum to at most 1).
    pub correlation: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            pose: 1.0,
            context: 1.0,
            trajectory: 1.0,
            correlation: 0.0,
        }
    }
}

/// Class-conditional context tables, indexed `[class]` with class 0 = not
/// crossing and 1 = crossing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextTables {
    /// stopped, slow, fast, accelerating, decelerating
    pub speed: [[f64; 5]; 2],
    /// red, green, none
    pub light: [[f64; 3]; 2],
    /// P(at intersection)
    pub intersection: [f64; 2],
    /// garage, parking_lot, street
    pub road: [[f64; 3]; 2],
}

impl Default for ContextTables {
    fn default() -> Self {
        Self {
            speed: [[0.05, 0.15, 0.45, 0.30, 0.05], [0.35, 0.25, 0.05, 0.05, 0.30]],
            light: [[0.15, 0.45, 0.40], [0.55, 0.15, 0.30]],
            intersection: [0.25, 0.80],
            road: [[0.20, 0.35, 0.45], [0.05, 0.15, 0.80]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub clips: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub peds_per_clip: usize,
    pub frame_w: f64,
    pub frame_h: f64,
    /// Crossing share among train+val pedestrians.
    pub pool_crossing_fraction: f64,
    /// Crossing share among test pedestrians.
    pub test_crossing_fraction: f64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    /// Share of non-crossing pedestrians tagged `irrelevant`.
    pub irrelevant_fraction: f64,
    pub signal: SignalConfig,
    pub tables: ContextTables,
    /// Peak leg swing in radians.
    pub gait_amplitude: f64,
    /// Keypoint jitter, in box heights.
    pub keypoint_noise: f64,
    /// Box jitter, in box heights.
    pub box_noise: f64,
    /// Per-frame probability that a pedestrian's box and keypoints are absent.
    pub occlusion_rate: f64,
    /// Allowed bone length range, in box heights.
    pub bone_bounds: [f64; 2],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            clips: 200,
            frames_min: 64,
            frames_max: 96,
            peds_per_clip: 1,
            frame_w: 1920.0,
            frame_h: 1080.0,
            pool_crossing_fraction: 0.5,
            test_crossing_fraction: 0.5,
            test_fraction: 0.2,
            val_fraction: 0.1,
            irrelevant_fraction: 0.3,
            signal: SignalConfig::default(),
            tables: ContextTables::default(),
            gait_amplitude: 0.35,
            keypoint_noise: 0.01,
            box_noise: 0.002,
            occlusion_rate: 0.0,
            bone_bounds: [0.05, 0.5],
        }
    }
}

impl SceneConfig {
    /// Heavily imbalanced test split (7:93) against a mildly
    /// crossing-heavy pool (56:44).
    pub fn imbalanced() -> Self {
        Self {
            pool_crossing_fraction: 0.56,
            test_crossing_fraction: 0.07,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Invalid(m));
        if self.clips == 0 || self.peds_per_clip == 0 {
            return bad("clips and peds_per_clip must be >= 1".into());
        }
        if self.frames_min < WINDOW || self.frames_max < self.frames_min {
            return bad(format!(
                "frames per clip must satisfy {WINDOW} <= frames_min <= frames_max (got {}..{})",
                self.frames_min, self.frames_max
            ));
        }
        if !(self.frame_w > 0.0 && self.frame_h > 0.0) {
            return bad("frame size must be positive".into());
        }
        let probs = [
            ("pool_crossing_fraction", self.pool_crossing_fraction),
            ("test_crossing_fraction", self.test_crossing_fraction),
            ("test_fraction", self.test_fraction),
            ("val_fraction", self.val_fraction),
            ("irrelevant_fraction", self.irrelevant_fraction),
            ("signal.pose", self.signal.pose),
            ("signal.context", self.signal.context),
            ("signal.trajectory", self.signal.trajectory),
            ("occlusion_rate", self.occlusion_rate),
            ("tables.intersection[0]", self.tables.intersection[0]),
            ("tables.intersection[1]", self.tables.intersection[1]),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.test_fraction + self.val_fraction > 1.0 {
            return bad("test_fraction + val_fraction exceeds 1".into());
        }
        if !(-1.0..=1.0).contains(&self.signal.correlation) {
            return bad(format!("signal.correlation = {} is outside [-1, 1]", self.signal.correlation));
        }
        let t = &self.tables;
        let dists: Vec<(&str, &[f64])> = vec![
            ("speed[0]", &t.speed[0]),
            ("speed[1]", &t.speed[1]),
            ("light[0]", &t.light[0]),
            ("light[1]", &t.light[1]),
            ("road[0]", &t.road[0]),
            ("road[1]", &t.road[1]),
        ];
        for (name, d) in dists {
            if d.iter().any(|p| !(0.0..=1.0).contains(p)) || (d.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("tables.{name} must be a distribution"));
            }
        }
        if !(self.bone_bounds[0] >= 0.0 && self.bone_bounds[0] < self.bone_bounds[1]) {
            return bad("bone_bounds must satisfy 0 <= min < max".into());
        }
        if self.gait_amplitude < 0.0 || self.keypoint_noise < 0.0 || self.box_noise < 0.0 {
            return bad("gait amplitude and noise levels must be non-negative".into());
        }
        Ok(())
    }
}

/// Per-pedestrian record of which channels carry the true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSignal {
    pub clip: String,
    pub ped: String,
    pub label: SourceLabel,
    pub pose: bool,
    pub context: bool,
    pub trajectory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub signal: SignalConfig,
    pub tracks: Vec<TrackSignal>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub config: SceneConfig,
    pub clips: Vec<AnnotatedClip>,
    pub split: SplitFile,
    pub plan: SignalPlan,
    pub warnings: Vec<String>,
}

/// Provenance record written beside a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub generator: String,
    pub config: SceneConfig,
    pub plan: SignalPlan,
}

impl SynthCorpus {
    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            generator: format!("cse-core {}", env!("CARGO_PKG_VERSION")),
            config: self.config.clone(),
            plan: self.plan.clone(),
        }
    }
}

/// Exact-count allocation of `n` draws to categories (largest remainder,
/// ties to the lower index).
pub fn quota(n: usize, probs: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// `n` category indices with exact quota counts, in shuffled order.
fn quota_draw(n: usize, probs: &[f64], rng: &mut Rng) -> Vec<usize> {
    let mut v: Vec<usize> = quota(n, probs).iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)).collect();
    rng.shuffle(&mut v);
    v
}

/// COCO skeleton bones checked against `bone_bounds`.
pub const BONES: [(usize, usize); 12] = [
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
    (5, 11),
    (6, 12),
    (5, 6),
    (11, 12),
];

/// Bones whose lengths may legitimately shrink toward zero in profile view
/// (shoulder and hip widths).
const FORESHORTENED: [usize; 2] = [10, 11];

/// True when every non-foreshortened bone lies within `bounds` box heights.
pub fn bones_within(kp: &[[f64; 2]], box_h: f64, bounds: [f64; 2]) -> bool {
    BONES.iter().enumerate().all(|(b, &(i, j))| {
        let len = ((kp[i][0] - kp[j][0]).powi(2) + (kp[i][1] - kp[j][1]).powi(2)).sqrt() / box_h;
        len <= bounds[1] && (FORESHORTENED.contains(&b) || len >= bounds[0])
    })
}

/// Keypoints in box-height units: x offset from the box center, y from the
/// box top.
fn pose_template(crossing: bool, facing: f64, phase: f64, amplitude: f64) -> [[f64; 2]; 17] {
    if !crossing {
        // frontal, standing
        return [
            [0.0, 0.08],
            [-0.02, 0.065],
            [0.02, 0.065],
            [-0.04, 0.075],
            [0.04, 0.075],
            [-0.08, 0.2],
            [0.08, 0.2],
            [-0.1, 0.35],
            [0.1, 0.35],
            [-0.105, 0.49],
            [0.105, 0.49],
            [-0.05, 0.52],
            [0.05, 0.52],
            [-0.05, 0.73],
            [0.05, 0.73],
            [-0.05, 0.94],
            [0.05, 0.94],
        ];
    }
    // profile, walking with opposed leg and arm swing
    let d = facing;
    let swing = amplitude * phase.sin();
    let leg = |hip: [f64; 2], theta: f64| {
        let knee = [hip[0] + 0.21 * theta.sin() + 0.02 * d, hip[1] + 0.21 * theta.cos()];
        let ankle = [hip[0] + 0.42 * theta.sin(), hip[1] + 0.42 * theta.cos()];
        (knee, ankle)
    };
    let arm = |sh: [f64; 2], theta: f64| {
        let elbow = [sh[0] + 0.15 * theta.sin(), sh[1] + 0.15 * theta.cos()];
        let wrist = [elbow[0] + 0.14 * (theta + 0.2 * d).sin(), elbow[1] + 0.14 * (theta + 0.2 * d).cos()];
        (elbow, wrist)
    };
    let (ls, rs) = ([-0.01, 0.2], [0.01, 0.2]);
    let (lh, rh) = ([-0.01, 0.52], [0.01, 0.52]);
    let (lk, la) = leg(lh, swing);
    let (rk, ra) = leg(rh, -swing);
    let (le, lw) = arm(ls, -0.7 * swing);
    let (re, rw) = arm(rs, 0.7 * swing);
    [
        [0.05 * d, 0.08],
        [0.035 * d - 0.005, 0.065],
        [0.035 * d + 0.005, 0.065],
        [-0.01 * d - 0.004, 0.075],
        [-0.01 * d + 0.004, 0.075],
        ls,
        rs,
        le,
        re,
        lw,
        rw,
        lh,
        rh,
        lk,
        rk,
        la,
        ra,
    ]
}

struct Motion {
    cx: f64,
    bottom: f64,
    h: f64,
    vx: f64,
    growth: f64,
}

fn start_motion(crossing: bool, cfg: &SceneConfig, rng: &mut Rng) -> Motion {
    let (fw, fh) = (cfg.frame_w, cfg.frame_h);
    let left = rng.bernoulli(0.5);
    if crossing {
        // steps off the curb toward the road center while approaching
        let cx = fw * if left { rng.uniform_range(0.2, 0.35) } else { rng.uniform_range(0.65, 0.8) };
        let v = fw * rng.uniform_range(0.002, 0.004);
        Motion {
            cx,
            bottom: fh * rng.uniform_range(0.75, 0.9),
            h: fh * rng.uniform_range(0.2, 0.3),
            vx: if left { v } else { -v },
            growth: rng.uniform_range(0.004, 0.008),
        }
    } else {
        // stays on the sidewalk near the image edge, walking along the road
        let cx = fw * if left { rng.uniform_range(0.03, 0.17) } else { rng.uniform_range(0.83, 0.97) };
        Motion {
            cx,
            bottom: fh * rng.uniform_range(0.6, 0.75),
            h: fh * rng.uniform_range(0.12, 0.2),
            vx: fw * rng.uniform_range(-0.0005, 0.0005),
            growth: rng.uniform_range(-0.004, 0.0),
        }
    }
}

fn draw_flags(sig: &SignalConfig, rng: &mut Rng) -> [bool; 3] {
    let p = [sig.pose, sig.context, sig.trajectory];
    let rho = sig.correlation;
    let coupled = rng.bernoulli(rho.abs());
    let u = rng.uniform();
    let mut out = [false; 3];
    let mut start = 0.0;
    for c in 0..3 {
        let flip = 1.0 - p[c];
        out[c] = if !coupled {
            rng.uniform() < p[c]
        } else if rho > 0.0 {
            // one shared draw: the channels flip together
            u >= flip
        } else {
            // consecutive flip intervals on the unit circle: flips are
            // mutually exclusive whenever the flip rates sum to at most 1
            let d = (u - start).rem_euclid(1.0);
            d >= flip
        };
        start += flip;
    }
    out
}

const STREAM_SPLIT: u64 = 1;
const STREAM_LABELS: u64 = 2;
const STREAM_CONTEXT: u64 = 3;
const STREAM_CLIP: u64 = 4;

/// Generates a corpus, its split file and the signal plan.
pub fn generate_corpus(cfg: &SceneConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let n = cfg.clips;
    let clip_ids: Vec<String> = (1..=n).map(|i| format!("clip_{i:04}")).collect();

    // partition
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(cfg.seed, STREAM_SPLIT).shuffle(&mut order);
    let n_test = (n as f64 * cfg.test_fraction).round() as usize;
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).min(n - n_test);
    let mut is_test = vec![false; n];
    let mut split = SplitFile::default();
    for (rank, &c) in order.iter().enumerate() {
        let id = clip_ids[c].clone();
        if rank < n_test {
            is_test[c] = true;
            split.test.push(id);
        } else if rank < n_test + n_val {
            split.val.push(id);
        } else {
            split.train.push(id);
        }
    }
    for list in [&mut split.train, &mut split.val, &mut split.test] {
        list.sort();
    }

    // labels by exact quota within each partition
    let peds = cfg.peds_per_clip;
    let mut labels = vec![SourceLabel::NotCrossing; n * peds];
    let mut label_rng = Rng::new(cfg.seed, STREAM_LABELS);
    for test_side in [false, true] {
        let mut slots: Vec<usize> = (0..n * peds).filter(|&s| is_test[s / peds] == test_side).collect();
        if slots.is_empty() {
            continue;
        }
        label_rng.shuffle(&mut slots);
        let frac = if test_side {
            cfg.test_crossing_fraction
        } else {
            cfg.pool_crossing_fraction
        };
        let n_pos = (slots.len() as f64 * frac).round() as usize;
        let n_irr = ((slots.len() - n_pos) as f64 * cfg.irrelevant_fraction).round() as usize;
        for (r, &s) in slots.iter().enumerate() {
            labels[s] = if r < n_pos {
                SourceLabel::Crossing
            } else if r < n_pos + n_irr {
                SourceLabel::Irrelevant
            } else {
                SourceLabel::NotCrossing
            };
        }
        let name = if test_side { "test" } else { "train+val" };
        if n_pos == 0 || n_pos == slots.len() {
            warnings.push(format!("{name} partition holds a single class; balanced folds will be infeasible"));
        }
    }
    let positive = |l: SourceLabel| l == SourceLabel::Crossing;

    // channel expression flags
    let mut flags = Vec::with_capacity(n * peds);
    for s in 0..n * peds {
        let mut r = Rng::new(cfg.seed, stream_key(&[STREAM_LABELS, s as u64]));
        flags.push(draw_flags(&cfg.signal, &mut r));
    }
    let shown = |s: usize, c: usize| -> usize {
        let y = positive(labels[s]) as usize;
        if flags[s][c] {
            y
        } else {
            1 - y
        }
    };

    // clip- and track-level context by exact quota within each shown class
    let mut ctx_rng = Rng::new(cfg.seed, STREAM_CONTEXT);
    let mut light = vec![Light::None; n];
    let mut road = vec![Road::Street; n];
    let mut intersection = vec![false; n * peds];
    for class in 0..2 {
        let clips: Vec<usize> = (0..n).filter(|&c| shown(c * peds, 1) == class).collect();
        let lights = quota_draw(clips.len(), &cfg.tables.light[class], &mut ctx_rng);
        let roads = quota_draw(clips.len(), &cfg.tables.road[class], &mut ctx_rng);
        for (i, &c) in clips.iter().enumerate() {
            light[c] = [Light::Red, Light::Green, Light::None][lights[i]];
            road[c] = Road::ALL[roads[i]];
        }
        let tracks: Vec<usize> = (0..n * peds).filter(|&s| shown(s, 1) == class).collect();
        let p = cfg.tables.intersection[class];
        let hits = quota_draw(tracks.len(), &[1.0 - p, p], &mut ctx_rng);
        for (i, &s) in tracks.iter().enumerate() {
            intersection[s] = hits[i] == 1;
        }
    }

    let mut clips = Vec::with_capacity(n);
    let mut plan = Vec::with_capacity(n * peds);
    for c in 0..n {
        let mut rng = Rng::new(cfg.seed, stream_key(&[STREAM_CLIP, c as u64]));
        let m = cfg.frames_min + rng.below(cfg.frames_max - cfg.frames_min + 1);
        let ctx_class = shown(c * peds, 1);
        let speeds = quota_draw(m, &cfg.tables.speed[ctx_class], &mut rng);
        let frames = speeds
            .iter()
            .map(|&s| FrameRecord {
                speed: Speed::ALL[s],
                light: light[c],
            })
            .collect();
        let mut tracks = Vec::with_capacity(peds);
        for p in 0..peds {
            let s = c * peds + p;
            let ped_id = format!("ped_{}", p + 1);
            let track = synth_track(cfg, &mut rng, m, shown(s, 0) == 1, shown(s, 2) == 1);
            plan.push(TrackSignal {
                clip: clip_ids[c].clone(),
                ped: ped_id.clone(),
                label: labels[s],
                pose: flags[s][0],
                context: flags[s][1],
                trajectory: flags[s][2],
            });
            tracks.push(PedestrianTrack {
                ped_id,
                label: labels[s],
                at_intersection: intersection[s],
                boxes: track.0,
                keypoints: track.1,
            });
        }
        clips.push(AnnotatedClip {
            clip_id: clip_ids[c].clone(),
            frame_w: cfg.frame_w,
            frame_h: cfg.frame_h,
            road_type: road[c],
            frames,
            tracks,
        });
    }
    Ok(SynthCorpus {
        config: cfg.clone(),
        clips,
        split,
        plan: SignalPlan {
            signal: cfg.signal,
            tracks: plan,
        },
        warnings,
    })
}

type TrackFrames = (Vec<Option<BBox>>, Vec<Option<Vec<[f64; 2]>>>);

fn synth_track(cfg: &SceneConfig, rng: &mut Rng, m: usize, pose_crossing: bool, traj_crossing: bool) -> TrackFrames {
    let (fw, fh) = (cfg.frame_w, cfg.frame_h);
    let mut mo = start_motion(traj_crossing, cfg, rng);
    let facing = if mo.vx >= 0.0 { 1.0 } else { -1.0 };
    let period = rng.uniform_range(20.0, 28.0);
    let phase0 = rng.uniform_range(0.0, 2.0 * PI);
    let mut boxes = Vec::with_capacity(m);
    let mut keypoints = Vec::with_capacity(m);
    for t in 0..m {
        let h = mo.h.min(0.7 * fh);
        let w = 0.4 * h;
        let jitter = cfg.box_noise * h;
        let x = (mo.cx - w / 2.0 + jitter * rng.normal()).clamp(0.0, fw - w);
        let y = (mo.bottom - h + jitter * rng.normal()).clamp(0.0, fh - h);
        let b = BBox { x, y, w, h };
        let phase = phase0 + 2.0 * PI * t as f64 / period;
        let kp: Vec<[f64; 2]> = pose_template(pose_crossing, facing, phase, cfg.gait_amplitude)
            .iter()
            .map(|p| {
                let px = x + w / 2.0 + (p[0] + cfg.keypoint_noise * rng.normal()) * h;
                let py = y + (p[1] + cfg.keypoint_noise * rng.normal()) * h;
                [px.clamp(0.0, fw), py.clamp(0.0, fh)]
            })
            .collect();
        let occluded = cfg.occlusion_rate > 0.0 && rng.bernoulli(cfg.occlusion_rate);
        boxes.push((!occluded).then_some(b));
        keypoints.push((!occluded).then_some(kp));
        mo.cx = (mo.cx + mo.vx).clamp(w / 2.0, fw - w / 2.0);
        let grown = mo.h * (1.0 + mo.growth);
        // feet move down the image as the pedestrian approaches
        mo.bottom = (mo.bottom + 0.5 * (grown - mo.h)).min(fh);
        mo.h = grown;
    }
    (boxes, keypoints)
}

/// Corpus whose channel-expression flags are linked with correlation `rho`.
/// The realized member error correlation is measured after training.
pub fn generate_error_controlled(cfg: &SceneConfig, rho: f64) -> Result<SynthCorpus> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(CoreError::Invalid(format!("rho = {rho} is outside [-1, 1]")));
    }
    let mut cfg = cfg.clone();
    cfg.signal.correlation = rho;
    generate_corpus(&cfg)
}
