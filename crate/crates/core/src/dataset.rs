//! Annotation corpus schema, sliding-window segmentation, labels and fold
//! protocols.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use cse_tensor::rng::stream_key;
use cse_tensor::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Window width in frames.
pub const WINDOW: usize = 32;
/// COCO keypoints per frame in the source annotations.
pub const RAW_KEYPOINTS: usize = 17;
/// Minimum fraction of frames with a box for a window to be kept.
pub const MIN_PRESENCE: f64 = 0.75;

macro_rules! category {
    ($(#[$meta:meta])* $name:ident, $field:literal, [$($variant:ident => $text:literal),+ $(,)?]) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            /// Position in the fixed category order.
            pub fn index(self) -> usize {
                Self::ALL.iter().position(|&c| c == self).unwrap()
            }
        }

        impl FromStr for $name {
            type Err = CoreError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(CoreError::UnknownCategory {
                        field: $field,
                        value: s.to_string(),
                        valid: [$($text),+].join(", "),
                    }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

category!(
    /// Ego-vehicle speed category.
    Speed, "speed", [
        Stopped => "stopped",
        Slow => "slow",
        Fast => "fast",
        Accelerating => "accelerating",
        Decelerating => "decelerating",
    ]
);

category!(
    /// Traffic light state; `None` means no light in the scene.
    Light, "light", [Red => "red", Green => "green", None => "none"]
);

category!(Road, "road_type", [Garage => "garage", ParkingLot => "parking_lot", Street => "street"]);

category!(
    /// Source behavioural label before binarization.
    SourceLabel, "label", [Crossing => "crossing", NotCrossing => "not_crossing", Irrelevant => "irrelevant"]
);

/// crossing → 1; not_crossing and irrelevant → 0.
pub fn binarize_label(label: SourceLabel) -> u8 {
    match label {
        SourceLabel::Crossing => 1,
        SourceLabel::NotCrossing | SourceLabel::Irrelevant => 0,
    }
}

/// Bounding box in pixels: top-left corner and extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub speed: Speed,
    pub light: Light,
}

mod yes_no {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(if *v { "yes" } else { "no" })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match String::deserialize(d)?.as_str() {
            "yes" => Ok(true),
            "no" => Ok(false),
            other => Err(D::Error::custom(format!(
                "unknown at_intersection `{other}` (expected one of: yes, no)"
            ))),
        }
    }
}

pub type Keypoints = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianTrack {
    pub ped_id: String,
    pub label: SourceLabel,
    #[serde(with = "yes_no")]
    pub at_intersection: bool,
    pub boxes: Vec<Option<BBox>>,
    pub keypoints: Vec<Option<Keypoints>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedClip {
    pub clip_id: String,
    pub frame_w: f64,
    pub frame_h: f64,
    pub road_type: Road,
    pub frames: Vec<FrameRecord>,
    pub tracks: Vec<PedestrianTrack>,
}

impl AnnotatedClip {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Checks structural invariants. Hard violations are errors; soft ones
    /// (short clips, keypoints outside the frame) are returned as warnings.
    pub fn validate(&self) -> std::result::Result<Vec<String>, String> {
        let m = self.frames.len();
        if m == 0 {
            return Err(format!("clip `{}` has no frames", self.clip_id));
        }
        if !(self.frame_w > 0.0 && self.frame_h > 0.0) {
            return Err(format!(
                "clip `{}` frame size must be positive, got {}x{}",
                self.clip_id, self.frame_w, self.frame_h
            ));
        }
        let mut warnings = Vec::new();
        if m < WINDOW {
            warnings.push(format!(
                "clip `{}` has {m} frames (< {WINDOW}); it yields no segments",
                self.clip_id
            ));
        }
        let mut seen = BTreeSet::new();
        for t in &self.tracks {
            let at = format!("clip `{}` track `{}`", self.clip_id, t.ped_id);
            if !seen.insert(t.ped_id.as_str()) {
                return Err(format!("{at} is duplicated"));
            }
            if t.boxes.len() != m || t.keypoints.len() != m {
                return Err(format!(
                    "{at} has {} boxes and {} keypoint frames, expected {m}",
                    t.boxes.len(),
                    t.keypoints.len()
                ));
            }
            for (f, b) in t.boxes.iter().enumerate() {
                if let Some(b) = b {
                    if !(b.w > 0.0 && b.h > 0.0) || ![b.x, b.y].iter().all(|v| v.is_finite()) {
                        return Err(format!("{at} frame {f}: box extents must be positive and finite"));
                    }
                }
            }
            let mut outside = 0usize;
            for (f, kp) in t.keypoints.iter().enumerate() {
                if let Some(kp) = kp {
                    if kp.len() != RAW_KEYPOINTS {
                        return Err(format!("{at} frame {f}: {} keypoints, expected {RAW_KEYPOINTS}", kp.len()));
                    }
                    if kp.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                        return Err(format!("{at} frame {f}: non-finite keypoint"));
                    }
                    outside += kp
                        .iter()
                        .filter(|p| p[0] < 0.0 || p[1] < 0.0 || p[0] > self.frame_w || p[1] > self.frame_h)
                        .count();
                }
            }
            if outside > 0 {
                warnings.push(format!("{at}: {outside} keypoints outside the frame"));
            }
        }
        Ok(warnings)
    }
}

/// Counts reported after ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub clips: usize,
    pub pedestrians: usize,
    pub frames: usize,
    pub crossing: usize,
    pub not_crossing: usize,
    pub irrelevant: usize,
}

pub fn summarize(clips: &[AnnotatedClip]) -> CorpusSummary {
    let mut s = CorpusSummary {
        clips: clips.len(),
        ..Default::default()
    };
    for c in clips {
        s.frames += c.frame_count();
        s.pedestrians += c.tracks.len();
        for t in &c.tracks {
            match t.label {
                SourceLabel::Crossing => s.crossing += 1,
                SourceLabel::NotCrossing => s.not_crossing += 1,
                SourceLabel::Irrelevant => s.irrelevant += 1,
            }
        }
    }
    s
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub clips: Vec<AnnotatedClip>,
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn summary(&self) -> CorpusSummary {
        summarize(&self.clips)
    }
}

/// Parses a JSON Lines corpus (one clip per non-blank line).
pub fn parse_annotations(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    parse_reader(BufReader::new(file), &path.display().to_string())
}

pub fn parse_reader(reader: impl BufRead, source: &str) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut ids = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = |message: String| CoreError::Record {
            path: source.to_string(),
            line: i + 1,
            message,
        };
        let clip: AnnotatedClip = serde_json::from_str(&line).map_err(|e| record(e.to_string()))?;
        if !ids.insert(clip.clip_id.clone()) {
            return Err(record(format!("duplicate clip_id `{}`", clip.clip_id)));
        }
        let warnings = clip.validate().map_err(record)?;
        corpus.warnings.extend(warnings);
        corpus.clips.push(clip);
    }
    Ok(corpus)
}

pub fn write_annotations(path: &Path, clips: &[AnnotatedClip]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(&mut w, clips).map_err(|e| CoreError::io(path, e))?;
    w.flush().map_err(|e| CoreError::io(path, e))
}

pub fn write_jsonl(w: &mut impl Write, clips: &[AnnotatedClip]) -> std::io::Result<()> {
    for c in clips {
        serde_json::to_writer(&mut *w, c)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Identity of one window: clip, pedestrian, and 1-based window position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentId {
    pub clip: String,
    pub ped: String,
    pub index: usize,
}

impl SegmentId {
    pub fn new(clip: impl Into<String>, ped: impl Into<String>, index: usize) -> Self {
        Self {
            clip: clip.into(),
            ped: ped.into(),
            index,
        }
    }

    /// Pedestrian-in-clip group used to keep windows of one track together.
    pub fn group(&self) -> (&str, &str) {
        (&self.clip, &self.ped)
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.clip, self.ped, self.index)
    }
}

/// One pedestrian over one window, with gaps already imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: SegmentId,
    pub start: usize,
    pub source: SourceLabel,
    pub label: u8,
    pub boxes: Vec<BBox>,
    pub keypoints: Vec<Keypoints>,
    pub frames: Vec<FrameRecord>,
    pub at_intersection: bool,
    pub road: Road,
    pub frame_w: f64,
    pub frame_h: f64,
}

/// Last observation carried forward, first observation carried backward.
fn impute<T: Clone>(values: &[Option<T>]) -> Option<Vec<T>> {
    let first = values.iter().flatten().next()?.clone();
    let mut last = first;
    Some(
        values
            .iter()
            .map(|v| {
                if let Some(v) = v {
                    last = v.clone();
                }
                last.clone()
            })
            .collect(),
    )
}

/// Cuts every track of `clip` into `WINDOW`-frame windows at `stride`.
///
/// Trailing partial windows are dropped, as are windows where the box is
/// present in fewer than 75% of frames or no keypoints are present at all.
/// Returned warnings cover clips too short to yield any window.
pub fn segment_windows(clip: &AnnotatedClip, stride: usize) -> Result<(Vec<Segment>, Vec<String>)> {
    if stride == 0 {
        return Err(CoreError::Invalid("stride must be >= 1".into()));
    }
    let m = clip.frame_count();
    let mut out = Vec::new();
    if m < WINDOW {
        let warning = format!("clip `{}` has {m} frames (< {WINDOW}); no segments", clip.clip_id);
        return Ok((out, vec![warning]));
    }
    let need = (MIN_PRESENCE * WINDOW as f64).ceil() as usize;
    for track in &clip.tracks {
        let mut start = 0;
        let mut index = 0;
        while start + WINDOW <= m {
            index += 1;
            let range = start..start + WINDOW;
            let boxes = &track.boxes[range.clone()];
            let present = boxes.iter().filter(|b| b.is_some()).count();
            if present >= need {
                if let (Some(boxes), Some(keypoints)) = (impute(boxes), impute(&track.keypoints[range.clone()])) {
                    out.push(Segment {
                        id: SegmentId::new(&clip.clip_id, &track.ped_id, index),
                        start,
                        source: track.label,
                        label: binarize_label(track.label),
                        boxes,
                        keypoints,
                        frames: clip.frames[range].to_vec(),
                        at_intersection: track.at_intersection,
                        road: clip.road_type,
                        frame_w: clip.frame_w,
                        frame_h: clip.frame_h,
                    });
                }
            }
            start += stride;
        }
    }
    Ok((out, Vec::new()))
}

pub fn segment_corpus(clips: &[AnnotatedClip], stride: usize) -> Result<(Vec<Segment>, Vec<String>)> {
    let mut segments = Vec::new();
    let mut warnings = Vec::new();
    for c in clips {
        let (s, w) = segment_windows(c, stride)?;
        segments.extend(s);
        warnings.extend(w);
    }
    Ok((segments, warnings))
}

/// Clip ids per partition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| CoreError::io(path, e))
    }
}

/// Training pool (train + val merged) and test set.
#[derive(Debug, Clone, Default)]
pub struct Partition {
    pub pool: Vec<Segment>,
    pub test: Vec<Segment>,
    /// Clips present in the corpus but listed in no partition.
    pub unassigned: Vec<String>,
}

/// Partitions segments by clip id. Every clip named in the split must exist
/// in `clips`, and no clip may appear in more than one partition.
pub fn train_test_split(segments: Vec<Segment>, split: &SplitFile, clips: &[AnnotatedClip]) -> Result<Partition> {
    let known: BTreeSet<&str> = clips.iter().map(|c| c.clip_id.as_str()).collect();
    let mut side: BTreeMap<&str, bool> = BTreeMap::new();
    for (ids, is_test) in [(&split.train, false), (&split.val, false), (&split.test, true)] {
        for id in ids {
            if !known.contains(id.as_str()) {
                return Err(CoreError::UnknownClip(id.clone()));
            }
            if side.insert(id, is_test).is_some() {
                return Err(CoreError::Invalid(format!("clip `{id}` is listed in more than one partition")));
            }
        }
    }
    let unassigned = known
        .iter()
        .filter(|id| !side.contains_key(*id))
        .map(|id| id.to_string())
        .collect();
    let mut part = Partition {
        unassigned,
        ..Default::default()
    };
    for s in segments {
        match side.get(s.id.clip.as_str()) {
            Some(true) => part.test.push(s),
            Some(false) => part.pool.push(s),
            None => {}
        }
    }
    Ok(part)
}

/// `(positives, negatives)` among segments.
pub fn class_counts(segments: &[Segment]) -> (usize, usize) {
    let pos = segments.iter().filter(|s| s.label == 1).count();
    (pos, segments.len() - pos)
}

pub fn labeled_ids(segments: &[Segment]) -> Vec<(SegmentId, u8)> {
    segments.iter().map(|s| (s.id.clone(), s.label)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Stratified,
    Balanced,
}

impl FromStr for Protocol {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stratified" => Ok(Self::Stratified),
            "balanced" => Ok(Self::Balanced),
            _ => Err(CoreError::UnknownCategory {
                field: "protocol",
                value: s.to_string(),
                valid: "stratified, balanced".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<SegmentId>,
    pub validation: Vec<SegmentId>,
    /// Balanced protocol only: all positives plus the negatives drawn for
    /// this fold, before the validation block is removed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sample: Vec<SegmentId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub protocol: Protocol,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    /// Fold in which `id` is validation.
    pub fn validation_fold(&self, id: &SegmentId) -> Option<usize> {
        self.folds.iter().position(|f| f.validation.binary_search(id).is_ok())
    }
}

const FOLD_STREAM: u64 = 0x464f_4c44;
const BALANCE_STREAM: u64 = 0x4241_4c41;

/// Splits one class's groups into `k` bins with near-equal segment counts.
fn partition_groups(mut groups: Vec<Vec<SegmentId>>, k: usize, rng: &mut Rng) -> Vec<Vec<SegmentId>> {
    rng.shuffle(&mut groups);
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    let mut bins: Vec<Vec<Vec<SegmentId>>> = vec![Vec::new(); k];
    let mut counts = vec![0usize; k];
    for g in groups {
        let f = (0..k).min_by_key(|&f| counts[f]).unwrap();
        counts[f] += g.len();
        bins[f].push(g);
    }
    // Local repair: move or swap groups between the fullest and emptiest bins
    // while that narrows the spread.
    loop {
        let hi = (0..k).max_by_key(|&f| (counts[f], std::cmp::Reverse(f))).unwrap();
        let lo = (0..k).min_by_key(|&f| (counts[f], f)).unwrap();
        let d = counts[hi] - counts[lo];
        if d <= 1 {
            break;
        }
        let mv = bins[hi]
            .iter()
            .enumerate()
            .filter(|(_, g)| g.len() < d)
            .max_by_key(|(i, g)| (g.len(), std::cmp::Reverse(*i)))
            .map(|(i, _)| i);
        if let Some(i) = mv {
            let g = bins[hi].remove(i);
            counts[hi] -= g.len();
            counts[lo] += g.len();
            bins[lo].push(g);
            continue;
        }
        let mut swap = None;
        'search: for (i, a) in bins[hi].iter().enumerate() {
            for (j, b) in bins[lo].iter().enumerate() {
                if a.len() > b.len() && a.len() - b.len() < d {
                    swap = Some((i, j));
                    break 'search;
                }
            }
        }
        let Some((i, j)) = swap else { break };
        let a = bins[hi].remove(i);
        let b = bins[lo].remove(j);
        counts[hi] = counts[hi] - a.len() + b.len();
        counts[lo] = counts[lo] + a.len() - b.len();
        bins[hi].push(b);
        bins[lo].push(a);
    }
    bins.into_iter().map(|b| b.into_iter().flatten().collect()).collect()
}

/// Per-class, pedestrian-grouped partition of the pool into `k` blocks.
fn stratified_blocks(items: &[(SegmentId, u8)], k: usize, seed: u64) -> Result<Vec<Vec<SegmentId>>> {
    if k < 2 {
        return Err(CoreError::Invalid(format!("k must be >= 2, got {k}")));
    }
    let mut blocks: Vec<Vec<SegmentId>> = vec![Vec::new(); k];
    for class in [1u8, 0u8] {
        let mut groups: BTreeMap<(&str, &str), Vec<SegmentId>> = BTreeMap::new();
        let mut count = 0;
        for (id, label) in items {
            if *label == class {
                groups.entry(id.group()).or_default().push(id.clone());
                count += 1;
            }
        }
        if count < k {
            return Err(CoreError::TooFewSamples { class, count, k });
        }
        let mut rng = Rng::new(seed, stream_key(&[FOLD_STREAM, class as u64]));
        let bins = partition_groups(groups.into_values().collect(), k, &mut rng);
        for (block, bin) in blocks.iter_mut().zip(bins) {
            block.extend(bin);
        }
    }
    for b in &mut blocks {
        b.sort();
    }
    Ok(blocks)
}

/// Stratified k-fold over segments with all windows of one pedestrian kept
/// in the same fold.
pub fn stratified_kfold(items: &[(SegmentId, u8)], k: usize, seed: u64) -> Result<FoldPlan> {
    let blocks = stratified_blocks(items, k, seed)?;
    let folds = (0..k)
        .map(|f| {
            let mut train: Vec<SegmentId> = blocks
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, b)| b.iter().cloned())
                .collect();
            train.sort();
            Fold {
                train,
                validation: blocks[f].clone(),
                sample: Vec::new(),
            }
        })
        .collect();
    Ok(FoldPlan {
        protocol: Protocol::Stratified,
        k,
        seed,
        folds,
    })
}

/// Balanced protocol: each fold draws all positives plus as many distinct
/// negatives. Validation is the fold's stratified block over the whole
/// pool, and training is the drawn sample minus that block, so every pool
/// segment is validated exactly once.
pub fn balanced_kfold(items: &[(SegmentId, u8)], k: usize, seed: u64) -> Result<FoldPlan> {
    let positives: Vec<SegmentId> = items.iter().filter(|(_, l)| *l == 1).map(|(i, _)| i.clone()).collect();
    let negatives: Vec<SegmentId> = items.iter().filter(|(_, l)| *l == 0).map(|(i, _)| i.clone()).collect();
    if negatives.len() < positives.len() {
        return Err(CoreError::TooFewNegatives {
            positives: positives.len(),
            negatives: negatives.len(),
        });
    }
    let blocks = stratified_blocks(items, k, seed)?;
    let folds = (0..k)
        .map(|f| {
            let mut rng = Rng::new(seed, stream_key(&[BALANCE_STREAM, f as u64]));
            let mut pool = negatives.clone();
            rng.shuffle(&mut pool);
            let mut sample: Vec<SegmentId> = positives.iter().cloned().chain(pool.into_iter().take(positives.len())).collect();
            sample.sort();
            let validation = blocks[f].clone();
            let train = sample
                .iter()
                .filter(|id| validation.binary_search(id).is_err())
                .cloned()
                .collect();
            Fold {
                train,
                validation,
                sample,
            }
        })
        .collect();
    Ok(FoldPlan {
        protocol: Protocol::Balanced,
        k,
        seed,
        folds,
    })
}

pub fn kfold(protocol: Protocol, items: &[(SegmentId, u8)], k: usize, seed: u64) -> Result<FoldPlan> {
    match protocol {
        Protocol::Stratified => stratified_kfold(items, k, seed),
        Protocol::Balanced => balanced_kfold(items, k, seed),
    }
}
