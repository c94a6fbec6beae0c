//! Model inputs derived from segments: reduced skeleton sequences, the
//! skeleton graph, one-hot context channels and the trajectory vector.

use std::path::Path;
use std::sync::Arc;

use cse_tensor::{Container, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::{BBox, FrameRecord, Light, Road, Segment, SegmentId, Speed, RAW_KEYPOINTS};
use crate::error::{CoreError, Result};

/// Keypoints per frame after reduction.
pub const NODES: usize = 14;

/// Bumped whenever cached feature layout changes.
pub const FEATURE_SCHEMA: u32 = 1;

pub const NODE_NAMES: [&str; NODES] = [
    "head",
    "thorax",
    "left_ear",
    "right_ear",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Skeleton tree on the reduced nodes:
///
/// ```text
///        Lear   Rear
///           \   /
///            head
///             |
///   Lwri-Lelb-thorax-Relb-Rwri
///            /    \
///         Lhip    Rhip
///           |      |
///         Lknee  Rknee
///           |      |
///         Lank   Rank
/// ```
pub const EDGES: [(usize, usize); 13] = [
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 4),
    (1, 5),
    (1, 8),
    (1, 9),
    (4, 6),
    (5, 7),
    (8, 10),
    (9, 11),
    (10, 12),
    (11, 13),
];

/// COCO order: nose, l/r eye, l/r ear, l/r shoulder, l/r elbow, l/r wrist,
/// l/r hip, l/r knee, l/r ankle.
mod coco {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    /// Source indices of reduced nodes 2..14 (ears, elbows, wrists, hips,
    /// knees, ankles).
    pub const PASS_THROUGH: [usize; 12] = [3, 4, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16];
}

/// 17 COCO keypoints → 14: head is the mean of nose and eyes, thorax the
/// midpoint of the shoulders, the other twelve pass through.
pub fn reduce_keypoints(raw: &[[f64; 2]]) -> Result<[[f64; 2]; NODES]> {
    if raw.len() != RAW_KEYPOINTS {
        return Err(CoreError::Invalid(format!(
            "expected {RAW_KEYPOINTS} keypoints, got {}",
            raw.len()
        )));
    }
    let mut out = [[0.0; 2]; NODES];
    for a in 0..2 {
        out[0][a] = (raw[coco::NOSE][a] + raw[coco::LEFT_EYE][a] + raw[coco::RIGHT_EYE][a]) / 3.0;
        out[1][a] = (raw[coco::LEFT_SHOULDER][a] + raw[coco::RIGHT_SHOULDER][a]) / 2.0;
    }
    for (slot, &src) in out[2..].iter_mut().zip(&coco::PASS_THROUGH) {
        *slot = raw[src];
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    /// Binary, symmetric, zero diagonal.
    pub adjacency: Tensor,
    /// `D^-1/2 (A + I) D^-1/2`.
    pub normalized: Arc<Tensor>,
}

/// Symmetric renormalization with self-loops.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let s = a.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(CoreError::Invalid(format!("adjacency must be square, got {s:?}")));
    }
    let n = s[0];
    let mut hat = a.clone();
    for i in 0..n {
        hat.set(&[i, i], hat.get(&[i, i]) + 1.0);
    }
    let deg: Vec<f64> = (0..n).map(|i| hat.row(i).iter().sum()).collect();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set(&[i, j], hat.get(&[i, j]) / (deg[i] * deg[j]).sqrt());
        }
    }
    Ok(out)
}

pub fn build_adjacency() -> SkeletonGraph {
    let mut a = Tensor::zeros(&[NODES, NODES]);
    for &(i, j) in &EDGES {
        a.set(&[i, j], 1.0);
        a.set(&[j, i], 1.0);
    }
    let normalized = Arc::new(normalize_adjacency(&a).expect("square by construction"));
    SkeletonGraph { adjacency: a, normalized }
}

/// Maps a pixel keypoint into box coordinates and clamps to `[0, 1]`.
/// Returns the point and whether clamping was needed.
pub fn normalize_to_box(p: [f64; 2], b: &BBox) -> ([f64; 2], bool) {
    let u = (p[0] - b.x) / b.w;
    let v = (p[1] - b.y) / b.h;
    let cu = u.clamp(0.0, 1.0);
    let cv = v.clamp(0.0, 1.0);
    ([cu, cv], cu != u || cv != v)
}

/// `[T, 14, 2]` box-normalized skeleton sequence and the number of clamped
/// coordinates.
pub fn keypoint_sequence(keypoints: &[Vec<[f64; 2]>], boxes: &[BBox]) -> Result<(Tensor, usize)> {
    if keypoints.len() != boxes.len() || keypoints.is_empty() {
        return Err(CoreError::Invalid(format!(
            "{} keypoint frames vs {} boxes",
            keypoints.len(),
            boxes.len()
        )));
    }
    let mut data = Vec::with_capacity(keypoints.len() * NODES * 2);
    let mut clamped = 0;
    for (raw, b) in keypoints.iter().zip(boxes) {
        for p in reduce_keypoints(raw)? {
            let (q, c) = normalize_to_box(p, b);
            clamped += c as usize;
            data.extend_from_slice(&q);
        }
    }
    Ok((Tensor::new(vec![keypoints.len(), NODES, 2], data)?, clamped))
}

/// Per frame `[cx/W, cy/H, area/(W·H), Δarea, speed]`, where speed is the
/// distance between consecutive normalized centers per frame. Frame 0 has
/// zero Δarea and speed.
pub fn trajectory_features(boxes: &[BBox], frame_w: f64, frame_h: f64) -> Result<Tensor> {
    if !(frame_w > 0.0 && frame_h > 0.0) {
        return Err(CoreError::Invalid(format!(
            "frame extents must be positive, got {frame_w}x{frame_h}"
        )));
    }
    if boxes.is_empty() {
        return Err(CoreError::Invalid("no boxes".into()));
    }
    let frame_area = frame_w * frame_h;
    let mut data = Vec::with_capacity(boxes.len() * 5);
    let mut prev: Option<(f64, f64, f64)> = None;
    for b in boxes {
        let (cx, cy) = b.center();
        let (x, y, z) = (cx / frame_w, cy / frame_h, b.area() / frame_area);
        let (dz, speed) = match prev {
            Some((px, py, pz)) => (z - pz, ((x - px).powi(2) + (y - py).powi(2)).sqrt()),
            None => (0.0, 0.0),
        };
        data.extend_from_slice(&[x, y, z, dz, speed]);
        prev = Some((x, y, z));
    }
    Ok(Tensor::new(vec![boxes.len(), 5], data)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextChannels {
    /// `[T, 5]` speed one-hot.
    pub data1: Tensor,
    /// `[T, 2]` light one-hot (red, green); all-zero without a light.
    pub data2: Tensor,
    /// `[1]` intersection flag.
    pub data3: Tensor,
    /// `[3]` road type one-hot.
    pub data4: Tensor,
}

pub fn one_hot_speed(s: Speed) -> [f64; 5] {
    let mut v = [0.0; 5];
    v[s.index()] = 1.0;
    v
}

pub fn one_hot_light(l: Light) -> [f64; 2] {
    match l {
        Light::Red => [1.0, 0.0],
        Light::Green => [0.0, 1.0],
        Light::None => [0.0, 0.0],
    }
}

pub fn one_hot_road(r: Road) -> [f64; 3] {
    let mut v = [0.0; 3];
    v[r.index()] = 1.0;
    v
}

pub fn encode_context(frames: &[FrameRecord], at_intersection: bool, road: Road) -> Result<ContextChannels> {
    if frames.is_empty() {
        return Err(CoreError::Invalid("no frames to encode".into()));
    }
    let t = frames.len();
    let data1 = frames.iter().flat_map(|f| one_hot_speed(f.speed)).collect();
    let data2 = frames.iter().flat_map(|f| one_hot_light(f.light)).collect();
    Ok(ContextChannels {
        data1: Tensor::new(vec![t, 5], data1)?,
        data2: Tensor::new(vec![t, 2], data2)?,
        data3: Tensor::vector(vec![at_intersection as u8 as f64]),
        data4: Tensor::vector(one_hot_road(road).to_vec()),
    })
}

/// Everything the three models read for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures {
    pub id: SegmentId,
    pub label: u8,
    pub keypoints: Tensor,
    pub context: ContextChannels,
    pub trajectory: Tensor,
    pub clamped: usize,
}

pub fn featurize(segment: &Segment) -> Result<SegmentFeatures> {
    let (keypoints, clamped) = keypoint_sequence(&segment.keypoints, &segment.boxes)?;
    Ok(SegmentFeatures {
        id: segment.id.clone(),
        label: segment.label,
        keypoints,
        context: encode_context(&segment.frames, segment.at_intersection, segment.road)?,
        trajectory: trajectory_features(&segment.boxes, segment.frame_w, segment.frame_h)?,
        clamped,
    })
}

pub fn featurize_all(segments: &[Segment]) -> Result<Vec<SegmentFeatures>> {
    segments.iter().map(featurize).collect()
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    schema: u32,
    ids: Vec<SegmentId>,
    labels: Vec<u8>,
    clamped: Vec<usize>,
}

const CACHE_PARTS: [&str; 6] = ["keypoints", "data1", "data2", "data3", "data4", "trajectory"];

/// Writes features to the tensor container keyed by segment position; ids
/// and the schema version live in the container tag.
pub fn save_feature_cache(path: &Path, features: &[SegmentFeatures]) -> Result<()> {
    let header = CacheHeader {
        schema: FEATURE_SCHEMA,
        ids: features.iter().map(|f| f.id.clone()).collect(),
        labels: features.iter().map(|f| f.label).collect(),
        clamped: features.iter().map(|f| f.clamped).collect(),
    };
    let mut c = Container::new(serde_json::to_string(&header)?);
    for (i, f) in features.iter().enumerate() {
        let parts = [
            &f.keypoints,
            &f.context.data1,
            &f.context.data2,
            &f.context.data3,
            &f.context.data4,
            &f.trajectory,
        ];
        for (name, t) in CACHE_PARTS.iter().zip(parts) {
            c.push(format!("{i}.{name}"), t.clone());
        }
    }
    Ok(c.save(path)?)
}

pub fn load_feature_cache(path: &Path) -> Result<Vec<SegmentFeatures>> {
    let c = Container::load(path)?;
    let header: CacheHeader = serde_json::from_str(&c.tag)?;
    if header.schema != FEATURE_SCHEMA {
        return Err(CoreError::StaleCache {
            found: header.schema,
            expected: FEATURE_SCHEMA,
        });
    }
    if c.records.len() != header.ids.len() * CACHE_PARTS.len() {
        return Err(CoreError::Invalid(format!("{}: truncated feature cache", path.display())));
    }
    let mut records = c.records.into_iter().map(|(_, t)| t);
    let mut out = Vec::with_capacity(header.ids.len());
    for ((id, label), clamped) in header.ids.into_iter().zip(header.labels).zip(header.clamped) {
        let mut next = || records.next().expect("length checked");
        let keypoints = next();
        let context = ContextChannels {
            data1: next(),
            data2: next(),
            data3: next(),
            data4: next(),
        };
        out.push(SegmentFeatures {
            id,
            label,
            keypoints,
            context,
            trajectory: next(),
            clamped,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_names_follow_edge_indices() {
        assert_eq!(NODE_NAMES[EDGES[0].0], "head");
        assert_eq!(NODE_NAMES[EDGES[12].1], "right_ankle");
    }

    #[test]
    fn wrong_keypoint_count_is_an_error() {
        assert!(reduce_keypoints(&[[0.0, 0.0]; 14]).is_err());
    }
}
