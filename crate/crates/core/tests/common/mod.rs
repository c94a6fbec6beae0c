#![allow(dead_code)]

use cse_core::dataset::{AnnotatedClip, BBox, FrameRecord, Light, PedestrianTrack, Road, SegmentId, SourceLabel, Speed};

/// Standing skeleton filling a 100x200 box at (x, y).
pub fn skeleton(x: f64, y: f64) -> Vec<[f64; 2]> {
    (0..17).map(|i| [x + 10.0 + 4.0 * i as f64, y + 10.0 + 10.0 * i as f64]).collect()
}

pub fn track(ped: &str, label: SourceLabel, frames: usize) -> PedestrianTrack {
    PedestrianTrack {
        ped_id: ped.into(),
        label,
        at_intersection: true,
        boxes: (0..frames)
            .map(|t| {
                Some(BBox {
                    x: 100.0 + t as f64,
                    y: 50.0,
                    w: 100.0,
                    h: 200.0,
                })
            })
            .collect(),
        keypoints: (0..frames).map(|t| Some(skeleton(100.0 + t as f64, 50.0))).collect(),
    }
}

pub fn clip(id: &str, frames: usize, tracks: Vec<PedestrianTrack>) -> AnnotatedClip {
    AnnotatedClip {
        clip_id: id.into(),
        frame_w: 640.0,
        frame_h: 480.0,
        road_type: Road::Street,
        frames: (0..frames)
            .map(|t| FrameRecord {
                speed: Speed::ALL[t % 5],
                light: Light::Green,
            })
            .collect(),
        tracks,
    }
}

/// `pos` positives then `neg` negatives, each its own pedestrian.
pub fn items(pos: usize, neg: usize) -> Vec<(SegmentId, u8)> {
    (0..pos + neg)
        .map(|i| (SegmentId::new("c", format!("p{i:03}"), 1), (i < pos) as u8))
        .collect()
}

use cse_core::models::ModelSpec;
use cse_tensor::{Rng, Tensor};

/// Uniform random tensors matching a spec's input shapes.
pub fn random_inputs(spec: &ModelSpec, rng: &mut Rng) -> Vec<Tensor> {
    spec.inputs
        .iter()
        .map(|s| {
            let n = s.shape.iter().product();
            Tensor::new(s.shape.clone(), (0..n).map(|_| rng.uniform()).collect()).unwrap()
        })
        .collect()
}

/// Small synthetic corpus cut into pool and test features.
pub fn synth_features(
    cfg: &cse_core::synth::SceneConfig,
) -> (Vec<cse_core::dataset::Segment>, Vec<cse_core::features::SegmentFeatures>, Vec<cse_core::features::SegmentFeatures>) {
    use cse_core::dataset::{segment_corpus, train_test_split};
    let corpus = cse_core::synth::generate_corpus(cfg).unwrap();
    let (segs, _) = segment_corpus(&corpus.clips, 32).unwrap();
    let part = train_test_split(segs, &corpus.split, &corpus.clips).unwrap();
    let pool = cse_core::features::featurize_all(&part.pool).unwrap();
    let test = cse_core::features::featurize_all(&part.test).unwrap();
    (part.pool, pool, test)
}
