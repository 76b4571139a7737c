mod common;

use common::{model, valid_bbox};
use facefit::image::degrade;
use facefit::landmarks::LandmarkMap;
use facefit::raster::render;
use facefit::tracker::{track, BBox, TrackOptions};
use facefit::{Coefficients, CorrespondenceMaps, PinholeCamera};
use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Sequence {
    frames: Vec<CorrespondenceMaps>,
    detections: Vec<Vec<BBox>>,
    truth: Vec<Vec<Vector2<f64>>>,
}

fn landmark_map() -> LandmarkMap {
    // Grid vertices (row, column) of the 45×45 mean mesh.
    let cells = [
        (15, 14),
        (15, 30),
        (22, 22),
        (30, 16),
        (30, 28),
        (26, 22),
        (12, 22),
        (34, 22),
    ];
    let names = [
        "eye_l",
        "eye_r",
        "nose",
        "mouth_l",
        "mouth_r",
        "nose_base",
        "brow",
        "chin",
    ];
    LandmarkMap::new(
        names.iter().map(|s| s.to_string()).collect(),
        cells.iter().map(|(r, c)| r * 45 + c).collect(),
    )
    .unwrap()
    .with_interocular("eye_l", "eye_r")
    .unwrap()
}

fn sequence(len: usize, yaw_step: f64, noise: f32, seed: u64) -> Sequence {
    let m = model();
    let map = landmark_map();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Coefficients::sample(m, &mut rng).alpha;
    let (mut frames, mut detections, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..len {
        let theta = Coefficients {
            alpha: shape.clone(),
            beta: Coefficients::sample(m, &mut rng).beta.iter().map(|b| 0.3 * b).collect(),
        };
        let yaw = -0.5 * yaw_step * len as f64 + yaw_step * k as f64;
        let cam = PinholeCamera::facing(yaw, 0.05, 900.0, 500.0, 320, 240).unwrap();
        let clean = render(m, &theta, &cam).unwrap();
        let (x, y, w, h) = valid_bbox(&clean);
        detections.push(vec![BBox::new(x, y, w, h).unwrap()]);
        let verts = m.synthesize(&theta).unwrap();
        truth.push(
            map.vertex_ids()
                .iter()
                .map(|&j| cam.project(&verts[j]).unwrap())
                .collect(),
        );
        frames.push(if noise > 0.0 {
            degrade(&clean, noise, 0.0, seed * 100 + k as u64).unwrap()
        } else {
            clean
        });
    }
    Sequence {
        frames,
        detections,
        truth,
    }
}

fn frame_error(pred: &[Vector2<f64>], truth: &[Vector2<f64>]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).norm()).sum::<f64>() / pred.len() as f64
}

#[test]
fn noiseless_sequence_with_dropped_detection() {
    let m = model();
    let map = landmark_map();
    let mut seq = sequence(5, 0.1, 0.0, 71);
    seq.detections[2].clear();
    let out = track(&seq.frames, &seq.detections, m, &map, &TrackOptions::default()).unwrap();
    assert_eq!(out.frame_count(), 5);
    assert!(out.failures.iter().all(Option::is_none));
    let interpolated = seq.detections[1][0].lerp(&seq.detections[3][0], 0.5);
    assert_eq!(out.boxes[2], interpolated);
    for (k, (pred, truth)) in out.raw_2d.iter().zip(&seq.truth).enumerate() {
        let e = frame_error(pred, truth);
        assert!(e < 1.0, "frame {k}: {e}");
    }
}

#[test]
fn full_detections_track_under_one_pixel() {
    let m = model();
    let seq = sequence(5, 0.15, 0.0, 72);
    let out = track(
        &seq.frames,
        &seq.detections,
        m,
        &landmark_map(),
        &TrackOptions::default(),
    )
    .unwrap();
    for (pred, truth) in out.raw_2d.iter().zip(&seq.truth) {
        assert!(frame_error(pred, truth) < 1.0);
    }
}

#[test]
fn smoothing_reduces_error_on_jittered_sequence() {
    let m = model();
    let seq = sequence(15, 0.01, 0.01, 73);
    let out = track(
        &seq.frames,
        &seq.detections,
        m,
        &landmark_map(),
        &TrackOptions::default(),
    )
    .unwrap();
    let mean = |tracks: &[Vec<Vector2<f64>>]| {
        tracks
            .iter()
            .zip(&seq.truth)
            .map(|(p, t)| frame_error(p, t))
            .sum::<f64>()
            / tracks.len() as f64
    };
    let (raw, smooth) = (mean(&out.raw_2d), mean(&out.smoothed_2d));
    println!("mean 2D error raw {raw:.4} smoothed {smooth:.4}");
    assert!(smooth < raw);
}
