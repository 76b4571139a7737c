mod common;

use common::model;
use facefit::landmarks::{
    predict_landmarks, select_landmark_vertices, LandmarkMap, LandmarkObservation, SelectionMode,
};
use facefit::raster::{render, visibility};
use facefit::{fit_image, Camera, Coefficients, FitOptions, FitResult, PinholeCamera};
use nalgebra::Vector2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Interior vertices, i.e. those with a full one-ring.
fn interior_vertices() -> Vec<usize> {
    model()
        .topology()
        .one_rings()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.len() == 6)
        .map(|(j, _)| j)
        .collect()
}

#[test]
fn selection_recovers_generating_vertices_from_noisy_annotations() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let generating: Vec<usize> = interior_vertices().choose_multiple(&mut rng, 12).copied().collect();
    let names: Vec<String> = (0..12).map(|k| format!("lm{k}")).collect();
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut fits: Vec<FitResult> = Vec::new();
    let mut observations = Vec::new();
    for frame in 0..10 {
        let theta = Coefficients::sample(m, &mut rng);
        let cam = PinholeCamera::facing(
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.25..0.25),
            700.0,
            500.0,
            256,
            256,
        )
        .unwrap();
        let x = m.synthesize(&theta).unwrap();
        let vis = visibility(m, &theta, &cam).unwrap();
        observations.push(LandmarkObservation {
            frame,
            points: generating
                .iter()
                .map(|&j| cam.project(&x[j]).unwrap() + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect(),
            visible: generating.iter().map(|&j| vis[j]).collect(),
        });
        fits.push(fit_image(&render(m, &theta, &cam).unwrap(), m, &FitOptions::default()).unwrap());
    }
    let selected = select_landmark_vertices(&fits, &observations, &names, m, SelectionMode::AllFrames).unwrap();
    let rings = m.topology().one_rings();
    let hits = generating
        .iter()
        .zip(selected.vertex_ids())
        .filter(|(g, s)| *g == *s || rings[**g].contains(s))
        .count();
    assert!(hits >= 11, "{hits}/12: {generating:?} vs {:?}", selected.vertex_ids());
}

#[test]
fn ground_truth_fit_predicts_exact_projections() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let ids: Vec<usize> = interior_vertices().choose_multiple(&mut rng, 8).copied().collect();
    let map = LandmarkMap::new((0..8).map(|k| format!("p{k}")).collect(), ids.clone()).unwrap();
    let theta = Coefficients::sample(m, &mut rng);
    let cam = PinholeCamera::facing(0.9, 0.1, 700.0, 500.0, 256, 256).unwrap();
    let fit = FitResult {
        camera: Camera::Pinhole(cam),
        image_size: (256, 256),
        coeffs: theta.clone(),
        constraint_count: 0,
        residual_rms: 0.0,
        diagnostics: Default::default(),
    };
    let x = m.synthesize(&theta).unwrap();
    let vis = visibility(m, &theta, &cam).unwrap();
    let pred = predict_landmarks(&fit, &map, m).unwrap();
    for (p, &j) in pred.iter().zip(&ids) {
        assert!((p.pixel - cam.project(&x[j]).unwrap()).norm() < 1.0);
        assert!((p.point - x[j]).norm() < 1e-9);
        assert_eq!(p.visible, vis[j]);
    }
}
