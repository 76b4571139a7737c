mod common;

use common::{correspondences, model};
use facefit::camera::{
    estimate_affine, init_pinhole_from_affine, refine_pinhole_lm, reprojection_rmse, subsample, LmOptions,
};
use facefit::raster::render;
use facefit::{Coefficients, PinholeCamera};
use nalgebra::{Matrix2x4, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn affine_matrix(fit: &facefit::camera::AffineFit) -> Matrix2x4<f64> {
    let (p0, p1) = (fit.camera.p0, fit.camera.p1);
    Matrix2x4::new(p0[0], p0[1], p0[2], p0[3], p1[0], p1[1], p1[2], p1[3])
}

#[test]
fn affine_from_subsample_matches_full_set() {
    // Far enough that the perspective residual is below f32 code precision.
    let m = model();
    let distance = 1e7;
    let cam = PinholeCamera::facing(0.4, 0.15, distance, 500.0 * distance / 700.0, 256, 256).unwrap();
    let theta = Coefficients::sample(m, &mut ChaCha8Rng::seed_from_u64(5));
    let corrs = correspondences(&render(m, &theta, &cam).unwrap(), m);
    assert!(corrs.len() > 5_000, "{}", corrs.len());
    let full = affine_matrix(&estimate_affine(&corrs).unwrap());
    for seed in 0..3 {
        let sub = affine_matrix(&estimate_affine(&subsample(&corrs, 500, seed)).unwrap());
        let rel = (sub - full).norm() / full.norm();
        assert!(rel <= 1e-6, "seed {seed}: {rel:e}");
    }
}

#[test]
fn distant_camera_initialization_within_two_pixels() {
    let m = model();
    let theta = Coefficients::sample(m, &mut ChaCha8Rng::seed_from_u64(6));
    for (yaw, pitch) in [(0.0, 0.0), (0.5, -0.2), (-0.9, 0.3)] {
        let distance = 20_000.0;
        let cam = PinholeCamera::facing(yaw, pitch, distance, 500.0 * distance / 700.0, 256, 256).unwrap();
        let corrs = correspondences(&render(m, &theta, &cam).unwrap(), m);
        let affine = estimate_affine(&subsample(&corrs, 500, 1)).unwrap();
        let init = init_pinhole_from_affine(&affine.camera, 256, 256).unwrap();
        let worst = corrs
            .iter()
            .map(|c| (init.project(&c.point).unwrap() - c.pixel).norm())
            .fold(0.0f64, f64::max);
        assert!(worst <= 2.0, "yaw {yaw}: {worst}");
    }
}

#[test]
fn refined_camera_reprojects_render_exactly() {
    let m = model();
    let theta = Coefficients::sample(m, &mut ChaCha8Rng::seed_from_u64(8));
    let truth = PinholeCamera::facing(0.7, 0.2, 600.0, 450.0, 256, 256).unwrap();
    let corrs = correspondences(&render(m, &theta, &truth).unwrap(), m);
    let sample = subsample(&corrs, 500, 3);
    let affine = estimate_affine(&sample).unwrap();
    let init = init_pinhole_from_affine(&affine.camera, 256, 256).unwrap();
    let (cam, report) = refine_pinhole_lm(&init, &sample, &LmOptions::default()).unwrap();
    assert!(report.converged, "{report:?}");
    assert!(report.iterations <= 100);
    assert!(reprojection_rmse(&cam, &corrs) < 0.1);
    assert!((cam.focal() - truth.focal()).abs() / truth.focal() < 1e-3);
    let probe = nalgebra::Vector3::new(10.0, -20.0, 30.0);
    let d: Vector2<f64> = cam.project(&probe).unwrap() - truth.project(&probe).unwrap();
    assert!(d.norm() < 0.05);
}

#[test]
fn subsampled_pipeline_matches_full_pipeline() {
    let m = model();
    let theta = Coefficients::sample(m, &mut ChaCha8Rng::seed_from_u64(10));
    let truth = PinholeCamera::facing(-0.4, 0.1, 700.0, 500.0, 256, 256).unwrap();
    let corrs = correspondences(&render(m, &theta, &truth).unwrap(), m);
    let run = |set: &[facefit::Correspondence]| {
        let affine = estimate_affine(set).unwrap();
        let init = init_pinhole_from_affine(&affine.camera, 256, 256).unwrap();
        refine_pinhole_lm(&init, set, &LmOptions::default()).unwrap().0
    };
    let full = reprojection_rmse(&run(&corrs), &corrs);
    let sub = reprojection_rmse(&run(&subsample(&corrs, 500, 4)), &corrs);
    assert!((full - sub).abs() <= 0.05, "full {full} sub {sub}");
}
