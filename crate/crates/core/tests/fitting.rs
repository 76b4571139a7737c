mod common;

use common::{alpha_error, coeff_error, exact_matches, median, model};
use facefit::camera::reprojection_rmse;
use facefit::fitter::solve_single;
use facefit::image::degrade;
use facefit::raster::{render, visibility};
use facefit::{fit_image, Coefficients, FitOptions, PinholeCamera};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(seed: u64) -> (Coefficients, PinholeCamera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = Coefficients::sample(model(), &mut rng);
    let cam = PinholeCamera::facing(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.2..0.2),
        700.0,
        500.0,
        256,
        256,
    )
    .unwrap();
    (theta, cam)
}

#[test]
fn noiseless_render_reprojects_under_half_pixel() {
    let m = model();
    let (theta, cam) = scene(11);
    let maps = render(m, &theta, &cam).unwrap();
    let opts = FitOptions {
        lambda: 1e-8,
        ..Default::default()
    };
    let fit = fit_image(&maps, m, &opts).unwrap();
    let corrs = common::correspondences(&maps, m);
    let rmse = reprojection_rmse(fit.camera.as_pinhole().unwrap(), &corrs);
    assert!(rmse < 0.5, "{rmse}");
    assert!(fit.constraint_count >= 5 * (m.shape_count() + m.expr_count()));
}

#[test]
fn ground_truth_matches_recover_coefficients() {
    let m = model();
    let (theta, cam) = scene(12);
    let vis = visibility(m, &theta, &cam).unwrap();
    let matches = exact_matches(m, &theta, (0..m.vertex_count()).filter(|&j| vis[j]));
    let (est, _) = solve_single(&matches, m, 1e-8).unwrap();
    let err = coeff_error(&est, &theta);
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn degraded_input_median_alpha_error_under_fifteen_percent() {
    let m = model();
    let errors: Vec<f64> = (0..20u64)
        .map(|seed| {
            let (theta, cam) = scene(100 + seed);
            let maps = degrade(&render(m, &theta, &cam).unwrap(), 0.01, 0.3, seed).unwrap();
            let fit = fit_image(&maps, m, &FitOptions::default()).unwrap();
            alpha_error(&fit.coeffs.alpha, &theta.alpha)
        })
        .collect();
    let med = median(errors);
    println!("degraded median alpha error {med:.4}");
    assert!(med < 0.15, "{med}");
}

#[test]
fn all_invalid_maps_fail_in_localization() {
    let m = model();
    let maps =
        facefit::CorrespondenceMaps::new(facefit::FloatImage3::zeros(32, 32), facefit::FloatImage3::zeros(32, 32))
            .unwrap();
    let err = fit_image(&maps, m, &FitOptions::default()).unwrap_err();
    assert_eq!(err.stage(), "fitter/localization");
}
