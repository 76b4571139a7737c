mod common;

use common::{brute_force_localize, model};
use facefit::fitter::{default_tau_match, localize_vertices};
use facefit::model::generate_synthetic_model;
use facefit::raster::{render, visibility};
use facefit::{Coefficients, PinholeCamera};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn grid_search_equals_exhaustive_scan() {
    let m = generate_synthetic_model(3, 600, 8, 4).unwrap();
    let tau = default_tau_match(&m);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = Coefficients::sample(&m, &mut rng);
        let cam = PinholeCamera::facing(
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.3..0.3),
            700.0,
            140.0,
            64,
            64,
        )
        .unwrap();
        let maps = render(&m, &coeffs, &cam).unwrap();
        let grid = localize_vertices(&maps, &m, tau).unwrap();
        let brute = brute_force_localize(&maps, &m, tau);
        assert_eq!(grid, brute, "seed {seed}");
    }
}

#[test]
fn grid_search_equals_exhaustive_scan_at_small_tau() {
    let m = model();
    let cam = PinholeCamera::facing(0.3, 0.0, 700.0, 140.0, 64, 64).unwrap();
    let maps = render(m, &Coefficients::zeros(20, 10), &cam).unwrap();
    for tau in [1e-3, 5e-3, 0.02] {
        assert_eq!(
            localize_vertices(&maps, m, tau).unwrap(),
            brute_force_localize(&maps, m, tau)
        );
    }
}

#[test]
fn noiseless_matches_land_on_vertex_projections() {
    let m = model();
    let coeffs = Coefficients::sample(m, &mut ChaCha8Rng::seed_from_u64(1));
    for yaw in [-0.6, 0.0, 0.4] {
        let cam = PinholeCamera::facing(yaw, 0.1, 700.0, 500.0, 256, 256).unwrap();
        let maps = render(m, &coeffs, &cam).unwrap();
        let vis = visibility(m, &coeffs, &cam).unwrap();
        let x = m.synthesize(&coeffs).unwrap();
        let matches = localize_vertices(&maps, m, default_tau_match(m)).unwrap();
        let mut by_vertex = vec![None; m.vertex_count()];
        for mm in &matches {
            by_vertex[mm.vertex] = Some(mm.pixel);
        }
        let visible: Vec<usize> = (0..m.vertex_count()).filter(|&j| vis[j]).collect();
        let close = visible
            .iter()
            .filter(|&&j| {
                by_vertex[j].is_some_and(|(u, v)| {
                    let p = cam.project(&x[j]).unwrap();
                    ((u as f64 + 0.5 - p.x).powi(2) + (v as f64 + 0.5 - p.y).powi(2)).sqrt() <= 1.0
                })
            })
            .count();
        let frac = close as f64 / visible.len() as f64;
        assert!(frac >= 0.99, "yaw {yaw}: {close}/{} within 1 px", visible.len());
    }
}
