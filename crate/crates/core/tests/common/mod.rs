#![allow(dead_code)]

use std::sync::OnceLock;

use facefit::camera::Correspondence;
use facefit::fitter::VertexMatch;
use facefit::image::assemble_point_cloud;
use facefit::model::generate_synthetic_model;
use facefit::{Coefficients, CorrespondenceMaps, MorphableModel};
use nalgebra::{DVector, Vector2, Vector3};

/// Default-sized model shared by the tests of one binary.
pub fn model() -> &'static MorphableModel {
    static MODEL: OnceLock<MorphableModel> = OnceLock::new();
    MODEL.get_or_init(|| generate_synthetic_model(7, 2000, 20, 10).unwrap())
}

pub fn relative_error(estimate: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    (estimate - truth).norm() / truth.norm()
}

pub fn coeff_error(estimate: &Coefficients, truth: &Coefficients) -> f64 {
    relative_error(&estimate.to_vector(), &truth.to_vector())
}

pub fn alpha_error(estimate: &[f64], truth: &[f64]) -> f64 {
    relative_error(
        &DVector::from_column_slice(estimate),
        &DVector::from_column_slice(truth),
    )
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Exhaustive nearest-code scan over every valid pixel in row-major order.
pub fn brute_force_localize(maps: &CorrespondenceMaps, model: &MorphableModel, tau: f64) -> Vec<VertexMatch> {
    let valid = maps.valid_indices();
    let pncc = maps.pncc.pixels();
    let w = maps.width();
    let mut out = Vec::new();
    for (j, code) in model.ncc_codes().iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for &i in &valid {
            let p = pncc[i];
            let d2 = (Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) - code).norm_squared();
            if best.is_none_or(|(_, b)| d2 < b) {
                best = Some((i, d2));
            }
        }
        if let Some((i, d2)) = best.filter(|(_, d2)| *d2 <= tau * tau) {
            let o = maps.offset.pixels()[i];
            out.push(VertexMatch {
                vertex: j,
                pixel: (i % w, i / w),
                distance: d2.sqrt(),
                offset: Vector3::new(o[0] as f64, o[1] as f64, o[2] as f64),
            });
        }
    }
    out
}

/// Pixel-centre correspondences of every valid pixel.
pub fn correspondences(maps: &CorrespondenceMaps, model: &MorphableModel) -> Vec<Correspondence> {
    assemble_point_cloud(maps, model.ncc())
        .points
        .iter()
        .map(|p| Correspondence {
            point: p.position,
            pixel: Vector2::new(p.pixel.0 as f64 + 0.5, p.pixel.1 as f64 + 0.5),
        })
        .collect()
}

/// Matches carrying the exact offsets of the synthesized mesh.
pub fn exact_matches(
    model: &MorphableModel,
    coeffs: &Coefficients,
    vertices: impl Iterator<Item = usize>,
) -> Vec<VertexMatch> {
    let x = model.synthesize(coeffs).unwrap();
    vertices
        .map(|j| VertexMatch {
            vertex: j,
            pixel: (0, 0),
            distance: 0.0,
            offset: x[j] - model.mean_vertices()[j],
        })
        .collect()
}

/// Tight box around the valid pixels, `(x, y, w, h)`.
pub fn valid_bbox(maps: &CorrespondenceMaps) -> (f64, f64, f64, f64) {
    let w = maps.width();
    let idx = maps.valid_indices();
    let us = idx.iter().map(|i| i % w);
    let vs = idx.iter().map(|i| i / w);
    let (u0, u1) = (us.clone().min().unwrap(), us.max().unwrap());
    let (v0, v1) = (vs.clone().min().unwrap(), vs.max().unwrap());
    (u0 as f64, v0 as f64, (u1 - u0 + 1) as f64, (v1 - v0 + 1) as f64)
}
