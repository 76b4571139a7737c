//! Vertex localization and regularized coefficient solves.

mod localize;
mod solve;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use localize::{default_tau_match, localize_vertices, VertexMatch};
pub use solve::{
    assemble_joint_system, normal_equations, residual_rms, solve_multi, solve_single, MultiCoefficients, Solution,
};

use crate::camera::{
    estimate_affine, init_pinhole_from_affine, refine_pinhole_lm, subsample, Camera, CameraError, CameraRecord,
    Correspondence, LmOptions, DEFAULT_SUBSAMPLE,
};
use crate::image::{assemble_point_cloud, CorrespondenceMaps};
use crate::model::{Coefficients, MorphableModel};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no valid pixels")]
    EmptyInput,
    #[error("image {0} has no matched vertices")]
    NoMatches(usize),
    #[error("normal equations are singular at lambda = {lambda} (rcond {rcond:.1e}); use lambda > 0")]
    RankDeficient { lambda: f64, rcond: f64 },
    #[error("non-finite offset sample")]
    NonFinite,
    #[error("{0}")]
    InvalidParameter(String),
}

/// A pipeline failure, prefixed with the module and stage it came from.
#[derive(Debug, Error)]
pub enum FitError {
    #[error("camera: {0}")]
    Camera(#[from] CameraError),
    #[error("fitter/localization: {0}")]
    Localization(SolveError),
    #[error("fitter/solve: {0}")]
    Solve(SolveError),
}

impl FitError {
    pub fn stage(&self) -> &'static str {
        match self {
            FitError::Camera(_) => "camera",
            FitError::Localization(_) => "fitter/localization",
            FitError::Solve(_) => "fitter/solve",
        }
    }
}

/// Placement of the fitted maps inside a larger image, for fitting crops
/// with the camera of the full frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelFrame {
    pub origin: (usize, usize),
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub lambda: f64,
    /// Skip the pinhole refinement and report the affine camera.
    pub affine_only: bool,
    /// Correspondences used for camera estimation.
    pub subsample_n: usize,
    pub seed: u64,
    /// Localization threshold; defaults to [`default_tau_match`].
    pub tau_match: Option<f64>,
    pub lm: LmOptions,
    /// Defaults to the maps themselves at origin (0, 0).
    pub frame: Option<PixelFrame>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            affine_only: false,
            subsample_n: DEFAULT_SUBSAMPLE,
            seed: 0,
            tau_match: None,
            lm: LmOptions::default(),
            frame: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub valid_pixels: usize,
    pub camera_correspondences: usize,
    pub affine_condition: f64,
    /// Reprojection RMSE of the reported camera over its correspondences.
    pub camera_rmse: f64,
    pub lm_iterations: usize,
    pub lm_converged: bool,
    pub tau_match: f64,
    /// Condition estimate of the regularized normal matrix.
    pub normal_condition: f64,
    /// Fewer scalar constraints than unknowns; only the penalty makes the
    /// solve well posed.
    pub underdetermined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub camera: Camera,
    /// Width and height of the pixel frame the camera maps into.
    pub image_size: (usize, usize),
    pub coeffs: Coefficients,
    /// Matched vertices `M`.
    pub constraint_count: usize,
    pub residual_rms: f64,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiFitResult {
    pub cameras: Vec<Camera>,
    pub image_sizes: Vec<(usize, usize)>,
    pub coefficients: MultiCoefficients,
    pub constraint_counts: Vec<usize>,
    pub residual_rms: f64,
    pub diagnostics: Vec<FitDiagnostics>,
}

/// Camera and matches of one image, before the coefficient solve.
struct ImageFit {
    camera: Camera,
    size: (usize, usize),
    matches: Vec<VertexMatch>,
    diagnostics: FitDiagnostics,
}

fn fit_camera_and_localize(
    maps: &CorrespondenceMaps,
    model: &MorphableModel,
    options: &FitOptions,
) -> Result<ImageFit, FitError> {
    let frame = options.frame.unwrap_or(PixelFrame {
        origin: (0, 0),
        width: maps.width(),
        height: maps.height(),
    });
    let cloud = assemble_point_cloud(maps, model.ncc());
    if cloud.points.is_empty() {
        return Err(FitError::Localization(SolveError::EmptyInput));
    }
    let corrs: Vec<Correspondence> = cloud
        .points
        .iter()
        .map(|p| Correspondence {
            point: p.position,
            pixel: Vector2::new(
                (p.pixel.0 + frame.origin.0) as f64 + 0.5,
                (p.pixel.1 + frame.origin.1) as f64 + 0.5,
            ),
        })
        .collect();
    let sample = subsample(&corrs, options.subsample_n, options.seed);
    let affine = estimate_affine(&sample)?;

    let mut diagnostics = FitDiagnostics {
        valid_pixels: cloud.points.len(),
        camera_correspondences: sample.len(),
        affine_condition: affine.condition,
        ..FitDiagnostics::default()
    };
    let camera = if options.affine_only {
        diagnostics.camera_rmse = affine.residual_rms;
        Camera::Affine(affine.camera)
    } else {
        let init = init_pinhole_from_affine(&affine.camera, frame.width, frame.height)?;
        let (cam, report) = refine_pinhole_lm(&init, &sample, &options.lm)?;
        diagnostics.camera_rmse = report.final_rmse;
        diagnostics.lm_iterations = report.iterations;
        diagnostics.lm_converged = report.converged;
        Camera::Pinhole(cam)
    };

    let tau = options.tau_match.unwrap_or_else(|| default_tau_match(model));
    diagnostics.tau_match = tau;
    let matches = localize_vertices(maps, model, tau).map_err(FitError::Localization)?;
    if matches.is_empty() {
        return Err(FitError::Localization(SolveError::NoMatches(0)));
    }
    Ok(ImageFit {
        camera,
        size: (frame.width, frame.height),
        matches,
        diagnostics,
    })
}

/// Camera, shape and expression of one face from its correspondence maps.
pub fn fit_image(
    maps: &CorrespondenceMaps,
    model: &MorphableModel,
    options: &FitOptions,
) -> Result<FitResult, FitError> {
    let mut fit = fit_camera_and_localize(maps, model, options)?;
    let (coeffs, solution) = solve_single(&fit.matches, model, options.lambda).map_err(FitError::Solve)?;
    let m = fit.matches.len();
    fit.diagnostics.normal_condition = solution.condition;
    fit.diagnostics.underdetermined = 3 * m < model.shape_count() + model.expr_count();
    Ok(FitResult {
        camera: fit.camera,
        image_size: fit.size,
        coeffs,
        constraint_count: m,
        residual_rms: solution.residual_rms,
        diagnostics: fit.diagnostics,
    })
}

/// One shared shape and per-image expressions from several images of the
/// same subject. Cameras and matches are found per image in parallel.
pub fn fit_multi(
    maps: &[CorrespondenceMaps],
    model: &MorphableModel,
    options: &FitOptions,
) -> Result<MultiFitResult, FitError> {
    if maps.is_empty() {
        return Err(FitError::Localization(SolveError::EmptyInput));
    }
    let fits = maps
        .par_iter()
        .map(|m| fit_camera_and_localize(m, model, options))
        .collect::<Result<Vec<_>, _>>()?;
    let per_image: Vec<&[VertexMatch]> = fits.iter().map(|f| f.matches.as_slice()).collect();
    let solution = solve_multi(&per_image, model, options.lambda).map_err(FitError::Solve)?;
    let unknowns = model.shape_count() + maps.len() * model.expr_count();
    let total: usize = per_image.iter().map(|m| m.len()).sum();
    let mut result = MultiFitResult {
        cameras: Vec::with_capacity(fits.len()),
        image_sizes: Vec::with_capacity(fits.len()),
        coefficients: solution.coefficients,
        constraint_counts: per_image.iter().map(|m| m.len()).collect(),
        residual_rms: solution.residual_rms,
        diagnostics: Vec::with_capacity(fits.len()),
    };
    for mut fit in fits {
        fit.diagnostics.normal_condition = solution.condition;
        fit.diagnostics.underdetermined = 3 * total < unknowns;
        result.cameras.push(fit.camera);
        result.image_sizes.push(fit.size);
        result.diagnostics.push(fit.diagnostics);
    }
    Ok(result)
}

/// Text form of a [`FitResult`]. Records written beside renders carry only
/// the camera and coefficients; the remaining fields then take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub camera: CameraRecord,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    #[serde(default)]
    pub constraint_count: usize,
    #[serde(default)]
    pub residual_rms: f64,
    #[serde(default)]
    pub diagnostics: FitDiagnostics,
}

impl From<&FitResult> for FitRecord {
    fn from(r: &FitResult) -> Self {
        Self {
            camera: r.camera.to_record(r.image_size.0, r.image_size.1),
            alpha: r.coeffs.alpha.clone(),
            beta: r.coeffs.beta.clone(),
            constraint_count: r.constraint_count,
            residual_rms: r.residual_rms,
            diagnostics: r.diagnostics.clone(),
        }
    }
}

impl FitRecord {
    pub fn to_fit_result(&self) -> Result<FitResult, CameraError> {
        Ok(FitResult {
            camera: self.camera.to_camera()?,
            image_size: self.camera.size(),
            coeffs: Coefficients {
                alpha: self.alpha.clone(),
                beta: self.beta.clone(),
            },
            constraint_count: self.constraint_count,
            residual_rms: self.residual_rms,
            diagnostics: self.diagnostics.clone(),
        })
    }
}

/// Text form of a [`MultiFitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFitRecord {
    pub cameras: Vec<CameraRecord>,
    pub alpha: Vec<f64>,
    pub betas: Vec<Vec<f64>>,
    pub constraint_counts: Vec<usize>,
    pub residual_rms: f64,
    pub diagnostics: Vec<FitDiagnostics>,
}

impl From<&MultiFitResult> for MultiFitRecord {
    fn from(r: &MultiFitResult) -> Self {
        Self {
            cameras: r
                .cameras
                .iter()
                .zip(&r.image_sizes)
                .map(|(c, (w, h))| c.to_record(*w, *h))
                .collect(),
            alpha: r.coefficients.alpha.clone(),
            betas: r.coefficients.betas.clone(),
            constraint_counts: r.constraint_counts.clone(),
            residual_rms: r.residual_rms,
            diagnostics: r.diagnostics.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::PinholeCamera;
    use crate::image::FloatImage3;
    use crate::model::generate_synthetic_model;
    use crate::raster::render;

    #[test]
    fn all_invalid_maps_fail_in_localization() {
        let m = generate_synthetic_model(1, 200, 4, 2).unwrap();
        let maps = CorrespondenceMaps::new(FloatImage3::zeros(16, 16), FloatImage3::zeros(16, 16)).unwrap();
        let err = fit_image(&maps, &m, &FitOptions::default()).unwrap_err();
        assert_eq!(err.stage(), "fitter/localization");
        assert!(err.to_string().starts_with("fitter/localization"));
    }

    #[test]
    fn mean_face_fit_is_small_and_records_round_trip() {
        let m = generate_synthetic_model(1, 800, 6, 3).unwrap();
        let cam = PinholeCamera::facing(0.2, 0.0, 600.0, 500.0, 96, 96).unwrap();
        let maps = render(&m, &Coefficients::zeros(6, 3), &cam).unwrap();
        let fit = fit_image(&maps, &m, &FitOptions::default()).unwrap();
        assert!(fit.constraint_count > 0);
        assert!(fit.coeffs.alpha.iter().all(|a| a.abs() < 0.5 * m.shape_sigma()[0]));
        let text = serde_json::to_string(&FitRecord::from(&fit)).unwrap();
        let back: FitRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_fit_result().unwrap(), fit);
    }

    #[test]
    fn affine_only_reports_affine_camera() {
        let m = generate_synthetic_model(1, 800, 6, 3).unwrap();
        let cam = PinholeCamera::facing(0.0, 0.0, 800.0, 500.0, 64, 64).unwrap();
        let maps = render(&m, &Coefficients::zeros(6, 3), &cam).unwrap();
        let opts = FitOptions {
            affine_only: true,
            ..FitOptions::default()
        };
        let fit = fit_image(&maps, &m, &opts).unwrap();
        assert!(matches!(fit.camera, Camera::Affine(_)));
        assert_eq!(fit.diagnostics.lm_iterations, 0);
    }
}
