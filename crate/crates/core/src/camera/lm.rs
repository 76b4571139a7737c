use nalgebra::{SMatrix, SVector};

use super::{CameraError, Correspondence, PinholeCamera};

type Mat7 = SMatrix<f64, 7, 7>;
type Vec7 = SVector<f64, 7>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub initial_lambda: f64,
    /// Damping above this means no step can reduce the cost.
    pub max_lambda: f64,
    pub max_iterations: usize,
    pub relative_cost_tol: f64,
    pub gradient_tol: f64,
    /// Re-project R onto SO(3) after this many accepted steps.
    pub reorthonormalize_every: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-3,
            max_lambda: 1e10,
            max_iterations: 100,
            relative_cost_tol: 1e-10,
            gradient_tol: 1e-8,
            reorthonormalize_every: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Gradient infinity-norm under tolerance.
    Gradient,
    /// Relative cost decrease of an accepted step under tolerance.
    CostDecrease,
    MaxIterations,
    /// Damping exceeded its ceiling without finding a better iterate.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmReport {
    /// Linear solves performed, accepted or not.
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_rmse: f64,
    /// Reprojection RMSE in pixels, `sqrt(Σ‖r_i‖² / n)`.
    pub final_rmse: f64,
    pub converged: bool,
    pub termination: Termination,
}

/// Minimizes `Σ‖π(f, R, T; x_i) − (u_i, v_i)‖²` over `(log f, R, T)`.
///
/// Marquardt damping `λ·diag(JᵀJ)`: `λ` starts at 1e-3, is divided by 10 on
/// an accepted step and multiplied by 10 on a rejected one. Steps that put
/// a point behind the camera are rejected.
pub fn refine_pinhole_lm(
    init: &PinholeCamera,
    corrs: &[Correspondence],
    options: &LmOptions,
) -> Result<(PinholeCamera, LmReport), CameraError> {
    if corrs.is_empty() {
        return Err(CameraError::DegenerateGeometry("no correspondences".into()));
    }
    if !(init.translation().z > 0.0) {
        return Err(CameraError::Invalid(
            "refinement needs the model origin in front of the camera (T_z > 0)".into(),
        ));
    }
    let behind = corrs.iter().filter(|c| init.to_camera_frame(&c.point).z <= 0.0).count();
    if behind > 0 {
        return Err(CameraError::BehindCamera(behind));
    }

    let n = corrs.len() as f64;
    let mut cam = *init;
    let mut cost = cost(&cam, corrs).expect("checked in front");
    let initial_rmse = (cost / n).sqrt();
    let mut lambda = options.initial_lambda;
    let mut iterations = 0;
    let mut accepted = 0;

    let termination = 'outer: loop {
        let (jtj, grad) = normal_equations(&cam, corrs);
        if grad.amax() < options.gradient_tol || cost == 0.0 {
            break Termination::Gradient;
        }
        loop {
            if iterations >= options.max_iterations {
                break 'outer Termination::MaxIterations;
            }
            iterations += 1;
            let mut damped = jtj;
            for k in 0..7 {
                // Floor keeps the system definite when a column vanishes.
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = damped.cholesky().map(|c| c.solve(&(-grad)));
            let candidate = step.map(|d| cam.perturbed(&d));
            let new_cost = candidate.as_ref().and_then(|c| self::cost(c, corrs));
            match (candidate, new_cost) {
                (Some(next), Some(next_cost)) if next_cost < cost => {
                    let decrease = (cost - next_cost) / cost;
                    cam = next;
                    cost = next_cost;
                    accepted += 1;
                    lambda = (lambda / 10.0).max(1e-12);
                    if accepted % options.reorthonormalize_every == 0 {
                        cam.reorthonormalize();
                        cost = self::cost(&cam, corrs).unwrap_or(cost);
                    }
                    if decrease < options.relative_cost_tol {
                        break 'outer Termination::CostDecrease;
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > options.max_lambda {
                        break 'outer Termination::Stalled;
                    }
                }
            }
        }
    };

    cam.reorthonormalize();
    let final_cost = self::cost(&cam, corrs).unwrap_or(cost);
    Ok((
        cam,
        LmReport {
            iterations,
            accepted_steps: accepted,
            initial_rmse,
            final_rmse: (final_cost / n).sqrt(),
            converged: matches!(termination, Termination::Gradient | Termination::CostDecrease),
            termination,
        },
    ))
}

/// Sum of squared reprojection errors, `None` if any point is behind.
fn cost(cam: &PinholeCamera, corrs: &[Correspondence]) -> Option<f64> {
    corrs
        .iter()
        .map(|c| cam.project(&c.point).map(|p| (p - c.pixel).norm_squared()))
        .sum()
}

fn normal_equations(cam: &PinholeCamera, corrs: &[Correspondence]) -> (Mat7, Vec7) {
    let mut jtj = Mat7::zeros();
    let mut grad = Vec7::zeros();
    for c in corrs {
        let (p, j) = cam
            .projection_jacobian(&c.point)
            .expect("iterate keeps points in front");
        let r = p - c.pixel;
        jtj += j.transpose() * j;
        grad += j.transpose() * r;
    }
    (jtj, grad)
}

/// Reprojection RMSE in pixels, infinite if any point is behind the camera.
pub fn reprojection_rmse(cam: &PinholeCamera, corrs: &[Correspondence]) -> f64 {
    cost(cam, corrs).map_or(f64::INFINITY, |c| (c / corrs.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{estimate_affine, init_pinhole_from_affine};
    use nalgebra::{Matrix3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(cam: &PinholeCamera, seed: u64, n: usize) -> Vec<Correspondence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let point = Vector3::new(
                    rng.random_range(-70.0..70.0),
                    rng.random_range(-90.0..90.0),
                    rng.random_range(-20.0..40.0),
                );
                Correspondence {
                    point,
                    pixel: cam.project(&point).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn stationary_at_ground_truth() {
        let truth = PinholeCamera::facing(0.4, -0.1, 600.0, 550.0, 256, 256).unwrap();
        let corrs = scene(&truth, 1, 300);
        let (cam, report) = refine_pinhole_lm(&truth, &corrs, &LmOptions::default()).unwrap();
        assert!(report.iterations <= 2);
        assert!(report.converged);
        assert!((cam.focal() - truth.focal()).abs() <= 1e-10 * truth.focal());
        assert!((cam.rotation() - truth.rotation()).amax() <= 1e-10);
        assert!((cam.translation() - truth.translation()).amax() <= 1e-10);
    }

    #[test]
    fn recovers_perspective_camera_from_affine_init() {
        let truth = PinholeCamera::facing(-0.7, 0.2, 500.0, 500.0, 256, 256).unwrap();
        let corrs = scene(&truth, 2, 500);
        let affine = estimate_affine(&corrs).unwrap();
        let init = init_pinhole_from_affine(&affine.camera, 256, 256).unwrap();
        let (cam, report) = refine_pinhole_lm(&init, &corrs, &LmOptions::default()).unwrap();
        assert!(report.final_rmse < 0.1, "{report:?}");
        assert!(report.iterations <= 100);
        assert!((cam.focal() / truth.focal() - 1.0).abs() < 1e-4, "f {}", cam.focal());
        let ortho = (cam.rotation().transpose() * cam.rotation() - Matrix3::identity()).amax();
        assert!(ortho <= 1e-10);
    }

    #[test]
    fn accepted_steps_never_increase_cost() {
        let truth = PinholeCamera::facing(0.9, 0.0, 450.0, 400.0, 256, 256).unwrap();
        let mut corrs = scene(&truth, 3, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for c in &mut corrs {
            c.pixel.x += rng.random_range(-0.5..0.5);
            c.pixel.y += rng.random_range(-0.5..0.5);
        }
        let affine = estimate_affine(&corrs).unwrap();
        let mut cam = init_pinhole_from_affine(&affine.camera, 256, 256).unwrap();
        // Single-iteration runs expose the cost after each step.
        let opts = LmOptions {
            max_iterations: 1,
            ..LmOptions::default()
        };
        let mut last = reprojection_rmse(&cam, &corrs);
        for _ in 0..30 {
            let (next, _) = refine_pinhole_lm(&cam, &corrs, &opts).unwrap();
            let rmse = reprojection_rmse(&next, &corrs);
            assert!(rmse <= last + 1e-12);
            last = rmse;
            cam = next;
        }
    }

    #[test]
    fn rejects_points_behind() {
        let cam = PinholeCamera::facing(0.0, 0.0, 100.0, 100.0, 64, 64).unwrap();
        let corrs = vec![Correspondence {
            point: Vector3::new(0.0, 0.0, 500.0),
            pixel: Default::default(),
        }];
        assert!(matches!(
            refine_pinhole_lm(&cam, &corrs, &LmOptions::default()),
            Err(CameraError::BehindCamera(1))
        ));
    }
}
