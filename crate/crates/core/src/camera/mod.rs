//! Camera estimation from dense 2D/3D correspondences.
//!
//! The affine camera is solved linearly, turned into a weak-perspective
//! pinhole camera with a very long focal length, and then refined with
//! Levenberg-Marquardt on reprojection error.

mod affine;
mod lm;

pub use affine::{estimate_affine, init_pinhole_from_affine, AffineFit, AFFINE_MAX_CONDITION};
pub use lm::{refine_pinhole_lm, reprojection_rmse, LmOptions, LmReport, Termination};

use nalgebra::{Matrix2x3, Matrix3, Rotation3, SMatrix, SVector, Vector2, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of correspondences kept for camera estimation.
pub const DEFAULT_SUBSAMPLE: usize = 500;
const ROTATION_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("degenerate scale: {0}")]
    DegenerateScale(String),
    #[error("{0} correspondence(s) lie behind the camera")]
    BehindCamera(usize),
    #[error("invalid camera: {0}")]
    Invalid(String),
}

/// 3D point in model units and the pixel it was observed at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub point: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

/// Uniform sample of `n` correspondences without replacement, kept in input
/// order. Returns the input unchanged when it has at most `n` entries.
pub fn subsample(corrs: &[Correspondence], n: usize, seed: u64) -> Vec<Correspondence> {
    if corrs.len() <= n {
        return corrs.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, corrs.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| corrs[i]).collect()
}

/// Two rows of a 2×4 affine projection: `u = p0·[x; 1]`, `v = p1·[x; 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineCamera {
    pub p0: [f64; 4],
    pub p1: [f64; 4],
}

impl AffineCamera {
    pub fn project(&self, x: &Vector3<f64>) -> Vector2<f64> {
        let row = |p: &[f64; 4]| p[0] * x.x + p[1] * x.y + p[2] * x.z + p[3];
        Vector2::new(row(&self.p0), row(&self.p1))
    }

    /// The 2×3 linear part.
    pub fn linear(&self) -> Matrix2x3<f64> {
        Matrix2x3::new(self.p0[0], self.p0[1], self.p0[2], self.p1[0], self.p1[1], self.p1[2])
    }
}

/// Perspective camera with zero skew and the principal point at the image
/// centre: `u = f·Xc/Zc + w/2`, `v = f·Yc/Zc + h/2`, `(Xc, Yc, Zc) = R·x + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    focal: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    width: usize,
    height: usize,
}

impl PinholeCamera {
    pub fn new(
        focal: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        if !(focal > 0.0) || !focal.is_finite() {
            return Err(CameraError::Invalid(format!("focal length {focal} must be positive")));
        }
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(CameraError::Invalid("non-finite pose".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho > ROTATION_TOL || (rotation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(CameraError::Invalid(format!(
                "rotation is not proper orthonormal (RᵀR error {ortho:.3e})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(CameraError::Invalid("image size must be positive".into()));
        }
        Ok(Self {
            focal,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera at `distance` in front of the model origin, looking at a face
    /// that points along model `+z` with `+y` up, after turning the head by
    /// `yaw` (about model `y`) and `pitch` (about model `x`), in radians.
    pub fn facing(
        yaw: f64,
        pitch: f64,
        distance: f64,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        // Camera axes: x right, y down, z forward. Looking at the face means
        // model +z maps to camera -z and model +y to camera -y.
        let flip = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let head =
            Rotation3::from_axis_angle(&Vector3::y_axis(), yaw) * Rotation3::from_axis_angle(&Vector3::x_axis(), pitch);
        Self::new(
            focal,
            flip * head.matrix(),
            Vector3::new(0.0, 0.0, distance),
            width,
            height,
        )
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn to_camera_frame(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Pixel position of `x`, or `None` when it is not in front of the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<Vector2<f64>> {
        let pc = self.to_camera_frame(x);
        if pc.z <= 0.0 {
            return None;
        }
        Some(self.project_camera_frame(&pc))
    }

    pub(crate) fn project_camera_frame(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        let c = self.principal_point();
        Vector2::new(self.focal * pc.x / pc.z + c.x, self.focal * pc.y / pc.z + c.y)
    }

    /// Projection of `x` and its Jacobian with respect to the local update
    /// `(Δlog f, ω, Δ(T_x/T_z), Δ(T_y/T_z), Δlog T_z)`, where `ω` is an
    /// axis-angle increment applied as `R ← exp([ω]×)·R`.
    pub fn projection_jacobian(&self, x: &Vector3<f64>) -> Option<(Vector2<f64>, SMatrix<f64, 2, 7>)> {
        let rx = self.rotation * x;
        let pc = rx + self.translation;
        if pc.z <= 0.0 {
            return None;
        }
        let f = self.focal;
        let (xc, yc, zc) = (pc.x, pc.y, pc.z);
        let d_pc = SMatrix::<f64, 2, 3>::new(f / zc, 0.0, -f * xc / (zc * zc), 0.0, f / zc, -f * yc / (zc * zc));
        // d(exp([ω]×)·Rx)/dω at ω = 0 is -[Rx]×.
        let d_rot = d_pc * (-rx.cross_matrix());
        let mut j = SMatrix::<f64, 2, 7>::zeros();
        j[(0, 0)] = f * xc / zc;
        j[(1, 0)] = f * yc / zc;
        j.fixed_view_mut::<2, 3>(0, 1).copy_from(&d_rot);
        // T = t_z·(a, b, 1) with a = T_x/T_z, b = T_y/T_z.
        let t = self.translation;
        let d_t = Matrix3::new(t.z, 0.0, t.x, 0.0, t.z, t.y, 0.0, 0.0, t.z);
        j.fixed_view_mut::<2, 3>(0, 4).copy_from(&(d_pc * d_t));
        Some((self.project_camera_frame(&pc), j))
    }

    /// Applies a local update `(Δlog f, ω, Δ(T_x/T_z), Δ(T_y/T_z), Δlog T_z)`.
    ///
    /// Scaling `f` and `T_z` together is a straight line in these
    /// coordinates, which keeps Gauss-Newton steps long when starting from a
    /// near-affine camera.
    pub fn perturbed(&self, delta: &SVector<f64, 7>) -> Self {
        let omega = Vector3::new(delta[1], delta[2], delta[3]);
        let rot = Rotation3::from_scaled_axis(omega);
        let t = self.translation;
        let tz = t.z * delta[6].exp();
        Self {
            focal: self.focal * delta[0].exp(),
            rotation: rot.matrix() * self.rotation,
            translation: Vector3::new((t.x / t.z + delta[4]) * tz, (t.y / t.z + delta[5]) * tz, tz),
            width: self.width,
            height: self.height,
        }
    }

    /// Snaps the rotation back onto SO(3).
    pub(crate) fn reorthonormalize(&mut self) {
        self.rotation = nearest_rotation(&self.rotation);
    }
}

/// Polar projection onto the closest proper rotation.
pub(crate) fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fix = u;
        u_fix.column_mut(2).neg_mut();
        r = u_fix * v_t;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Camera {
    Affine(AffineCamera),
    Pinhole(PinholeCamera),
}

impl Camera {
    /// Pixel position; `None` only for points behind a pinhole camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<Vector2<f64>> {
        match self {
            Camera::Affine(a) => Some(a.project(x)),
            Camera::Pinhole(p) => p.project(x),
        }
    }

    pub fn as_pinhole(&self) -> Option<&PinholeCamera> {
        match self {
            Camera::Pinhole(p) => Some(p),
            Camera::Affine(_) => None,
        }
    }

    pub fn to_record(&self, width: usize, height: usize) -> CameraRecord {
        match self {
            Camera::Affine(a) => CameraRecord::Affine {
                p0: a.p0,
                p1: a.p1,
                width,
                height,
            },
            Camera::Pinhole(p) => {
                let r = p.rotation();
                CameraRecord::Pinhole {
                    f: p.focal(),
                    r: [
                        r[(0, 0)],
                        r[(0, 1)],
                        r[(0, 2)],
                        r[(1, 0)],
                        r[(1, 1)],
                        r[(1, 2)],
                        r[(2, 0)],
                        r[(2, 1)],
                        r[(2, 2)],
                    ],
                    t: [p.translation().x, p.translation().y, p.translation().z],
                    width: p.width(),
                    height: p.height(),
                }
            }
        }
    }
}

/// Flat text form of a camera: `model` is `"affine"` or `"pinhole"`, the
/// rotation is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum CameraRecord {
    Affine {
        p0: [f64; 4],
        p1: [f64; 4],
        width: usize,
        height: usize,
    },
    Pinhole {
        f: f64,
        r: [f64; 9],
        t: [f64; 3],
        width: usize,
        height: usize,
    },
}

impl CameraRecord {
    pub fn size(&self) -> (usize, usize) {
        match self {
            CameraRecord::Affine { width, height, .. } | CameraRecord::Pinhole { width, height, .. } => {
                (*width, *height)
            }
        }
    }

    pub fn to_camera(&self) -> Result<Camera, CameraError> {
        match self {
            CameraRecord::Affine { p0, p1, .. } => Ok(Camera::Affine(AffineCamera { p0: *p0, p1: *p1 })),
            CameraRecord::Pinhole { f, r, t, width, height } => Ok(Camera::Pinhole(PinholeCamera::new(
                *f,
                Matrix3::from_row_slice(r),
                Vector3::from_column_slice(t),
                *width,
                *height,
            )?)),
        }
    }
}
