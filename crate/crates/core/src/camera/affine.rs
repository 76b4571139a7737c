use nalgebra::{Matrix3, Matrix4, Vector2, Vector3, Vector4};

use super::{nearest_rotation, AffineCamera, CameraError, Correspondence, PinholeCamera};

/// Largest accepted condition number of the normalized design matrix.
pub const AFFINE_MAX_CONDITION: f64 = 1e8;
/// Initial focal length as a multiple of the image diagonal.
const INITIAL_FOCAL_DIAGONALS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub camera: AffineCamera,
    /// RMS of the 2D residual norms, in pixels.
    pub residual_rms: f64,
    /// Condition number of the normalized design matrix.
    pub condition: f64,
}

/// Least-squares affine camera from `p0·[x;1] = u`, `p1·[x;1] = v`.
///
/// Points and pixels are centred and isotropically scaled before forming
/// the 4×4 normal equations, which both rows share.
pub fn estimate_affine(corrs: &[Correspondence]) -> Result<AffineFit, CameraError> {
    if corrs.len() < 4 {
        return Err(CameraError::DegenerateGeometry(format!(
            "affine camera needs at least 4 correspondences, got {}",
            corrs.len()
        )));
    }
    let n = corrs.len() as f64;
    let c3 = corrs.iter().map(|c| c.point).sum::<Vector3<f64>>() / n;
    let c2 = corrs.iter().map(|c| c.pixel).sum::<Vector2<f64>>() / n;
    let d3 = corrs.iter().map(|c| (c.point - c3).norm()).sum::<f64>() / n;
    let d2 = corrs.iter().map(|c| (c.pixel - c2).norm()).sum::<f64>() / n;
    if !(d3 > 0.0) || !d3.is_finite() {
        return Err(CameraError::DegenerateGeometry("3D points coincide".into()));
    }
    let s3 = 3f64.sqrt() / d3;
    // All pixels identical is a legal (if odd) observation; keep unit scale.
    let s2 = if d2 > 0.0 { 2f64.sqrt() / d2 } else { 1.0 };

    let mut normal = Matrix4::<f64>::zeros();
    let mut rhs_u = Vector4::<f64>::zeros();
    let mut rhs_v = Vector4::<f64>::zeros();
    for c in corrs {
        let x = (c.point - c3) * s3;
        let row = Vector4::new(x.x, x.y, x.z, 1.0);
        let uv = (c.pixel - c2) * s2;
        normal += row * row.transpose();
        rhs_u += row * uv.x;
        rhs_v += row * uv.y;
    }

    let eig = normal.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { (hi / lo).sqrt() } else { f64::INFINITY };
    if !(condition <= AFFINE_MAX_CONDITION) {
        return Err(CameraError::DegenerateGeometry(format!(
            "design matrix condition number {condition:.3e} exceeds {AFFINE_MAX_CONDITION:.0e}"
        )));
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| CameraError::DegenerateGeometry("normal matrix not positive definite".into()))?;
    let a = chol.solve(&rhs_u);
    let b = chol.solve(&rhs_v);

    // Undo conditioning: s2(u - c2) = a·[s3(x - c3); 1].
    let undo = |a: &Vector4<f64>, centre: f64| -> [f64; 4] {
        let lin = Vector3::new(a[0], a[1], a[2]) * (s3 / s2);
        [lin.x, lin.y, lin.z, a[3] / s2 - lin.dot(&c3) + centre]
    };
    let camera = AffineCamera {
        p0: undo(&a, c2.x),
        p1: undo(&b, c2.y),
    };
    let sq: f64 = corrs
        .iter()
        .map(|c| (camera.project(&c.point) - c.pixel).norm_squared())
        .sum();
    Ok(AffineFit {
        camera,
        residual_rms: (sq / n).sqrt(),
        condition,
    })
}

/// Weak-perspective decomposition of an affine camera into a pinhole camera
/// with a fixed, very long focal length (20 image diagonals).
pub fn init_pinhole_from_affine(
    affine: &AffineCamera,
    width: usize,
    height: usize,
) -> Result<PinholeCamera, CameraError> {
    let m0 = Vector3::new(affine.p0[0], affine.p0[1], affine.p0[2]);
    let m1 = Vector3::new(affine.p1[0], affine.p1[1], affine.p1[2]);
    let (n0, n1) = (m0.norm(), m1.norm());
    let scale = 0.5 * (n0 + n1);
    if !(n0 > 0.0 && n1 > 0.0) || !scale.is_finite() {
        return Err(CameraError::DegenerateScale(format!(
            "affine linear part has a zero row (scale {scale})"
        )));
    }
    let r0 = m0 / n0;
    let r1_raw = m1 - r0 * r0.dot(&m1);
    if r1_raw.norm() <= 1e-9 * n1 {
        return Err(CameraError::DegenerateScale(
            "affine linear part is rank deficient".into(),
        ));
    }
    let r1 = r1_raw.normalize();
    let r2 = r0.cross(&r1);
    let rotation = nearest_rotation(&Matrix3::from_rows(&[r0.transpose(), r1.transpose(), r2.transpose()]));

    let diagonal = ((width * width + height * height) as f64).sqrt();
    let focal = INITIAL_FOCAL_DIAGONALS * diagonal;
    let tz = focal / scale;
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let translation = Vector3::new((affine.p0[3] - cx) * tz / focal, (affine.p1[3] - cy) * tz / focal, tz);
    PinholeCamera::new(focal, rotation, translation, width, height)
}
