use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{bbox_diagonal, MeshTopology, ModelError, MorphableModel};

/// Ellipsoid semi-axes in model units (roughly millimetres for a face).
const SEMI_AXES: [f64; 3] = [75.0, 100.0, 60.0];
/// Angular extent of the front patch around the vertical and horizontal axes.
const MAX_YAW: f64 = 70.0 * PI / 180.0;
const MAX_PITCH: f64 = 60.0 * PI / 180.0;

const SIGMA_RATIO: f64 = 0.8;
const SHAPE_SIGMA_FRACTION: f64 = 0.05;
const EXPR_SIGMA_FRACTION: f64 = 0.03;
/// Cosine terms per coordinate in each displacement field.
const FIELD_TERMS: usize = 3;
/// Standard deviation of spatial frequencies, in radians per half-diameter.
const FIELD_FREQUENCY: f64 = 1.2;

/// Deterministic stand-in for a learned face model.
///
/// The mean mesh is a `n × n` grid over the front half of an ellipsoid
/// (facing `+z`, `y` up), recentred on its centroid, with `n² ≥ vertex_target`.
/// Basis columns are random smooth displacement fields; shape and expression
/// columns are orthonormalized together, so `[A B]ᵀ[A B] = I`.
pub fn generate_synthetic_model(
    seed: u64,
    vertex_target: usize,
    shape_count: usize,
    expr_count: usize,
) -> Result<MorphableModel, ModelError> {
    if vertex_target < 12 {
        return Err(ModelError::InvalidParameter(format!(
            "vertex target must be at least 12, got {vertex_target}"
        )));
    }
    if shape_count == 0 || expr_count == 0 {
        return Err(ModelError::InvalidParameter(
            "shape and expression component counts must be at least 1".into(),
        ));
    }
    let n = (vertex_target as f64).sqrt().ceil() as usize;
    let (mean, triangles) = ellipsoid_patch(n);
    let v = mean.len();
    if shape_count + expr_count > 3 * v {
        return Err(ModelError::InvalidParameter(format!(
            "{} components exceed the {} degrees of freedom of a {v}-vertex mesh",
            shape_count + expr_count,
            3 * v
        )));
    }
    let topology = MeshTopology::new(v, triangles)?;
    let diameter = bbox_diagonal(&mean);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = shape_count + expr_count;
    let mut basis = DMatrix::<f64>::zeros(3 * v, total);
    for k in 0..total {
        let field = SmoothField::sample(&mut rng);
        for (j, p) in mean.iter().enumerate() {
            let d = field.eval(&(p / (0.5 * diameter)));
            basis[(3 * j, k)] = d.x;
            basis[(3 * j + 1, k)] = d.y;
            basis[(3 * j + 2, k)] = d.z;
        }
    }
    modified_gram_schmidt(&mut basis)?;

    let shape_basis = basis.columns(0, shape_count).into_owned();
    let expr_basis = basis.columns(shape_count, expr_count).into_owned();
    let geometric =
        |first: f64, count: usize| -> Vec<f64> { (0..count).map(|k| first * SIGMA_RATIO.powi(k as i32)).collect() };
    MorphableModel::new(
        topology,
        mean,
        shape_basis,
        expr_basis,
        geometric(SHAPE_SIGMA_FRACTION * diameter, shape_count),
        geometric(EXPR_SIGMA_FRACTION * diameter, expr_count),
    )
}

fn ellipsoid_patch(n: usize) -> (Vec<Vector3<f64>>, Vec<[u32; 3]>) {
    let [a, b, c] = SEMI_AXES;
    let mut vertices = Vec::with_capacity(n * n);
    // Row j runs along +y, column i along +x.
    for j in 0..n {
        let pitch = MAX_PITCH * (2.0 * j as f64 / (n - 1) as f64 - 1.0);
        for i in 0..n {
            let yaw = MAX_YAW * (2.0 * i as f64 / (n - 1) as f64 - 1.0);
            vertices.push(Vector3::new(
                a * yaw.sin() * pitch.cos(),
                b * pitch.sin(),
                c * yaw.cos() * pitch.cos(),
            ));
        }
    }
    let centroid = vertices.iter().sum::<Vector3<f64>>() / vertices.len() as f64;
    for p in &mut vertices {
        *p -= centroid;
    }

    let idx = |i: usize, j: usize| (j * n + i) as u32;
    let mut triangles = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            // Counter-clockwise seen from +z, so normals point outward.
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    (vertices, triangles)
}

/// Sum of a few random low-frequency cosines per coordinate.
struct SmoothField {
    terms: [[(f64, Vector3<f64>, f64); FIELD_TERMS]; 3],
}

impl SmoothField {
    fn sample<R: Rng>(rng: &mut R) -> Self {
        let mut term = || {
            let amplitude: f64 = rng.sample(StandardNormal);
            let freq = Vector3::from_fn(|_, _| FIELD_FREQUENCY * rng.sample::<f64, _>(StandardNormal));
            let phase = rng.random_range(0.0..2.0 * PI);
            (amplitude, freq, phase)
        };
        let mut coord = || [term(), term(), term()];
        Self {
            terms: [coord(), coord(), coord()],
        }
    }

    fn eval(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|axis, _| {
            self.terms[axis]
                .iter()
                .map(|(amp, freq, phase)| amp * (freq.dot(p) + phase).cos())
                .sum()
        })
    }
}

/// Two passes of modified Gram-Schmidt, in place.
fn modified_gram_schmidt(m: &mut DMatrix<f64>) -> Result<(), ModelError> {
    for _pass in 0..2 {
        for k in 0..m.ncols() {
            for prev in 0..k {
                let proj = m.column(prev).dot(&m.column(k));
                let q = m.column(prev).into_owned();
                m.column_mut(k).axpy(-proj, &q, 1.0);
            }
            let norm = m.column(k).norm();
            if norm < 1e-10 {
                return Err(ModelError::Degenerate(format!(
                    "basis column {k} is linearly dependent on earlier columns"
                )));
            }
            m.column_mut(k).unscale_mut(norm);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Coefficients;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_synthetic_model(3, 100, 5, 2).unwrap();
        let b = generate_synthetic_model(3, 100, 5, 2).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_model(4, 100, 5, 2).unwrap();
        assert_ne!(a.shape_basis(), c.shape_basis());
    }

    #[test]
    fn joint_basis_is_orthonormal() {
        let m = generate_synthetic_model(1, 400, 20, 10).unwrap();
        let mut joint = DMatrix::zeros(3 * m.vertex_count(), 30);
        joint.columns_mut(0, 20).copy_from(m.shape_basis());
        joint.columns_mut(20, 10).copy_from(m.expr_basis());
        let gram = joint.transpose() * &joint;
        let err = (gram - DMatrix::<f64>::identity(30, 30)).amax();
        assert!(err <= 1e-10, "gram error {err}");
    }

    #[test]
    fn minimal_model() {
        let m = generate_synthetic_model(0, 12, 2, 1).unwrap();
        assert!(m.vertex_count() >= 12);
        for col in m.shape_basis().column_iter().chain(m.expr_basis().column_iter()) {
            assert!((col.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_small_parameters() {
        assert!(generate_synthetic_model(0, 11, 2, 1).is_err());
        assert!(generate_synthetic_model(0, 12, 0, 1).is_err());
        assert!(generate_synthetic_model(0, 12, 1, 0).is_err());
    }

    #[test]
    fn sigmas_are_geometric() {
        let m = generate_synthetic_model(2, 50, 4, 3).unwrap();
        let d = m.diameter();
        assert!((m.shape_sigma()[0] - 0.05 * d).abs() < 1e-12);
        assert!((m.expr_sigma()[0] - 0.03 * d).abs() < 1e-12);
        assert!((m.shape_sigma()[3] / m.shape_sigma()[2] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn bounded_deformations_do_not_flip_triangles() {
        let m = generate_synthetic_model(5, 2000, 20, 10).unwrap();
        let normals = |x: &[Vector3<f64>]| -> Vec<Vector3<f64>> {
            m.topology()
                .triangles()
                .iter()
                .map(|t| {
                    let [a, b, c] = t.map(|i| x[i as usize]);
                    (b - a).cross(&(c - a))
                })
                .collect()
        };
        let base = normals(m.mean_vertices());
        // Extreme corners of the ±3σ box, alternating sign per component.
        for flip in [1.0, -1.0] {
            let coeffs = Coefficients {
                alpha: m
                    .shape_sigma()
                    .iter()
                    .enumerate()
                    .map(|(k, s)| flip * 3.0 * s * if k % 2 == 0 { 1.0 } else { -1.0 })
                    .collect(),
                beta: m
                    .expr_sigma()
                    .iter()
                    .enumerate()
                    .map(|(k, s)| flip * 3.0 * s * if k % 3 == 0 { 1.0 } else { -1.0 })
                    .collect(),
            };
            let x = m.synthesize(&coeffs).unwrap();
            let agree = normals(&x).iter().zip(&base).filter(|(n, n0)| n.dot(n0) > 0.0).count();
            assert!(agree as f64 >= 0.99 * base.len() as f64);
        }
    }
}
