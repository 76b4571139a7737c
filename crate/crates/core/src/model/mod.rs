//! Linear 3D morphable model: `X = X̄ + A·α + B·β`.
//!
//! Bases are stored as `3V × K` matrices with one row block per vertex
//! (rows `3j`, `3j+1`, `3j+2` hold the x, y, z displacement of vertex `j`).
//! Coefficients are column vectors.

mod generate;
mod io;

pub use generate::generate_synthetic_model;
pub use io::{read_p2fm, write_obj, write_p2fm, P2FM_MAGIC, P2FM_VERSION};

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column norms must be within this of 1 for a model to be accepted.
const UNIT_NORM_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("degenerate model: {0}")]
    Degenerate(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fixed triangle connectivity shared by every instance of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshTopology {
    vertex_count: usize,
    triangles: Vec<[u32; 3]>,
}

impl MeshTopology {
    pub fn new(vertex_count: usize, triangles: Vec<[u32; 3]>) -> Result<Self, ModelError> {
        if vertex_count == 0 {
            return Err(ModelError::InvalidTopology("zero vertices".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i as usize >= vertex_count) {
                return Err(ModelError::InvalidTopology(format!(
                    "triangle {t} references a vertex outside 0..{vertex_count}"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(ModelError::InvalidTopology(format!(
                    "triangle {t} is degenerate: {tri:?}"
                )));
            }
        }
        Ok(Self {
            vertex_count,
            triangles,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Sorted, deduplicated 1-ring neighbourhood of every vertex.
    pub fn one_rings(&self) -> Vec<Vec<usize>> {
        let mut rings = vec![Vec::new(); self.vertex_count];
        for tri in &self.triangles {
            for a in 0..3 {
                for b in 0..3 {
                    if a != b {
                        rings[tri[a] as usize].push(tri[b] as usize);
                    }
                }
            }
        }
        for ring in &mut rings {
            ring.sort_unstable();
            ring.dedup();
        }
        rings
    }

    /// Unique undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| {
                [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])].map(|(a, b)| (a.min(b) as usize, a.max(b) as usize))
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }
}

/// Per-axis affine map from model units to normalized coordinate codes.
///
/// The mean-face bounding box maps onto `[0.1, 1.0]^3`, which keeps every
/// valid code well away from the all-zero background sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NccTransform {
    pub scale: [f64; 3],
    pub offset: [f64; 3],
}

impl NccTransform {
    pub const LOW: f64 = 0.1;
    pub const HIGH: f64 = 1.0;

    /// Fits the transform to the bounding box of `points`.
    pub fn fit(points: &[Vector3<f64>]) -> Result<Self, ModelError> {
        if points.is_empty() {
            return Err(ModelError::Degenerate("no vertices".into()));
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let mut scale = [0.0; 3];
        let mut offset = [0.0; 3];
        for axis in 0..3 {
            let extent = hi[axis] - lo[axis];
            if !(extent > 0.0) || !extent.is_finite() {
                return Err(ModelError::Degenerate(format!(
                    "mean mesh has zero extent along axis {axis}"
                )));
            }
            scale[axis] = (Self::HIGH - Self::LOW) / extent;
            offset[axis] = Self::LOW - scale[axis] * lo[axis];
        }
        Ok(Self { scale, offset })
    }

    pub fn normalize(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.scale[i] * p[i] + self.offset[i])
    }

    pub fn denormalize(&self, code: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| (code[i] - self.offset[i]) / self.scale[i])
    }
}

/// Computes the normalized-coordinate transform for a mean mesh.
pub fn ncc_normalize(mean_vertices: &[Vector3<f64>]) -> Result<NccTransform, ModelError> {
    NccTransform::fit(mean_vertices)
}

/// Shape (`alpha`) and expression (`beta`) coefficients, in model units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Coefficients {
    pub fn zeros(shape_count: usize, expr_count: usize) -> Self {
        Self {
            alpha: vec![0.0; shape_count],
            beta: vec![0.0; expr_count],
        }
    }

    /// Draws `alpha_k ~ N(0, shape_sigma_k²)` and `beta_k ~ N(0, expr_sigma_k²)`.
    pub fn sample<R: Rng + ?Sized>(model: &MorphableModel, rng: &mut R) -> Self {
        let mut draw =
            |sigma: &[f64]| -> Vec<f64> { sigma.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect() };
        let alpha = draw(model.shape_sigma());
        let beta = draw(model.expr_sigma());
        Self { alpha, beta }
    }

    /// Stacked `(alpha, beta)` vector.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.alpha.len() + self.beta.len(),
            self.alpha.iter().chain(&self.beta).copied(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().chain(&self.beta).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    topology: MeshTopology,
    mean: Vec<Vector3<f64>>,
    shape_basis: DMatrix<f64>,
    expr_basis: DMatrix<f64>,
    shape_sigma: Vec<f64>,
    expr_sigma: Vec<f64>,
    ncc: NccTransform,
}

impl MorphableModel {
    /// Validates the parts and attaches the normalized-coordinate transform
    /// fitted to the mean mesh.
    pub fn new(
        topology: MeshTopology,
        mean: Vec<Vector3<f64>>,
        shape_basis: DMatrix<f64>,
        expr_basis: DMatrix<f64>,
        shape_sigma: Vec<f64>,
        expr_sigma: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let ncc = ncc_normalize(&mean)?;
        Self::with_ncc(topology, mean, shape_basis, expr_basis, shape_sigma, expr_sigma, ncc)
    }

    /// Like [`MorphableModel::new`] but keeps a previously stored transform.
    pub fn with_ncc(
        topology: MeshTopology,
        mean: Vec<Vector3<f64>>,
        shape_basis: DMatrix<f64>,
        expr_basis: DMatrix<f64>,
        shape_sigma: Vec<f64>,
        expr_sigma: Vec<f64>,
        ncc: NccTransform,
    ) -> Result<Self, ModelError> {
        let v = topology.vertex_count();
        check_len("mean vertices", v, mean.len())?;
        check_len("shape basis rows", 3 * v, shape_basis.nrows())?;
        check_len("expression basis rows", 3 * v, expr_basis.nrows())?;
        check_len("shape sigma", shape_basis.ncols(), shape_sigma.len())?;
        check_len("expression sigma", expr_basis.ncols(), expr_sigma.len())?;
        if shape_sigma.is_empty() || expr_sigma.is_empty() {
            return Err(ModelError::InvalidParameter(
                "model needs at least one shape and one expression component".into(),
            ));
        }
        if mean.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(ModelError::NonFinite("mean vertices"));
        }
        if !shape_basis.iter().chain(expr_basis.iter()).all(|c| c.is_finite()) {
            return Err(ModelError::NonFinite("basis"));
        }
        for (name, sigma) in [("shape", &shape_sigma), ("expression", &expr_sigma)] {
            if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                return Err(ModelError::InvalidParameter(format!(
                    "{name} sigma must be strictly positive"
                )));
            }
            if sigma.windows(2).any(|w| w[1] > w[0]) {
                return Err(ModelError::InvalidParameter(format!(
                    "{name} sigma must be non-increasing"
                )));
            }
        }
        for (name, basis) in [("shape", &shape_basis), ("expression", &expr_basis)] {
            for (k, col) in basis.column_iter().enumerate() {
                if (col.norm() - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(ModelError::InvalidParameter(format!(
                        "{name} basis column {k} has norm {}, expected 1",
                        col.norm()
                    )));
                }
            }
        }
        if ncc.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(ModelError::Degenerate("non-positive NCC scale".into()));
        }
        Ok(Self {
            topology,
            mean,
            shape_basis,
            expr_basis,
            shape_sigma,
            expr_sigma,
            ncc,
        })
    }

    pub fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    pub fn vertex_count(&self) -> usize {
        self.topology.vertex_count()
    }

    pub fn shape_count(&self) -> usize {
        self.shape_basis.ncols()
    }

    pub fn expr_count(&self) -> usize {
        self.expr_basis.ncols()
    }

    pub fn mean_vertices(&self) -> &[Vector3<f64>] {
        &self.mean
    }

    pub fn shape_basis(&self) -> &DMatrix<f64> {
        &self.shape_basis
    }

    pub fn expr_basis(&self) -> &DMatrix<f64> {
        &self.expr_basis
    }

    pub fn shape_sigma(&self) -> &[f64] {
        &self.shape_sigma
    }

    pub fn expr_sigma(&self) -> &[f64] {
        &self.expr_sigma
    }

    pub fn ncc(&self) -> &NccTransform {
        &self.ncc
    }

    /// Normalized coordinate code of mean vertex `j`.
    pub fn ncc_code(&self, j: usize) -> Vector3<f64> {
        self.ncc.normalize(&self.mean[j])
    }

    pub fn ncc_codes(&self) -> Vec<Vector3<f64>> {
        self.mean.iter().map(|p| self.ncc.normalize(p)).collect()
    }

    /// Bounding-box diagonal of the mean mesh.
    pub fn diameter(&self) -> f64 {
        bbox_diagonal(&self.mean)
    }

    /// `X = X̄ + A·α + B·β`, per vertex.
    pub fn synthesize(&self, coeffs: &Coefficients) -> Result<Vec<Vector3<f64>>, ModelError> {
        check_len("alpha", self.shape_count(), coeffs.alpha.len())?;
        check_len("beta", self.expr_count(), coeffs.beta.len())?;
        if !coeffs.is_finite() {
            return Err(ModelError::NonFinite("coefficients"));
        }
        let alpha = DVector::from_column_slice(&coeffs.alpha);
        let beta = DVector::from_column_slice(&coeffs.beta);
        let delta = &self.shape_basis * alpha + &self.expr_basis * beta;
        Ok(self
            .mean
            .iter()
            .enumerate()
            .map(|(j, m)| m + Vector3::new(delta[3 * j], delta[3 * j + 1], delta[3 * j + 2]))
            .collect())
    }

    pub fn check_coefficients(&self, coeffs: &Coefficients) -> Result<(), ModelError> {
        check_len("alpha", self.shape_count(), coeffs.alpha.len())?;
        check_len("beta", self.expr_count(), coeffs.beta.len())?;
        if !coeffs.is_finite() {
            return Err(ModelError::NonFinite("coefficients"));
        }
        Ok(())
    }
}

pub(crate) fn bbox_diagonal(points: &[Vector3<f64>]) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected != got {
        return Err(ModelError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}
