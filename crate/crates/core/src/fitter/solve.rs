use nalgebra::{DMatrix, DVector};

use super::{SolveError, VertexMatch};
use crate::model::{Coefficients, MorphableModel};

/// Reciprocal condition estimate below which the normal matrix is treated
/// as singular.
const MIN_RCOND: f64 = 1e-15;

/// Shared shape coefficients and one expression vector per image.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoefficients {
    pub alpha: Vec<f64>,
    pub betas: Vec<Vec<f64>>,
}

impl MultiCoefficients {
    /// Coefficients of image `n`.
    pub fn image(&self, n: usize) -> Coefficients {
        Coefficients {
            alpha: self.alpha.clone(),
            beta: self.betas[n].clone(),
        }
    }
}

/// Solution of one regularized solve with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub coefficients: MultiCoefficients,
    /// Condition number estimate of the regularized normal matrix.
    pub condition: f64,
    /// RMS of `‖[a_j b_j]θ − s_j‖` over all constraints, model units.
    pub residual_rms: f64,
}

/// Dense form of the stacked system: `C` has `Σ 3·M_n` rows and
/// `K_s + N·K_e` columns, `s` stacks the offset samples.
pub fn assemble_joint_system(per_image: &[&[VertexMatch]], model: &MorphableModel) -> (DMatrix<f64>, DVector<f64>) {
    let (ks, ke) = (model.shape_count(), model.expr_count());
    let rows: usize = per_image.iter().map(|m| 3 * m.len()).sum();
    let mut c = DMatrix::zeros(rows, ks + per_image.len() * ke);
    let mut s = DVector::zeros(rows);
    let mut r = 0;
    for (n, matches) in per_image.iter().enumerate() {
        for m in matches.iter() {
            let j = 3 * m.vertex;
            c.view_mut((r, 0), (3, ks)).copy_from(&model.shape_basis().rows(j, 3));
            c.view_mut((r, ks + n * ke), (3, ke))
                .copy_from(&model.expr_basis().rows(j, 3));
            s.rows_mut(r, 3).copy_from(&m.offset);
            r += 3;
        }
    }
    (c, s)
}

/// Regularized normal equations `(CᵀC + λWᵀW)θ = Cᵀs` accumulated block by
/// block without forming `C`.
pub fn normal_equations(
    per_image: &[&[VertexMatch]],
    model: &MorphableModel,
    lambda: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let (ks, ke) = (model.shape_count(), model.expr_count());
    let dim = ks + per_image.len() * ke;
    let mut lhs = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    let mut aa = DMatrix::zeros(ks, ks);
    let mut ab = DMatrix::zeros(ks, ke);
    let mut bb = DMatrix::zeros(ke, ke);
    let mut a_s = DVector::zeros(ks);
    let mut b_s = DVector::zeros(ke);

    for (n, matches) in per_image.iter().enumerate() {
        ab.fill(0.0);
        bb.fill(0.0);
        b_s.fill(0.0);
        for m in matches.iter() {
            let j = 3 * m.vertex;
            let a = model.shape_basis().rows(j, 3);
            let b = model.expr_basis().rows(j, 3);
            aa.gemm_tr(1.0, &a, &a, 1.0);
            ab.gemm_tr(1.0, &a, &b, 1.0);
            bb.gemm_tr(1.0, &b, &b, 1.0);
            a_s.gemv_tr(1.0, &a, &m.offset, 1.0);
            b_s.gemv_tr(1.0, &b, &m.offset, 1.0);
        }
        let off = ks + n * ke;
        lhs.view_mut((0, off), (ks, ke)).copy_from(&ab);
        lhs.view_mut((off, 0), (ke, ks)).copy_from(&ab.transpose());
        lhs.view_mut((off, off), (ke, ke)).copy_from(&bb);
        rhs.rows_mut(off, ke).copy_from(&b_s);
    }
    lhs.view_mut((0, 0), (ks, ks)).copy_from(&aa);
    rhs.rows_mut(0, ks).copy_from(&a_s);

    for (k, s) in model.shape_sigma().iter().enumerate() {
        lhs[(k, k)] += lambda / (s * s);
    }
    for n in 0..per_image.len() {
        for (k, s) in model.expr_sigma().iter().enumerate() {
            let i = ks + n * ke + k;
            lhs[(i, i)] += lambda / (s * s);
        }
    }
    (lhs, rhs)
}

/// Joint solve: one shape vector shared by every image and one expression
/// vector per image.
pub fn solve_multi(per_image: &[&[VertexMatch]], model: &MorphableModel, lambda: f64) -> Result<Solution, SolveError> {
    if per_image.is_empty() {
        return Err(SolveError::EmptyInput);
    }
    if let Some(n) = per_image.iter().position(|m| m.is_empty()) {
        return Err(SolveError::NoMatches(n));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SolveError::InvalidParameter(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let v = model.vertex_count();
    for m in per_image.iter().flat_map(|m| m.iter()) {
        if m.vertex >= v {
            return Err(SolveError::InvalidParameter(format!(
                "vertex {} out of range for {v} vertices",
                m.vertex
            )));
        }
        if !m.offset.iter().all(|x| x.is_finite()) {
            return Err(SolveError::NonFinite);
        }
    }

    let (lhs, rhs) = normal_equations(per_image, model, lambda);
    let chol = lhs.clone().cholesky();
    let diag_ratio = chol.as_ref().map_or(0.0, |c| {
        let d = c.l_dirty().diagonal();
        let (lo, hi) = (d.min(), d.max());
        if hi > 0.0 {
            (lo / hi).powi(2)
        } else {
            0.0
        }
    });
    let chol = match chol {
        Some(c) if diag_ratio > MIN_RCOND => c,
        _ => {
            return Err(SolveError::RankDeficient {
                lambda,
                rcond: diag_ratio,
            })
        }
    };
    let theta = chol.solve(&rhs);
    if !theta.iter().all(|x| x.is_finite()) {
        return Err(SolveError::NonFinite);
    }

    let (ks, ke) = (model.shape_count(), model.expr_count());
    let coefficients = MultiCoefficients {
        alpha: theta.rows(0, ks).iter().copied().collect(),
        betas: (0..per_image.len())
            .map(|n| theta.rows(ks + n * ke, ke).iter().copied().collect())
            .collect(),
    };
    let residual_rms = residual_rms(per_image, model, &coefficients);
    Ok(Solution {
        coefficients,
        condition: condition_estimate(&lhs),
        residual_rms,
    })
}

/// Single-image solve; the same assembly as [`solve_multi`] with one image.
pub fn solve_single(
    matches: &[VertexMatch],
    model: &MorphableModel,
    lambda: f64,
) -> Result<(Coefficients, Solution), SolveError> {
    let solution = solve_multi(&[matches], model, lambda)?;
    Ok((solution.coefficients.image(0), solution))
}

/// RMS of `‖[a_j b_j]θ − s_j‖` over every constraint.
pub fn residual_rms(per_image: &[&[VertexMatch]], model: &MorphableModel, coeffs: &MultiCoefficients) -> f64 {
    let alpha = DVector::from_column_slice(&coeffs.alpha);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (n, matches) in per_image.iter().enumerate() {
        let beta = DVector::from_column_slice(&coeffs.betas[n]);
        for m in matches.iter() {
            let j = 3 * m.vertex;
            let pred = model.shape_basis().rows(j, 3) * &alpha + model.expr_basis().rows(j, 3) * &beta;
            sum += (pred - m.offset).norm_squared();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

fn condition_estimate(lhs: &DMatrix<f64>) -> f64 {
    let eig = lhs.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}
