//! Generalized measurements of trajectories in the tensor space `S·Y`.
//!
//! A trajectory `v(t) ∈ Y` is measured by its `L²(0,T)`-projection onto
//! the hat space `S`, giving a `q × s` coefficient matrix `X`. The
//! mass-weighted matrix `L_Yᵀ X L_S` carries the space-time `L²` geometry:
//! its Frobenius norm is the function norm.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::fem_space::SpatialOperators;
use crate::full_order::Trajectory;
use crate::time_basis::TimeBasis;

#[derive(Debug, Clone)]
pub struct MeasurementMatrix {
    coeffs: DMatrix<f64>,
    weighted: DMatrix<f64>,
}

impl MeasurementMatrix {
    /// Wraps a coefficient matrix `X` (q × s).
    pub fn from_coefficients(coeffs: DMatrix<f64>, ops: &SpatialOperators, tb: &TimeBasis) -> Result<Self> {
        if coeffs.nrows() != ops.dim() || coeffs.ncols() != tb.dim() {
            return Err(invalid(format!(
                "measurement is {}x{}, expected {}x{}",
                coeffs.nrows(),
                coeffs.ncols(),
                ops.dim(),
                tb.dim()
            )));
        }
        let weighted = ops.mass_cholesky().transpose() * &coeffs * tb.mass_cholesky();
        Ok(Self { coeffs, weighted })
    }

    /// `X`
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// `L_Yᵀ X L_S`
    pub fn weighted(&self) -> &DMatrix<f64> {
        &self.weighted
    }

    pub fn space_dim(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn time_dim(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Same measurement with the coefficients of time node `node` set to zero.
    pub fn without_time_node(&self, node: usize, ops: &SpatialOperators, tb: &TimeBasis) -> Result<Self> {
        let mut coeffs = self.coeffs.clone();
        coeffs.column_mut(node).fill(0.0);
        Self::from_coefficients(coeffs, ops, tb)
    }
}

/// `X = G M_S⁻¹` with `G_ij = (v_i, ψ_j)_S`, the trajectory taken piecewise
/// linear in time. No `M_Y⁻¹` is needed since `v(t)` already lies in `Y`.
pub fn measure_trajectory(traj: &Trajectory, ops: &SpatialOperators, tb: &TimeBasis) -> Result<MeasurementMatrix> {
    if traj.is_empty() {
        return Err(invalid("cannot measure an empty trajectory"));
    }
    let g = tb.load_piecewise_linear(&traj.times, &traj.values)?;
    // X M_S = G  <=>  M_S Xᵀ = Gᵀ (M_S symmetric)
    let chol = tb.mass().clone().cholesky().expect("time mass matrix is SPD");
    let x = chol.solve(&g.transpose()).transpose();
    MeasurementMatrix::from_coefficients(x, ops, tb)
}

/// `‖x‖_{S·Y} = ‖L_Yᵀ X L_S‖_F`
pub fn weighted_norm(meas: &MeasurementMatrix) -> f64 {
    meas.weighted().norm()
}

/// Weighted measurements stacked for mode extraction.
#[derive(Debug, Clone)]
pub struct CombinedMeasurements {
    /// `[W_1, W_2, …]`, q × Σ s_k. Left singular vectors give space modes.
    pub space: DMatrix<f64>,
    /// `[W_1ᵀ, W_2ᵀ, …]`, s × Σ q_k. Left singular vectors give time modes.
    pub time: DMatrix<f64>,
}

/// Column-concatenates the weighted matrices `W_k = L_Yᵀ X_k L_S` with equal weight.
pub fn combine_measurements(parts: &[&MeasurementMatrix]) -> Result<CombinedMeasurements> {
    let first = parts.first().ok_or_else(|| invalid("no measurements to combine"))?;
    let (q, s) = (first.space_dim(), first.time_dim());
    if parts.iter().any(|p| p.space_dim() != q || p.time_dim() != s) {
        return Err(invalid("measurements must share space and time dimensions"));
    }
    let n = parts.len();
    let mut space = DMatrix::zeros(q, n * s);
    let mut time = DMatrix::zeros(s, n * q);
    for (k, p) in parts.iter().enumerate() {
        space.columns_mut(k * s, s).copy_from(p.weighted());
        time.columns_mut(k * q, q).copy_from(&p.weighted().transpose());
    }
    Ok(CombinedMeasurements { space, time })
}
