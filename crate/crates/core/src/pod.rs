//! Norm-optimal reduced space and time bases from weighted measurements.
//!
//! Space modes are the leading left singular vectors `V` of `L_Yᵀ X L_S`,
//! time modes the leading right singular vectors `U`. The reduced functions
//! are `ν̂ = Vᵀ L_Y⁻¹ ν` and `ψ̂ = Uᵀ L_S⁻¹ ψ`, orthonormal in `L²`; in the
//! underlying hat bases their coefficients are `L_Y⁻ᵀ V` and `L_S⁻ᵀ U`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::fem_space::SpatialOperators;
use crate::linalg::{leading_left_singular, solve_lower_transpose};
use crate::measurements::{combine_measurements, CombinedMeasurements, MeasurementMatrix};
use crate::time_basis::TimeBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeMode {
    Plain,
    /// First mode is the only one that is nonzero at `t = 0`.
    InitialValue,
    /// First mode is the only one that is nonzero at `t = T`.
    TerminalValue,
}

#[derive(Debug, Clone)]
pub struct SpaceModes {
    /// `V`, q × q̂ with orthonormal columns.
    pub modes: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// `L_Y⁻ᵀ V`: FEM coefficients of `ν̂_1, …, ν̂_q̂` (columns).
    pub fem_coefficients: DMatrix<f64>,
}

impl SpaceModes {
    pub fn from_modes(modes: DMatrix<f64>, singular_values: Vec<f64>, ops: &SpatialOperators) -> Self {
        let fem_coefficients = solve_lower_transpose(ops.mass_cholesky(), &modes);
        Self { modes, singular_values, fem_coefficients }
    }

    pub fn dim(&self) -> usize {
        self.modes.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct TimeModes {
    /// `U`, s × ŝ with orthonormal columns.
    pub modes: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// `L_S⁻ᵀ U`: nodal values of `ψ̂_1, …, ψ̂_ŝ` (columns).
    pub nodal_values: DMatrix<f64>,
    pub mode: TimeMode,
}

impl TimeModes {
    pub fn from_modes(modes: DMatrix<f64>, singular_values: Vec<f64>, mode: TimeMode, tb: &TimeBasis) -> Self {
        let nodal_values = solve_lower_transpose(tb.mass_cholesky(), &modes);
        Self { modes, singular_values, nodal_values, mode }
    }

    pub fn dim(&self) -> usize {
        self.modes.ncols()
    }

    /// `(ψ̂_1(t), …, ψ̂_ŝ(t))`
    pub fn evaluate(&self, tb: &TimeBasis, t: f64) -> Result<DVector<f64>> {
        Ok(self.nodal_values.transpose() * tb.evaluate(t)?)
    }
}

#[derive(Debug, Clone)]
pub struct ReducedBases {
    pub space: SpaceModes,
    pub time: TimeModes,
}

impl ReducedBases {
    /// Space and time bases from the same measurements.
    pub fn from_measurements(
        parts: &[&MeasurementMatrix],
        qhat: usize,
        shat: usize,
        mode: TimeMode,
        ops: &SpatialOperators,
        tb: &TimeBasis,
    ) -> Result<Self> {
        let combined = combine_measurements(parts)?;
        Ok(Self {
            space: optimal_space_basis(&combined, qhat, ops)?,
            time: optimal_time_basis(parts, shat, mode, tb, ops)?,
        })
    }
}

pub fn optimal_space_basis(combined: &CombinedMeasurements, qhat: usize, ops: &SpatialOperators) -> Result<SpaceModes> {
    let q = combined.space.nrows();
    if qhat == 0 || qhat > q {
        return Err(invalid(format!("space mode count {qhat} not in 1..={q}")));
    }
    let (v, sigma) = leading_left_singular(&combined.space, qhat)?;
    Ok(SpaceModes::from_modes(v, sigma, ops))
}

/// Time modes; in the initial/terminal-value modes the boundary node is
/// measured separately: the remaining `ŝ − 1` modes come from the
/// measurements with that node's coefficients zeroed (hence vanish there),
/// and the boundary hat function, orthogonalized against them, is put first.
pub fn optimal_time_basis(
    parts: &[&MeasurementMatrix],
    shat: usize,
    mode: TimeMode,
    tb: &TimeBasis,
    ops: &SpatialOperators,
) -> Result<TimeModes> {
    let s = tb.dim();
    if shat == 0 || shat > s {
        return Err(invalid(format!("time mode count {shat} not in 1..={s}")));
    }
    let node = match mode {
        TimeMode::Plain => {
            let combined = combine_measurements(parts)?;
            let (u, sigma) = leading_left_singular(&combined.time, shat)?;
            return Ok(TimeModes::from_modes(u, sigma, mode, tb));
        }
        TimeMode::InitialValue => 0,
        TimeMode::TerminalValue => s - 1,
    };

    let zeroed = parts
        .iter()
        .map(|p| p.without_time_node(node, ops, tb))
        .collect::<Result<Vec<_>>>()?;
    let zeroed_refs: Vec<&MeasurementMatrix> = zeroed.iter().collect();
    let combined = combine_measurements(&zeroed_refs)?;
    let (mut rest, sigma) = leading_left_singular(&combined.time, shat - 1)?;

    let l = tb.mass_cholesky();
    let mut e_node = DMatrix::zeros(s, 1);
    e_node[(node, 0)] = 1.0;
    // evaluation functional at the boundary node in U-coordinates: L_S⁻¹ e_node
    let mut eval = crate::linalg::solve_lower(l, &e_node).column(0).into_owned();
    eval /= eval.norm();
    // modes with zero singular value are not forced to vanish at the node
    for mut c in rest.column_iter_mut() {
        let d = c.dot(&eval);
        c.axpy(-d, &eval, 1.0);
    }
    orthonormalize(&mut rest);

    // boundary hat function in U-coordinates: L_Sᵀ e_node
    let mut first = l.transpose().column(node).into_owned();
    for _ in 0..2 {
        let proj = rest.transpose() * &first;
        first -= &rest * proj;
    }
    first /= first.norm();

    let mut u = DMatrix::zeros(s, shat);
    u.set_column(0, &first);
    if shat > 1 {
        u.columns_mut(1, shat - 1).copy_from(&rest);
    }
    Ok(TimeModes::from_modes(u, sigma, mode, tb))
}

/// Modified Gram–Schmidt on the columns, in place.
fn orthonormalize(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        for _ in 0..2 {
            for k in 0..j {
                let d = m.column(k).dot(&m.column(j));
                let ck = m.column(k).into_owned();
                m.column_mut(j).axpy(-d, &ck, 1.0);
            }
        }
        let n = m.column(j).norm();
        m.column_mut(j).unscale_mut(n);
    }
}

/// `‖W − V Vᵀ W U Uᵀ‖_F`. Pass an identity for a one-sided error.
pub fn projection_error(weighted: &DMatrix<f64>, v: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    let approx = v * (v.transpose() * weighted * u) * u.transpose();
    (weighted - approx).norm()
}
