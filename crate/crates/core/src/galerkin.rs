//! Reduced space-time Galerkin operators.
//!
//! Unknowns are stored time-major: `vec(V)` for the `q̂ × ŝ` coefficient
//! matrix `V` whose column `j` holds the spatial coefficients of time mode
//! `j`. With this ordering `(A ⊗ B) vec(V) = vec(B V Aᵀ)`, so no Kronecker
//! product is ever formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::fem_space::SpatialOperators;
use crate::linalg::{newton_solve, unvec, NewtonReport};
use crate::pod::{ReducedBases, TimeMode};
use crate::time_basis::TimeBasis;

/// Bilinear space-time form
/// `B(X, Y)_(i,l) = Σ T_i[j,j'] S_l[k,k'] X[k,j] Y[k',j'] = ⟨T_i, Xᵀ S_l Y⟩_F`,
/// i.e. `vec(X)ᵀ (T_i ⊗ S_l) vec(Y)`. The output has the same time-major
/// layout, index `l + n_space·i`.
#[derive(Debug, Clone)]
pub struct TensorForm {
    pub time: Vec<DMatrix<f64>>,
    pub space: Vec<DMatrix<f64>>,
}

impl TensorForm {
    pub fn out_dim(&self) -> usize {
        self.time.len() * self.space.len()
    }

    pub fn eval(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DVector<f64> {
        let ns = self.space.len();
        let mut out = DVector::zeros(self.out_dim());
        for (l, s) in self.space.iter().enumerate() {
            let inner = x.transpose() * s * y;
            for (i, t) in self.time.iter().enumerate() {
                out[l + ns * i] = t.dot(&inner);
            }
        }
        out
    }

    /// Jacobian wrt `vec(X)` at fixed `Y`: row `(i,l)` is `vec(S_l Y T_iᵀ)`.
    pub fn grad_left(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let ns = self.space.len();
        let cols = self.space.first().map_or(0, |s| s.nrows()) * self.time.first().map_or(0, |t| t.nrows());
        let mut jac = DMatrix::zeros(self.out_dim(), cols);
        for (l, s) in self.space.iter().enumerate() {
            let sy = s * y;
            for (i, t) in self.time.iter().enumerate() {
                let g = &sy * t.transpose();
                set_row(&mut jac, l + ns * i, &g);
            }
        }
        jac
    }

    /// Jacobian wrt `vec(Y)` at fixed `X`: row `(i,l)` is `vec(S_lᵀ X T_i)`.
    pub fn grad_right(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let ns = self.space.len();
        let cols = self.space.first().map_or(0, |s| s.ncols()) * self.time.first().map_or(0, |t| t.ncols());
        let mut jac = DMatrix::zeros(self.out_dim(), cols);
        for (l, s) in self.space.iter().enumerate() {
            let sx = s.transpose() * x;
            for (i, t) in self.time.iter().enumerate() {
                let g = &sx * t;
                set_row(&mut jac, l + ns * i, &g);
            }
        }
        jac
    }

    /// Every tensor scaled by `factor` on the space side.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.space.iter_mut().for_each(|s| *s *= factor);
        self
    }
}

/// Writes `vec(g)` into row `row`.
fn set_row(m: &mut DMatrix<f64>, row: usize, g: &DMatrix<f64>) {
    for (c, v) in g.iter().enumerate() {
        m[(row, c)] = *v;
    }
}

/// `out[x][(y, z)] = Σ_m X[m,x] Y[:,y]ᵀ A_m Z[:,z]` for the full-order
/// convection matrices `A_m`; columns of `X`, `Y`, `Z` are FEM coefficient
/// vectors of reduced functions.
pub fn project_convection(ops: &SpatialOperators, x: &DMatrix<f64>, y: &DMatrix<f64>, z: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let q = ops.dim();
    assert!(x.nrows() == q && y.nrows() == q && z.nrows() == q);
    let mut out = vec![DMatrix::zeros(y.ncols(), z.ncols()); x.ncols()];
    let mut local = DMatrix::zeros(y.ncols(), z.ncols());
    for (m, blk) in ops.convection.blocks().iter().enumerate() {
        local.fill(0.0);
        for (a, b, v) in blk.indices() {
            if v == 0.0 {
                continue;
            }
            for c in 0..z.ncols() {
                let zb = v * z[(b, c)];
                for r in 0..y.ncols() {
                    local[(r, c)] += y[(a, r)] * zb;
                }
            }
        }
        for (k, o) in out.iter_mut().enumerate() {
            let w = x[(m, k)];
            if w != 0.0 {
                *o += w * &local;
            }
        }
    }
    out
}

/// Reduced operators on `Ŝ·Ŷ`.
#[derive(Debug, Clone)]
pub struct ReducedOperators {
    pub time_mass: DMatrix<f64>,
    /// `[∫ ψ̂_i ψ̂_j' dt]`
    pub time_derivative: DMatrix<f64>,
    pub space_mass: DMatrix<f64>,
    pub space_stiffness: DMatrix<f64>,
    /// right side, same layout as the unknowns
    pub load: DVector<f64>,
    /// `H(v̂) = B(V, V)` with `T_i = ∫ψ̂_i ψ̂ψ̂ᵀ` and `S_l = ∫ν̂_l sym(ν̂ ∂ν̂ᵀ)`
    pub nonlinearity: TensorForm,
    pub time_mode: TimeMode,
    /// `(ψ̂_1(0), …)` or `(ψ̂_1(T), …)` for boundary-value bases
    pub boundary_values: DVector<f64>,
}

impl ReducedOperators {
    pub fn space_dim(&self) -> usize {
        self.space_mass.nrows()
    }

    pub fn time_dim(&self) -> usize {
        self.time_mass.nrows()
    }

    pub fn dim(&self) -> usize {
        self.space_dim() * self.time_dim()
    }
}

pub fn project_operators(bases: &ReducedBases, ops: &SpatialOperators, tb: &TimeBasis) -> Result<ReducedOperators> {
    check_grid(bases, ops, tb)?;
    let cy = &bases.space.fem_coefficients;
    let nt = &bases.time.nodal_values;
    let form = TensorForm {
        time: tb.triple_products(nt, nt, nt),
        space: project_convection(ops, cy, cy, cy),
    };
    project_with_nonlinearity(bases, ops, tb, form)
}

/// Linear operators of `bases` together with a caller-supplied form.
pub fn project_with_nonlinearity(
    bases: &ReducedBases,
    ops: &SpatialOperators,
    tb: &TimeBasis,
    nonlinearity: TensorForm,
) -> Result<ReducedOperators> {
    check_grid(bases, ops, tb)?;
    let cy = &bases.space.fem_coefficients;
    let nt = &bases.time.nodal_values;
    if nonlinearity.out_dim() != cy.ncols() * nt.ncols() {
        return Err(invalid("nonlinearity does not match the reduced dimensions"));
    }
    let stiffness = ops.stiffness.to_dense();
    let boundary = match bases.time.mode {
        TimeMode::TerminalValue => tb.horizon(),
        _ => 0.0,
    };
    Ok(ReducedOperators {
        time_mass: nt.transpose() * tb.mass() * nt,
        time_derivative: nt.transpose() * tb.derivative() * nt,
        space_mass: cy.transpose() * ops.mass_dense() * cy,
        space_stiffness: cy.transpose() * stiffness * cy,
        load: DVector::zeros(cy.ncols() * nt.ncols()),
        nonlinearity,
        time_mode: bases.time.mode,
        boundary_values: bases.time.evaluate(tb, boundary)?,
    })
}

fn check_grid(bases: &ReducedBases, ops: &SpatialOperators, tb: &TimeBasis) -> Result<()> {
    let (qy, st) = (bases.space.fem_coefficients.nrows(), bases.time.nodal_values.nrows());
    if qy != ops.dim() || st != tb.dim() {
        return Err(invalid(format!(
            "bases live on {qy}x{st} grid, operators on {}x{}",
            ops.dim(),
            tb.dim()
        )));
    }
    Ok(())
}

fn check_len(ops: &ReducedOperators, v: &DVector<f64>) {
    assert_eq!(v.len(), ops.dim(), "reduced vector has wrong length");
}

/// Linear part `[dM ⊗ M + ν M ⊗ K] v̂`.
pub fn apply_linear(ops: &ReducedOperators, nu: f64, v: &DMatrix<f64>) -> DMatrix<f64> {
    &ops.space_mass * v * ops.time_derivative.transpose()
        + nu * (&ops.space_stiffness * v * ops.time_mass.transpose())
}

pub fn reduced_residual(ops: &ReducedOperators, nu: f64, vhat: &DVector<f64>) -> DVector<f64> {
    check_len(ops, vhat);
    let v = unvec(vhat.as_slice(), ops.space_dim());
    let lin = apply_linear(ops, nu, &v);
    DVector::from_column_slice(lin.as_slice()) + ops.nonlinearity.eval(&v, &v) - &ops.load
}

/// Dense linear part `dM ⊗ M + ν M ⊗ K`.
pub fn linear_matrix(ops: &ReducedOperators, nu: f64) -> DMatrix<f64> {
    ops.time_derivative.kronecker(&ops.space_mass) + nu * ops.time_mass.kronecker(&ops.space_stiffness)
}

pub fn reduced_jacobian(ops: &ReducedOperators, nu: f64, vhat: &DVector<f64>) -> DMatrix<f64> {
    check_len(ops, vhat);
    let v = unvec(vhat.as_slice(), ops.space_dim());
    linear_matrix(ops, nu) + ops.nonlinearity.grad_left(&v) + ops.nonlinearity.grad_right(&v)
}

/// Solves the reduced forward problem with `v̂(0)` prescribed through the
/// first time mode of an initial-value basis: the first coefficient block is
/// `v0 / ψ̂_1(0)` and the equations tested with `ψ̂_1` are dropped.
pub fn solve_reduced_forward(
    ops: &ReducedOperators,
    nu: f64,
    v0: &DVector<f64>,
    tol: f64,
    max_iterations: usize,
) -> Result<(DVector<f64>, NewtonReport)> {
    if ops.time_mode != TimeMode::InitialValue {
        return Err(crate::Error::InvalidConfiguration(
            "reduced forward solve needs an initial-value time basis".into(),
        ));
    }
    let qh = ops.space_dim();
    if v0.len() != qh {
        return Err(invalid("initial value has wrong reduced dimension"));
    }
    let n = ops.dim();
    let first = v0 / ops.boundary_values[0];
    let full = |free: &DVector<f64>| {
        let mut v = DVector::zeros(n);
        v.rows_mut(0, qh).copy_from(&first);
        v.rows_mut(qh, n - qh).copy_from(free);
        v
    };
    let res = |free: &DVector<f64>| reduced_residual(ops, nu, &full(free)).rows(qh, n - qh).into_owned();
    let jac = |free: &DVector<f64>| reduced_jacobian(ops, nu, &full(free)).view((qh, qh), (n - qh, n - qh)).into_owned();
    let (free, report) = newton_solve(DVector::zeros(n - qh), tol, max_iterations, res, jac)?;
    Ok((full(&free), report))
}
