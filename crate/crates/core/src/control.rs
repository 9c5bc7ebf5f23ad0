//! One-shot reduced optimality system for state and costate.
//!
//! State `v̂` lives on `Ŝ·Ŷ`, costate `λ̂` on `R̂·Λ̂`; both time-major. The
//! coupled residual is
//!
//! ```text
//! [dM_Ŝ ⊗ M_Ŷ + ν M_Ŝ ⊗ K_Ŷ] v̂ + H(v̂) − (1/α) [M_ŜR̂ ⊗ M_ŶΛ̂] λ̂
//! [−dM_R̂ ⊗ M_Λ̂ + ν M_R̂ ⊗ K_Λ̂] λ̂ + N(λ̂, v̂) + [M_R̂Ŝ ⊗ M_Λ̂Ŷ] (v̂ − v̂*)
//! ```
//!
//! where `N` is the tested `DH(x)ᵀλ`. The first state time block is fixed by
//! `v̂(0) = Π x₀` and the first costate block by `λ̂(T) = 0`; the equations
//! tested with those two modes are dropped.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::fem_space::SpatialOperators;
use crate::full_order::{evaluate_cost, BurgersModel, ControlFunction, Cost};
use crate::galerkin::{self, project_convection, project_with_nonlinearity, ReducedOperators, TensorForm};
use crate::linalg::{newton_solve, unvec, NewtonReport};
use crate::measurements::MeasurementMatrix;
use crate::pod::{ReducedBases, TimeMode};
use crate::time_basis::TimeBasis;

pub const NEWTON_TOL: f64 = 1e-9;
pub const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone)]
pub struct OptimalitySystem {
    pub state: ReducedOperators,
    /// `nonlinearity` holds `N(Λ, V)`: time tensors `∫φ̂_i φ̂ ψ̂ᵀ`,
    /// space tensors `2 ∫ μ̂_l ⟨ ·, ∂(·) ⟩` mixing costate and state modes.
    pub adjoint: ReducedOperators,
    /// `M_ŜR̂`, ŝ × r̂
    pub mixed_time: DMatrix<f64>,
    /// `M_ŶΛ̂`, q̂ × p̂
    pub mixed_space: DMatrix<f64>,
    /// `v̂*`, q̂ × ŝ
    pub target: DMatrix<f64>,
    pub nu: f64,
    pub alpha: f64,
    /// fixed first state block `Π x₀ / ψ̂_1(0)`
    pub initial_block: DVector<f64>,
    /// Newton start for the state, q̂ × ŝ; the first block is overwritten
    pub initial_guess: DMatrix<f64>,
    pub state_bases: ReducedBases,
    pub adjoint_bases: ReducedBases,
}

#[derive(Debug, Clone, Copy)]
pub struct Diagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub walltime: Duration,
}

#[derive(Debug, Clone)]
pub struct OptimalitySolution {
    /// q̂ × ŝ
    pub state: DMatrix<f64>,
    /// p̂ × r̂
    pub costate: DMatrix<f64>,
    pub diagnostics: Diagnostics,
}

impl OptimalitySystem {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        state_bases: &ReducedBases,
        adjoint_bases: &ReducedBases,
        ops: &SpatialOperators,
        tb: &TimeBasis,
        nu: f64,
        alpha: f64,
        x0: &DVector<f64>,
        target: &MeasurementMatrix,
    ) -> Result<Self> {
        if state_bases.time.mode != TimeMode::InitialValue {
            return Err(Error::InvalidConfiguration("state time basis must be in initial-value mode".into()));
        }
        if adjoint_bases.time.mode != TimeMode::TerminalValue {
            return Err(Error::InvalidConfiguration("adjoint time basis must be in terminal-value mode".into()));
        }
        if alpha.is_nan() || nu.is_nan() || alpha <= 0.0 || nu <= 0.0 {
            return Err(invalid("viscosity and regularization must be positive"));
        }
        if x0.len() != ops.dim() {
            return Err(invalid("initial value does not match the FEM space"));
        }
        if target.space_dim() != ops.dim() || target.time_dim() != tb.dim() {
            return Err(invalid("target does not match the space-time grid"));
        }
        let state = galerkin::project_operators(state_bases, ops, tb)?;

        let (cy, ns) = (&state_bases.space.fem_coefficients, &state_bases.time.nodal_values);
        let (cm, nr) = (&adjoint_bases.space.fem_coefficients, &adjoint_bases.time.nodal_values);
        let (ph, qh) = (cm.ncols(), cy.ncols());
        let raw = project_convection(ops, cm, cm, cy);
        let space: Vec<DMatrix<f64>> = (0..ph)
            .map(|l| DMatrix::from_fn(ph, qh, |k, kp| 2.0 * raw[k][(l, kp)]))
            .collect();
        let form = TensorForm { time: tb.triple_products(nr, nr, ns), space };
        let adjoint = project_with_nonlinearity(adjoint_bases, ops, tb, form)?;

        let lt = ops.mass_cholesky().transpose();
        let v0 = state_bases.space.modes.transpose() * (&lt * x0);
        let psi0 = state.boundary_values[0];
        let target_red = state_bases.space.modes.transpose()
            * &lt
            * target.coefficients()
            * tb.mass_cholesky()
            * &state_bases.time.modes;
        Ok(Self {
            mixed_time: ns.transpose() * tb.mass() * nr,
            mixed_space: cy.transpose() * ops.mass_dense() * cm,
            target: target_red,
            nu,
            alpha,
            initial_block: v0 / psi0,
            initial_guess: DMatrix::zeros(qh, ns.ncols()),
            state,
            adjoint,
            state_bases: state_bases.clone(),
            adjoint_bases: adjoint_bases.clone(),
        })
    }

    /// Starts Newton from the reduced coefficients of a state trajectory.
    pub fn with_initial_guess(mut self, measurement: &MeasurementMatrix, ops: &SpatialOperators, tb: &TimeBasis) -> Self {
        self.initial_guess = self.state_bases.space.modes.transpose()
            * ops.mass_cholesky().transpose()
            * measurement.coefficients()
            * tb.mass_cholesky()
            * &self.state_bases.time.modes;
        self
    }

    /// Drops the convection terms from state and costate equations.
    pub fn linearized(mut self) -> Self {
        self.state.nonlinearity = self.state.nonlinearity.scaled(0.0);
        self.adjoint.nonlinearity = self.adjoint.nonlinearity.scaled(0.0);
        self
    }

    pub fn state_shape(&self) -> (usize, usize) {
        (self.state.space_dim(), self.state.time_dim())
    }

    pub fn adjoint_shape(&self) -> (usize, usize) {
        (self.adjoint.space_dim(), self.adjoint.time_dim())
    }

    /// Number of unknowns before constraint elimination.
    pub fn dim(&self) -> usize {
        self.state.dim() + self.adjoint.dim()
    }

    /// Number of unknowns after constraint elimination.
    pub fn free_dim(&self) -> usize {
        self.dim() - self.state.space_dim() - self.adjoint.space_dim()
    }

    /// Full `(V, Λ)` from the free unknowns.
    pub fn expand(&self, free: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (qh, sh) = self.state_shape();
        let (ph, rh) = self.adjoint_shape();
        let nv = qh * (sh - 1);
        let mut v = DMatrix::zeros(qh, sh);
        v.set_column(0, &self.initial_block);
        v.columns_mut(1, sh - 1).copy_from_slice(&free.as_slice()[..nv]);
        let mut lam = DMatrix::zeros(ph, rh);
        lam.columns_mut(1, rh - 1).copy_from_slice(&free.as_slice()[nv..]);
        (v, lam)
    }

    fn restrict(&self, v: &DMatrix<f64>, lam: &DMatrix<f64>) -> DVector<f64> {
        let qh = self.state.space_dim();
        let ph = self.adjoint.space_dim();
        let mut out = Vec::with_capacity(self.free_dim());
        out.extend_from_slice(&v.as_slice()[qh..]);
        out.extend_from_slice(&lam.as_slice()[ph..]);
        DVector::from_vec(out)
    }

    /// Full coupled residual `(state rows, costate rows)`, not eliminated.
    pub fn full_residual(&self, v: &DMatrix<f64>, lam: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let st = &self.state;
        let ad = &self.adjoint;
        let rs = galerkin::apply_linear(st, self.nu, v)
            + unvec(st.nonlinearity.eval(v, v).as_slice(), st.space_dim())
            - (1.0 / self.alpha) * (&self.mixed_space * lam * self.mixed_time.transpose());
        let ra = -(&ad.space_mass * lam * ad.time_derivative.transpose())
            + self.nu * (&ad.space_stiffness * lam * ad.time_mass.transpose())
            + unvec(ad.nonlinearity.eval(lam, v).as_slice(), ad.space_dim())
            + self.mixed_space.transpose() * (v - &self.target) * &self.mixed_time;
        (rs, ra)
    }

    /// Eliminated residual in the free unknowns.
    pub fn residual(&self, free: &DVector<f64>) -> DVector<f64> {
        let (v, lam) = self.expand(free);
        let (rs, ra) = self.full_residual(&v, &lam);
        self.restrict(&rs, &ra)
    }

    /// Jacobian of [`Self::residual`].
    pub fn jacobian(&self, free: &DVector<f64>) -> DMatrix<f64> {
        let (v, lam) = self.expand(free);
        let st = &self.state;
        let ad = &self.adjoint;
        let (nv, na) = (st.dim(), ad.dim());
        let mut full = DMatrix::zeros(nv + na, nv + na);
        let jvv = galerkin::reduced_jacobian(st, self.nu, &DVector::from_column_slice(v.as_slice()));
        let jvl = -(1.0 / self.alpha) * self.mixed_time.kronecker(&self.mixed_space);
        let jll = -ad.time_derivative.kronecker(&ad.space_mass)
            + self.nu * ad.time_mass.kronecker(&ad.space_stiffness)
            + ad.nonlinearity.grad_left(&v);
        let jlv = ad.nonlinearity.grad_right(&lam) + self.mixed_time.transpose().kronecker(&self.mixed_space.transpose());
        full.view_mut((0, 0), (nv, nv)).copy_from(&jvv);
        full.view_mut((0, nv), (nv, na)).copy_from(&jvl);
        full.view_mut((nv, nv), (na, na)).copy_from(&jll);
        full.view_mut((nv, 0), (na, nv)).copy_from(&jlv);
        let keep: Vec<usize> = (st.space_dim()..nv).chain(nv + ad.space_dim()..nv + na).collect();
        full.select_rows(&keep).select_columns(&keep)
    }

    pub fn solve(&self) -> Result<OptimalitySolution> {
        let start = Instant::now();
        let lam0 = DMatrix::zeros(self.adjoint.space_dim(), self.adjoint.time_dim());
        let guess = self.restrict(&self.initial_guess, &lam0);
        let (free, NewtonReport { iterations, residual }) =
            newton_solve(guess, NEWTON_TOL, NEWTON_MAX_ITER, |z| self.residual(z), |z| self.jacobian(z))?;
        let walltime = start.elapsed();
        let (state, costate) = self.expand(&free);
        Ok(OptimalitySolution { state, costate, diagnostics: Diagnostics { iterations, residual, walltime } })
    }

    /// `u(t) = (1/α) Σ λ̂_{l,k} μ̂_l φ̂_k(t)` as FEM coefficients sampled at `times`.
    pub fn lift_control(&self, costate: &DMatrix<f64>, tb: &TimeBasis, times: &[f64]) -> Result<ControlFunction> {
        let spatial = &self.adjoint_bases.space.fem_coefficients * costate / self.alpha;
        let values = times
            .iter()
            .map(|&t| Ok(&spatial * self.adjoint_bases.time.evaluate(tb, t)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(ControlFunction { times: times.to_vec(), values })
    }

    /// Full-order state coefficients of the reduced state at `t`.
    pub fn lift_state(&self, state: &DMatrix<f64>, tb: &TimeBasis, t: f64) -> Result<DVector<f64>> {
        Ok(&self.state_bases.space.fem_coefficients * (state * self.state_bases.time.evaluate(tb, t)?))
    }
}

pub fn solve_optimality(sys: &OptimalitySystem) -> Result<OptimalitySolution> {
    sys.solve()
}

/// Applies `u` to the full model and reports tracking and total cost.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_evaluate(
    ops: &SpatialOperators,
    nu: f64,
    x0: &DVector<f64>,
    u: &ControlFunction,
    target: &[DVector<f64>],
    alpha: f64,
    n_t: usize,
    horizon: f64,
) -> Result<Cost> {
    let state = BurgersModel::new(ops, nu).solve_state_forward(x0, Some(u), n_t, horizon)?;
    evaluate_cost(ops, &state, target, Some(u), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem_space::{step_initial_value, FemSpace};
    use crate::full_order::uniform_grid;
    use crate::galerkin::solve_reduced_forward;
    use crate::measurements::measure_trajectory;

    struct Problem {
        ops: SpatialOperators,
        tb: TimeBasis,
        x0: DVector<f64>,
        target: MeasurementMatrix,
        state_bases: ReducedBases,
        adjoint_bases: ReducedBases,
        uncontrolled: MeasurementMatrix,
    }

    fn problem(nu: f64, k: usize) -> Problem {
        let ops = SpatialOperators::assemble(&FemSpace::new(1.0, 40).unwrap()).unwrap();
        let tb = TimeBasis::new(1.0, 30).unwrap();
        let x0 = ops.space.interpolate(step_initial_value);
        let model = BurgersModel::new(&ops, nu);
        let traj = model.solve_state_forward(&x0, None, 29, 1.0).unwrap();
        let target_traj: Vec<DVector<f64>> = vec![x0.clone(); traj.len()];
        let adj = model.solve_adjoint_backward(&traj, &target_traj).unwrap();
        let xm = measure_trajectory(&traj, &ops, &tb).unwrap();
        let lm = measure_trajectory(&adj, &ops, &tb).unwrap();
        let parts = [&xm, &lm];
        let state_bases = ReducedBases::from_measurements(&parts, k, k, TimeMode::InitialValue, &ops, &tb).unwrap();
        let adjoint_bases = ReducedBases::from_measurements(&parts, k, k, TimeMode::TerminalValue, &ops, &tb).unwrap();
        let target =
            MeasurementMatrix::from_coefficients(DMatrix::from_fn(40, 30, |i, _| x0[i]), &ops, &tb).unwrap();
        Problem { ops, tb, x0, target, state_bases, adjoint_bases, uncontrolled: xm }
    }

    fn system(p: &Problem, nu: f64, alpha: f64) -> OptimalitySystem {
        OptimalitySystem::build(&p.state_bases, &p.adjoint_bases, &p.ops, &p.tb, nu, alpha, &p.x0, &p.target)
            .unwrap()
            .with_initial_guess(&p.uncontrolled, &p.ops, &p.tb)
    }

    #[test]
    fn zero_data_has_zero_solution() {
        let p = problem(0.05, 4);
        let zero = DVector::zeros(40);
        let zt = MeasurementMatrix::from_coefficients(DMatrix::zeros(40, 30), &p.ops, &p.tb).unwrap();
        let sys = OptimalitySystem::build(&p.state_bases, &p.adjoint_bases, &p.ops, &p.tb, 0.05, 1e-3, &zero, &zt).unwrap();
        let sol = sys.solve().unwrap();
        assert!(sol.diagnostics.iterations <= 1);
        assert_eq!(sol.state.amax(), 0.0);
        assert_eq!(sol.costate.amax(), 0.0);
    }

    #[test]
    fn dimensions_before_and_after_elimination() {
        let p = problem(0.05, 5);
        let sys = system(&p, 0.05, 1e-3);
        assert_eq!(sys.dim(), 2 * 25);
        assert_eq!(sys.free_dim(), 2 * 20);
        assert!((&sys.mixed_time.transpose() - (p.adjoint_bases.time.nodal_values.transpose() * p.tb.mass() * &p.state_bases.time.nodal_values)).amax() < 1e-14);
    }

    #[test]
    fn rejects_wrong_time_modes() {
        let p = problem(0.05, 3);
        let r = OptimalitySystem::build(&p.adjoint_bases, &p.adjoint_bases, &p.ops, &p.tb, 0.05, 1e-3, &p.x0, &p.target);
        assert!(matches!(r, Err(Error::InvalidConfiguration(_))));
        let r = OptimalitySystem::build(&p.state_bases, &p.state_bases, &p.ops, &p.tb, 0.05, 1e-3, &p.x0, &p.target);
        assert!(matches!(r, Err(Error::InvalidConfiguration(_))));
    }

    #[test]
    fn coupled_jacobian_matches_central_differences() {
        let p = problem(0.02, 4);
        let sys = system(&p, 0.02, 1e-2);
        let n = sys.free_dim();
        let z = DVector::from_fn(n, |i, _| ((i * 7 % 11) as f64 - 5.0) * 0.1);
        let jac = sys.jacobian(&z);
        let mut fd = DMatrix::zeros(n, n);
        let eps = 1e-6 * z.amax();
        for k in 0..n {
            let mut a = z.clone();
            let mut b = z.clone();
            a[k] += eps;
            b[k] -= eps;
            fd.set_column(k, &((sys.residual(&a) - sys.residual(&b)) / (2.0 * eps)));
        }
        assert!((&jac - fd).norm() / jac.norm() < 1e-6);
    }

    #[test]
    fn linear_system_converges_in_one_step_to_dense_solution() {
        let p = problem(0.05, 4);
        let sys = system(&p, 0.05, 1e-2).linearized();
        let sol = sys.solve().unwrap();
        assert_eq!(sol.diagnostics.iterations, 1);

        // oracle: explicit Kronecker assembly of the eliminated affine system
        let (qh, sh) = sys.state_shape();
        let (ph, rh) = sys.adjoint_shape();
        let st = &sys.state;
        let ad = &sys.adjoint;
        let a11 = st.time_derivative.kronecker(&st.space_mass) + 0.05 * st.time_mass.kronecker(&st.space_stiffness);
        let a12 = -(1.0 / sys.alpha) * sys.mixed_time.kronecker(&sys.mixed_space);
        let a22 = -ad.time_derivative.kronecker(&ad.space_mass) + 0.05 * ad.time_mass.kronecker(&ad.space_stiffness);
        let a21 = sys.mixed_time.transpose().kronecker(&sys.mixed_space.transpose());
        let (nv, na) = (qh * sh, ph * rh);
        let mut a = DMatrix::zeros(nv + na, nv + na);
        a.view_mut((0, 0), (nv, nv)).copy_from(&a11);
        a.view_mut((0, nv), (nv, na)).copy_from(&a12);
        a.view_mut((nv, 0), (na, nv)).copy_from(&a21);
        a.view_mut((nv, nv), (na, na)).copy_from(&a22);
        let mut b = DVector::zeros(nv + na);
        b.rows_mut(nv, na).copy_from(&(&a21 * DVector::from_column_slice(sys.target.as_slice())));
        let mut fixed = DVector::zeros(nv + na);
        fixed.rows_mut(0, qh).copy_from(&sys.initial_block);
        let rhs = b - &a * fixed;
        let keep: Vec<usize> = (qh..nv).chain(nv + ph..nv + na).collect();
        let z = a.select_rows(&keep).select_columns(&keep).lu().solve(&rhs.select_rows(&keep)).unwrap();
        let (v, lam) = sys.expand(&z);
        assert!((v - &sol.state).amax() < 1e-9 * sol.state.amax());
        assert!((lam - &sol.costate).amax() < 1e-9 * sol.costate.amax());
    }

    #[test]
    fn converged_residual_is_small_and_constraints_hold() {
        let p = problem(0.02, 6);
        let sys = system(&p, 0.02, 1e-3);
        let sol = sys.solve().unwrap();
        let (rs, ra) = sys.full_residual(&sol.state, &sol.costate);
        assert!(rs.columns(1, 5).amax() < 1e-9 && ra.columns(1, 5).amax() < 1e-9);
        // v(0) is the projected initial value, λ(T) vanishes
        let v0 = sys.lift_state(&sol.state, &p.tb, 0.0).unwrap();
        let proj = &p.state_bases.space.fem_coefficients
            * (p.state_bases.space.modes.transpose() * p.ops.mass_cholesky().transpose() * &p.x0);
        assert!((v0 - proj).amax() < 1e-12);
        let u_end = sys.lift_control(&sol.costate, &p.tb, &[1.0]).unwrap();
        assert!(u_end.values[0].amax() < 1e-10);
    }

    #[test]
    fn heavy_penalization_reproduces_uncontrolled_reduced_solution() {
        let p = problem(0.02, 6);
        let sys = system(&p, 0.02, 1e6);
        let sol = sys.solve().unwrap();
        let v0 = sys.initial_block.clone() * sys.state.boundary_values[0];
        let (free, _) = solve_reduced_forward(&sys.state, 0.02, &v0, 1e-11, 50).unwrap();
        let unc = unvec(free.as_slice(), 6);
        assert!((&sol.state - unc).amax() < 1e-5);
        let u = sys.lift_control(&sol.costate, &p.tb, &uniform_grid(29, 1.0)).unwrap();
        assert!(u.values.iter().all(|v| v.amax() < 1e-5));
    }

    #[test]
    fn lift_of_single_mode_costate() {
        let p = problem(0.05, 3);
        let sys = system(&p, 0.05, 0.5);
        let mut lam = DMatrix::zeros(3, 3);
        lam[(0, 0)] = 1.0;
        let times = [0.0, 0.37, 1.0];
        let u = sys.lift_control(&lam, &p.tb, &times).unwrap();
        let mode = p.adjoint_bases.space.fem_coefficients.column(0);
        for (k, &t) in times.iter().enumerate() {
            let phi = p.adjoint_bases.time.evaluate(&p.tb, t).unwrap()[0];
            assert!((&u.values[k] - mode * (phi / 0.5)).amax() < 1e-12);
        }
        let zero = sys.lift_control(&DMatrix::zeros(3, 3), &p.tb, &times).unwrap();
        assert!(zero.values.iter().all(|v| v.amax() == 0.0));
    }

    #[test]
    fn control_reduces_closed_loop_cost() {
        let nu = 0.02;
        let p = problem(nu, 8);
        let alpha = 1e-3;
        let sys = system(&p, nu, alpha);
        let sol = sys.solve().unwrap();
        let grid = uniform_grid(29, 1.0);
        let u = sys.lift_control(&sol.costate, &p.tb, &grid).unwrap();
        let target = vec![p.x0.clone(); grid.len()];
        let controlled = closed_loop_evaluate(&p.ops, nu, &p.x0, &u, &target, alpha, 29, 1.0).unwrap();
        let zero = ControlFunction::zeros(grid, 40);
        let free = closed_loop_evaluate(&p.ops, nu, &p.x0, &zero, &target, alpha, 29, 1.0).unwrap();
        assert_eq!(free.tracking, free.total);
        assert!(controlled.total < 0.7 * free.total, "{controlled:?} vs {free:?}");
    }
}
