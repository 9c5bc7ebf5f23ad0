//! Method-of-lines comparison: snapshot POD in space, implicit Euler in time,
//! adjoint gradients and BFGS on the discrete control.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::fem_space::SpatialOperators;
use crate::full_order::{uniform_grid, ControlFunction};
use crate::galerkin::project_convection;
use crate::linalg::leading_left_singular;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone)]
pub struct ClassicalPodBasis {
    /// `U`, q × q̂: state is approximated by `U x̂`
    pub modes: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// true if `UᵀMU = I`, false if `UᵀU = I`
    pub mass_weighted: bool,
}

/// Leading left singular vectors of the snapshot matrix. With `weighting`
/// the SVD is taken of `L_Yᵀ X` and the modes are mapped back by `L_Y⁻ᵀ`.
pub fn classical_pod(snapshots: &DMatrix<f64>, qhat: usize, weighting: Option<&SpatialOperators>) -> Result<ClassicalPodBasis> {
    let q = snapshots.nrows();
    if qhat == 0 || qhat > q {
        return Err(invalid(format!("POD dimension {qhat} not in 1..={q}")));
    }
    match weighting {
        None => {
            let (modes, singular_values) = leading_left_singular(snapshots, qhat)?;
            Ok(ClassicalPodBasis { modes, singular_values, mass_weighted: false })
        }
        Some(ops) => {
            let l = ops.mass_cholesky();
            let (w, singular_values) = leading_left_singular(&(l.transpose() * snapshots), qhat)?;
            let modes = crate::linalg::solve_lower_transpose(l, &w);
            Ok(ClassicalPodBasis { modes, singular_values, mass_weighted: true })
        }
    }
}

/// Snapshot matrix `[x(t_0), …]` from trajectory values.
pub fn snapshot_matrix(values: &[DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_columns(values)
}

/// Reduced, fully discrete control problem
/// `min Σ_j δt (½ x̂ⱼᵀ M̂ x̂ⱼ − x̂*ⱼᵀ x̂ⱼ + c*ⱼ + α/2 ûⱼᵀ M̂ ûⱼ)` subject to
/// `M̂ (x̂_{j+1} − x̂_j)/δt + ν K̂ x̂_{j+1} + Ĥ(x̂_{j+1}) = M̂ û_{j+1}`.
///
/// `x̂*ⱼ = Uᵀ M x*ⱼ` and `c*ⱼ = ½ x*ⱼᵀ M x*ⱼ`, so the tracking term equals
/// `½‖U x̂ⱼ − x*ⱼ‖²_M`.
#[derive(Debug, Clone)]
pub struct ReducedLagrangianProblem {
    pub modes: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    /// `Ĥ(x̂)_l = x̂ᵀ S_l x̂`
    pub convection: Vec<DMatrix<f64>>,
    pub target: Vec<DVector<f64>>,
    pub target_energy: Vec<f64>,
    pub x0: DVector<f64>,
    pub nu: f64,
    pub alpha: f64,
    pub dt: f64,
    pub n_t: usize,
    pub horizon: f64,
    pub nonlinear: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfgsStatus {
    TargetReached,
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, Copy)]
pub struct StopCriteria {
    pub target_objective: Option<f64>,
    pub gradient_tolerance: Option<f64>,
    pub max_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub u: DVector<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub walltime: Duration,
    pub status: BfgsStatus,
    /// objective at every accepted iterate, starting with `u0`
    pub history: Vec<f64>,
}

impl ReducedLagrangianProblem {
    /// `target` holds `x*` at the `n_t + 1` instants of the uniform grid.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        basis: &ClassicalPodBasis,
        ops: &SpatialOperators,
        nu: f64,
        alpha: f64,
        x0: &DVector<f64>,
        target: &[DVector<f64>],
        n_t: usize,
        horizon: f64,
    ) -> Result<Self> {
        let u = &basis.modes;
        if u.nrows() != ops.dim() || x0.len() != ops.dim() {
            return Err(invalid("POD basis does not match the FEM space"));
        }
        if n_t == 0 || target.len() != n_t + 1 {
            return Err(invalid(format!("need {} target samples, got {}", n_t + 1, target.len())));
        }
        let m = ops.mass_dense();
        let mass = u.transpose() * m * u;
        let mass_chol = mass.clone().cholesky().ok_or(Error::NotPositiveDefinite("reduced POD mass"))?;
        Ok(Self {
            mass,
            stiffness: u.transpose() * ops.stiffness.to_dense() * u,
            convection: project_convection(ops, u, u, u),
            target: target.iter().map(|x| u.transpose() * (m * x)).collect(),
            target_energy: target.iter().map(|x| 0.5 * ops.mass_norm_sq(x)).collect(),
            x0: mass_chol.solve(&(u.transpose() * (m * x0))),
            modes: u.clone(),
            nu,
            alpha,
            dt: horizon / n_t as f64,
            n_t,
            horizon,
            nonlinear: true,
        })
    }

    pub fn linear(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    pub fn reduced_dim(&self) -> usize {
        self.mass.nrows()
    }

    /// Length of the control vector `(û_0, …, û_{n_t})`.
    pub fn control_dim(&self) -> usize {
        (self.n_t + 1) * self.reduced_dim()
    }

    fn control_at<'a>(&self, u: &'a DVector<f64>, j: usize) -> nalgebra::DVectorView<'a, f64> {
        let k = self.reduced_dim();
        u.rows(j * k, k)
    }

    fn h(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.reduced_dim(), self.convection.iter().map(|s| x.dot(&(s * x))))
    }

    fn dh(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let k = self.reduced_dim();
        let mut j = DMatrix::zeros(k, k);
        for (l, s) in self.convection.iter().enumerate() {
            j.row_mut(l).copy_from(&((s + s.transpose()) * x).transpose());
        }
        j
    }

    /// `M̂/δt + νK̂ + DĤ(x)`
    fn step_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut a = &self.mass / self.dt + self.nu * &self.stiffness;
        if self.nonlinear {
            a += self.dh(x);
        }
        a
    }

    /// Reduced implicit Euler trajectory `x̂_0, …, x̂_{n_t}`.
    pub fn forward(&self, u: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        if u.len() != self.control_dim() {
            return Err(invalid("control vector has wrong length"));
        }
        let linear = &self.mass / self.dt + self.nu * &self.stiffness;
        let mut xs = Vec::with_capacity(self.n_t + 1);
        xs.push(self.x0.clone());
        for j in 0..self.n_t {
            let rhs = &self.mass * (&xs[j] / self.dt + self.control_at(u, j + 1));
            let mut x = xs[j].clone();
            let mut done = false;
            let mut res = f64::INFINITY;
            for _ in 0..NEWTON_MAX_ITER {
                let mut r = &linear * &x - &rhs;
                if self.nonlinear {
                    r += self.h(&x);
                }
                res = r.amax();
                if res < NEWTON_TOL * (1.0 + rhs.amax()) {
                    done = true;
                    break;
                }
                let dx = self.step_jacobian(&x).lu().solve(&r).ok_or(Error::Singular("reduced Euler step"))?;
                x -= dx;
            }
            if !done {
                return Err(Error::StepFailure { step: j + 1, iterations: NEWTON_MAX_ITER, residual: res });
            }
            xs.push(x);
        }
        Ok(xs)
    }

    fn objective_from(&self, xs: &[DVector<f64>], u: &DVector<f64>) -> f64 {
        let mut j = 0.0;
        for (k, x) in xs.iter().enumerate() {
            let uk = self.control_at(u, k);
            j += self.dt
                * (0.5 * x.dot(&(&self.mass * x)) - self.target[k].dot(x)
                    + self.target_energy[k]
                    + 0.5 * self.alpha * uk.dot(&(&self.mass * uk)));
        }
        j
    }

    pub fn objective(&self, u: &DVector<f64>) -> Result<f64> {
        Ok(self.objective_from(&self.forward(u)?, u))
    }

    /// Objective and its gradient by one backward sweep of the discrete
    /// adjoint.
    pub fn objective_and_gradient(&self, u: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let xs = self.forward(u)?;
        let value = self.objective_from(&xs, u);
        let k = self.reduced_dim();
        let mut grad = DVector::zeros(self.control_dim());
        let mut next: Option<DVector<f64>> = None;
        for j in (1..=self.n_t).rev() {
            let mut rhs = -self.dt * (&self.mass * &xs[j] - &self.target[j]);
            if let Some(l) = &next {
                rhs += &self.mass * l / self.dt;
            }
            let lam = self
                .step_jacobian(&xs[j])
                .transpose()
                .lu()
                .solve(&rhs)
                .ok_or(Error::Singular("reduced adjoint step"))?;
            let g = self.dt * self.alpha * (&self.mass * self.control_at(u, j)) - &self.mass * &lam;
            grad.rows_mut(j * k, k).copy_from(&g);
            next = Some(lam);
        }
        let g0 = self.dt * self.alpha * (&self.mass * self.control_at(u, 0));
        grad.rows_mut(0, k).copy_from(&g0);
        Ok((value, grad))
    }

    /// Full-order control `U û_j` at the coarse instants, linear in between.
    pub fn lift(&self, u: &DVector<f64>) -> ControlFunction {
        let times = uniform_grid(self.n_t, self.horizon);
        let values = (0..=self.n_t).map(|j| &self.modes * self.control_at(u, j)).collect();
        ControlFunction { times, values }
    }
}

/// Dense BFGS on the inverse Hessian with Armijo backtracking.
pub fn bfgs_minimize(prob: &ReducedLagrangianProblem, u0: &DVector<f64>, stop: StopCriteria) -> Result<BfgsOutcome> {
    const ARMIJO: f64 = 1e-4;
    const MAX_HALVINGS: usize = 40;
    let start = Instant::now();
    let n = u0.len();
    let mut u = u0.clone();
    let (mut f, mut g) = prob.objective_and_gradient(&u)?;
    let mut history = vec![f];
    let identity_scaled = |g: &DVector<f64>| DMatrix::identity(n, n) / g.norm().max(f64::MIN_POSITIVE);
    let mut hinv = identity_scaled(&g);
    let mut iterations = 0;
    let status = loop {
        if stop.target_objective.is_some_and(|t| f <= t) {
            break BfgsStatus::TargetReached;
        }
        if stop.gradient_tolerance.is_some_and(|t| g.amax() <= t) {
            break BfgsStatus::GradientTolerance;
        }
        if iterations >= stop.max_iterations {
            break BfgsStatus::MaxIterations;
        }
        let mut d = -(&hinv * &g);
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            hinv = identity_scaled(&g);
            d = -(&hinv * &g);
            slope = g.dot(&d);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &u + t * &d;
            if let Ok(ft) = prob.objective(&trial) {
                if ft <= f + ARMIJO * t * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((un, _)) = accepted else {
            break BfgsStatus::LineSearchFailed;
        };
        let (fn_, gn) = prob.objective_and_gradient(&un)?;
        let s = &un - &u;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 0.0 {
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let yhy = y.dot(&hy);
            hinv -= rho * (&hy * s.transpose() + &s * hy.transpose());
            hinv += (rho * rho * yhy + rho) * (&s * s.transpose());
        }
        u = un;
        f = fn_;
        g = gn;
        history.push(f);
        iterations += 1;
    };
    Ok(BfgsOutcome {
        gradient_norm: g.amax(),
        u,
        objective: f,
        iterations,
        walltime: start.elapsed(),
        status,
        history,
    })
}
