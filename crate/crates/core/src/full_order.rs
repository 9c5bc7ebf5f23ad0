//! Semidiscrete full-order Burgers model: implicit Euler forward solves for
//! the state, backward solves for the adjoint, and cost evaluation.

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::fem_space::SpatialOperators;
use crate::linalg::{trapezoid_weights, Tridiagonal};

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    State,
    Adjoint,
}

/// Coefficient vectors on an increasing time grid, piecewise linear in between.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
    pub kind: TrajectoryKind,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// Linear interpolation in time.
    pub fn at(&self, t: f64) -> DVector<f64> {
        sample_piecewise_linear(&self.times, &self.values, t)
    }
}

/// Control as full FEM coefficients on a time grid, piecewise linear in time.
#[derive(Debug, Clone)]
pub struct ControlFunction {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl ControlFunction {
    pub fn zeros(times: Vec<f64>, q: usize) -> Self {
        let values = vec![DVector::zeros(q); times.len()];
        Self { times, values }
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        sample_piecewise_linear(&self.times, &self.values, t)
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }
}

fn sample_piecewise_linear(times: &[f64], values: &[DVector<f64>], t: f64) -> DVector<f64> {
    let n = times.len();
    if n == 1 || t <= times[0] {
        return values[0].clone();
    }
    if t >= times[n - 1] {
        return values[n - 1].clone();
    }
    let k = times.partition_point(|&s| s <= t).clamp(1, n - 1) - 1;
    let r = (t - times[k]) / (times[k + 1] - times[k]);
    &values[k] * (1.0 - r) + &values[k + 1] * r
}

/// Equidistant grid with `n_t` steps on `[0, T]`.
pub fn uniform_grid(n_t: usize, horizon: f64) -> Vec<f64> {
    (0..=n_t)
        .map(|j| if j == n_t { horizon } else { j as f64 * horizon / n_t as f64 })
        .collect()
}

/// `M_Y ẋ + ν K_Y x + H_Y(x) = M_Y u`
#[derive(Debug, Clone, Copy)]
pub struct BurgersModel<'a> {
    pub ops: &'a SpatialOperators,
    pub nu: f64,
    /// Test hook: drop the convection term to get the heat equation.
    pub nonlinear: bool,
}

impl<'a> BurgersModel<'a> {
    pub fn new(ops: &'a SpatialOperators, nu: f64) -> Self {
        Self { ops, nu, nonlinear: true }
    }

    pub fn linear(ops: &'a SpatialOperators, nu: f64) -> Self {
        Self { ops, nu, nonlinear: false }
    }

    fn convection(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.nonlinear {
            self.ops.convection.apply(x)
        } else {
            DVector::zeros(x.len())
        }
    }

    fn convection_jacobian(&self, x: &DVector<f64>) -> Tridiagonal {
        if self.nonlinear {
            self.ops.convection.jacobian(x)
        } else {
            Tridiagonal::constant(x.len(), 0.0, 0.0, 0.0, 1.0)
        }
    }

    /// `M_Y/δt + ν K_Y`
    fn step_matrix(&self, dt: f64) -> Tridiagonal {
        self.ops.mass.combine(1.0 / dt, &self.ops.stiffness, self.nu)
    }

    /// Jacobian of one implicit Euler step at `x`.
    pub fn step_jacobian(&self, x: &DVector<f64>, dt: f64) -> Tridiagonal {
        self.step_matrix(dt).combine(1.0, &self.convection_jacobian(x), 1.0)
    }

    /// Operator of one backward adjoint step, linearized at the frozen state `x`.
    pub fn adjoint_step_operator(&self, x: &DVector<f64>, dt: f64) -> Tridiagonal {
        self.step_matrix(dt)
            .combine(1.0, &self.convection_jacobian(x).transpose(), 1.0)
    }

    /// One implicit Euler step from `prev` with forcing `M_Y u`.
    fn step(&self, prev: &DVector<f64>, forcing: &DVector<f64>, dt: f64, step: usize) -> Result<DVector<f64>> {
        let mass_prev = self.ops.mass.mul_vec(prev) / dt;
        let base = self.step_matrix(dt);
        let mut x = prev.clone();
        let mut residual = f64::INFINITY;
        for iter in 0..NEWTON_MAX_ITER {
            let r = base.mul_vec(&x) + self.convection(&x) - &mass_prev - forcing;
            residual = r.amax();
            if residual < NEWTON_TOL {
                return Ok(x);
            }
            if !residual.is_finite() {
                return Err(Error::StepFailure { step, iterations: iter, residual });
            }
            let dx = self.step_jacobian(&x, dt).solve(&r)?;
            x -= dx;
        }
        Err(Error::StepFailure { step, iterations: NEWTON_MAX_ITER, residual })
    }

    /// Implicit Euler with `n_t` steps; Newton warm-started at the previous step.
    pub fn solve_state_forward(
        &self,
        x0: &DVector<f64>,
        control: Option<&ControlFunction>,
        n_t: usize,
        horizon: f64,
    ) -> Result<Trajectory> {
        let q = self.ops.dim();
        if n_t == 0 {
            return Err(invalid("at least one time step is required"));
        }
        if x0.len() != q {
            return Err(invalid(format!("initial value has length {}, expected {q}", x0.len())));
        }
        if let Some(u) = control {
            if u.dim() != q {
                return Err(invalid("control dimension does not match the FEM space"));
            }
        }
        let times = uniform_grid(n_t, horizon);
        let mut values = Vec::with_capacity(n_t + 1);
        values.push(x0.clone());
        for j in 0..n_t {
            let dt = times[j + 1] - times[j];
            let forcing = match control {
                Some(u) => self.ops.mass.mul_vec(&u.at(times[j + 1])),
                None => DVector::zeros(q),
            };
            let next = self.step(&values[j], &forcing, dt, j + 1)?;
            values.push(next);
        }
        Ok(Trajectory { times, values, kind: TrajectoryKind::State })
    }

    /// Backward implicit Euler for
    /// `−M_Y λ̇ + ν K_Y λ + DH(x)ᵀ λ + M_Y x = M_Y x*`, `λ(T) = 0`.
    pub fn solve_adjoint_backward(&self, state: &Trajectory, target: &[DVector<f64>]) -> Result<Trajectory> {
        let n = state.len();
        if n < 2 || target.len() != n {
            return Err(invalid(format!(
                "adjoint solve: {} state instants but {} target instants",
                n,
                target.len()
            )));
        }
        let q = self.ops.dim();
        if state.dim() != q || target.iter().any(|t| t.len() != q) {
            return Err(invalid("adjoint solve: dimension mismatch"));
        }
        let mut values = vec![DVector::zeros(q); n];
        for j in (0..n - 1).rev() {
            let dt = state.times[j + 1] - state.times[j];
            let x = &state.values[j];
            let rhs = self.ops.mass.mul_vec(&values[j + 1]) / dt
                + self.ops.mass.mul_vec(&(&target[j] - x));
            values[j] = self.adjoint_step_operator(x, dt).solve(&rhs)?;
        }
        Ok(Trajectory { times: state.times.clone(), values, kind: TrajectoryKind::Adjoint })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cost {
    /// `½‖x − x*‖²`
    pub tracking: f64,
    /// `tracking + α/2 ‖u‖²`
    pub total: f64,
}

/// Space: `M_Y`; time: trapezoidal weights on the state grid.
pub fn evaluate_cost(
    ops: &SpatialOperators,
    state: &Trajectory,
    target: &[DVector<f64>],
    control: Option<&ControlFunction>,
    alpha: f64,
) -> Result<Cost> {
    if target.len() != state.len() {
        return Err(invalid("target must be sampled on the state grid"));
    }
    let w = trapezoid_weights(&state.times);
    let mut tracking = 0.0;
    let mut effort = 0.0;
    for (j, (&tj, x)) in state.times.iter().zip(&state.values).enumerate() {
        tracking += 0.5 * w[j] * ops.mass_norm_sq(&(x - &target[j]));
        if let Some(u) = control {
            effort += 0.5 * alpha * w[j] * ops.mass_norm_sq(&u.at(tj));
        }
    }
    Ok(Cost { tracking, total: tracking + effort })
}
