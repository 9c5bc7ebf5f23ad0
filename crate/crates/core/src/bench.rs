//! Experiment pipelines, parameter sweeps and result tables.

use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Deserialize;

use crate::baseline::{
    bfgs_minimize, classical_pod, snapshot_matrix, BfgsOutcome, BfgsStatus, ReducedLagrangianProblem, StopCriteria,
};
use crate::control::{closed_loop_evaluate, OptimalitySystem};
use crate::error::{Error, Result};
use crate::fem_space::{step_initial_value, FemSpace, SpatialOperators};
use crate::full_order::{BurgersModel, ControlFunction, Cost, Trajectory};
use crate::measurements::{measure_trajectory, MeasurementMatrix};
use crate::pod::{ReducedBases, TimeMode};
use crate::time_basis::TimeBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ModeCount,
    Distribution,
    Viscosity,
    Alpha,
    Baseline,
    BaselineTolerance,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementChoice {
    /// state bases from state data, adjoint bases from adjoint data
    Separate,
    /// both bases from state data
    #[serde(alias = "adjoint-from-state")]
    #[value(alias = "adjoint-from-state")]
    StateOnly,
    /// both bases from state and adjoint data
    #[default]
    Combined,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub q: usize,
    pub s: usize,
    pub p: usize,
    pub r: usize,
    pub qhat: usize,
    pub shat: usize,
    pub phat: usize,
    pub rhat: usize,
    pub nu: f64,
    pub alpha: f64,
    pub horizon: f64,
    pub length: f64,
    /// full-order implicit Euler steps; `10 (s − 1)` if absent
    pub n_t: Option<usize>,
    pub experiment: ExperimentKind,
    pub measurements: MeasurementChoice,
    /// `K̂` values, split evenly into `q̂ = ŝ = p̂ = r̂ = K̂/4`
    pub mode_counts: Vec<usize>,
    /// `(q̂, ŝ)` pairs, with `(p̂, r̂) = (q̂, ŝ)`
    pub distributions: Vec<[usize; 2]>,
    pub viscosities: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `q̂ = n_t` values of the baseline
    pub baseline_dims: Vec<usize>,
    /// objective targets per baseline dimension; computed from space-time
    /// runs at `K̂ = 4 q̂` if absent
    pub baseline_targets: Option<Vec<f64>>,
    pub baseline_tolerances: Vec<f64>,
    pub baseline_tolerance_dim: usize,
    pub bfgs_max_iterations: usize,
    /// use the `M_Y`-weighted snapshot SVD in the baseline
    pub baseline_mass_weighted: bool,
    pub reps: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            q: 220,
            s: 120,
            p: 220,
            r: 120,
            qhat: 12,
            shat: 12,
            phat: 12,
            rhat: 12,
            nu: 5e-3,
            alpha: 1e-3,
            horizon: 1.0,
            length: 1.0,
            n_t: None,
            experiment: ExperimentKind::Single,
            measurements: MeasurementChoice::Combined,
            mode_counts: vec![24, 36, 48, 72, 96],
            distributions: vec![[18, 6], [17, 7], [16, 8], [14, 10], [12, 12], [10, 14], [8, 16]],
            viscosities: vec![5e-4, 1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2, 3.2e-2],
            alphas: vec![2.5e-4, 5e-4, 1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2],
            baseline_dims: vec![6, 9, 12, 18, 24],
            baseline_targets: None,
            baseline_tolerances: vec![1e-2, 5e-3, 1e-3, 5e-4, 1e-4, 5e-5, 1e-5],
            baseline_tolerance_dim: 18,
            bfgs_max_iterations: 1000,
            baseline_mass_weighted: false,
            reps: 5,
            seed: 0,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn full_steps(&self) -> usize {
        self.n_t.unwrap_or(10 * self.s.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        if [self.q, self.s, self.qhat, self.shat, self.phat, self.rhat, self.reps].contains(&0) {
            return bad("all dimensions and the repetition count must be at least 1".into());
        }
        if self.s < 2 || self.full_steps() == 0 {
            return bad("the time grid needs at least two nodes".into());
        }
        if self.p != self.q || self.r != self.s {
            return bad("the adjoint must use the state discretization (p = q, r = s)".into());
        }
        let spacetime = |qh: usize, sh: usize| qh <= self.q && sh <= self.s && qh > 0 && sh > 0;
        if !(self.nu > 0.0 && self.alpha > 0.0 && self.horizon > 0.0 && self.length > 0.0) {
            return bad("nu, alpha, horizon and length must be positive".into());
        }
        let ok = match self.experiment {
            ExperimentKind::Single => spacetime(self.qhat, self.shat) && spacetime(self.phat, self.rhat),
            ExperimentKind::ModeCount => {
                !self.mode_counts.is_empty()
                    && self.mode_counts.iter().all(|&k| k % 4 == 0 && spacetime(k / 4, k / 4))
            }
            ExperimentKind::Distribution => {
                !self.distributions.is_empty() && self.distributions.iter().all(|d| spacetime(d[0], d[1]))
            }
            ExperimentKind::Viscosity => {
                !self.viscosities.is_empty()
                    && self.viscosities.iter().all(|&v| v > 0.0)
                    && spacetime(self.qhat, self.shat)
                    && spacetime(self.phat, self.rhat)
            }
            ExperimentKind::Alpha => {
                !self.alphas.is_empty()
                    && self.alphas.iter().all(|&a| a > 0.0)
                    && spacetime(self.qhat, self.shat)
                    && spacetime(self.phat, self.rhat)
            }
            ExperimentKind::Baseline => {
                !self.baseline_dims.is_empty()
                    && self.baseline_dims.iter().all(|&d| d >= 1 && d <= self.q.min(self.s))
                    && self
                        .baseline_targets
                        .as_ref()
                        .is_none_or(|t| t.len() == self.baseline_dims.len())
            }
            ExperimentKind::BaselineTolerance => {
                !self.baseline_tolerances.is_empty()
                    && self.baseline_tolerances.iter().all(|&t| t > 0.0)
                    && self.baseline_tolerance_dim >= 1
                    && self.baseline_tolerance_dim <= self.q.min(self.s)
            }
        };
        if !ok {
            return bad(format!("sweep grid of {:?} is empty or out of range", self.experiment));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    /// column label of the markdown table
    pub label: String,
    pub khat: usize,
    pub qhat: usize,
    pub shat: usize,
    pub phat: usize,
    pub rhat: usize,
    pub nu: f64,
    pub alpha: f64,
    pub tracking: f64,
    pub cost: f64,
    pub walltime_s: f64,
    pub iters: usize,
    pub status: String,
}

impl ResultRow {
    pub fn solved(&self) -> bool {
        self.status == "ok"
    }
}

/// Full-order data shared by all sweep points with the same viscosity.
#[derive(Debug, Clone)]
pub struct ProblemSetup {
    pub ops: SpatialOperators,
    pub tb: TimeBasis,
    pub nu: f64,
    pub n_t: usize,
    pub horizon: f64,
    pub x0: DVector<f64>,
    /// `x* = x₀` at every full-order instant
    pub target_samples: Vec<DVector<f64>>,
    pub target: MeasurementMatrix,
    pub uncontrolled: Trajectory,
    pub adjoint: Trajectory,
    pub state_measurement: MeasurementMatrix,
    pub adjoint_measurement: MeasurementMatrix,
}

impl ProblemSetup {
    pub fn new(cfg: &ExperimentConfig, nu: f64) -> Result<Self> {
        let space = FemSpace::new(cfg.length, cfg.q)?;
        let ops = SpatialOperators::assemble(&space)?;
        let tb = TimeBasis::new(cfg.horizon, cfg.s)?;
        let n_t = cfg.full_steps();
        let x0 = ops.space.interpolate(|xi| step_initial_value(xi / cfg.length));
        let model = BurgersModel::new(&ops, nu);
        let uncontrolled = model.solve_state_forward(&x0, None, n_t, cfg.horizon)?;
        let target_samples = vec![x0.clone(); n_t + 1];
        let adjoint = model.solve_adjoint_backward(&uncontrolled, &target_samples)?;
        let state_measurement = measure_trajectory(&uncontrolled, &ops, &tb)?;
        let adjoint_measurement = measure_trajectory(&adjoint, &ops, &tb)?;
        // hat functions reproduce constants, so a constant target has constant coefficients
        let target = MeasurementMatrix::from_coefficients(DMatrix::from_fn(cfg.q, cfg.s, |i, _| x0[i]), &ops, &tb)?;
        Ok(Self {
            ops,
            tb,
            nu,
            n_t,
            horizon: cfg.horizon,
            x0,
            target_samples,
            target,
            uncontrolled,
            adjoint,
            state_measurement,
            adjoint_measurement,
        })
    }

    pub fn zero_control_cost(&self) -> Result<Cost> {
        let zero = ControlFunction::zeros(self.uncontrolled.times.clone(), self.ops.dim());
        closed_loop_evaluate(&self.ops, self.nu, &self.x0, &zero, &self.target_samples, 1.0, self.n_t, self.horizon)
    }

    pub fn bases(&self, choice: MeasurementChoice, dims: [usize; 4]) -> Result<(ReducedBases, ReducedBases)> {
        let [qh, sh, ph, rh] = dims;
        let (x, l) = (&self.state_measurement, &self.adjoint_measurement);
        let (state_parts, adjoint_parts): (Vec<&MeasurementMatrix>, Vec<&MeasurementMatrix>) = match choice {
            MeasurementChoice::Separate => (vec![x], vec![l]),
            MeasurementChoice::StateOnly => (vec![x], vec![x]),
            MeasurementChoice::Combined => (vec![x, l], vec![x, l]),
        };
        let state = ReducedBases::from_measurements(&state_parts, qh, sh, TimeMode::InitialValue, &self.ops, &self.tb)?;
        let adjoint =
            ReducedBases::from_measurements(&adjoint_parts, ph, rh, TimeMode::TerminalValue, &self.ops, &self.tb)?;
        Ok((state, adjoint))
    }
}

/// Everything produced by one space-time run.
#[derive(Debug, Clone)]
pub struct SpaceTimeRun {
    pub system: OptimalitySystem,
    pub control: ControlFunction,
    pub cost: Cost,
    pub iterations: usize,
    pub walltime: Duration,
    pub closed_loop: Trajectory,
}

pub fn run_space_time(
    setup: &ProblemSetup,
    choice: MeasurementChoice,
    dims: [usize; 4],
    alpha: f64,
    reps: usize,
) -> Result<SpaceTimeRun> {
    let (sb, ab) = setup.bases(choice, dims)?;
    let system = OptimalitySystem::build(&sb, &ab, &setup.ops, &setup.tb, setup.nu, alpha, &setup.x0, &setup.target)?
        .with_initial_guess(&setup.state_measurement, &setup.ops, &setup.tb);
    let mut best = system.solve()?;
    for _ in 1..reps.max(1) {
        let again = system.solve()?;
        if again.diagnostics.walltime < best.diagnostics.walltime {
            best = again;
        }
    }
    let control = system.lift_control(&best.costate, &setup.tb, &setup.uncontrolled.times)?;
    let closed_loop =
        BurgersModel::new(&setup.ops, setup.nu).solve_state_forward(&setup.x0, Some(&control), setup.n_t, setup.horizon)?;
    let cost = crate::full_order::evaluate_cost(&setup.ops, &closed_loop, &setup.target_samples, Some(&control), alpha)?;
    Ok(SpaceTimeRun {
        system,
        control,
        cost,
        iterations: best.diagnostics.iterations,
        walltime: best.diagnostics.walltime,
        closed_loop,
    })
}

/// Everything produced by one baseline run.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub outcome: BfgsOutcome,
    pub control: ControlFunction,
    pub cost: Cost,
}

pub fn run_baseline(
    setup: &ProblemSetup,
    qhat: usize,
    n_steps: usize,
    alpha: f64,
    stop: StopCriteria,
    mass_weighted: bool,
) -> Result<BaselineRun> {
    // one snapshot per node of the time grid
    let samples: Vec<DVector<f64>> = setup.tb.nodes().iter().map(|&t| setup.uncontrolled.at(t)).collect();
    let snapshots = snapshot_matrix(&samples);
    let basis = classical_pod(&snapshots, qhat, mass_weighted.then_some(&setup.ops))?;
    let target = vec![setup.x0.clone(); n_steps + 1];
    let prob =
        ReducedLagrangianProblem::new(&basis, &setup.ops, setup.nu, alpha, &setup.x0, &target, n_steps, setup.horizon)?;
    let outcome = bfgs_minimize(&prob, &DVector::zeros(prob.control_dim()), stop)?;
    let control = prob.lift(&outcome.u);
    let cost = closed_loop_evaluate(
        &setup.ops,
        setup.nu,
        &setup.x0,
        &control,
        &setup.target_samples,
        alpha,
        setup.n_t,
        setup.horizon,
    )?;
    Ok(BaselineRun { outcome, control, cost })
}

#[derive(Debug, Clone)]
enum Point {
    SpaceTime { label: String, dims: [usize; 4], nu: f64, alpha: f64 },
    Baseline { label: String, dim: usize, nu: f64, alpha: f64, stop: StopCriteria },
}

fn space_time_points(cfg: &ExperimentConfig) -> Vec<Point> {
    let base = [cfg.qhat, cfg.shat, cfg.phat, cfg.rhat];
    let st = |label: String, dims, nu, alpha| Point::SpaceTime { label, dims, nu, alpha };
    match cfg.experiment {
        ExperimentKind::Single => vec![st("single".into(), base, cfg.nu, cfg.alpha)],
        ExperimentKind::ModeCount => cfg
            .mode_counts
            .iter()
            .map(|&k| st(format!("{k}"), [k / 4; 4], cfg.nu, cfg.alpha))
            .collect(),
        ExperimentKind::Distribution => cfg
            .distributions
            .iter()
            .map(|&[q, s]| st(format!("({q},{s})"), [q, s, q, s], cfg.nu, cfg.alpha))
            .collect(),
        ExperimentKind::Viscosity => {
            cfg.viscosities.iter().map(|&nu| st(format!("{nu:e}"), base, nu, cfg.alpha)).collect()
        }
        ExperimentKind::Alpha => cfg.alphas.iter().map(|&a| st(format!("{a:e}"), base, cfg.nu, a)).collect(),
        ExperimentKind::Baseline | ExperimentKind::BaselineTolerance => Vec::new(),
    }
}

fn space_time_row(setup: &ProblemSetup, cfg: &ExperimentConfig, label: String, dims: [usize; 4], alpha: f64) -> ResultRow {
    let mut row = ResultRow {
        label,
        khat: dims.iter().sum(),
        qhat: dims[0],
        shat: dims[1],
        phat: dims[2],
        rhat: dims[3],
        nu: setup.nu,
        alpha,
        tracking: f64::NAN,
        cost: f64::NAN,
        walltime_s: f64::NAN,
        iters: 0,
        status: String::from("ok"),
    };
    match run_space_time(setup, cfg.measurements, dims, alpha, cfg.reps) {
        Ok(run) => {
            row.tracking = run.cost.tracking;
            row.cost = run.cost.total;
            row.walltime_s = run.walltime.as_secs_f64();
            row.iters = run.iterations;
        }
        Err(e) => row.status = failure_status(&e),
    }
    row
}

fn failure_status(e: &Error) -> String {
    let msg = e.to_string().replace([',', '\n'], ";");
    format!("failed: {msg}")
}

fn baseline_row(setup: &ProblemSetup, cfg: &ExperimentConfig, label: String, dim: usize, alpha: f64, stop: StopCriteria) -> ResultRow {
    let mut row = ResultRow {
        label,
        khat: 4 * dim,
        qhat: dim,
        shat: dim,
        phat: dim,
        rhat: dim,
        nu: setup.nu,
        alpha,
        tracking: f64::NAN,
        cost: f64::NAN,
        walltime_s: f64::NAN,
        iters: 0,
        status: String::from("ok"),
    };
    match run_baseline(setup, dim, dim, alpha, stop, cfg.baseline_mass_weighted) {
        Ok(run) => {
            row.tracking = run.cost.tracking;
            row.cost = run.cost.total;
            row.walltime_s = run.outcome.walltime.as_secs_f64();
            row.iters = run.outcome.iterations;
            row.status = match run.outcome.status {
                BfgsStatus::TargetReached | BfgsStatus::GradientTolerance => "ok".into(),
                BfgsStatus::MaxIterations => "max-iterations".into(),
                BfgsStatus::LineSearchFailed => "line-search-failed".into(),
            };
        }
        Err(e) => row.status = failure_status(&e),
    }
    row
}

/// Runs the configured sweep. Per-point failures are recorded in the rows;
/// only an invalid configuration or a failing full-order setup is an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut points = space_time_points(cfg);
    match cfg.experiment {
        ExperimentKind::Baseline => {
            let targets = match &cfg.baseline_targets {
                Some(t) => t.clone(),
                None => {
                    let setup = ProblemSetup::new(cfg, cfg.nu)?;
                    cfg.baseline_dims
                        .par_iter()
                        .map(|&d| {
                            let dims = [d.min(cfg.s); 4];
                            let row = space_time_row(&setup, cfg, String::new(), dims, cfg.alpha);
                            if row.solved() {
                                Ok(row.cost)
                            } else {
                                Err(Error::InvalidConfiguration(format!(
                                    "no space-time reference objective for q̂ = {d}: {}",
                                    row.status
                                )))
                            }
                        })
                        .collect::<Result<Vec<_>>>()?
                }
            };
            points.extend(cfg.baseline_dims.iter().zip(targets).map(|(&dim, target)| Point::Baseline {
                label: format!("{dim}"),
                dim,
                nu: cfg.nu,
                alpha: cfg.alpha,
                stop: StopCriteria {
                    target_objective: Some(target),
                    gradient_tolerance: None,
                    max_iterations: cfg.bfgs_max_iterations,
                },
            }));
        }
        ExperimentKind::BaselineTolerance => {
            points.extend(cfg.baseline_tolerances.iter().map(|&tol| Point::Baseline {
                label: format!("{tol:e}"),
                dim: cfg.baseline_tolerance_dim,
                nu: cfg.nu,
                alpha: cfg.alpha,
                stop: StopCriteria {
                    target_objective: None,
                    gradient_tolerance: Some(tol),
                    max_iterations: cfg.bfgs_max_iterations,
                },
            }));
        }
        _ => {}
    }

    let mut viscosities: Vec<f64> = points
        .iter()
        .map(|p| match p {
            Point::SpaceTime { nu, .. } | Point::Baseline { nu, .. } => *nu,
        })
        .collect();
    viscosities.sort_by(f64::total_cmp);
    viscosities.dedup();
    let setups: Vec<ProblemSetup> =
        viscosities.par_iter().map(|&nu| ProblemSetup::new(cfg, nu)).collect::<Result<_>>()?;
    let setup_for = |nu: f64| &setups[viscosities.iter().position(|&v| v == nu).expect("setup exists")];

    Ok(points
        .into_par_iter()
        .map(|p| match p {
            Point::SpaceTime { label, dims, nu, alpha } => space_time_row(setup_for(nu), cfg, label, dims, alpha),
            Point::Baseline { label, dim, nu, alpha, stop } => baseline_row(setup_for(nu), cfg, label, dim, alpha, stop),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TableFormat {
    Csv,
    Markdown,
}

pub const CSV_HEADER: &str = "khat,qhat,shat,phat,rhat,nu,alpha,tracking,J,walltime_s,iters,status";

pub fn write_table(rows: &[ResultRow], format: TableFormat, out: &mut impl Write) -> Result<()> {
    match format {
        TableFormat::Csv => {
            writeln!(out, "{CSV_HEADER}")?;
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.khat, r.qhat, r.shat, r.phat, r.rhat, r.nu, r.alpha, r.tracking, r.cost, r.walltime_s, r.iters, r.status
                )?;
            }
        }
        TableFormat::Markdown => {
            write!(out, "| |")?;
            for r in rows {
                write!(out, " {} |", r.label)?;
            }
            writeln!(out)?;
            writeln!(out, "|---|{}", "---|".repeat(rows.len()))?;
            let line = |out: &mut dyn Write, name: &str, f: &dyn Fn(&ResultRow) -> String| -> std::io::Result<()> {
                write!(out, "| {name} |")?;
                for r in rows {
                    write!(out, " {} |", f(r))?;
                }
                writeln!(out)
            };
            line(out, "½‖x̂ − x₀‖²", &|r| format!("{:.4}", r.tracking))?;
            line(out, "J(x̂, û)", &|r| format!("{:.4}", r.cost))?;
            line(out, "walltime [s]", &|r| format!("{:.3}", r.walltime_s))?;
            line(out, "iterations", &|r| r.iters.to_string())?;
            line(out, "status", &|r| r.status.clone())?;
        }
    }
    Ok(())
}

/// Writes the table to `path`.
pub fn emit_table(rows: &[ResultRow], format: TableFormat, path: &std::path::Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_table(rows, format, &mut f)?;
    f.flush()?;
    Ok(())
}
