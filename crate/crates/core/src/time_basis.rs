//! Hat-function Galerkin basis in time on `[0, T]`, boundary nodes included.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::cholesky_lower;

#[derive(Debug, Clone)]
pub struct TimeBasis {
    horizon: f64,
    nodes: Vec<f64>,
    delta: f64,
    mass: DMatrix<f64>,
    derivative: DMatrix<f64>,
    mass_chol: DMatrix<f64>,
}

impl TimeBasis {
    /// `s` equidistant nodes with `t_1 = 0` and `t_s = T`.
    pub fn new(horizon: f64, s: usize) -> Result<Self> {
        if horizon <= 0.0 || !horizon.is_finite() {
            return Err(invalid(format!("time horizon must be positive, got {horizon}")));
        }
        if s < 2 {
            return Err(invalid(format!("time basis needs at least 2 nodes, got {s}")));
        }
        let delta = horizon / (s - 1) as f64;
        let nodes: Vec<f64> = (0..s)
            .map(|j| if j == s - 1 { horizon } else { j as f64 * delta })
            .collect();

        let mut mass = DMatrix::zeros(s, s);
        let mut derivative = DMatrix::zeros(s, s);
        for e in 0..s - 1 {
            // element [t_e, t_{e+1}]; ∫ψ_a ψ_b and ∫ψ_a ψ_b'
            mass[(e, e)] += delta / 3.0;
            mass[(e + 1, e + 1)] += delta / 3.0;
            mass[(e, e + 1)] += delta / 6.0;
            mass[(e + 1, e)] += delta / 6.0;
            derivative[(e, e)] -= 0.5;
            derivative[(e, e + 1)] += 0.5;
            derivative[(e + 1, e)] -= 0.5;
            derivative[(e + 1, e + 1)] += 0.5;
        }
        let mass_chol = cholesky_lower(&mass, "time mass matrix")?;
        Ok(Self { horizon, nodes, delta, mass, derivative, mass_chol })
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `M_S = [∫ ψ_i ψ_j]`
    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    /// `dM_S = [∫ ψ_i ψ̇_j]`
    pub fn derivative(&self) -> &DMatrix<f64> {
        &self.derivative
    }

    /// `L_S` with `M_S = L_S L_Sᵀ`.
    pub fn mass_cholesky(&self) -> &DMatrix<f64> {
        &self.mass_chol
    }

    /// Element containing `t` and the local coordinate in `[0, 1]`.
    fn locate(&self, t: f64) -> (usize, f64) {
        let s = self.dim();
        let e = ((t / self.delta).floor() as usize).min(s - 2);
        let local = ((t - self.nodes[e]) / (self.nodes[e + 1] - self.nodes[e])).clamp(0.0, 1.0);
        (e, local)
    }

    /// `(ψ_1(t), …, ψ_s(t))`
    pub fn evaluate(&self, t: f64) -> Result<DVector<f64>> {
        // allow round-off at the end points
        let tol = 1e-12 * self.horizon;
        if !(t >= -tol && t <= self.horizon + tol) {
            return Err(Error::OutOfDomain { t, horizon: self.horizon });
        }
        let (e, local) = self.locate(t.clamp(0.0, self.horizon));
        let mut v = DVector::zeros(self.dim());
        v[e] = 1.0 - local;
        v[e + 1] += local;
        Ok(v)
    }

    /// Exact triple products of piecewise-linear functions given by nodal
    /// values (columns of `test`, `a`, `b`):
    /// `out[i][(j, k)] = ∫ test_i a_j b_k dt`.
    pub fn triple_products(
        &self,
        test: &DMatrix<f64>,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
    ) -> Vec<DMatrix<f64>> {
        let s = self.dim();
        assert!(test.nrows() == s && a.nrows() == s && b.nrows() == s);
        let mut out = vec![DMatrix::zeros(a.ncols(), b.ncols()); test.ncols()];
        for e in 0..s - 1 {
            let w = (self.nodes[e + 1] - self.nodes[e]) / 12.0;
            // ∫ f g h over a linear element with end values (0, 1):
            // w [3 f0g0h0 + f0g0h1 + f0g1h0 + f1g0h0 + f0g1h1 + f1g0h1 + f1g1h0 + 3 f1g1h1]
            for (i, out_i) in out.iter_mut().enumerate() {
                let (f0, f1) = (test[(e, i)], test[(e + 1, i)]);
                for j in 0..a.ncols() {
                    let (g0, g1) = (a[(e, j)], a[(e + 1, j)]);
                    let c00 = 3.0 * f0 * g0 + f0 * g1 + f1 * g0 + f1 * g1;
                    let c01 = f0 * g0 + f0 * g1 + f1 * g0 + 3.0 * f1 * g1;
                    for k in 0..b.ncols() {
                        out_i[(j, k)] += w * (c00 * b[(e, k)] + c01 * b[(e + 1, k)]);
                    }
                }
            }
        }
        out
    }

    /// `G = [∫ v_i(t) ψ_j(t) dt]` for a trajectory that is piecewise linear
    /// on an arbitrary increasing grid; integrated exactly.
    pub fn load_piecewise_linear(&self, times: &[f64], values: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(invalid("trajectory needs at least two instants with matching values"));
        }
        let q = values[0].len();
        let mut breaks: Vec<f64> = times
            .iter()
            .chain(self.nodes.iter())
            .copied()
            .filter(|&t| t >= times[0] && t <= times[times.len() - 1])
            .collect();
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * self.horizon);

        let interp = |t: f64, seg: &mut usize| -> DVector<f64> {
            while *seg + 2 < times.len() && times[*seg + 1] < t {
                *seg += 1;
            }
            let (t0, t1) = (times[*seg], times[*seg + 1]);
            let r = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            &values[*seg] * (1.0 - r) + &values[*seg + 1] * r
        };

        let mut g = DMatrix::zeros(q, self.dim());
        let mut seg = 0;
        for win in breaks.windows(2) {
            let (a, b) = (win[0], win[1]);
            if b - a <= 0.0 {
                continue;
            }
            let m = 0.5 * (a + b);
            let va = interp(a, &mut seg);
            let vm = interp(m, &mut seg);
            let vb = interp(b, &mut seg);
            let (e, _) = self.locate(m);
            // Simpson is exact for the quadratic product on [a, b]
            for node in [e, e + 1] {
                let hat = |t: f64| {
                    let r = (t - self.nodes[node]).abs() / self.delta;
                    (1.0 - r).max(0.0)
                };
                let mut col = g.column_mut(node);
                col.axpy((b - a) / 6.0 * hat(a), &va, 1.0);
                col.axpy((b - a) / 6.0 * 4.0 * hat(m), &vm, 1.0);
                col.axpy((b - a) / 6.0 * hat(b), &vb, 1.0);
            }
        }
        Ok(g)
    }
}
