//! Piecewise-linear finite elements on `(0, L)` with homogeneous Dirichlet data.
//!
//! The basis consists of the `q` interior hat functions on an equidistant
//! grid; the boundary nodes carry no unknowns.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::{cholesky_lower, Tridiagonal};

/// Three-point Gauss–Legendre rule on `[-1, 1]`.
pub(crate) const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct FemSpace {
    length: f64,
    nodes: Vec<f64>,
    h: f64,
}

impl FemSpace {
    /// Equidistant grid with `q` interior nodes `ξ_i = i L / (q + 1)`.
    pub fn new(length: f64, q: usize) -> Result<Self> {
        if length <= 0.0 || !length.is_finite() {
            return Err(invalid(format!("domain length must be positive, got {length}")));
        }
        if q == 0 {
            return Err(invalid("at least one interior node is required"));
        }
        let h = length / (q as f64 + 1.0);
        let nodes = (1..=q).map(|i| i as f64 * h).collect();
        Ok(Self { length, nodes, h })
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of cells, `q + 1`.
    pub fn cells(&self) -> usize {
        self.nodes.len() + 1
    }

    /// Value of the `i`-th interior hat function at `xi`.
    pub fn hat(&self, i: usize, xi: f64) -> f64 {
        let r = (xi - self.nodes[i]).abs() / self.h;
        if r < 1.0 {
            1.0 - r
        } else {
            0.0
        }
    }

    /// Evaluates `Σ c_i ν_i(ξ)` and its derivative.
    pub fn eval_with_derivative(&self, coeffs: &DVector<f64>, xi: f64) -> (f64, f64) {
        let q = self.dim();
        let cell = ((xi / self.h).floor() as isize).clamp(0, q as isize) as usize;
        // cell `e` spans global nodes e and e + 1; interior index is global - 1
        let left = if cell >= 1 { coeffs[cell - 1] } else { 0.0 };
        let right = if cell < q { coeffs[cell] } else { 0.0 };
        let t = xi / self.h - cell as f64;
        (left * (1.0 - t) + right * t, (right - left) / self.h)
    }

    pub fn eval(&self, coeffs: &DVector<f64>, xi: f64) -> f64 {
        self.eval_with_derivative(coeffs, xi).0
    }

    /// Nodal interpolant.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.nodes.iter().map(|&xi| f(xi)))
    }

    /// Load vector `[∫ f ν_i dξ]_i` by composite three-point Gauss quadrature.
    pub fn load_vector(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let q = self.dim();
        let mut b = DVector::zeros(q);
        for cell in 0..self.cells() {
            let a = cell as f64 * self.h;
            for &(x, w) in &GAUSS3 {
                let t = 0.5 * (x + 1.0);
                let val = f(a + t * self.h) * w * 0.5 * self.h;
                if cell >= 1 {
                    b[cell - 1] += val * (1.0 - t);
                }
                if cell < q {
                    b[cell] += val * t;
                }
            }
        }
        b
    }
}

/// Symmetric matrices `A_i` of the convection term,
/// `(H(x))_i = xᵀ A_i x = ∫ ν_i v_h ∂_ξ v_h dξ`.
///
/// Each `A_i` couples only the (at most three) unknowns adjacent to node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvectionTensor {
    blocks: Vec<ConvectionBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvectionBlock {
    /// global index of local entry 0
    pub start: usize,
    pub len: usize,
    pub entries: [[f64; 3]; 3],
}

impl ConvectionBlock {
    pub fn indices(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.len).flat_map(move |a| {
            (0..self.len).map(move |b| (self.start + a, self.start + b, self.entries[a][b]))
        })
    }
}

impl ConvectionTensor {
    #[allow(clippy::needless_range_loop)]
    fn assemble(q: usize) -> Self {
        // ∫_e φ_α φ_β φ_γ' = c[α][β] s[γ], independent of h
        const C: [[f64; 2]; 2] = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
        const S: [f64; 2] = [-1.0, 1.0];
        let mut blocks = Vec::with_capacity(q);
        for i in 0..q {
            let start = i.saturating_sub(1);
            let len = (i + 2).min(q) - start;
            let mut raw = [[0.0; 3]; 3];
            let g = i + 1; // global node
            for cell in [g - 1, g] {
                let alpha = g - cell; // local index of node i in this cell
                for beta in 0..2 {
                    for gamma in 0..2 {
                        let (gb, gc) = (cell + beta, cell + gamma);
                        if gb == 0 || gb > q || gc == 0 || gc > q {
                            continue;
                        }
                        raw[gb - 1 - start][gc - 1 - start] += C[alpha][beta] * S[gamma];
                    }
                }
            }
            let mut entries = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    entries[a][b] = 0.5 * (raw[a][b] + raw[b][a]);
                }
            }
            blocks.push(ConvectionBlock { start, len, entries });
        }
        Self { blocks }
    }

    pub fn dim(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> &ConvectionBlock {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[ConvectionBlock] {
        &self.blocks
    }

    /// Dense `A_i`, for tests and small problems.
    pub fn dense(&self, i: usize) -> DMatrix<f64> {
        let q = self.dim();
        let mut m = DMatrix::zeros(q, q);
        for (a, b, v) in self.blocks[i].indices() {
            m[(a, b)] = v;
        }
        m
    }

    /// `H(x)` with `H_i = xᵀ A_i x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.blocks
                .iter()
                .map(|blk| blk.indices().map(|(a, b, v)| v * x[a] * x[b]).sum::<f64>()),
        )
    }

    /// Jacobian of `H` at `x`: row `i` is `2 xᵀ A_i`. Tridiagonal in 1D.
    pub fn jacobian(&self, x: &DVector<f64>) -> Tridiagonal {
        let q = self.dim();
        let mut t = Tridiagonal::constant(q, 0.0, 0.0, 0.0, 1.0);
        for (i, blk) in self.blocks.iter().enumerate() {
            for (a, b, v) in blk.indices() {
                let val = 2.0 * v * x[a];
                match b as isize - i as isize {
                    0 => t.diag[i] += val,
                    1 => t.upper[i] += val,
                    -1 => t.lower[i - 1] += val,
                    _ => unreachable!("convection couples nearest neighbours only"),
                }
            }
        }
        t
    }
}

/// Mass, stiffness and convection operators of a [`FemSpace`].
#[derive(Debug, Clone)]
pub struct SpatialOperators {
    pub space: FemSpace,
    pub mass: Tridiagonal,
    pub stiffness: Tridiagonal,
    pub convection: ConvectionTensor,
    mass_dense: DMatrix<f64>,
    mass_chol: DMatrix<f64>,
}

impl SpatialOperators {
    pub fn assemble(space: &FemSpace) -> Result<Self> {
        let (q, h) = (space.dim(), space.h());
        let mass = Tridiagonal::constant(q, 1.0, 4.0, 1.0, h / 6.0);
        let stiffness = Tridiagonal::constant(q, -1.0, 2.0, -1.0, 1.0 / h);
        let mass_dense = mass.to_dense();
        let mass_chol = cholesky_lower(&mass_dense, "spatial mass matrix")?;
        Ok(Self {
            space: space.clone(),
            mass,
            stiffness,
            convection: ConvectionTensor::assemble(q),
            mass_dense,
            mass_chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn mass_dense(&self) -> &DMatrix<f64> {
        &self.mass_dense
    }

    /// `L_Y` with `M_Y = L_Y L_Yᵀ`.
    pub fn mass_cholesky(&self) -> &DMatrix<f64> {
        &self.mass_chol
    }

    /// L²-orthogonal projection coefficients `M_Y⁻¹ [∫ f ν_i]`.
    pub fn project_function(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let b = self.space.load_vector(f);
        self.mass.solve(&b).expect("mass matrix is positive definite")
    }

    /// `‖x‖²_{M_Y}`
    pub fn mass_norm_sq(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.mass.mul_vec(x))
    }
}

/// Step initial value: 1 on `(0, 0.5]`, 0 beyond.
pub fn step_initial_value(xi: f64) -> f64 {
    if xi <= 0.5 {
        1.0
    } else {
        0.0
    }
}
