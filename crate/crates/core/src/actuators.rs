//! Gaussian actuator profiles `m_l(x) = exp(−(x − μ_l)²/(2σ_l²))`, their Gram
//! matrix `M_ij = ⟨m_i, m_j⟩` and noise-mode projections `P_ls = ⟨m_l, √λ_s e_s⟩`.
//!
//! Inner products are plain L² (trapezoid). For diagonal covariances the
//! `U₀` weighting by `Q^{-1/2}` is not applied.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::linalg::{Cholesky, JitterPolicy};
use crate::noise::NoiseModel;

#[derive(Debug, Clone)]
pub struct ActuatorSet {
    grid: Grid,
    centers: Vec<f64>,
    widths: Vec<f64>,
    /// Row-major `N × nodes`.
    shapes: Vec<f64>,
    /// Row-major `N × N`, exactly symmetric.
    gram: Vec<f64>,
    factor: Cholesky,
    /// Row-major `N × modes`.
    projections: Vec<f64>,
    modes: usize,
}

impl ActuatorSet {
    pub fn build(centers: &[f64], widths: &[f64], noise: &NoiseModel) -> Result<Self> {
        Self::build_with(centers, widths, noise, JitterPolicy::default())
    }

    pub fn build_with(
        centers: &[f64],
        widths: &[f64],
        noise: &NoiseModel,
        policy: JitterPolicy,
    ) -> Result<Self> {
        let grid = *noise.grid();
        if centers.is_empty() {
            return Err(Error::param("actuators", "need at least one actuator"));
        }
        if centers.len() != widths.len() {
            return Err(Error::LengthMismatch {
                what: "actuator widths",
                expected: centers.len(),
                got: widths.len(),
            });
        }
        for (&mu, &sigma) in centers.iter().zip(widths) {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::param("widths", format!("{sigma} must be positive")));
            }
            if !(mu >= grid.a() && mu <= grid.b()) {
                return Err(Error::param(
                    "centers",
                    format!("{mu} lies outside [{}, {}]", grid.a(), grid.b()),
                ));
            }
        }
        let shapes: Vec<Field> = centers
            .iter()
            .zip(widths)
            .map(|(&mu, &sigma)| {
                Field::from_fn(grid, |x| (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp())
            })
            .collect();
        let mut set = Self::from_shapes(&shapes, noise, policy)?;
        set.centers = centers.to_vec();
        set.widths = widths.to_vec();
        Ok(set)
    }

    /// Actuators with arbitrary sampled profiles.
    pub fn from_shapes(shapes: &[Field], noise: &NoiseModel, policy: JitterPolicy) -> Result<Self> {
        let grid = *noise.grid();
        let n_act = shapes.len();
        if n_act == 0 {
            return Err(Error::param("actuators", "need at least one actuator"));
        }
        if shapes.iter().any(|s| *s.grid() != grid) {
            return Err(Error::GridMismatch);
        }
        let mut gram = vec![0.0; n_act * n_act];
        for i in 0..n_act {
            for j in i..n_act {
                let v = grid.dot(shapes[i].values(), shapes[j].values());
                gram[i * n_act + j] = v;
                gram[j * n_act + i] = v;
            }
        }
        let factor = Cholesky::factor_with(&gram, n_act, policy)?;
        let modes = noise.modes();
        let mut projections = vec![0.0; n_act * modes];
        for l in 0..n_act {
            for s in 0..modes {
                projections[l * modes + s] =
                    grid.dot(shapes[l].values(), noise.scaled_eigenfunction_values(s));
            }
        }
        Ok(ActuatorSet {
            grid,
            centers: Vec::new(),
            widths: Vec::new(),
            shapes: shapes.iter().flat_map(|s| s.values().iter().copied()).collect(),
            gram,
            factor,
            projections,
            modes,
        })
    }

    pub fn len(&self) -> usize {
        self.factor.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn shape(&self, l: usize) -> &[f64] {
        let n = self.grid.len();
        &self.shapes[l * n..(l + 1) * n]
    }

    /// Row-major Gram matrix `M`.
    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    pub fn gram_jitter(&self) -> f64 {
        self.factor.jitter()
    }

    pub fn min_pivot(&self) -> f64 {
        self.factor.min_pivot()
    }

    /// Row-major projections `P`, `N × modes`.
    pub fn projections(&self) -> &[f64] {
        &self.projections
    }

    /// `M⁻¹ v` through the (possibly jittered) factorization.
    pub fn solve_gram(&self, v: &[f64]) -> Vec<f64> {
        let mut x = v.to_vec();
        self.factor.solve_in_place(&mut x);
        x
    }

    /// `uᵀ M u`.
    pub fn quadratic(&self, u: &[f64]) -> f64 {
        let n = self.len();
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.gram[i * n..(i + 1) * n];
            acc += u[i] * row.iter().zip(u).map(|(m, v)| m * v).sum::<f64>();
        }
        acc
    }

    /// Pointwise `Σ_l m_l(x_k) u_l`.
    pub fn control_field(&self, u_row: &[f64]) -> Result<Field> {
        self.check_row(u_row)?;
        let mut out = vec![0.0; self.grid.len()];
        self.accumulate_control(u_row, 1.0, &mut out);
        Field::from_values(self.grid, out)
    }

    /// `out += scale · Σ_l m_l u_l`.
    pub(crate) fn accumulate_control(&self, u_row: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.grid.len();
        for (shape, &u) in self.shapes.chunks_exact(n).zip(u_row) {
            if u != 0.0 {
                let c = scale * u;
                for (o, m) in out.iter_mut().zip(shape) {
                    *o += c * m;
                }
            }
        }
    }

    /// Noise projection `δũ = P · Δβ` for one time step.
    pub fn delta_u(&self, dbeta_row: &[f64]) -> Result<Vec<f64>> {
        if dbeta_row.len() != self.modes {
            return Err(Error::LengthMismatch {
                what: "increment row",
                expected: self.modes,
                got: dbeta_row.len(),
            });
        }
        let mut out = vec![0.0; self.len()];
        self.delta_u_into(dbeta_row, &mut out);
        Ok(out)
    }

    pub(crate) fn delta_u_into(&self, dbeta_row: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.projections.chunks_exact(self.modes)) {
            *o = row.iter().zip(dbeta_row).map(|(p, b)| p * b).sum();
        }
    }

    fn check_row(&self, u_row: &[f64]) -> Result<()> {
        if u_row.len() != self.len() {
            return Err(Error::LengthMismatch {
                what: "control row",
                expected: self.len(),
                got: u_row.len(),
            });
        }
        Ok(())
    }
}
