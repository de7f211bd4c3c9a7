//! Small dense and banded solvers used by the simulator and the update rule.

use crate::error::{Error, Result};

/// LU factors of a tridiagonal matrix (Thomas algorithm without pivoting).
///
/// Stable for the diagonally dominant systems `I − dt·ε·D₂` built here.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    /// Modified upper diagonal `c'_i`.
    upper: Vec<f64>,
    /// Reciprocal pivots.
    inv_pivot: Vec<f64>,
}

impl Tridiagonal {
    /// `lower[i]` multiplies `x[i-1]` in row `i` (entry 0 ignored), `upper[i]`
    /// multiplies `x[i+1]` (last entry ignored).
    pub fn factor(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        assert!(lower.len() == n && upper.len() == n);
        let mut c = vec![0.0; n];
        let mut inv = vec![0.0; n];
        let mut prev_c = 0.0;
        for i in 0..n {
            let l = if i == 0 { 0.0 } else { lower[i] };
            let pivot = diag[i] - l * prev_c;
            if pivot.abs() <= f64::EPSILON * diag[i].abs() || !pivot.is_finite() {
                return Err(Error::param("diffusion", "singular tridiagonal system"));
            }
            inv[i] = 1.0 / pivot;
            c[i] = if i + 1 < n { upper[i] * inv[i] } else { 0.0 };
            prev_c = c[i];
        }
        Ok(Tridiagonal {
            lower: lower.to_vec(),
            upper: c,
            inv_pivot: inv,
        })
    }

    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pivot.is_empty()
    }

    /// Overwrites `x` (the right-hand side) with the solution.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(x.len(), n);
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.lower[i] * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.upper[i] * x[i + 1];
        }
    }
}

/// How hard [`Cholesky::factor_with`] tries before declaring a matrix degenerate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JitterPolicy {
    /// No diagonal shift.
    Strict,
    /// Start at `start·tr/N`, multiply by 10 until `max·tr/N`.
    Escalating { start: f64, max: f64 },
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy::Escalating {
            start: 1e-12,
            max: 1e-6,
        }
    }
}

/// Lower-triangular factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
    jitter: f64,
}

impl Cholesky {
    fn try_factor(a: &[f64], n: usize, shift: f64) -> Option<Vec<f64>> {
        let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
        let tol = f64::EPSILON * n as f64 * max_diag;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                if i == j {
                    s += shift;
                }
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > tol) {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(l)
    }

    /// Factors the row-major `n × n` matrix `a`.
    pub fn factor_with(a: &[f64], n: usize, policy: JitterPolicy) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        if let Some(lower) = Self::try_factor(a, n, 0.0) {
            return Ok(Cholesky {
                n,
                lower,
                jitter: 0.0,
            });
        }
        match policy {
            JitterPolicy::Strict => Err(Error::DegenerateActuators { max_jitter: 0.0 }),
            JitterPolicy::Escalating { start, max } => {
                let scale = (0..n).map(|i| a[i * n + i]).sum::<f64>() / n as f64;
                let mut rel = start;
                while rel <= max * (1.0 + 1e-9) {
                    let shift = rel * scale;
                    if let Some(lower) = Self::try_factor(a, n, shift) {
                        return Ok(Cholesky {
                            n,
                            lower,
                            jitter: shift,
                        });
                    }
                    rel *= 10.0;
                }
                Err(Error::DegenerateActuators {
                    max_jitter: max * scale,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Diagonal shift that was needed, zero if none.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn min_pivot(&self) -> f64 {
        (0..self.n)
            .map(|i| self.lower[i * self.n + i])
            .fold(f64::INFINITY, f64::min)
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let l = &self.lower;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * n + k] * b[k];
            }
            b[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= l[k * n + i] * b[k];
            }
            b[i] = s / l[i * n + i];
        }
    }
}
