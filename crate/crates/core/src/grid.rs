//! Uniform 1-D grid, boundary handling and discrete field arithmetic.
//!
//! Nodes are `x_k = a + k·Δx` for `k = 0..=J` with `Δx = (b − a)/J`. Fields
//! always store the boundary nodes, even under homogeneous Dirichlet
//! conditions, so indexing is uniform across boundary types. Hilbert-space
//! inner products use the trapezoid rule on the nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fewest subintervals accepted by [`Grid::new`].
pub const MIN_CELLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Homogeneous Dirichlet: field vanishes at both ends.
    DirichletZero,
    /// Homogeneous Neumann: zero normal derivative at both ends.
    NeumannZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    a: f64,
    b: f64,
    cells: usize,
    bc: BoundaryCondition,
    dx: f64,
}

impl Grid {
    pub fn new(a: f64, b: f64, cells: usize, bc: BoundaryCondition) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::InvalidDomain { a, b });
        }
        if cells < MIN_CELLS {
            return Err(Error::TooCoarse {
                cells,
                min: MIN_CELLS,
            });
        }
        Ok(Grid {
            a,
            b,
            cells,
            bc,
            dx: (b - a) / cells as f64,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// Number of subintervals `J`.
    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Number of nodes, `J + 1`.
    pub fn len(&self) -> usize {
        self.cells + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn node(&self, k: usize) -> f64 {
        self.a + k as f64 * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    /// Trapezoid quadrature weight of node `k`.
    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.cells {
            0.5 * self.dx
        } else {
            self.dx
        }
    }

    /// Trapezoid approximation of `∫ f g dx` for raw node vectors.
    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        let n = self.cells;
        let interior: f64 = f[1..n].iter().zip(&g[1..n]).map(|(x, y)| x * y).sum();
        self.dx * (interior + 0.5 * (f[0] * g[0] + f[n] * g[n]))
    }

    /// Pins Dirichlet boundary values to zero; no-op under Neumann.
    #[inline]
    pub(crate) fn pin_dirichlet(&self, values: &mut [f64]) {
        if self.bc == BoundaryCondition::DirichletZero {
            values[0] = 0.0;
            values[self.cells] = 0.0;
        }
    }

    /// Boundary closure on a raw node vector. Dirichlet zeroes the ends,
    /// Neumann copies the nearest interior value (first-order zero gradient).
    pub fn close_boundary(&self, values: &mut [f64]) {
        let n = self.cells;
        match self.bc {
            BoundaryCondition::DirichletZero => {
                values[0] = 0.0;
                values[n] = 0.0;
            }
            BoundaryCondition::NeumannZero => {
                values[0] = values[1];
                values[n] = values[n - 1];
            }
        }
    }
}

/// Scalar state sampled at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Field {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Field {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Field {
            grid,
            values: grid.nodes().into_iter().map(f).collect(),
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                what: "field values",
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Field { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Enforces the grid's boundary condition (see [`Grid::close_boundary`]).
    pub fn apply_bc(mut self) -> Self {
        self.grid.close_boundary(&mut self.values);
        self
    }

    /// Trapezoid rule for `∫_a^b f g dx`.
    pub fn inner_product(&self, other: &Field) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self.grid.dot(&self.values, &other.values))
    }

    pub fn integral(&self) -> f64 {
        let one = vec![1.0; self.grid.len()];
        self.grid.dot(&self.values, &one)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
