//! Control sequences, state costs, importance weights and the iterative
//! path-integral update
//!
//! ```text
//! u_j ← u_j + (√ρ Δt)⁻¹ M⁻¹ Σ_r w_r δũ_j⁽ʳ⁾,   w_r ∝ exp(−ρ J̃_r),   J̃ = J + ζ
//! ```

use serde::{Deserialize, Serialize};

use crate::actuators::ActuatorSet;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Piecewise-constant controls, `steps × actuators`, row `j` held on
/// `[jΔt, (j+1)Δt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    steps: usize,
    actuators: usize,
    dt: f64,
    values: Vec<f64>,
}

impl ControlSequence {
    pub fn zeros(steps: usize, actuators: usize, dt: f64) -> Self {
        ControlSequence {
            steps,
            actuators,
            dt,
            values: vec![0.0; steps * actuators],
        }
    }

    /// Row-major values; rejects non-finite entries.
    pub fn from_values(steps: usize, actuators: usize, dt: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != steps * actuators {
            return Err(Error::LengthMismatch {
                what: "control values",
                expected: steps * actuators,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("controls", "contains non-finite values"));
        }
        Ok(ControlSequence {
            steps,
            actuators,
            dt,
            values,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn actuators(&self) -> usize {
        self.actuators
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.actuators..(j + 1) * self.actuators]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.actuators..(j + 1) * self.actuators]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Receding-horizon warm start: drop the first row, repeat the last.
    pub fn shifted(&self) -> Self {
        let mut out = self.clone();
        if self.steps > 1 {
            out.values.copy_within(self.actuators.., 0);
        }
        out
    }

    /// `Σ_k |u_k|²`, handy for sizing test controls.
    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// A spatial window `[lo, hi]` with a constant desired value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub kappa: f64,
    pub windows: Vec<Window>,
    #[serde(default)]
    pub terminal_only: bool,
}

impl CostSpec {
    /// Resolves windows to grid nodes. A node belongs to a window when it
    /// lies in `[lo, hi]` up to rounding.
    pub fn compile(&self, grid: &Grid) -> Result<CompiledCost> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::param("kappa", format!("{} must be positive", self.kappa)));
        }
        let tol = 1e-9 * grid.dx();
        let mut nodes = Vec::new();
        let mut targets = Vec::new();
        for (i, w) in self.windows.iter().enumerate() {
            if !(w.lo <= w.hi) || w.lo < grid.a() - tol || w.hi > grid.b() + tol || !w.target.is_finite() {
                return Err(Error::param(
                    "cost.windows",
                    format!("window {i} [{}, {}] is not inside [{}, {}]", w.lo, w.hi, grid.a(), grid.b()),
                ));
            }
            for k in 0..grid.len() {
                let x = grid.node(k);
                if x >= w.lo - tol && x <= w.hi + tol {
                    nodes.push(k);
                    targets.push(w.target);
                }
            }
        }
        Ok(CompiledCost {
            grid: *grid,
            kappa: self.kappa,
            terminal_only: self.terminal_only,
            nodes,
            targets,
        })
    }
}

/// [`CostSpec`] resolved against a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledCost {
    grid: Grid,
    kappa: f64,
    terminal_only: bool,
    nodes: Vec<usize>,
    targets: Vec<f64>,
}

impl CompiledCost {
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn terminal_only(&self) -> bool {
        self.terminal_only
    }

    /// `κ Σ_{x in window} (X(x) − X_desired(x))²` for one state.
    pub fn stage(&self, state: &[f64]) -> f64 {
        let s: f64 = self
            .nodes
            .iter()
            .zip(&self.targets)
            .map(|(&k, &t)| (state[k] - t).powi(2))
            .sum();
        self.kappa * s
    }

    /// Whether the state at time index `j` of `last` contributes.
    #[inline]
    pub fn counts(&self, j: usize, last: usize) -> bool {
        !self.terminal_only || j == last
    }

    /// Cost of a stored state sequence `X(t_0) … X(t_L)`.
    pub fn evaluate(&self, states: &[Field]) -> Result<f64> {
        let last = states.len().saturating_sub(1);
        let mut total = 0.0;
        for (j, s) in states.iter().enumerate() {
            if *s.grid() != self.grid {
                return Err(Error::GridMismatch);
            }
            if self.counts(j, last) {
                total += self.stage(s.values());
            }
        }
        Ok(total)
    }

    /// Mean absolute deviation from target over window nodes.
    pub fn mean_abs_error(&self, state: &[f64]) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        let s: f64 = self
            .nodes
            .iter()
            .zip(&self.targets)
            .map(|(&k, &t)| (state[k] - t).abs())
            .sum();
        s / self.nodes.len() as f64
    }
}

/// State cost of a stored trajectory.
pub fn state_cost(states: &[Field], spec: &CostSpec) -> Result<f64> {
    let grid = states.first().map(|s| *s.grid()).ok_or(Error::InsufficientSamples { got: 0, min: 1 })?;
    spec.compile(&grid)?.evaluate(states)
}

fn path_sums(controls: &ControlSequence, deltas: &[f64], gram: &[f64]) -> Result<(f64, f64)> {
    let n = controls.actuators();
    let expected = controls.steps() * n;
    if deltas.len() != expected {
        return Err(Error::LengthMismatch {
            what: "noise projections",
            expected,
            got: deltas.len(),
        });
    }
    if gram.len() != n * n {
        return Err(Error::LengthMismatch {
            what: "gram matrix",
            expected: n * n,
            got: gram.len(),
        });
    }
    let mut linear = 0.0;
    let mut quadratic = 0.0;
    for j in 0..controls.steps() {
        let u = controls.row(j);
        let d = &deltas[j * n..(j + 1) * n];
        for l in 0..n {
            linear += u[l] * d[l];
            let mut mu = 0.0;
            for m in 0..n {
                mu += gram[l * n + m] * u[m];
            }
            quadratic += u[l] * mu;
        }
    }
    Ok((linear, quadratic * controls.dt()))
}

/// `ζ = ρ^{-1/2} Σ_k u_kᵀ δũ_k + ½ Σ_k u_kᵀ M u_k Δt`.
///
/// `deltas` is row-major `steps × actuators`; `gram` is the row-major `M`.
pub fn zeta(controls: &ControlSequence, deltas: &[f64], gram: &[f64], rho: f64) -> Result<f64> {
    let (lin, quad) = path_sums(controls, deltas, gram)?;
    Ok(lin / rho.sqrt() + 0.5 * quad)
}

/// `log dℒ⁽ⁱ⁾/dℒ = √ρ Σ_k u_kᵀ δũ_k + (ρ/2) Σ_k u_kᵀ M u_k Δt`, which is `ρ ζ`.
pub fn log_rn_derivative(controls: &ControlSequence, deltas: &[f64], gram: &[f64], rho: f64) -> Result<f64> {
    let (lin, quad) = path_sums(controls, deltas, gram)?;
    Ok(rho.sqrt() * lin + 0.5 * rho * quad)
}

/// Normalized Gibbs weights `exp(−ρ(J̃_r − min J̃))`. Non-finite costs get
/// weight exactly zero.
pub fn importance_weights(costs_tilde: &[f64], rho: f64) -> Result<Vec<f64>> {
    let min = costs_tilde
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::AllRolloutsFailed);
    }
    let mut w: Vec<f64> = costs_tilde
        .iter()
        .map(|&c| if c.is_finite() { (-rho * (c - min)).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// `1 / Σ w_r²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().map(|w| w * w).sum();
    if s > 0.0 {
        1.0 / s
    } else {
        0.0
    }
}

/// Per-rollout quantities needed by the update.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSample {
    pub state_cost: f64,
    pub zeta: f64,
    /// `δũ_j`, row-major `steps × actuators`.
    pub deltas: Vec<f64>,
}

impl RolloutSample {
    pub fn cost_tilde(&self) -> f64 {
        self.state_cost + self.zeta
    }
}

/// `R` rollouts with their weights. Failed rollouts are `None` and carry
/// zero weight.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    steps: usize,
    actuators: usize,
    samples: Vec<Option<RolloutSample>>,
    weights: Vec<f64>,
}

impl RolloutBatch {
    pub fn new(steps: usize, actuators: usize, samples: Vec<Option<RolloutSample>>, rho: f64) -> Result<Self> {
        for s in samples.iter().flatten() {
            if s.deltas.len() != steps * actuators {
                return Err(Error::LengthMismatch {
                    what: "rollout projections",
                    expected: steps * actuators,
                    got: s.deltas.len(),
                });
            }
        }
        let costs: Vec<f64> = samples
            .iter()
            .map(|s| s.as_ref().map_or(f64::INFINITY, RolloutSample::cost_tilde))
            .collect();
        let weights = importance_weights(&costs, rho)?;
        Ok(RolloutBatch {
            steps,
            actuators,
            samples,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn actuators(&self) -> usize {
        self.actuators
    }

    pub fn samples(&self) -> &[Option<RolloutSample>] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn failures(&self) -> usize {
        self.samples.iter().filter(|s| s.is_none()).count()
    }

    fn mean_of(&self, f: impl Fn(&RolloutSample) -> f64) -> f64 {
        let (sum, n) = self
            .samples
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), r| (s + f(r), n + 1));
        sum / n as f64
    }

    /// Unweighted mean of `J` over successful rollouts.
    pub fn mean_state_cost(&self) -> f64 {
        self.mean_of(|r| r.state_cost)
    }

    /// Unweighted mean of `J̃` over successful rollouts.
    pub fn mean_cost_tilde(&self) -> f64 {
        self.mean_of(RolloutSample::cost_tilde)
    }

    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.weights)
    }
}

/// One step of the iterative scheme. The weighted sum runs over rollouts in
/// index order, so the result does not depend on how the batch was produced.
pub fn update_controls(
    u_prev: &ControlSequence,
    batch: &RolloutBatch,
    actuators: &ActuatorSet,
    rho: f64,
) -> Result<ControlSequence> {
    let n = actuators.len();
    if u_prev.actuators() != n || batch.actuators() != n {
        return Err(Error::LengthMismatch {
            what: "actuator count",
            expected: n,
            got: if u_prev.actuators() != n { u_prev.actuators() } else { batch.actuators() },
        });
    }
    if batch.steps() != u_prev.steps() {
        return Err(Error::LengthMismatch {
            what: "batch steps",
            expected: u_prev.steps(),
            got: batch.steps(),
        });
    }
    let scale = 1.0 / (rho.sqrt() * u_prev.dt());
    let mut next = u_prev.clone();
    let mut acc = vec![0.0; n];
    for j in 0..u_prev.steps() {
        acc.fill(0.0);
        for (sample, &w) in batch.samples.iter().zip(&batch.weights) {
            if let Some(s) = sample {
                if w == 0.0 {
                    continue;
                }
                for (a, d) in acc.iter_mut().zip(&s.deltas[j * n..(j + 1) * n]) {
                    *a += w * d;
                }
            }
        }
        let step = actuators.solve_gram(&acc);
        for (u, s) in next.row_mut(j).iter_mut().zip(&step) {
            *u += scale * s;
        }
    }
    Ok(next)
}

/// The closed-form optimum from an uncontrolled batch: the update applied to
/// zero controls.
pub fn one_shot_optimal_controls(batch: &RolloutBatch, actuators: &ActuatorSet, rho: f64, dt: f64) -> Result<ControlSequence> {
    let zero = ControlSequence::zeros(batch.steps(), actuators.len(), dt);
    update_controls(&zero, batch, actuators, rho)
}
