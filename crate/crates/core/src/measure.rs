//! Monte-Carlo checks of the change-of-measure identities behind the
//! controller: free energy, relative entropy, the Legendre bound and the
//! Girsanov martingale property.
//!
//! Everything here uses the ordinary relative entropy `KL ≥ 0`. The entropy
//! `S` of the variational formulation is `−KL`, so the Legendre bound reads
//! `V ≤ E_ℒ̃[J] + KL/ρ`.

use serde::Serialize;

use crate::actuators::ActuatorSet;
use crate::control::{log_rn_derivative, CompiledCost, ControlSequence};
use crate::driver::sample_batch;
use crate::error::{Error, Result};
use crate::noise::{lineage, StreamKey};
use crate::sim::SimConfig;

/// Smallest batch accepted by the verifiers.
pub const MIN_VERIFY_ROLLOUTS: usize = 100;

/// The martingale ratio is flagged as heavy-tailed when its relative
/// standard error, or the share of the largest single ratio, exceeds this.
pub const HEAVY_TAIL_RELATIVE_STDERR: f64 = 0.1;

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `V = −(1/ρ) log Ê[exp(−ρJ)]`, evaluated as `min J − (1/ρ) log Ê[exp(−ρ(J − min J))]`,
/// with a delta-method standard error. Non-finite costs are skipped.
pub fn estimate_free_energy(costs: &[f64], rho: f64) -> Result<(f64, f64)> {
    let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
    if finite.len() < 2 {
        return Err(Error::InsufficientSamples {
            got: finite.len(),
            min: 2,
        });
    }
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let y: Vec<f64> = finite.iter().map(|c| (-rho * (c - min)).exp()).collect();
    let (ybar, ybar_se) = mean_and_stderr(&y);
    Ok((min - ybar.ln() / rho, ybar_se / (rho * ybar)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleCheck {
    pub mean: f64,
    pub stderr: f64,
    pub rollouts: usize,
    pub heavy_tailed: bool,
}

impl MartingaleCheck {
    /// `|mean − 1| ≤ 3·stderr`.
    pub fn passes(&self) -> bool {
        (self.mean - 1.0).abs() <= 3.0 * self.stderr
    }
}

/// `√ρ Σ uᵀδũ − (ρ/2) Σ uᵀMuΔt` on base-measure increments.
fn base_log_ratio(controls: &ControlSequence, deltas: &[f64], gram: &[f64], rho: f64) -> Result<f64> {
    let plus = log_rn_derivative(controls, deltas, gram, rho)?;
    let zero = vec![0.0; deltas.len()];
    let quad = log_rn_derivative(controls, &zero, gram, rho)?;
    Ok(plus - 2.0 * quad)
}

fn projected_increments(
    config: &SimConfig,
    actuators: &ActuatorSet,
    steps: usize,
    key: StreamKey,
    rollout: u64,
    dbeta: &mut [f64],
) -> Vec<f64> {
    let n = actuators.len();
    let mut deltas = vec![0.0; steps * n];
    for j in 0..steps {
        key.fill_increments(rollout, j as u64, config.dt(), dbeta);
        actuators.delta_u_into(dbeta, &mut deltas[j * n..(j + 1) * n]);
    }
    deltas
}

/// Mean of `dQ/dP` over `rollouts` uncontrolled paths.
///
/// The ratio depends on an uncontrolled path only through its projected
/// increments, so the paths are represented by exactly the increments an
/// uncontrolled rollout with the same key would consume.
pub fn verify_martingale(
    config: &SimConfig,
    actuators: &ActuatorSet,
    controls: &ControlSequence,
    rollouts: usize,
    seed: u64,
) -> Result<MartingaleCheck> {
    if rollouts < MIN_VERIFY_ROLLOUTS {
        return Err(Error::InsufficientSamples {
            got: rollouts,
            min: MIN_VERIFY_ROLLOUTS,
        });
    }
    let key = StreamKey::root(seed).child(lineage::VERIFY_BASE);
    let mut dbeta = vec![0.0; config.noise().modes()];
    let mut ratios = Vec::with_capacity(rollouts);
    for r in 0..rollouts as u64 {
        let deltas = projected_increments(config, actuators, controls.steps(), key, r, &mut dbeta);
        ratios.push(base_log_ratio(controls, &deltas, actuators.gram(), config.rho())?.exp());
    }
    let (mean, stderr) = mean_and_stderr(&ratios);
    let largest = ratios.iter().copied().fold(0.0, f64::max);
    let share = largest / ratios.iter().sum::<f64>();
    Ok(MartingaleCheck {
        mean,
        stderr,
        rollouts,
        heavy_tailed: !(stderr <= HEAVY_TAIL_RELATIVE_STDERR * mean.abs()) || !(share <= HEAVY_TAIL_RELATIVE_STDERR),
    })
}

/// Estimates with their standard errors. `kl_*` are relative entropies of
/// the controlled path measure with respect to the uncontrolled one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureReport {
    pub rollouts: usize,
    pub rho: f64,
    pub free_energy_lhs: f64,
    pub free_energy_stderr: f64,
    pub mean_cost_uncontrolled: f64,
    pub mean_cost_controlled: f64,
    pub mean_cost_controlled_stderr: f64,
    pub kl_mc: f64,
    pub kl_mc_stderr: f64,
    pub kl_analytic: f64,
    pub legendre_gap: f64,
    pub legendre_stderr: f64,
    pub martingale: MartingaleCheck,
}

impl MeasureReport {
    /// `|kl_mc − kl_analytic| ≤ 3·stderr`.
    pub fn kl_passes(&self) -> bool {
        (self.kl_mc - self.kl_analytic).abs() <= 3.0 * self.kl_mc_stderr
    }

    /// `gap ≥ −3·stderr`.
    pub fn legendre_passes(&self) -> bool {
        self.legendre_gap >= -3.0 * self.legendre_stderr
    }

    pub fn all_pass(&self) -> bool {
        self.martingale.passes() && self.kl_passes() && self.legendre_passes()
    }
}

/// `(ρ/2) Σ_k u_kᵀ M u_k Δt`.
pub fn kl_analytic(controls: &ControlSequence, actuators: &ActuatorSet, rho: f64) -> f64 {
    let quad: f64 = (0..controls.steps()).map(|j| actuators.quadratic(controls.row(j))).sum();
    0.5 * rho * quad * controls.dt()
}

/// Relative entropy and Legendre-bound checks, plus the martingale check on
/// the same controls. Both the uncontrolled and controlled batches are
/// simulated in full to obtain their state costs.
pub fn verify_kl_and_legendre(
    config: &SimConfig,
    actuators: &ActuatorSet,
    controls: &ControlSequence,
    cost: &CompiledCost,
    rollouts: usize,
    seed: u64,
) -> Result<MeasureReport> {
    if rollouts < MIN_VERIFY_ROLLOUTS {
        return Err(Error::InsufficientSamples {
            got: rollouts,
            min: MIN_VERIFY_ROLLOUTS,
        });
    }
    let rho = config.rho();
    let root = StreamKey::root(seed);
    let zero = ControlSequence::zeros(controls.steps(), actuators.len(), controls.dt());
    let base = sample_batch(config, actuators, &zero, cost, root.child(lineage::VERIFY_BASE), rollouts)?;
    let ctrl = sample_batch(config, actuators, controls, cost, root.child(lineage::VERIFY_CONTROLLED), rollouts)?;

    let base_costs: Vec<f64> = base.samples().iter().flatten().map(|s| s.state_cost).collect();
    let (v, v_se) = estimate_free_energy(&base_costs, rho)?;
    let mean_base = base_costs.iter().sum::<f64>() / base_costs.len() as f64;

    let ok: Vec<_> = ctrl.samples().iter().flatten().collect();
    if ok.len() < 2 {
        return Err(Error::InsufficientSamples { got: ok.len(), min: 2 });
    }
    let costs: Vec<f64> = ok.iter().map(|s| s.state_cost).collect();
    let (mean_j, mean_j_se) = mean_and_stderr(&costs);
    let log_rn: Vec<f64> = ok.iter().map(|s| rho * s.zeta).collect();
    let (kl_mc, kl_se) = mean_and_stderr(&log_rn);

    // The two terms of the controlled side come from the same paths.
    let combined: Vec<f64> = costs.iter().zip(&log_rn).map(|(j, l)| j + l / rho).collect();
    let (upper, upper_se) = mean_and_stderr(&combined);
    let gap = upper - v;
    let gap_se = (upper_se * upper_se + v_se * v_se).sqrt();

    let martingale = verify_martingale(config, actuators, controls, rollouts, seed)?;
    Ok(MeasureReport {
        rollouts,
        rho,
        free_energy_lhs: v,
        free_energy_stderr: v_se,
        mean_cost_uncontrolled: mean_base,
        mean_cost_controlled: mean_j,
        mean_cost_controlled_stderr: mean_j_se,
        kl_mc,
        kl_mc_stderr: kl_se,
        kl_analytic: kl_analytic(controls, actuators, rho),
        legendre_gap: gap,
        legendre_stderr: gap_se,
        martingale,
    })
}

/// Finite-sample Legendre transform on `R` equally likely atoms with costs
/// `J_r`. Returns `(V, E_q[J] + KL(q‖uniform)/ρ)` for the distribution `q`.
pub fn discrete_legendre(costs: &[f64], q: &[f64], rho: f64) -> Result<(f64, f64)> {
    if costs.len() != q.len() {
        return Err(Error::LengthMismatch {
            what: "atom weights",
            expected: costs.len(),
            got: q.len(),
        });
    }
    let (v, _) = estimate_free_energy(costs, rho)?;
    let min = costs.iter().copied().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    let r = costs.len() as f64;
    let mut excess = 0.0;
    let mut kl = 0.0;
    for (&c, &w) in costs.iter().zip(q) {
        if w > 0.0 {
            excess += w * (c - min);
            kl += w * (w * r).ln();
        }
    }
    Ok((v, min + excess + kl / rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{importance_weights, CostSpec, Window};
    use crate::grid::{BoundaryCondition, Field, Grid};
    use crate::noise::NoiseModel;
    use crate::sim::DriftSpec;

    #[test]
    fn free_energy_oracles() {
        let (v, se) = estimate_free_energy(&[3.5; 10], 2.0).unwrap();
        assert_eq!((v, se), (3.5, 0.0));
        let (v, _) = estimate_free_energy(&[0.0, 2f64.ln()], 1.0).unwrap();
        assert!((v - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        let costs = [1.0, 2.0, 4.0, 0.5, 3.0];
        let (v, _) = estimate_free_energy(&costs, 1e-8).unwrap();
        assert!((v - 2.1).abs() < 1e-4);
        assert!(matches!(
            estimate_free_energy(&[1.0, f64::INFINITY], 1.0),
            Err(Error::InsufficientSamples { got: 1, .. })
        ));
    }

    #[test]
    fn base_ratio_sign() {
        let u = ControlSequence::from_values(1, 1, 0.1, vec![2.0]).unwrap();
        let r = base_log_ratio(&u, &[0.3], &[0.5], 4.0).unwrap();
        assert!((r - (1.2 - 0.4)).abs() < 1e-15);
    }

    #[test]
    fn gibbs_atoms_close_the_gap() {
        let costs: Vec<f64> = (0..50).map(|i| ((i * 37 % 11) as f64).sqrt() * 3.0).collect();
        for rho in [0.1, 1.0, 10.0] {
            let q = importance_weights(&costs, rho).unwrap();
            let (v, rhs) = discrete_legendre(&costs, &q, rho).unwrap();
            assert!((v - rhs).abs() < 1e-10);
            let uniform = vec![1.0 / 50.0; 50];
            let (_, rhs_u) = discrete_legendre(&costs, &uniform, rho).unwrap();
            assert!(rhs_u >= v);
        }
    }

    fn tiny() -> (SimConfig, ActuatorSet, CompiledCost) {
        let grid = Grid::new(0.0, 1.0, 16, BoundaryCondition::DirichletZero).unwrap();
        let noise = NoiseModel::build_eigenbasis(grid, 8).unwrap();
        let act = ActuatorSet::build(&[0.5], &[0.1], &noise).unwrap();
        let cfg = SimConfig::new(DriftSpec::heat(0.1), noise, 10.0, 0.01, 10, Field::zeros(grid)).unwrap();
        let cost = CostSpec {
            kappa: 1.0,
            windows: vec![Window { lo: 0.4, hi: 0.6, target: 1.0 }],
            terminal_only: false,
        }
        .compile(&grid)
        .unwrap();
        (cfg, act, cost)
    }

    #[test]
    fn zero_control_is_exact() {
        let (cfg, act, cost) = tiny();
        let u = ControlSequence::zeros(10, 1, 0.01);
        let m = verify_martingale(&cfg, &act, &u, 200, 1).unwrap();
        assert_eq!((m.mean, m.stderr), (1.0, 0.0));
        assert!(m.passes());
        let r = verify_kl_and_legendre(&cfg, &act, &u, &cost, 200, 1).unwrap();
        assert_eq!(r.kl_analytic, 0.0);
        assert_eq!(r.kl_mc, 0.0);
        assert!(r.legendre_gap >= 0.0 && r.all_pass());
    }

    #[test]
    fn too_few_rollouts() {
        let (cfg, act, _) = tiny();
        let u = ControlSequence::zeros(10, 1, 0.01);
        assert!(matches!(
            verify_martingale(&cfg, &act, &u, 10, 1),
            Err(Error::InsufficientSamples { got: 10, min: 100 })
        ));
    }

    #[test]
    fn large_control_flags_heavy_tail() {
        let (cfg, act, _) = tiny();
        let u = ControlSequence::from_values(10, 1, 0.01, vec![400.0; 10]).unwrap();
        let m = verify_martingale(&cfg, &act, &u, 1000, 3).unwrap();
        assert!(m.heavy_tailed, "{m:?}");
    }
}
