use spde_control::control::ControlSequence;
use spde_control::grid::{BoundaryCondition, Field, Grid};
use spde_control::noise::NoiseModel;
use spde_control::sim::{rollout, DriftSpec, SimConfig};
use spde_control::{ActuatorSet, StreamKey};

const T: f64 = 1.0;

fn front(x: f64) -> f64 {
    1.0 / (1.0 + (-(2.0 - x) / 2f64.sqrt()).exp())
}

/// Deterministic Nagumo solution at `T` on `cells` intervals of (0, 10).
fn solve(cells: usize, dt: f64) -> Vec<f64> {
    let grid = Grid::new(0.0, 10.0, cells, BoundaryCondition::NeumannZero).unwrap();
    let noise = NoiseModel::build_eigenbasis(grid, 4).unwrap();
    let act = ActuatorSet::build(&[5.0], &[0.5], &noise).unwrap();
    let steps = (T / dt).round() as usize;
    let cfg = SimConfig::new(DriftSpec::nagumo(1.0, -0.5), noise, 100.0, dt, steps, Field::from_fn(grid, front))
        .unwrap()
        .deterministic(true);
    let u = ControlSequence::zeros(steps, 1, dt);
    rollout(&cfg, &act, &u, StreamKey::root(0), 0).unwrap().last().values().to_vec()
}

fn max_error(coarse: &[f64], fine: &[f64]) -> f64 {
    let stride = (fine.len() - 1) / (coarse.len() - 1);
    coarse
        .iter()
        .enumerate()
        .map(|(k, c)| (c - fine[k * stride]).abs())
        .fold(0.0, f64::max)
}

#[test]
fn halving_both_steps_reduces_error() {
    let reference = solve(4000, 1e-4);
    let e1 = max_error(&solve(250, 0.02), &reference);
    let e2 = max_error(&solve(500, 0.01), &reference);
    assert!(e1 / e2 >= 1.8, "errors {e1:.3e} -> {e2:.3e}, ratio {:.2}", e1 / e2);
}

#[test]
fn neumann_mass_conserved_without_reaction() {
    let grid = Grid::new(0.0, 10.0, 200, BoundaryCondition::NeumannZero).unwrap();
    let noise = NoiseModel::build_eigenbasis(grid, 100).unwrap();
    let act = ActuatorSet::build(&[5.0], &[0.5], &noise).unwrap();
    let x0 = Field::from_fn(grid, front);
    let cfg = SimConfig::new(DriftSpec::heat(1.0), noise, 100.0, 0.01, 200, x0.clone())
        .unwrap()
        .deterministic(true);
    let t = rollout(&cfg, &act, &ControlSequence::zeros(200, 1, 0.01), StreamKey::root(0), 0).unwrap();
    for s in &t.states {
        assert!((s.integral() - x0.integral()).abs() < 1e-10);
    }
}
