//! Semi-implicit finite-difference stepping of the controlled semilinear SPDE
//!
//! ```text
//! dX = (ε ∂²ₓX + F(X) + Σ_l m_l u_l(t)) dt + ρ^{-1/2} dW
//! ```
//!
//! Diffusion is implicit, everything else explicit:
//! `X⁺ = (I − dt·ε·D₂)⁻¹ (X + dt·(F(X) + 𝒰) + ρ^{-1/2}·dW)`.
//! Dirichlet rows are identity rows pinned to zero; Neumann rows use the
//! mirrored ghost node, which conserves the trapezoid integral exactly.

use serde::{Deserialize, Serialize};

use crate::actuators::ActuatorSet;
use crate::control::ControlSequence;
use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, Field, Grid};
use crate::linalg::Tridiagonal;
use crate::noise::{IncrementTable, NoiseModel, StreamKey, SynthesisScratch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Heat,
    Nagumo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub kind: DriftKind,
    pub epsilon: f64,
    /// Nagumo threshold; ignored for heat.
    #[serde(default)]
    pub alpha: f64,
}

impl DriftSpec {
    pub fn heat(epsilon: f64) -> Self {
        DriftSpec {
            kind: DriftKind::Heat,
            epsilon,
            alpha: 0.0,
        }
    }

    pub fn nagumo(epsilon: f64, alpha: f64) -> Self {
        DriftSpec {
            kind: DriftKind::Nagumo,
            epsilon,
            alpha,
        }
    }

    #[inline]
    fn reaction_at(&self, u: f64) -> f64 {
        match self.kind {
            DriftKind::Heat => 0.0,
            DriftKind::Nagumo => u * (1.0 - u) * (u - self.alpha),
        }
    }

    /// Pointwise reaction term `F(X)`.
    pub fn reaction(&self, x: &Field) -> Field {
        let values = x.values().iter().map(|&u| self.reaction_at(u)).collect();
        Field::from_values(*x.grid(), values).expect("same length")
    }
}

/// Factorized `I − dt·ε·D₂` with boundary rows for the grid's condition.
#[derive(Debug, Clone)]
pub struct ImplicitDiffusion {
    grid: Grid,
    solver: Tridiagonal,
}

impl ImplicitDiffusion {
    pub fn new(grid: Grid, epsilon: f64, dt: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::param("epsilon", format!("{epsilon} must be positive")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("{dt} must be positive")));
        }
        let n = grid.len();
        let r = dt * epsilon / (grid.dx() * grid.dx());
        let mut lower = vec![-r; n];
        let mut diag = vec![1.0 + 2.0 * r; n];
        let mut upper = vec![-r; n];
        match grid.bc() {
            BoundaryCondition::DirichletZero => {
                diag[0] = 1.0;
                upper[0] = 0.0;
                diag[n - 1] = 1.0;
                lower[n - 1] = 0.0;
            }
            BoundaryCondition::NeumannZero => {
                upper[0] = -2.0 * r;
                lower[n - 1] = -2.0 * r;
            }
        }
        Ok(ImplicitDiffusion {
            grid,
            solver: Tridiagonal::factor(&lower, &diag, &upper)?,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        self.grid.pin_dirichlet(rhs);
        self.solver.solve_in_place(rhs);
        self.grid.pin_dirichlet(rhs);
    }

    pub fn solve(&self, rhs: &Field) -> Field {
        let mut v = rhs.values().to_vec();
        self.solve_in_place(&mut v);
        Field::from_values(self.grid, v).expect("same grid")
    }
}

/// Everything needed to propagate one rollout. Immutable once built.
#[derive(Debug, Clone)]
pub struct SimConfig {
    drift: DriftSpec,
    noise: NoiseModel,
    rho: f64,
    dt: f64,
    steps: usize,
    initial: Field,
    deterministic: bool,
    diffusion: ImplicitDiffusion,
}

impl SimConfig {
    pub fn new(
        drift: DriftSpec,
        noise: NoiseModel,
        rho: f64,
        dt: f64,
        steps: usize,
        initial: Field,
    ) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::param("rho", format!("{rho} must be positive")));
        }
        if *initial.grid() != *noise.grid() {
            return Err(Error::GridMismatch);
        }
        if !initial.is_finite() {
            return Err(Error::param("initial_condition", "contains non-finite values"));
        }
        let diffusion = ImplicitDiffusion::new(*noise.grid(), drift.epsilon, dt)?;
        Ok(SimConfig {
            drift,
            noise,
            rho,
            dt,
            steps,
            initial,
            deterministic: false,
            diffusion,
        })
    }

    /// Zero-noise dynamics (the `ρ → ∞` limit of the state equation; `ρ`
    /// still enters weights and updates).
    pub fn deterministic(mut self, on: bool) -> Self {
        self.deterministic = on;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_initial(mut self, initial: Field) -> Result<Self> {
        if *initial.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        self.initial = initial;
        Ok(self)
    }

    pub fn grid(&self) -> Grid {
        *self.noise.grid()
    }

    pub fn drift(&self) -> &DriftSpec {
        &self.drift
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn initial(&self) -> &Field {
        &self.initial
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn diffusion(&self) -> &ImplicitDiffusion {
        &self.diffusion
    }
}

/// A sampled path `X(t_0) … X(t_L)` and the increments that produced it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Field>,
    pub increments: IncrementTable,
}

impl Trajectory {
    pub fn times(&self, dt: f64) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |j| j as f64 * dt)
    }

    pub fn last(&self) -> &Field {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Per-rollout scratch buffers.
#[derive(Debug, Default)]
pub struct Workspace {
    pub(crate) dbeta: Vec<f64>,
    pub(crate) noise: Vec<f64>,
    pub(crate) synth: SynthesisScratch,
}

impl Workspace {
    pub fn new(config: &SimConfig) -> Self {
        Workspace {
            dbeta: vec![0.0; config.noise.modes()],
            noise: vec![0.0; config.grid().len()],
            synth: SynthesisScratch::default(),
        }
    }
}

/// One semi-implicit step in place. `noise` is the already-assembled `dW`.
pub(crate) fn step_in_place(
    state: &mut [f64],
    config: &SimConfig,
    actuators: &ActuatorSet,
    u_row: &[f64],
    noise: Option<&[f64]>,
    step_index: usize,
) -> Result<()> {
    let dt = config.dt;
    if config.drift.kind != DriftKind::Heat {
        for v in state.iter_mut() {
            *v += dt * config.drift.reaction_at(*v);
        }
    }
    actuators.accumulate_control(u_row, dt, state);
    if let Some(dw) = noise {
        let scale = 1.0 / config.rho.sqrt();
        for (v, w) in state.iter_mut().zip(dw) {
            *v += scale * w;
        }
    }
    config.diffusion.solve_in_place(state);
    if let Some(node) = state.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState {
            step: step_index,
            node,
        });
    }
    Ok(())
}

/// `X⁺ = (I − dt ε D₂)⁻¹ (X + dt (F(X) + 𝒰(u)) + ρ^{-1/2} dW)`.
pub fn step(
    x: &Field,
    config: &SimConfig,
    actuators: &ActuatorSet,
    u_row: &[f64],
    dw: &Field,
) -> Result<Field> {
    if *x.grid() != config.grid() || *dw.grid() != config.grid() {
        return Err(Error::GridMismatch);
    }
    if u_row.len() != actuators.len() {
        return Err(Error::LengthMismatch {
            what: "control row",
            expected: actuators.len(),
            got: u_row.len(),
        });
    }
    let mut v = x.values().to_vec();
    step_in_place(&mut v, config, actuators, u_row, Some(dw.values()), 0)?;
    Field::from_values(config.grid(), v)
}

fn check_controls(config: &SimConfig, actuators: &ActuatorSet, controls: &ControlSequence) -> Result<()> {
    if controls.steps() != config.steps {
        return Err(Error::LengthMismatch {
            what: "control sequence steps",
            expected: config.steps,
            got: controls.steps(),
        });
    }
    if controls.actuators() != actuators.len() {
        return Err(Error::LengthMismatch {
            what: "control sequence actuators",
            expected: actuators.len(),
            got: controls.actuators(),
        });
    }
    if *actuators.grid() != config.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Propagates from `initial` for `controls.steps()` steps, calling
/// `visit(j, state, dbeta_row)` for the initial state (`j = 0`, empty row)
/// and after every step `j = 1..=L` with the increments consumed by it.
pub(crate) fn propagate(
    config: &SimConfig,
    actuators: &ActuatorSet,
    controls: &ControlSequence,
    initial: &[f64],
    key: StreamKey,
    rollout_index: u64,
    ws: &mut Workspace,
    mut visit: impl FnMut(usize, &[f64], &[f64]),
) -> Result<Vec<f64>> {
    let mut state = initial.to_vec();
    visit(0, &state, &[]);
    let modes = config.noise.modes();
    ws.dbeta.resize(modes, 0.0);
    ws.noise.resize(state.len(), 0.0);
    for j in 0..controls.steps() {
        let noise = if config.deterministic {
            ws.dbeta.fill(0.0);
            None
        } else {
            key.fill_increments(rollout_index, j as u64, config.dt, &mut ws.dbeta);
            config.noise.synthesize(&ws.dbeta, &mut ws.noise, &mut ws.synth);
            Some(ws.noise.as_slice())
        };
        step_in_place(&mut state, config, actuators, controls.row(j), noise, j + 1)?;
        visit(j + 1, &state, &ws.dbeta);
    }
    Ok(state)
}

/// Samples one full trajectory, keeping every state and the increment table.
pub fn rollout(
    config: &SimConfig,
    actuators: &ActuatorSet,
    controls: &ControlSequence,
    key: StreamKey,
    rollout_index: u64,
) -> Result<Trajectory> {
    check_controls(config, actuators, controls)?;
    let grid = config.grid();
    let modes = config.noise.modes();
    let steps = controls.steps();
    let mut states = Vec::with_capacity(steps + 1);
    let mut dbeta = Vec::with_capacity(steps * modes);
    let mut ws = Workspace::new(config);
    propagate(
        config,
        actuators,
        controls,
        config.initial.values(),
        key,
        rollout_index,
        &mut ws,
        |j, x, row| {
            states.push(Field::from_values(grid, x.to_vec()).expect("grid length"));
            if j > 0 {
                dbeta.extend_from_slice(row);
            }
        },
    )?;
    let increments = if config.deterministic || steps == 0 {
        IncrementTable::zeros(steps, modes, config.dt)
    } else {
        IncrementTable::sample_unchecked(key, rollout_index, steps, modes, config.dt)
    };
    debug_assert!(config.deterministic || increments.as_slice() == dbeta.as_slice());
    Ok(Trajectory { states, increments })
}

pub(crate) fn check_rollout_inputs(
    config: &SimConfig,
    actuators: &ActuatorSet,
    controls: &ControlSequence,
) -> Result<()> {
    check_controls(config, actuators, controls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::JitterPolicy;
    use std::f64::consts::PI;

    fn heat_config(j: usize, bc: BoundaryCondition, epsilon: f64, dt: f64, steps: usize) -> (SimConfig, ActuatorSet) {
        let grid = Grid::new(0.0, 1.0, j, bc).unwrap();
        let noise = NoiseModel::build_eigenbasis(grid, j / 2).unwrap();
        let act = ActuatorSet::build_with(&[0.3, 0.7], &[0.1, 0.1], &noise, JitterPolicy::Strict).unwrap();
        let cfg = SimConfig::new(DriftSpec::heat(epsilon), noise, 10.0, dt, steps, Field::zeros(grid)).unwrap();
        (cfg, act)
    }

    #[test]
    fn reaction_cases() {
        let g = Grid::new(0.0, 1.0, 8, BoundaryCondition::NeumannZero).unwrap();
        let d = DriftSpec::nagumo(1.0, -0.5);
        assert!(d.reaction(&Field::zeros(g)).values().iter().all(|v| *v == 0.0));
        assert!(d.reaction(&Field::constant(g, 1.0)).values().iter().all(|v| *v == 0.0));
        assert!(d.reaction(&Field::constant(g, 0.5)).values().iter().all(|v| *v == 0.25));
        assert!(DriftSpec::heat(1.0).reaction(&Field::constant(g, 3.0)).values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn implicit_step_decays_first_mode_by_discrete_eigenvalue() {
        let (cfg, act) = heat_config(32, BoundaryCondition::DirichletZero, 0.1, 0.01, 1);
        let e1 = cfg.noise().eigenfunction(0);
        let zero = Field::zeros(cfg.grid());
        let next = step(&e1, &cfg, &act, &[0.0, 0.0], &zero).unwrap();
        let dx = cfg.grid().dx();
        let mu1 = 2.0 / (dx * dx) * (1.0 - (PI * dx).cos());
        let factor = 1.0 / (1.0 + 0.01 * 0.1 * mu1);
        for (a, b) in next.values().iter().zip(e1.values()) {
            assert!((a - factor * b).abs() < 1e-12);
        }
    }

    #[test]
    fn neumann_constant_and_zero_fixed_points() {
        let (cfg, act) = heat_config(16, BoundaryCondition::NeumannZero, 1.0, 0.05, 1);
        let zero = Field::zeros(cfg.grid());
        let c = Field::constant(cfg.grid(), 2.5);
        let next = step(&c, &cfg, &act, &[0.0, 0.0], &zero).unwrap();
        for v in next.values() {
            assert!((v - 2.5).abs() < 1e-13);
        }
        assert_eq!(step(&zero, &cfg, &act, &[0.0, 0.0], &zero).unwrap(), zero);
    }

    #[test]
    fn nonfinite_state_is_reported() {
        let (cfg, act) = heat_config(16, BoundaryCondition::DirichletZero, 1.0, 0.05, 1);
        let mut x = Field::zeros(cfg.grid());
        x.values_mut()[4] = f64::NAN;
        let zero = Field::zeros(cfg.grid());
        assert!(matches!(
            step(&x, &cfg, &act, &[0.0, 0.0], &zero),
            Err(Error::NonFiniteState { .. })
        ));
    }

    #[test]
    fn rollout_shapes_and_determinism() {
        let (cfg, act) = heat_config(32, BoundaryCondition::DirichletZero, 0.1, 0.01, 20);
        let u = ControlSequence::zeros(20, 2, 0.01);
        let key = StreamKey::root(1);
        let a = rollout(&cfg, &act, &u, key, 3).unwrap();
        let b = rollout(&cfg, &act, &u, key, 3).unwrap();
        assert_eq!(a.states.len(), 21);
        assert_eq!(&a.states[0], cfg.initial());
        assert_eq!(a.states, b.states);
        assert_eq!(a.increments, b.increments);
        let c = rollout(&cfg, &act, &u, key, 4).unwrap();
        assert_ne!(a.states, c.states);

        let empty = cfg.clone().with_steps(0);
        let t = rollout(&empty, &act, &ControlSequence::zeros(0, 2, 0.01), key, 0).unwrap();
        assert_eq!(t.states.len(), 1);
    }

    #[test]
    fn deterministic_rollout_is_reproducible() {
        let (cfg, act) = heat_config(32, BoundaryCondition::DirichletZero, 0.1, 0.01, 10);
        let cfg = cfg
            .with_initial(Field::from_fn(Grid::new(0.0, 1.0, 32, BoundaryCondition::DirichletZero).unwrap(), |x| (PI * x).sin()))
            .unwrap()
            .deterministic(true);
        let u = ControlSequence::zeros(10, 2, 0.01);
        let a = rollout(&cfg, &act, &u, StreamKey::root(1), 0).unwrap();
        let b = rollout(&cfg, &act, &u, StreamKey::root(99), 5).unwrap();
        assert_eq!(a.states, b.states);
        assert!(a.increments.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dirichlet_sup_norm_non_increasing() {
        for dt in [1e-4, 0.01, 1.0, 100.0] {
            let (cfg, act) = heat_config(40, BoundaryCondition::DirichletZero, 0.5, dt, 1);
            let zero = Field::zeros(cfg.grid());
            let mut x = Field::from_fn(cfg.grid(), |x| if (0.3..0.5).contains(&x) { 1.0 } else { -0.3 * x }).apply_bc();
            for _ in 0..20 {
                let next = step(&x, &cfg, &act, &[0.0, 0.0], &zero).unwrap();
                assert!(next.sup_norm() <= x.sup_norm() + 1e-15);
                x = next;
            }
        }
    }

    #[test]
    fn neumann_heat_conserves_mass() {
        let (cfg, act) = heat_config(50, BoundaryCondition::NeumannZero, 0.3, 0.02, 1);
        let zero = Field::zeros(cfg.grid());
        let mut x = Field::from_fn(cfg.grid(), |x| (-(x - 0.2f64).powi(2) / 0.01).exp() + x);
        let mass = x.integral();
        for _ in 0..100 {
            x = step(&x, &cfg, &act, &[0.0, 0.0], &zero).unwrap();
            assert!((x.integral() - mass).abs() < 1e-10);
        }
    }

    #[test]
    fn heat_step_is_affine_in_forcing() {
        let (cfg, act) = heat_config(32, BoundaryCondition::DirichletZero, 0.1, 0.01, 1);
        let x = Field::from_fn(cfg.grid(), |x| x * (1.0 - x));
        let mut row = vec![0.0; cfg.noise().modes()];
        StreamKey::root(5).fill_increments(0, 0, 0.01, &mut row);
        let w1 = cfg.noise().assemble_noise_field(&row).unwrap();
        let zero = Field::zeros(cfg.grid());
        let base = step(&x, &cfg, &act, &[0.0, 0.0], &zero).unwrap();
        let a = step(&x, &cfg, &act, &[1.5, -0.5], &zero).unwrap();
        let b = step(&x, &cfg, &act, &[0.0, 0.0], &w1).unwrap();
        let ab = step(&x, &cfg, &act, &[1.5, -0.5], &w1).unwrap();
        for k in 0..33 {
            let want = a.values()[k] + b.values()[k] - base.values()[k];
            assert!((ab.values()[k] - want).abs() < 1e-12);
        }
    }
}
