//! Outer loops: open-loop trajectory optimization and receding-horizon MPC.
//!
//! Rollouts inside a batch run on the current rayon pool; results are
//! collected in rollout order, so every reduction is independent of the
//! number of worker threads.

use rayon::prelude::*;

use crate::actuators::ActuatorSet;
use crate::control::{update_controls, zeta, CompiledCost, ControlSequence, RolloutBatch, RolloutSample};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::noise::{lineage, StreamKey};
use crate::sim::{self, SimConfig, Workspace};

/// Simulates one rollout, accumulating state cost and `δũ` on the fly.
pub fn evaluate_rollout(
    config: &SimConfig,
    actuators: &ActuatorSet,
    controls: &ControlSequence,
    cost: &CompiledCost,
    key: StreamKey,
    rollout_index: u64,
    ws: &mut Workspace,
) -> Result<RolloutSample> {
    let n = actuators.len();
    let steps = controls.steps();
    let mut deltas = vec![0.0; steps * n];
    let mut state_cost = 0.0;
    sim::propagate(
        config,
        actuators,
        controls,
        config.initial().values(),
        key,
        rollout_index,
        ws,
        |j, x, row| {
            if j > 0 {
                actuators.delta_u_into(row, &mut deltas[(j - 1) * n..j * n]);
            }
            if cost.counts(j, steps) {
                state_cost += cost.stage(x);
            }
        },
    )?;
    let z = zeta(controls, &deltas, actuators.gram(), config.rho())?;
    Ok(RolloutSample {
        state_cost,
        zeta: z,
        deltas,
    })
}

/// `R` rollouts `0..R` on stream `key`. Rollouts that blow up are kept as
/// failures with zero weight; any other error aborts.
pub fn sample_batch(
    config: &SimConfig,
    actuators: &ActuatorSet,
    controls: &ControlSequence,
    cost: &CompiledCost,
    key: StreamKey,
    rollouts: usize,
) -> Result<RolloutBatch> {
    sim::check_rollout_inputs(config, actuators, controls)?;
    let results: Vec<Result<Option<RolloutSample>>> = (0..rollouts as u64)
        .into_par_iter()
        .map_init(
            || Workspace::new(config),
            |ws, r| match evaluate_rollout(config, actuators, controls, cost, key, r, ws) {
                Ok(s) if s.state_cost.is_finite() && s.zeta.is_finite() => Ok(Some(s)),
                Ok(_) | Err(Error::NonFiniteState { .. }) => Ok(None),
                Err(e) => Err(e),
            },
        )
        .collect();
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    RolloutBatch::new(controls.steps(), actuators.len(), samples, config.rho())
}

/// Runs `f` on a dedicated pool with `threads` workers (`0` = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationSummary {
    pub iteration: usize,
    pub mean_state_cost: f64,
    pub mean_cost_tilde: f64,
    pub effective_sample_size: f64,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct OptimRun {
    /// `controls_history[i]` produced the batch of iteration `i + 1`.
    pub controls_history: Vec<ControlSequence>,
    pub history: Vec<IterationSummary>,
    /// Controls after the last update.
    pub controls: ControlSequence,
}

impl OptimRun {
    pub fn state_costs(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.mean_state_cost).collect()
    }
}

/// Iterates sample → weight → update. Iteration `i` (1-based) draws its
/// rollouts from `key.child(i)`.
pub fn open_loop_optimize(
    config: &SimConfig,
    actuators: &ActuatorSet,
    cost: &CompiledCost,
    initial: ControlSequence,
    iterations: usize,
    rollouts: usize,
    key: StreamKey,
) -> Result<OptimRun> {
    if iterations == 0 {
        return Err(Error::param("iterations", "must be at least 1"));
    }
    if rollouts < 2 {
        return Err(Error::InsufficientSamples { got: rollouts, min: 2 });
    }
    let mut controls = initial;
    let mut controls_history = Vec::with_capacity(iterations);
    let mut history = Vec::with_capacity(iterations);
    for i in 1..=iterations {
        let batch = sample_batch(config, actuators, &controls, cost, key.child(i as u64), rollouts)?;
        history.push(IterationSummary {
            iteration: i,
            mean_state_cost: batch.mean_state_cost(),
            mean_cost_tilde: batch.mean_cost_tilde(),
            effective_sample_size: batch.effective_sample_size(),
            failures: batch.failures(),
        });
        let next = update_controls(&controls, &batch, actuators, config.rho())?;
        controls_history.push(std::mem::replace(&mut controls, next));
    }
    Ok(OptimRun {
        controls_history,
        history,
        controls,
    })
}

/// Training stream for a master seed.
pub fn train_key(seed: u64) -> StreamKey {
    StreamKey::root(seed).child(lineage::TRAIN)
}

/// Evaluation stream for a master seed, disjoint from training.
pub fn eval_key(seed: u64) -> StreamKey {
    StreamKey::root(seed).child(lineage::EVAL)
}

/// Plant noise stream; step `k` of the plant uses time index `k` of rollout 0.
pub fn plant_key(plant_seed: u64) -> StreamKey {
    StreamKey::root(plant_seed).child(lineage::PLANT)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcSettings {
    pub total_steps: usize,
    pub inner_iterations: usize,
    pub rollouts: usize,
    pub seed: u64,
    pub plant_seed: u64,
    /// Zero-noise plant when false.
    pub plant_noise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcStep {
    pub step: usize,
    pub first_mean_state_cost: f64,
    pub last_mean_state_cost: f64,
    pub last_effective_sample_size: f64,
}

#[derive(Debug, Clone)]
pub struct MpcRun {
    /// Plant states `X(t_0) … X(t_K)`.
    pub applied: Vec<Field>,
    /// Control row applied at each plant step.
    pub applied_controls: Vec<Vec<f64>>,
    pub steps: Vec<MpcStep>,
    /// Warm start left for a further step.
    pub plan: ControlSequence,
}

/// Receding-horizon control. Each outer step re-optimizes the plan from the
/// current plant state, applies its first row for one step, then shifts it.
pub fn mpc_run(
    config: &SimConfig,
    actuators: &ActuatorSet,
    cost: &CompiledCost,
    warm_start: ControlSequence,
    settings: &MpcSettings,
) -> Result<MpcRun> {
    if settings.total_steps == 0 {
        return Err(Error::param("total_steps", "must be at least 1"));
    }
    let grid = config.grid();
    let plant = plant_key(settings.plant_seed);
    let inner_root = StreamKey::root(settings.seed).child(lineage::MPC);
    let mut state = config.initial().clone();
    let mut plan = warm_start;
    let mut applied = vec![state.clone()];
    let mut applied_controls = Vec::with_capacity(settings.total_steps);
    let mut steps = Vec::with_capacity(settings.total_steps);
    let mut ws = Workspace::new(config);
    for k in 0..settings.total_steps {
        let local = config.clone().with_initial(state.clone())?;
        let run = open_loop_optimize(
            &local,
            actuators,
            cost,
            plan,
            settings.inner_iterations,
            settings.rollouts,
            inner_root.child(k as u64),
        )?;
        let first = run.history.first().expect("at least one iteration");
        let last = run.history.last().expect("at least one iteration");
        steps.push(MpcStep {
            step: k,
            first_mean_state_cost: first.mean_state_cost,
            last_mean_state_cost: last.mean_state_cost,
            last_effective_sample_size: last.effective_sample_size,
        });
        let row = run.controls.row(0).to_vec();
        let mut next = state.into_values();
        let noise = if settings.plant_noise {
            plant.fill_increments(0, k as u64, config.dt(), &mut ws.dbeta);
            config.noise().synthesize(&ws.dbeta, &mut ws.noise, &mut ws.synth);
            Some(ws.noise.as_slice())
        } else {
            None
        };
        sim::step_in_place(&mut next, config, actuators, &row, noise, k + 1)?;
        state = Field::from_values(grid, next)?;
        applied.push(state.clone());
        applied_controls.push(row);
        plan = run.controls.shifted();
    }
    Ok(MpcRun {
        applied,
        applied_controls,
        steps,
        plan,
    })
}

/// Runs a fixed plan on the plant stream, the open-loop counterpart of
/// [`mpc_run`] with identical noise.
pub fn execute_open_loop(
    config: &SimConfig,
    actuators: &ActuatorSet,
    plan: &ControlSequence,
    plant_seed: u64,
) -> Result<Vec<Field>> {
    let cfg = config.clone().with_steps(plan.steps());
    Ok(sim::rollout(&cfg, actuators, plan, plant_key(plant_seed), 0)?.states)
}

/// Pointwise mean and standard deviation over `R` rollouts at every time
/// level, each `(steps + 1) × nodes` row-major. Rollouts are simulated in
/// parallel chunks and summed in index order.
pub fn profile_statistics(
    config: &SimConfig,
    actuators: &ActuatorSet,
    controls: &ControlSequence,
    key: StreamKey,
    rollouts: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    sim::check_rollout_inputs(config, actuators, controls)?;
    if rollouts < 2 {
        return Err(Error::InsufficientSamples { got: rollouts, min: 2 });
    }
    let nodes = config.grid().len();
    let size = (controls.steps() + 1) * nodes;
    let mut sum = vec![0.0; size];
    let mut sumsq = vec![0.0; size];
    let chunk = rayon::current_num_threads().max(1) * 2;
    for start in (0..rollouts).step_by(chunk) {
        let end = (start + chunk).min(rollouts);
        let paths: Vec<Result<Vec<f64>>> = (start as u64..end as u64)
            .into_par_iter()
            .map_init(
                || Workspace::new(config),
                |ws, r| {
                    let mut path = Vec::with_capacity(size);
                    sim::propagate(config, actuators, controls, config.initial().values(), key, r, ws, |_, x, _| {
                        path.extend_from_slice(x)
                    })?;
                    Ok(path)
                },
            )
            .collect();
        for path in paths {
            let path = path?;
            for ((s, q), v) in sum.iter_mut().zip(sumsq.iter_mut()).zip(&path) {
                *s += v;
                *q += v * v;
            }
        }
    }
    let n = rollouts as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sumsq
        .iter()
        .zip(&mean)
        .map(|(q, m)| ((q - n * m * m) / (n - 1.0)).max(0.0).sqrt())
        .collect();
    Ok((mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{one_shot_optimal_controls, CostSpec, Window};
    use crate::grid::{BoundaryCondition, Grid};
    use crate::noise::NoiseModel;
    use crate::sim::DriftSpec;

    fn small_heat() -> (SimConfig, ActuatorSet, CompiledCost) {
        let grid = Grid::new(0.0, 1.0, 32, BoundaryCondition::DirichletZero).unwrap();
        let noise = NoiseModel::build_eigenbasis(grid, 16).unwrap();
        let act = ActuatorSet::build(&[0.25, 0.75], &[0.08, 0.08], &noise).unwrap();
        let cfg = SimConfig::new(DriftSpec::heat(0.1), noise, 10.0, 0.01, 20, Field::zeros(grid)).unwrap();
        let cost = CostSpec {
            kappa: 1.0,
            windows: vec![Window { lo: 0.2, hi: 0.3, target: 1.0 }],
            terminal_only: false,
        }
        .compile(&grid)
        .unwrap();
        (cfg, act, cost)
    }

    #[test]
    fn streamed_rollout_matches_stored_trajectory() {
        let (cfg, act, cost) = small_heat();
        let u = ControlSequence::from_values(20, 2, 0.01, (0..40).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let key = StreamKey::root(11);
        let mut ws = Workspace::new(&cfg);
        let s = evaluate_rollout(&cfg, &act, &u, &cost, key, 5, &mut ws).unwrap();
        let t = sim::rollout(&cfg, &act, &u, key, 5).unwrap();
        assert_eq!(s.state_cost, cost.evaluate(&t.states).unwrap());
        for j in 0..20 {
            assert_eq!(&s.deltas[j * 2..j * 2 + 2], act.delta_u(t.increments.row(j)).unwrap().as_slice());
        }
    }

    #[test]
    fn batch_is_thread_count_independent() {
        let (cfg, act, cost) = small_heat();
        let u = ControlSequence::zeros(20, 2, 0.01);
        let key = StreamKey::root(2);
        let a = with_threads(1, || sample_batch(&cfg, &act, &u, &cost, key, 40)).unwrap().unwrap();
        let b = with_threads(4, || sample_batch(&cfg, &act, &u, &cost, key, 40)).unwrap().unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn single_iteration_equals_one_shot() {
        let (cfg, act, cost) = small_heat();
        let key = train_key(9);
        let run = open_loop_optimize(&cfg, &act, &cost, ControlSequence::zeros(20, 2, 0.01), 1, 30, key).unwrap();
        let batch = sample_batch(&cfg, &act, &ControlSequence::zeros(20, 2, 0.01), &cost, key.child(1), 30).unwrap();
        let one = one_shot_optimal_controls(&batch, &act, cfg.rho(), 0.01).unwrap();
        assert_eq!(run.controls, one);
        assert_eq!(run.history.len(), 1);
    }

    #[test]
    fn zero_noise_keeps_zero_controls() {
        let (cfg, act, cost) = small_heat();
        let cfg = cfg.deterministic(true);
        let run = open_loop_optimize(&cfg, &act, &cost, ControlSequence::zeros(20, 2, 0.01), 3, 5, train_key(1)).unwrap();
        assert!(run.controls.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn optimize_rejects_bad_sizes() {
        let (cfg, act, cost) = small_heat();
        let u = ControlSequence::zeros(20, 2, 0.01);
        assert!(open_loop_optimize(&cfg, &act, &cost, u.clone(), 0, 10, train_key(1)).is_err());
        assert!(matches!(
            open_loop_optimize(&cfg, &act, &cost, u, 1, 1, train_key(1)),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn single_mpc_step() {
        let (cfg, act, cost) = small_heat();
        let settings = MpcSettings {
            total_steps: 1,
            inner_iterations: 2,
            rollouts: 10,
            seed: 4,
            plant_seed: 8,
            plant_noise: true,
        };
        let run = mpc_run(&cfg, &act, &cost, ControlSequence::zeros(20, 2, 0.01), &settings).unwrap();
        assert_eq!(run.applied.len(), 2);
        assert_eq!(run.steps.len(), 1);
        assert_eq!(run.applied_controls.len(), 1);
    }

    #[test]
    fn noiseless_plant_follows_plan_first_step() {
        let (cfg, act, cost) = small_heat();
        let cfg = cfg.deterministic(true);
        let plan = ControlSequence::from_values(20, 2, 0.01, vec![3.0; 40]).unwrap();
        // Zero-noise inner loop leaves the plan untouched.
        let settings = MpcSettings {
            total_steps: 1,
            inner_iterations: 2,
            rollouts: 4,
            seed: 1,
            plant_seed: 2,
            plant_noise: false,
        };
        let run = mpc_run(&cfg, &act, &cost, plan.clone(), &settings).unwrap();
        let open = sim::rollout(&cfg, &act, &plan, StreamKey::root(0), 0).unwrap();
        assert_eq!(run.applied[1], open.states[1]);
    }
}
