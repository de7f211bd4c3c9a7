//! The four experiment commands behind the `spde-control` binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use crate::config::{Experiment, ExperimentConfig};
use crate::control::ControlSequence;
use crate::driver::{self, MpcSettings};
use crate::error::{Error, Result};
use crate::io::{self, RunManifest, SeedLineage};
use crate::measure::{verify_kl_and_legendre, MeasureReport};
use crate::noise::{lineage, StreamKey};
use crate::sim;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Optimize,
    Mpc,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Optimize => "optimize",
            Command::Mpc => "mpc",
            Command::Verify => "verify",
        }
    }
}

/// Command-line overrides applied on top of the loaded config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub report: Option<MeasureReport>,
}

impl Outcome {
    /// 0 on success, 3 when a statistical contract failed.
    pub fn exit_code(&self) -> i32 {
        match &self.report {
            Some(r) if !r.all_pass() => 3,
            _ => 0,
        }
    }
}

struct Context {
    cfg: ExperimentConfig,
    exp: Experiment,
    out_dir: PathBuf,
    threads: usize,
    started: Instant,
    outputs: Vec<PathBuf>,
}

impl Context {
    fn file(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn finish(mut self, cmd: Command, streams: Vec<(&str, String)>, summary: serde_json::Value, report: Option<MeasureReport>) -> Result<Outcome> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: cmd.name().to_string(),
            config_name: self.cfg.name.clone(),
            config_hash: self.cfg.hash(),
            seed: SeedLineage {
                master_seed: self.cfg.seed,
                streams: streams.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            },
            threads: self.threads,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            summary,
            outputs: self
                .outputs
                .iter()
                .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                .collect(),
        };
        let path = manifest.write(&self.out_dir)?;
        self.outputs.push(path);
        Ok(Outcome {
            out_dir: self.out_dir,
            outputs: self.outputs,
            report,
        })
    }
}

fn prepare(cmd: Command, opts: &RunOptions) -> Result<Context> {
    let mut cfg = ExperimentConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(t) = opts.threads {
        cfg.threads = Some(t);
    }
    let out_dir = match (&opts.out_dir, &cfg.out_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => Path::new("out").join(if cfg.name.is_empty() { "run" } else { &cfg.name }).join(cmd.name()),
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let exp = Experiment::build(&cfg)?;
    Ok(Context {
        threads: cfg.threads.unwrap_or(0),
        cfg,
        exp,
        out_dir,
        started: Instant::now(),
        outputs: Vec::new(),
    })
}

fn lineage_label(seed: u64, path: &[u64]) -> String {
    let tail: Vec<String> = path.iter().map(u64::to_string).collect();
    format!("root({seed})/{}", tail.join("/"))
}

/// Loads the config, runs `cmd` on a pool of the requested size and writes
/// every output plus `manifest.json`.
pub fn run(cmd: Command, opts: &RunOptions) -> Result<Outcome> {
    let ctx = prepare(cmd, opts)?;
    let threads = ctx.threads;
    driver::with_threads(threads, move || match cmd {
        Command::Simulate => simulate(ctx),
        Command::Optimize => optimize(ctx),
        Command::Mpc => mpc(ctx),
        Command::Verify => verify(ctx),
    })?
}

fn simulate(mut ctx: Context) -> Result<Outcome> {
    let seed = ctx.cfg.seed;
    let key = StreamKey::root(seed).child(lineage::SIMULATE);
    let controls = ctx.exp.zero_controls();
    for r in 0..ctx.cfg.simulate.rollouts {
        let t = sim::rollout(&ctx.exp.sim, &ctx.exp.actuators, &controls, key, r as u64)?;
        let path = ctx.file(&format!("trajectory_{r:04}.csv"));
        io::write_trajectory(&path, &t.states, ctx.exp.sim.dt())?;
    }
    let summary = json!({ "rollouts": ctx.cfg.simulate.rollouts, "deterministic": ctx.cfg.simulate.deterministic });
    ctx.finish(Command::Simulate, vec![("simulate", lineage_label(seed, &[lineage::SIMULATE]))], summary, None)
}

fn write_profiles(ctx: &mut Context, controls: &ControlSequence, prefix: &str) -> Result<()> {
    let (mean, std) = driver::profile_statistics(
        &ctx.exp.sim,
        &ctx.exp.actuators,
        controls,
        driver::eval_key(ctx.cfg.seed),
        ctx.cfg.optimize.eval_rollouts,
    )?;
    let nodes = ctx.exp.grid.len();
    let dt = ctx.exp.sim.dt();
    for (name, data) in [("mean", mean), ("std", std)] {
        let rows: Vec<Vec<f64>> = data
            .chunks(nodes)
            .enumerate()
            .map(|(j, row)| std::iter::once(j as f64 * dt).chain(row.iter().copied()).collect())
            .collect();
        let path = ctx.file(&format!("{prefix}_{name}.csv"));
        io::write_table(&path, &io::node_header("t", nodes), &rows)?;
    }
    Ok(())
}

fn optimize(mut ctx: Context) -> Result<Outcome> {
    let seed = ctx.cfg.seed;
    let o = ctx.cfg.optimize.clone();
    let run = driver::open_loop_optimize(
        &ctx.exp.sim,
        &ctx.exp.actuators,
        &ctx.exp.cost,
        ctx.exp.zero_controls(),
        o.iterations,
        o.rollouts,
        driver::train_key(seed),
    )?;
    let header: Vec<String> = ["iteration", "mean_J", "mean_J_tilde", "effective_sample_size"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = run.history.iter().map(|h| {
        vec![
            h.iteration.to_string(),
            io::fmt_f64(h.mean_state_cost),
            io::fmt_f64(h.mean_cost_tilde),
            io::fmt_f64(h.effective_sample_size),
        ]
    });
    let path = ctx.file("cost_history.csv");
    io::write_csv(&path, &header, rows)?;
    let path = ctx.file("final_controls.csv");
    io::write_controls(&path, &run.controls)?;
    write_profiles(&mut ctx, &run.controls, "profile")?;

    let first = run.history.first().map(|h| h.mean_state_cost);
    let last = run.history.last().map(|h| h.mean_state_cost);
    let failures: usize = run.history.iter().map(|h| h.failures).sum();
    let summary = json!({
        "iterations": o.iterations,
        "rollouts": o.rollouts,
        "eval_rollouts": o.eval_rollouts,
        "first_mean_J": first,
        "last_mean_J": last,
        "failed_rollouts": failures,
    });
    let streams = vec![
        ("train", lineage_label(seed, &[lineage::TRAIN]) + "/<iteration>"),
        ("eval", lineage_label(seed, &[lineage::EVAL])),
    ];
    ctx.finish(Command::Optimize, streams, summary, None)
}

/// The plan truncated or extended (repeating its last row) to `steps` rows.
fn resize_plan(plan: &ControlSequence, steps: usize) -> ControlSequence {
    let n = plan.actuators();
    let values = (0..steps)
        .flat_map(|j| plan.row(j.min(plan.steps() - 1)).to_vec())
        .collect();
    ControlSequence::from_values(steps, n, plan.dt(), values).expect("finite plan")
}

fn mpc(mut ctx: Context) -> Result<Outcome> {
    let seed = ctx.cfg.seed;
    let m = ctx.cfg.mpc_or_default();
    let o = &ctx.cfg.optimize;
    let plan_iterations = m.plan_iterations.unwrap_or(o.iterations);
    let settings = MpcSettings {
        total_steps: m.total_steps,
        inner_iterations: m.inner_iterations.unwrap_or(o.iterations),
        rollouts: m.rollouts.unwrap_or(o.rollouts),
        seed,
        plant_seed: m.plant_seed.unwrap_or(seed),
        plant_noise: m.plant_noise,
    };
    let e = &ctx.exp;
    let plan = driver::open_loop_optimize(
        &e.sim,
        &e.actuators,
        &e.cost,
        e.zero_controls(),
        plan_iterations,
        settings.rollouts,
        driver::train_key(seed),
    )?
    .controls;
    let run = driver::mpc_run(&e.sim, &e.actuators, &e.cost, plan.clone(), &settings)?;
    let open_plan = resize_plan(&plan, settings.total_steps);
    let open = if settings.plant_noise {
        driver::execute_open_loop(&e.sim, &e.actuators, &open_plan, settings.plant_seed)?
    } else {
        let cfg = e.sim.clone().deterministic(true).with_steps(open_plan.steps());
        sim::rollout(&cfg, &e.actuators, &open_plan, driver::plant_key(settings.plant_seed), 0)?.states
    };
    let dt = e.sim.dt();
    let final_error = e.cost.mean_abs_error(run.applied.last().expect("initial state").values());
    let open_error = e.cost.mean_abs_error(open.last().expect("initial state").values());

    let path = ctx.file("applied_trajectory.csv");
    io::write_trajectory(&path, &run.applied, dt)?;
    let path = ctx.file("open_loop_trajectory.csv");
    io::write_trajectory(&path, &open, dt)?;
    let applied = ControlSequence::from_values(
        run.applied_controls.len(),
        ctx.exp.actuators.len(),
        dt,
        run.applied_controls.concat(),
    )?;
    let path = ctx.file("applied_controls.csv");
    io::write_controls(&path, &applied)?;
    let header: Vec<String> = ["step", "first_mean_J", "last_mean_J", "effective_sample_size"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = run.steps.iter().map(|s| {
        vec![
            s.step.to_string(),
            io::fmt_f64(s.first_mean_state_cost),
            io::fmt_f64(s.last_mean_state_cost),
            io::fmt_f64(s.last_effective_sample_size),
        ]
    });
    let path = ctx.file("mpc_steps.csv");
    io::write_csv(&path, &header, rows)?;

    let summary = json!({
        "total_steps": settings.total_steps,
        "plan_iterations": plan_iterations,
        "inner_iterations": settings.inner_iterations,
        "rollouts": settings.rollouts,
        "plant_seed": settings.plant_seed,
        "plant_noise": settings.plant_noise,
        "final_mean_abs_error_mpc": final_error,
        "final_mean_abs_error_open_loop": open_error,
    });
    let streams = vec![
        ("plan", lineage_label(seed, &[lineage::TRAIN]) + "/<iteration>"),
        ("replan", lineage_label(seed, &[lineage::MPC]) + "/<step>/<iteration>"),
        ("plant", lineage_label(settings.plant_seed, &[lineage::PLANT])),
    ];
    ctx.finish(Command::Mpc, streams, summary, None)
}

fn verify(mut ctx: Context) -> Result<Outcome> {
    let seed = ctx.cfg.seed;
    let v = ctx.cfg.verify.clone();
    let e = &ctx.exp;
    let controls = ControlSequence::from_values(
        e.sim.steps(),
        e.actuators.len(),
        e.sim.dt(),
        vec![v.amplitude; e.sim.steps() * e.actuators.len()],
    )?;
    let report = verify_kl_and_legendre(&e.sim, &e.actuators, &controls, &e.cost, v.rollouts, seed)?;
    let text = serde_json::to_string_pretty(&json!({
        "report": report,
        "martingale_pass": report.martingale.passes(),
        "kl_pass": report.kl_passes(),
        "legendre_pass": report.legendre_passes(),
    }))
    .expect("report serializes");
    println!("{text}");
    let path = ctx.file("verify_report.json");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    let summary = json!({ "rollouts": v.rollouts, "amplitude": v.amplitude, "all_pass": report.all_pass() });
    let streams = vec![
        ("base", lineage_label(seed, &[lineage::VERIFY_BASE])),
        ("controlled", lineage_label(seed, &[lineage::VERIFY_CONTROLLED])),
    ];
    ctx.finish(Command::Verify, streams, summary, Some(report))
}
