//! Speeding up or holding back the Nagumo front with nine actuators.
//!
//!     cargo run --release --example nagumo_control [accelerate|suppress] [iterations]

use spde_control::config::{Experiment, ExperimentConfig};
use spde_control::driver::{eval_key, open_loop_optimize, train_key};
use spde_control::sim::rollout;
use spde_control::ControlSequence;

fn window_error(exp: &Experiment, u: &ControlSequence, seed: u64) -> spde_control::Result<f64> {
    let mut total = 0.0;
    for r in 0..10 {
        let t = rollout(&exp.sim, &exp.actuators, u, eval_key(seed), r)?;
        total += exp.cost.mean_abs_error(t.last().values());
    }
    Ok(total / 10.0)
}

fn main() -> spde_control::Result<()> {
    let mut args = std::env::args().skip(1);
    let task = args.next().unwrap_or_else(|| "accelerate".into());
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let cfg = ExperimentConfig::preset(&format!("nagumo_{task}"))?;
    let exp = Experiment::build(&cfg)?;

    let run = open_loop_optimize(&exp.sim, &exp.actuators, &exp.cost, exp.zero_controls(), iterations, 100, train_key(cfg.seed))?;
    for h in &run.history {
        println!("iter {:3}  mean J {:12.2}", h.iteration, h.mean_state_cost);
    }
    println!(
        "window |u - target| at t = {:.2}: uncontrolled {:.3}, controlled {:.3}",
        exp.sim.steps() as f64 * exp.sim.dt(),
        window_error(&exp, &exp.zero_controls(), cfg.seed)?,
        window_error(&exp, &run.controls, cfg.seed)?
    );
    Ok(())
}
