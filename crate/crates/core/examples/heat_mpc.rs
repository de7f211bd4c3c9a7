//! Receding-horizon control of a noisy heat plant, compared with running the
//! open-loop plan on the same noise.
//!
//!     cargo run --release --example heat_mpc

use spde_control::config::{Experiment, ExperimentConfig};
use spde_control::driver::{execute_open_loop, mpc_run, open_loop_optimize, train_key, MpcSettings};

fn main() -> spde_control::Result<()> {
    let cfg = ExperimentConfig::preset("heat_tracking")?;
    let exp = Experiment::build(&cfg)?;
    let plan = open_loop_optimize(&exp.sim, &exp.actuators, &exp.cost, exp.zero_controls(), 100, 100, train_key(cfg.seed))?
        .controls;

    let settings = MpcSettings {
        total_steps: exp.sim.steps(),
        inner_iterations: 5,
        rollouts: 100,
        seed: cfg.seed,
        plant_seed: 77,
        plant_noise: true,
    };
    let mpc = mpc_run(&exp.sim, &exp.actuators, &exp.cost, plan.clone(), &settings)?;
    let open = execute_open_loop(&exp.sim, &exp.actuators, &plan, settings.plant_seed)?;

    println!("   t    |err| mpc   |err| open-loop");
    for j in (0..=settings.total_steps).step_by(10) {
        println!(
            "{:5.2}   {:9.4}   {:9.4}",
            j as f64 * exp.sim.dt(),
            exp.cost.mean_abs_error(mpc.applied[j].values()),
            exp.cost.mean_abs_error(open[j].values())
        );
    }
    Ok(())
}
