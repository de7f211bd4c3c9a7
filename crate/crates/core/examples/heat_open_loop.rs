//! Open-loop trajectory optimization for heat tracking: three heaters try to
//! hold 5, 2.5 and 5 degrees at three spots on the rod.
//!
//!     cargo run --release --example heat_open_loop

use spde_control::config::{Experiment, ExperimentConfig};
use spde_control::driver::{eval_key, open_loop_optimize, profile_statistics, train_key};

fn main() -> spde_control::Result<()> {
    let cfg = ExperimentConfig::preset("heat_tracking")?;
    let exp = Experiment::build(&cfg)?;

    let run = open_loop_optimize(
        &exp.sim,
        &exp.actuators,
        &exp.cost,
        exp.zero_controls(),
        cfg.optimize.iterations,
        cfg.optimize.rollouts,
        train_key(cfg.seed),
    )?;
    for h in run.history.iter().step_by(10) {
        println!(
            "iter {:3}  mean J {:10.2}  mean J~ {:10.2}  ESS {:6.2}",
            h.iteration, h.mean_state_cost, h.mean_cost_tilde, h.effective_sample_size
        );
    }

    let (mean, std) = profile_statistics(&exp.sim, &exp.actuators, &run.controls, eval_key(cfg.seed), 100)?;
    let nodes = exp.grid.len();
    let last = mean.len() - nodes;
    println!("final profile at the targets:");
    for (&k, &target) in exp.cost.nodes().iter().zip(exp.cost.targets()) {
        println!(
            "  x={:.3}  target {target:.1}  mean {:.3} ± {:.3}",
            exp.grid.node(k),
            mean[last + k],
            std[last + k]
        );
    }
    Ok(())
}
