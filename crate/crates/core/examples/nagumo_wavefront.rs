//! Deterministic Nagumo front travelling along an axon of length 10.
//!
//!     cargo run --release --example nagumo_wavefront

use spde_control::config::{Experiment, ExperimentConfig};
use spde_control::sim::rollout;
use spde_control::{ControlSequence, StreamKey};

fn main() -> spde_control::Result<()> {
    let exp = Experiment::build(&ExperimentConfig::preset("nagumo_accelerate")?)?;
    let steps = 1000;
    let cfg = exp.sim.clone().deterministic(true).with_steps(steps);
    let u = ControlSequence::zeros(steps, exp.actuators.len(), cfg.dt());
    let traj = rollout(&cfg, &exp.actuators, &u, StreamKey::root(0), 0)?;

    println!("   t   front position (u = 0.5)");
    for (j, t) in traj.times(cfg.dt()).enumerate().step_by(100) {
        let v = traj.states[j].values();
        let k = v.iter().rposition(|&u| u >= 0.5).unwrap_or(0);
        println!("{t:5.2}   {:.2}", exp.grid.node(k));
    }
    Ok(())
}
