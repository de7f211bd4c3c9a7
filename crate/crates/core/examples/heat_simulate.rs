//! Uncontrolled stochastic heat equation on the unit rod.
//!
//!     cargo run --release --example heat_simulate

use spde_control::config::{Experiment, ExperimentConfig};
use spde_control::noise::lineage;
use spde_control::sim::rollout;
use spde_control::StreamKey;

fn main() -> spde_control::Result<()> {
    let cfg = ExperimentConfig::preset("heat_tracking")?;
    let exp = Experiment::build(&cfg)?;
    let key = StreamKey::root(cfg.seed).child(lineage::SIMULATE);

    let traj = rollout(&exp.sim, &exp.actuators, &exp.zero_controls(), key, 0)?;
    println!("{} states of {} nodes", traj.states.len(), exp.grid.len());
    for (j, t) in traj.times(exp.sim.dt()).enumerate().step_by(20) {
        let x = &traj.states[j];
        println!("t={t:4.2}  sup|X|={:.4}  X(0.5)={:+.4}", x.sup_norm(), x.values()[32]);
    }

    // Same key, same rollout index: same path.
    let again = rollout(&exp.sim, &exp.actuators, &exp.zero_controls(), key, 0)?;
    assert_eq!(traj.states, again.states);
    Ok(())
}
