//! Free energy, relative entropy and the Girsanov martingale on the heat
//! problem under a constant control.
//!
//!     cargo run --release --example measure_checks

use spde_control::config::{Experiment, ExperimentConfig};
use spde_control::control::importance_weights;
use spde_control::driver::sample_batch;
use spde_control::measure::{discrete_legendre, verify_kl_and_legendre};
use spde_control::{ControlSequence, StreamKey};

fn main() -> spde_control::Result<()> {
    let cfg = ExperimentConfig::preset("heat_tracking")?;
    let exp = Experiment::build(&cfg)?;
    let (l, n) = (exp.sim.steps(), exp.actuators.len());
    let u = ControlSequence::from_values(l, n, exp.sim.dt(), vec![0.25; l * n])?;

    let r = verify_kl_and_legendre(&exp.sim, &exp.actuators, &u, &exp.cost, 10_000, cfg.seed)?;
    println!("E_P[dQ/dP]      = {:.4} ± {:.4}", r.martingale.mean, r.martingale.stderr);
    println!("KL monte carlo  = {:.4} ± {:.4}", r.kl_mc, r.kl_mc_stderr);
    println!("KL analytic     = {:.4}", r.kl_analytic);
    println!("free energy     = {:.2} ± {:.2}", r.free_energy_lhs, r.free_energy_stderr);
    println!("E_ctrl[J]+KL/ρ  = {:.2}", r.mean_cost_controlled + r.kl_mc / r.rho);
    println!("all contracts hold: {}", r.all_pass());

    // On a finite batch, the Gibbs reweighting attains the bound exactly.
    let batch = sample_batch(&exp.sim, &exp.actuators, &exp.zero_controls(), &exp.cost, StreamKey::root(9), 500)?;
    let costs: Vec<f64> = batch.samples().iter().flatten().map(|s| s.state_cost).collect();
    let rho = exp.sim.rho() / 1000.0;
    let q = importance_weights(&costs, rho)?;
    let (v, rhs) = discrete_legendre(&costs, &q, rho)?;
    println!("discrete bound at ρ={rho}: V={v:.6} rhs={rhs:.6}");
    Ok(())
}
