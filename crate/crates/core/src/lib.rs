//! Sampling-based stochastic optimal control for semilinear SPDEs.
//!
//! The controlled state equation is
//!
//! ```text
//! dX = (ε ∂²ₓX + F(X) + Σ_l m_l(x) u_l(t)) dt + ρ^{-1/2} dW
//! ```
//!
//! on an interval with Dirichlet or Neumann boundaries, where `W` is a
//! cylindrical Wiener process truncated to the leading Laplacian
//! eigenfunctions and `m_l` are Gaussian actuators. Controls are improved by
//! importance-weighted averages of the noise seen by sampled rollouts, either
//! once over a horizon ([`driver::open_loop_optimize`]) or in a receding
//! horizon loop ([`driver::mpc_run`]).
//!
//! ```no_run
//! use spde_control::config::{Experiment, ExperimentConfig};
//! use spde_control::driver;
//!
//! let cfg = ExperimentConfig::preset("heat_tracking")?;
//! let exp = Experiment::build(&cfg)?;
//! let run = driver::open_loop_optimize(
//!     &exp.sim, &exp.actuators, &exp.cost, exp.zero_controls(), 20, 100, driver::train_key(cfg.seed),
//! )?;
//! println!("{:?}", run.state_costs());
//! # Ok::<(), spde_control::Error>(())
//! ```

pub mod actuators;
pub mod commands;
pub mod config;
pub mod control;
pub mod driver;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod measure;
pub mod noise;
pub mod sim;

pub use actuators::ActuatorSet;
pub use control::{ControlSequence, CostSpec, RolloutBatch, Window};
pub use error::{Error, Result};
pub use grid::{BoundaryCondition, Field, Grid};
pub use noise::{NoiseModel, StreamKey};
pub use sim::{DriftSpec, SimConfig, Trajectory};
