//! Adaptive feedback-linearization control with concurrent-learning parameter
//! estimation and online Gaussian-process disturbance compensation.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: small dense linear algebra, Lyapunov solves, RK4.
//! * [`plant`]: integrator-chain plants, the pendulum-like benchmark, references.
//! * [`controller`]: the composite control law and its robustness term.
//! * [`concurrent_learning`]: weight estimation from a recorded history stack.
//! * [`gp`]: squared-exponential GP regression with marginal-likelihood fitting.
//! * [`simulator`]: the three-stage scenario, cases a-e, metrics, Lyapunov monitor.
//! * [`cli`]: configuration files, CSV traces and the metrics report.

pub mod cli;
pub mod concurrent_learning;
pub mod controller;
pub mod error;
pub mod gp;
pub mod numerics;
pub mod plant;
pub mod simulator;

pub use error::{Error, Result};
