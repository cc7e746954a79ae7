//! Closed-loop simulation and nonlinear model-predictive voltage restoration
//! for a reduced-order MVDC shipboard microgrid with generators, batteries and
//! supercapacitors under constant and pulsed power loads.

// `!(a > b)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod error;
pub mod metrics;
pub mod ocp;
pub mod plant;
pub mod registry;
pub mod scenario;
pub mod simulator;
pub mod solver;

pub use controller::{
    build_controller, closed_loop, controller_registry, run_closed_loop, Controller, ControllerKind,
    ControllerState, FixedOffset, Nmpc, PrimaryDroop, RunOptions,
};
pub use error::{Error, Result};
pub use metrics::{compare_cost, evaluate, mape, RunReport};
pub use ocp::{InputSequence, OcpConfig, Rollout, ShootingProblem};
pub use plant::{equilibrium, ControlInput, Disturbance, InputMode, PlantParams, PlantState};
pub use scenario::{default_scenario, sweep_grid, CaseConfig, LoadProfile, Pulse};
pub use simulator::{source_powers, steady_state_window, Trajectory};
pub use solver::{solve, SolveResult, SolveStatus, SolverConfig};
