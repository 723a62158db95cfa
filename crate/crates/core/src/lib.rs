//! Whole-body model predictive control for carrying unsecured objects on a
//! tray mounted at the end effector of a mobile manipulator.
//!
//! The crate is `no_std` and needs only `alloc`. It contains the robot
//! kinematics, the rigid-object balancing model and its LP feasibility
//! oracle, the minimum statically-feasible friction solver, the SQP-based
//! MPC with a Riccati-structured interior-point QP solver, and the Kalman
//! filters used for state estimation. Scenario files, the closed-loop
//! simulator and the command line live in the `waiter` crate.
#![no_std]
// `!(x > 0.0)` also rejects NaN; index loops mirror the matrix algebra
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod autodiff;
pub mod balance;
pub mod error;
pub mod estimation;
pub mod kinematics;
pub mod lp;
pub(crate) mod math;
pub mod minmu;
pub mod ocp;
pub mod qp;
pub mod spatial;

pub use error::{Error, Result};
