//! Scenario files, the closed-loop simulator and the command line front end
//! for `waiter-core`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod scenario;
pub mod simworld;
