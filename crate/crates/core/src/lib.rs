//! Multi-agent test orchestration for multi-user interactive app features.
//!
//! A Coordinator agent works out how many users a task needs and splits it
//! into per-user sub-tasks; one Operator agent per user drives a device through
//! the bracket action grammar, handing control between users with `[switch]`;
//! an Observer agent audits the cross-user record every few actions and at the
//! end, and a detected error restarts the run and replays the good prefix.
//! Runs are scored by success and by LCS similarity to a ground-truth trace.

pub mod action;
pub mod agents;
pub mod config;
pub mod eval;
pub mod gateway;
pub mod orchestrator;
pub mod sim;
pub mod users;
pub mod view;
