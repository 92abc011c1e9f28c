//! Steady-state secondary control of multi-terminal dc grids.
//!
//! The crate models a dc transmission network with dispatchable (dc-GFM)
//! and constant-power (ac-GFM) converter stations, reduces it to a
//! quasi-static input-output map over the dispatchable nodes, and drives
//! the voltage setpoints with a projected primal-dual controller towards
//! the KKT point of a user-defined constrained convex program. An
//! independent active-set QP solver certifies the closed-loop steady
//! state, and an event-triggered sample-and-hold layer reduces the
//! communication between the stations and the central controller.
//!
//! Batch workloads (random sweeps, paired runs) go through [`batch`],
//! which is data-parallel via rayon when the `parallel` feature (default)
//! is enabled and falls back to a sequential loop otherwise.

pub mod batch;
pub mod comms;
pub mod controller;
pub mod error;
pub mod grid;
pub mod optimizer;
pub mod sim;
