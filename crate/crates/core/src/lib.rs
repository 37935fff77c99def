//! Scheduling engine and simulator for charging an EV fleet from workplace PV.
//!
//! The crate bundles five pieces:
//!
//! * [`domain`] — fleet, charger, market and site types plus the admission
//!   gate that decides whether an EV may join a charger.
//! * [`milp`] — a generic sparse MILP, a bounded-variable two-phase simplex,
//!   branch-and-bound, an exhaustive enumeration oracle and a solution
//!   auditor.
//! * [`formulation`] — translates a [`domain::ScenarioSnapshot`] into the
//!   MILP (energy trading, V2G, reserve offers, EVSE multiplexing, network
//!   limits) and maps solutions back into schedules and cost breakdowns.
//! * [`baseline`] — immediate and average-rate charging policies and their
//!   cost accounting.
//! * [`mpc`] — the shrinking-horizon loop that re-solves the rest of the day
//!   every time step from realized state.
//!
//! [`ingest`] loads CSV inputs onto the uniform time grid and [`sweep`] runs
//! many independent days, in parallel when the `parallel` feature (default)
//! is enabled.

pub mod baseline;
pub mod domain;
pub mod formulation;
pub mod ingest;
pub mod milp;
pub mod mpc;
pub mod par;
pub mod synth;
pub mod sweep;
