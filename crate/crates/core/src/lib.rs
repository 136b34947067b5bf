//! Real-time coordination of EVs, heat pumps and PV in radial low-voltage
//! grids.
//!
//! A slot is evaluated with an exact backward/forward sweep power flow
//! ([`powerflow`]). When a voltage or ampacity limit is breached, device
//! setpoints are re-optimized with a branch-flow second-order cone model
//! ([`socp`]) whose cost terms track demand urgency ([`der`]), verified with the
//! power flow again and applied ([`operation`]). [`scenario`] builds synthetic
//! feeders and profiles, [`report`] turns runs into metrics and files.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod der;
pub mod grid;
pub mod io;
pub mod operation;
pub mod powerflow;
pub mod report;
pub mod scenario;
pub mod socp;

pub use der::{Household, HouseholdParams, HouseholdState, ScheduleSlot};
pub use grid::{Bus, BusKind, Grid, Line};
pub use operation::{Mode, SimConfig, Simulator, SlotRecord};
pub use powerflow::{Injection, PowerFlowResult};
pub use report::RunSummary;
pub use scenario::{Scenario, ScenarioConfig};
