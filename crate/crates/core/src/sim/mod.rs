//! Scenario handling and the three control layers: day-ahead coordination,
//! intra-day receding-horizon re-coordination and the real-time loop, with
//! the AC power flow as ground truth.

mod closed_loop;
mod day_ahead;
mod profiles;
mod replica;
mod scenario;
mod trace;

pub use closed_loop::{persistent_forecast, run_receding_horizon, run_rt_loop, Targets};
pub use day_ahead::{build_agents, planning_grid, run_day_ahead, DayAhead, GridCheck, PlanningInputs};
pub use profiles::{generate, office_shape, pv_shape, tariff_at, GeneratedProfiles, SlackDisturbance, SyntheticProfiles};
pub use replica::{
    replica_limits, replica_network, replica_profiles, replica_prosumers, replica_scenario, write_replica_fixture,
    REPLICA_PROSUMER_BUSES,
};
pub use scenario::{aggregate, ProfileSource, ProsumerSeries, Scenario, ScenarioFile, Table, TimelineConfig};
pub use trace::{hex, iteration_table, CycleRecord, RtRecord, TraceLog};

use thiserror::Error;

use crate::coordinator::CoordError;
use crate::grid::GridError;
use crate::prosumer::ProsumerError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Coord(#[from] CoordError),
    #[error(transparent)]
    Prosumer(#[from] ProsumerError),
    #[error("forecast: {0}")]
    Forecast(String),
    #[error("trace: {0}")]
    Trace(String),
}
