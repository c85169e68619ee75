//! Trip planning, cost estimates and joint multi-robot simulation.

mod sim;
mod trace;
mod trip;

pub use sim::{simulate_joint, Phase, QueuedTrip, Sim, SimConfig, SimError, Stop};
pub use trace::{Event, EventKind, Sample, Trace, TraceError};
pub use trip::{
    estimate_cost, plan_trip, plan_trip_to_slot, plan_trip_uncached, trip_cache_get, MotionError,
    TripCostEntry, TripPlan,
};
