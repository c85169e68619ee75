//! Sequence planners: greedy, MCTS, approximate DP, A* and the
//! single-robot optimum.

mod astar;
mod dp;
mod greedy;
mod mcts;
mod search;
mod single;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::{SimConfig, SimError, Trace};
use crate::world::World;

pub use astar::{astar_heuristic, exhaustive_best, plan_astar, HeuristicKind};
pub use dp::{plan_dp, DpStats};
pub use greedy::plan_greedy;
pub use mcts::plan_mcts;
pub use search::{initial_state, replay, successors, Assignment, SearchState, Successor};
pub use single::{brute_force_single, plan_single_optimal, single_order_cost};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Greedy,
    Mcts,
    Dp,
    Astar,
    Single,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Greedy,
        Algorithm::Mcts,
        Algorithm::Dp,
        Algorithm::Astar,
        Algorithm::Single,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Greedy => "greedy",
            Algorithm::Mcts => "mcts",
            Algorithm::Dp => "dp",
            Algorithm::Astar => "astar",
            Algorithm::Single => "single",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                format!("unknown algorithm '{s}' (expected greedy, mcts, dp, astar or single)")
            })
    }
}

/// A complete solution.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub algorithm: Algorithm,
    pub lookahead: bool,
    /// Object ids per robot, in pick order.
    pub sequences: Vec<Vec<u32>>,
    pub trace: Trace,
    pub makespan: f64,
    /// Wall-clock seconds spent planning.
    pub compute_time: f64,
    pub nodes_expanded: u64,
    /// Epochs at which the assignment enumeration was truncated.
    pub truncated_epochs: u64,
}

impl Plan {
    /// Checks that the sequences partition the objects and the trace is
    /// consistent with them.
    pub fn validate(&self, world: &World) -> Result<(), String> {
        let mut seen: Vec<u32> = self.sequences.iter().flatten().copied().collect();
        seen.sort_unstable();
        if seen != world.ids() {
            return Err(format!(
                "sequences cover {seen:?}, expected {:?}",
                world.ids()
            ));
        }
        self.trace.check_conservation(world.ids())?;
        if (self.makespan - self.trace.makespan).abs() > 1e-9 {
            return Err(format!(
                "makespan {} differs from trace {}",
                self.makespan, self.trace.makespan
            ));
        }
        Ok(())
    }

    /// Summary record written next to the trace.
    pub fn export(&self, trace_file: Option<&str>) -> PlanFile {
        PlanFile {
            algorithm: self.algorithm,
            lookahead: self.lookahead,
            sequences: self.sequences.clone(),
            makespan: self.makespan,
            nodes_expanded: self.nodes_expanded,
            compute_time: self.compute_time,
            truncated_epochs: self.truncated_epochs,
            trace: trace_file.map(str::to_owned),
        }
    }
}

/// Serialized plan summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub algorithm: Algorithm,
    pub lookahead: bool,
    pub sequences: Vec<Vec<u32>>,
    pub makespan: f64,
    pub nodes_expanded: u64,
    pub compute_time: f64,
    pub truncated_epochs: u64,
    /// Path of the trace file, if one was written.
    pub trace: Option<String>,
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("no object can be assigned at t = {time:.2} s although {remaining} remain")]
    NoFeasibleAssignment { time: f64, remaining: usize },
    #[error("time budget exhausted")]
    BudgetExhausted { incumbent: Option<Box<Plan>> },
    #[error("{n} objects exceed the cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("instance is infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Shared planner parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerOptions {
    pub lookahead: bool,
    pub sim: SimConfig,
    /// Wall-clock limit (A* only).
    pub time_budget: Option<Duration>,
    pub mcts_iterations: usize,
    pub exploration_c: f64,
    pub mcts_depth: usize,
    pub dp_cap: usize,
    pub single_cap: usize,
    /// DP: re-simulate every candidate from time zero.
    pub full_resim: bool,
    pub heuristic: HeuristicKind,
    /// Maximum assignments enumerated per epoch.
    pub enumeration_cap: usize,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        Self {
            lookahead: true,
            sim: SimConfig::default(),
            time_budget: None,
            mcts_iterations: 2000,
            exploration_c: 0.1,
            mcts_depth: 3,
            dp_cap: 20,
            single_cap: 12,
            full_resim: false,
            heuristic: HeuristicKind::Strengthened,
            enumeration_cap: 5000,
        }
    }
}

impl PlannerOptions {
    pub(crate) fn sim_config(&self) -> SimConfig {
        SimConfig {
            lookahead: self.lookahead,
            record_samples: false,
            ..self.sim
        }
    }
}

/// Runs one algorithm with the given options.
pub fn run(
    world: &World,
    algorithm: Algorithm,
    opts: &PlannerOptions,
) -> Result<Plan, PlannerError> {
    match algorithm {
        Algorithm::Greedy => plan_greedy(world, opts),
        Algorithm::Mcts => plan_mcts(world, opts),
        Algorithm::Dp => plan_dp(world, opts).map(|(plan, _)| plan),
        Algorithm::Astar => plan_astar(world, opts),
        Algorithm::Single => plan_single_optimal(world, opts).map(|(_, plan)| plan),
    }
}
