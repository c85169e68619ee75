//! Best-first search over decision epochs.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::geometry::point_segment_distance;
use crate::motion::Phase;
use crate::planners::greedy::greedy_rollout;
use crate::planners::search::{finish_plan, initial_state, successors, Assignment, SearchState};
use crate::planners::{Algorithm, Plan, PlannerError, PlannerOptions};
use crate::world::World;

/// Which lower bound orders the search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicKind {
    /// Travel plus stationary work, split over the fleet, combined with the
    /// per-robot and per-object bounds.
    #[default]
    Strengthened,
    /// Straight-line travel only.
    PaperFaithful,
}

/// Lower bound on the makespan of any completion of `state` (equal to the
/// makespan at goals).
pub fn astar_heuristic(state: &SearchState<'_>, kind: HeuristicKind) -> f64 {
    if state.is_goal() {
        return state.epoch_time();
    }
    let w = state.world();
    let sim = &state.sim;
    let t = sim.last_event_time();
    let finish = sim.finish_lower_bounds();
    let latest = finish.iter().copied().fold(t, f64::max);
    let unassigned = sim.unassigned();
    match kind {
        HeuristicKind::Strengthened => {
            let h = work_share(state);
            let earliest = finish.iter().copied().fold(f64::INFINITY, f64::min).max(t);
            let longest = unassigned
                .iter()
                .map(|o| w.trip_lower_bound(o))
                .fold(0.0, f64::max);
            latest
                .max(t + h)
                .max(earliest + longest)
                .max(partition_bound(state, &finish))
        }
        HeuristicKind::PaperFaithful => {
            let inflight: f64 = (0..w.k())
                .map(|i| sim.remaining_distance_lower_bound(i))
                .sum();
            let pending: f64 = unassigned.iter().map(|o| 2.0 * w.picking_distance(o)).sum();
            latest.max(t + (inflight + pending) / (w.k() as f64 * w.v_max()))
        }
    }
}

/// Remaining busy time of the fleet plus the minimum duration of every
/// unassigned trip, spread evenly over the robots.
fn work_share(state: &SearchState<'_>) -> f64 {
    let w = state.world();
    let t = state.sim.last_event_time();
    let busy: f64 = state
        .sim
        .finish_lower_bounds()
        .iter()
        .map(|&f| (f - t).max(0.0))
        .sum();
    let work: f64 = state
        .sim
        .unassigned()
        .iter()
        .map(|o| w.trip_lower_bound(o))
        .sum();
    (busy + work) / w.k() as f64
}

/// Largest number of remaining trips split exactly between two robots.
const PARTITION_LIMIT: usize = 14;

/// Relaxation without interaction or obstacles: the best split of the
/// unassigned trips, at their minimum durations, between robots that become
/// free at their committed finish bounds. Idle robots below the exit first
/// have to reach it. Solved exactly for one or two robots; otherwise no
/// bound (negative infinity).
fn partition_bound(state: &SearchState<'_>, finish: &[f64]) -> f64 {
    let w = state.world();
    let sim = &state.sim;
    let jobs: Vec<f64> = sim
        .unassigned()
        .iter()
        .map(|o| w.trip_lower_bound(o))
        .collect();
    if jobs.is_empty() || w.k() > 2 || jobs.len() > PARTITION_LIMIT {
        return f64::NEG_INFINITY;
    }
    let approach: Vec<f64> = (0..w.k())
        .map(|i| match sim.phase(i) {
            Phase::Idle | Phase::Parking => {
                point_segment_distance(sim.position(i), w.exit_left(), w.exit_right()) / w.v_max()
            }
            _ => 0.0,
        })
        .collect();
    let total: f64 = jobs.iter().sum();
    if w.k() == 1 {
        return finish[0] + approach[0] + total;
    }
    let finish_with = |i: usize, load: f64| {
        if load > 0.0 {
            finish[i] + approach[i] + load
        } else {
            finish[i]
        }
    };
    let mut best = f64::INFINITY;
    for mask in 0u32..1 << jobs.len() {
        let load: f64 = jobs
            .iter()
            .enumerate()
            .filter(|(j, _)| mask >> j & 1 == 1)
            .map(|(_, d)| d)
            .sum();
        best = best.min(finish_with(0, load).max(finish_with(1, total - load)));
    }
    best
}

#[derive(PartialEq)]
struct Key(f64, u64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// A* from the initial epoch. The greedy plan seeds the incumbent; nodes
/// whose bound cannot beat it are pruned. With a time budget, running out
/// yields [`PlannerError::BudgetExhausted`] carrying the incumbent.
pub fn plan_astar(world: &World, opts: &PlannerOptions) -> Result<Plan, PlannerError> {
    let started = Instant::now();
    let root = initial_state(world, opts);
    let mut nodes = 0u64;
    let mut incumbent: Option<SearchState<'_>> =
        greedy_rollout(root.clone(), opts, &mut nodes).ok();
    let bound = |s: &Option<SearchState<'_>>| s.as_ref().map_or(f64::INFINITY, |s| s.epoch_time());

    let mut heap = BinaryHeap::new();
    let mut slab: Vec<Option<SearchState<'_>>> = Vec::new();
    heap.push(Reverse(Key(astar_heuristic(&root, opts.heuristic), 0)));
    slab.push(Some(root));
    let mut exhausted = false;

    while let Some(Reverse(Key(f, id))) = heap.pop() {
        if f >= bound(&incumbent) - 1e-9 {
            break;
        }
        let state = slab[id as usize].take().expect("each node is popped once");
        if state.is_goal() {
            incumbent = Some(state);
            break;
        }
        if opts.time_budget.is_some_and(|b| started.elapsed() >= b) {
            exhausted = true;
            break;
        }
        nodes += 1;
        let children = match successors(&state, opts) {
            Ok(children) => children,
            Err(PlannerError::NoFeasibleAssignment { .. }) => continue,
            Err(e) => return Err(e),
        };
        for child in children {
            let g = astar_heuristic(&child.state, opts.heuristic);
            if g >= bound(&incumbent) - 1e-9 {
                continue;
            }
            if child.state.is_goal() {
                incumbent = Some(child.state);
                continue;
            }
            heap.push(Reverse(Key(g, slab.len() as u64)));
            slab.push(Some(child.state));
        }
    }

    let result = incumbent
        .map(|s| {
            finish_plan(
                world,
                Algorithm::Astar,
                opts,
                &s.history,
                nodes,
                s.truncated,
                started,
            )
        })
        .transpose()?;
    match (exhausted, result) {
        (false, Some(plan)) => Ok(plan),
        (true, incumbent) => Err(PlannerError::BudgetExhausted {
            incumbent: incumbent.map(Box::new),
        }),
        (false, None) => Err(PlannerError::Infeasible(
            "no decision sequence clears the scene".into(),
        )),
    }
}

/// Minimum makespan over every decision sequence the successor generator
/// allows, by depth-first enumeration (test oracle).
pub fn exhaustive_best(world: &World, opts: &PlannerOptions) -> Option<(f64, Vec<Assignment>)> {
    fn dfs(
        state: &SearchState<'_>,
        opts: &PlannerOptions,
        best: &mut Option<(f64, Vec<Assignment>)>,
    ) {
        if state.is_goal() {
            let m = state.epoch_time();
            if best.as_ref().is_none_or(|(b, _)| m < *b) {
                *best = Some((m, state.history.clone()));
            }
            return;
        }
        if let Ok(children) = successors(state, opts) {
            for child in children {
                dfs(&child.state, opts, best);
            }
        }
    }
    let mut best = None;
    dfs(&initial_state(world, opts), opts, &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{OrientedRect, Point2};
    use crate::planners::plan_greedy;
    use crate::scene::{generate, Fleet, GenMode, GenParams, Instance};
    use crate::world::GRASP_OFFSET;

    #[test]
    fn goal_bound_is_the_makespan() {
        let inst = generate(&GenParams::new(GenMode::Scattered, 3), &Fleet::narrow(2), 1).unwrap();
        let w = World::new(&inst);
        let opts = PlannerOptions::default();
        let mut nodes = 0;
        let goal = greedy_rollout(initial_state(&w, &opts), &opts, &mut nodes).unwrap();
        for kind in [HeuristicKind::Strengthened, HeuristicKind::PaperFaithful] {
            assert_eq!(astar_heuristic(&goal, kind), goal.sim.trace().makespan);
        }
    }

    #[test]
    fn one_object_three_metres_out() {
        // Two slots; the object's bottom grasp is 3 m straight above slot 0.
        let fleet = Fleet::with_exit(2, 3.0);
        let probe = World::new(&Instance::empty(&fleet));
        let slot = probe.slots()[0];
        let hy = 0.2;
        let rect = OrientedRect::axis_aligned(
            Point2::new(slot.x, 3.0 + GRASP_OFFSET + fleet.robot_radius + hy),
            0.3,
            hy,
        );
        let w = World::new(&Instance::with_objects(&fleet, &[rect]));
        let s = initial_state(&w, &PlannerOptions::default());
        // Idle fleet: (2*3/1 + 5 + 5) / 2 = 8. A single trip needs 16.
        assert!((work_share(&s) - 8.0).abs() < 1e-9, "{}", work_share(&s));
        let f = astar_heuristic(&s, HeuristicKind::Strengthened);
        assert!((f - 16.0).abs() < 1e-9, "{f}");
        assert!((astar_heuristic(&s, HeuristicKind::PaperFaithful) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn bound_never_exceeds_realized_completion() {
        for seed in 0..6 {
            let mode = if seed % 2 == 0 {
                GenMode::Cluttered
            } else {
                GenMode::Scattered
            };
            let fleet = if seed < 4 {
                Fleet::narrow(2)
            } else {
                Fleet::scaled(2)
            };
            let inst = generate(&GenParams::new(mode, 6), &fleet, seed).unwrap();
            let w = World::new(&inst);
            let opts = PlannerOptions::default();
            let mut state = initial_state(&w, &opts);
            let mut bounds = vec![];
            while !state.is_goal() {
                bounds.push(astar_heuristic(&state, HeuristicKind::Strengthened));
                state = crate::planners::greedy::greedy_step(&state, &opts).unwrap();
            }
            let makespan = state.epoch_time();
            assert!(
                bounds.iter().all(|&b| b <= makespan + 1e-9),
                "{bounds:?} vs {makespan}"
            );
        }
    }

    #[test]
    fn astar_matches_exhaustive_and_beats_greedy() {
        for seed in 0..2 {
            let inst = generate(
                &GenParams::new(GenMode::Cluttered, 4),
                &Fleet::narrow(2),
                200 + seed,
            )
            .unwrap();
            let w = World::new(&inst);
            let opts = PlannerOptions::default();
            let astar = plan_astar(&w, &opts).unwrap();
            let (best, _) = exhaustive_best(&w, &opts).unwrap();
            assert!(
                (astar.makespan - best).abs() < 1e-6,
                "{} vs {best}",
                astar.makespan
            );
            let greedy = plan_greedy(&w, &opts).unwrap();
            assert!(astar.makespan <= greedy.makespan + 1e-6);
            astar.validate(&w).unwrap();
        }
    }

    #[test]
    fn zero_budget_returns_incumbent() {
        let inst = generate(&GenParams::new(GenMode::Cluttered, 6), &Fleet::narrow(2), 3).unwrap();
        let w = World::new(&inst);
        let opts = PlannerOptions {
            time_budget: Some(std::time::Duration::ZERO),
            ..PlannerOptions::default()
        };
        match plan_astar(&w, &opts) {
            Err(PlannerError::BudgetExhausted {
                incumbent: Some(plan),
            }) => plan.validate(&w).unwrap(),
            Ok(plan) => plan.validate(&w).unwrap(),
            Err(e) => panic!("{e}"),
        }
    }
}
