//! Nearest-object greedy assignment.

use std::time::Instant;

use crate::planners::search::{
    apply, candidate_assignments, finish_plan, initial_state, trip_length, Assignment, SearchState,
};
use crate::planners::{Algorithm, Plan, PlannerError, PlannerOptions};
use crate::world::World;

/// Each idle robot, in ascending order, takes the assignable object with the
/// shortest trip from where it stands (ties to the lower object).
pub(crate) fn greedy_assignment(state: &SearchState<'_>) -> Assignment {
    let objects = state.sim.assignable();
    let mut taken = Vec::new();
    let mut asg = Assignment::new();
    for robot in state.idle() {
        let best = objects
            .iter()
            .filter(|(o, _)| !taken.contains(o))
            .filter_map(|&(o, s)| trip_length(&state.sim, robot, o, s).map(|len| (len, o)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, o)) = best {
            taken.push(o);
            asg.push((robot, o));
        }
    }
    asg
}

/// Advances a state by the greedy rule. If the greedy choice cannot be
/// executed, the feasible candidate with the shortest total trip length is
/// used instead.
pub(crate) fn greedy_step<'w>(
    state: &SearchState<'w>,
    opts: &PlannerOptions,
) -> Result<SearchState<'w>, PlannerError> {
    let (candidates, truncated) = candidate_assignments(state, opts)?;
    let preferred = greedy_assignment(state);
    let wait = candidates.len() == 1 && candidates[0].is_empty();
    let mut order: Vec<(f64, &Assignment)> = Vec::new();
    if !wait {
        let objects = state.sim.assignable();
        if candidates.contains(&preferred) {
            order.push((f64::NEG_INFINITY, &preferred));
        }
        for c in &candidates {
            if c != &preferred {
                let len: Option<f64> = c
                    .iter()
                    .map(|&(r, o)| {
                        let s = objects
                            .iter()
                            .find(|x| x.0 == o)
                            .map(|x| x.1)
                            .unwrap_or_default();
                        trip_length(&state.sim, r, o, s)
                    })
                    .sum();
                order.push((len.unwrap_or(f64::INFINITY), c));
            }
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
    } else {
        order.push((0.0, &candidates[0]));
    }
    for (_, asg) in order {
        if let Some(mut next) = apply(state, asg) {
            next.truncated += truncated as u64;
            return Ok(next);
        }
    }
    Err(PlannerError::NoFeasibleAssignment {
        time: state.epoch_time(),
        remaining: state.unassigned().len(),
    })
}

/// Runs the greedy rule from `state` to a goal.
pub(crate) fn greedy_rollout<'w>(
    mut state: SearchState<'w>,
    opts: &PlannerOptions,
    nodes: &mut u64,
) -> Result<SearchState<'w>, PlannerError> {
    while !state.is_goal() {
        state = greedy_step(&state, opts)?;
        *nodes += 1;
    }
    Ok(state)
}

pub fn plan_greedy(world: &World, opts: &PlannerOptions) -> Result<Plan, PlannerError> {
    let started = Instant::now();
    let mut nodes = 0;
    let goal = greedy_rollout(initial_state(world, opts), opts, &mut nodes)?;
    finish_plan(
        world,
        Algorithm::Greedy,
        opts,
        &goal.history,
        nodes,
        goal.truncated,
        started,
    )
}
