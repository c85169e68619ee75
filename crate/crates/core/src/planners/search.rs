//! Decision-epoch states and their successors.

use std::time::Instant;

use rayon::prelude::*;

use crate::motion::{plan_trip, Sim, SimConfig, Stop};
use crate::planners::{Algorithm, Plan, PlannerError, PlannerOptions};
use crate::world::{ObjSet, World};

/// Robot → object pairs (object indices), ascending by robot.
pub type Assignment = Vec<(usize, usize)>;

/// The fleet at a decision epoch together with the decisions that led
/// there.
#[derive(Clone, Debug)]
pub struct SearchState<'w> {
    pub sim: Sim<'w>,
    pub history: Vec<Assignment>,
    pub stop: Stop,
    /// Epochs on the way here whose enumeration was truncated.
    pub truncated: u64,
}

impl<'w> SearchState<'w> {
    pub fn world(&self) -> &'w World {
        self.sim.world()
    }

    /// Time of the event that opened this epoch (the makespan for goals).
    pub fn epoch_time(&self) -> f64 {
        if self.is_goal() {
            self.sim.trace().makespan
        } else {
            self.sim.last_event_time()
        }
    }

    pub fn is_goal(&self) -> bool {
        self.stop == Stop::Done
    }

    pub fn idle(&self) -> Vec<usize> {
        self.sim.idle_robots()
    }

    /// Object ids issued to each robot so far.
    pub fn assigned_seqs(&self) -> Vec<Vec<u32>> {
        let w = self.world();
        self.sim
            .issued()
            .iter()
            .map(|s| s.iter().map(|&o| w.id(o)).collect())
            .collect()
    }

    pub fn unassigned(&self) -> ObjSet {
        self.sim.unassigned()
    }

    pub fn cleared(&self) -> ObjSet {
        self.sim.unloaded()
    }
}

/// One child of a search state.
#[derive(Clone, Debug)]
pub struct Successor<'w> {
    pub assignment: Assignment,
    pub state: SearchState<'w>,
    /// Time between the two epochs.
    pub added_cost: f64,
}

/// The state before any decision.
pub fn initial_state<'w>(world: &'w World, opts: &PlannerOptions) -> SearchState<'w> {
    state_from(Sim::new(world, opts.sim_config()))
}

fn state_from(sim: Sim<'_>) -> SearchState<'_> {
    let stop = if sim.is_done() {
        Stop::Done
    } else {
        Stop::Epoch
    };
    SearchState {
        sim,
        history: Vec::new(),
        stop,
        truncated: 0,
    }
}

/// Length of the trip robot `robot` would drive for `object` now, if it can
/// be planned.
pub(crate) fn trip_length(
    sim: &Sim<'_>,
    robot: usize,
    object: usize,
    blockers: ObjSet,
) -> Option<f64> {
    let removed = sim.picked().union(blockers).without(object);
    plan_trip(sim.world(), robot, sim.position(robot), object, removed)
        .ok()
        .map(|p| p.length())
}

fn permutations(n: usize, r: usize) -> f64 {
    (0..r).map(|i| (n - i) as f64).product()
}

/// Injective assignments of idle robots to assignable objects, in
/// lexicographic order. When fewer objects than robots are assignable every
/// object is assigned and the rest of the robots stay idle. Returns whether
/// the enumeration was truncated to `cap`.
pub(crate) fn enumerate_assignments(
    sim: &Sim<'_>,
    robots: &[usize],
    objects: &[(usize, ObjSet)],
    cap: usize,
) -> (Vec<Assignment>, bool) {
    let r = robots.len();
    let a = objects.len();
    let assigned_total = r.min(a);
    let count_for = |p: usize| -> f64 {
        // Assignments for the first p robots, with the idle budget.
        let idle_budget = r - assigned_total;
        (0..=idle_budget.min(p))
            .map(|idle| binomial(p, idle) * permutations(a, p - idle))
            .sum::<f64>()
    };
    let mut prefix = r;
    while prefix > 0 && count_for(prefix) > cap as f64 {
        prefix -= 1;
    }
    let truncated = prefix < r;
    let mut out = Vec::new();
    let mut current = Vec::new();
    let mut used = vec![false; a];
    recurse(
        robots,
        objects,
        prefix,
        r - assigned_total,
        0,
        &mut used,
        &mut current,
        &mut out,
    );
    if truncated {
        for asg in &mut out {
            complete_greedily(sim, robots, objects, prefix, assigned_total, asg);
        }
    }
    (out, truncated)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    robots: &[usize],
    objects: &[(usize, ObjSet)],
    prefix: usize,
    idle_budget: usize,
    depth: usize,
    used: &mut Vec<bool>,
    current: &mut Assignment,
    out: &mut Vec<Assignment>,
) {
    if depth == prefix {
        out.push(current.clone());
        return;
    }
    for (i, &(o, _)) in objects.iter().enumerate() {
        if used[i] {
            continue;
        }
        used[i] = true;
        current.push((robots[depth], o));
        recurse(
            robots,
            objects,
            prefix,
            idle_budget,
            depth + 1,
            used,
            current,
            out,
        );
        current.pop();
        used[i] = false;
    }
    if idle_budget > 0 {
        recurse(
            robots,
            objects,
            prefix,
            idle_budget - 1,
            depth + 1,
            used,
            current,
            out,
        );
    }
}

/// Surplus robots take the nearest remaining object, in robot order.
fn complete_greedily(
    sim: &Sim<'_>,
    robots: &[usize],
    objects: &[(usize, ObjSet)],
    prefix: usize,
    assigned_total: usize,
    asg: &mut Assignment,
) {
    for &robot in &robots[prefix..] {
        if asg.len() >= assigned_total {
            break;
        }
        let best = objects
            .iter()
            .filter(|(o, _)| !asg.iter().any(|&(_, x)| x == *o))
            .filter_map(|&(o, s)| trip_length(sim, robot, o, s).map(|l| (l, o)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, o)) = best {
            asg.push((robot, o));
        }
    }
}

/// Applies an assignment and simulates to the next epoch. `None` when a trip
/// cannot be planned, the simulation stalls, or the result is a dead end.
pub(crate) fn apply<'w>(
    state: &SearchState<'w>,
    assignment: &Assignment,
) -> Option<SearchState<'w>> {
    let mut sim = state.sim.clone();
    for &(r, o) in assignment {
        sim.assign(r, o).ok()?;
    }
    let stop = advance(&mut sim).ok()?;
    let mut history = state.history.clone();
    history.push(assignment.clone());
    Some(SearchState {
        sim,
        history,
        stop,
        truncated: state.truncated,
    })
}

/// Runs to the next epoch; a quiescent fleet with assignable work also
/// counts as an epoch, without it the state is a dead end.
fn advance(sim: &mut Sim<'_>) -> Result<Stop, PlannerError> {
    match sim.run_until_epoch()? {
        Stop::Quiescent if !sim.assignable().is_empty() => Ok(Stop::Epoch),
        Stop::Quiescent => Err(PlannerError::NoFeasibleAssignment {
            time: sim.time(),
            remaining: sim.unassigned().len(),
        }),
        stop => Ok(stop),
    }
}

/// Candidate assignments at a state, before simulation.
pub(crate) fn candidate_assignments(
    state: &SearchState<'_>,
    opts: &PlannerOptions,
) -> Result<(Vec<Assignment>, bool), PlannerError> {
    let robots = state.idle();
    let objects = state.sim.assignable();
    if objects.is_empty() || robots.is_empty() {
        if state.sim.unassigned().is_empty() || has_work(state) {
            // Nothing to decide: wait for the fleet.
            return Ok((vec![Vec::new()], false));
        }
        return Err(PlannerError::NoFeasibleAssignment {
            time: state.epoch_time(),
            remaining: state.sim.unassigned().len(),
        });
    }
    Ok(enumerate_assignments(
        &state.sim,
        &robots,
        &objects,
        opts.enumeration_cap,
    ))
}

fn has_work(state: &SearchState<'_>) -> bool {
    (0..state.world().k()).any(|i| state.sim.queue_len(i) > 0 || !state.idle().contains(&i))
}

/// All feasible successors of a non-goal state, in enumeration order.
pub fn successors<'w>(
    state: &SearchState<'w>,
    opts: &PlannerOptions,
) -> Result<Vec<Successor<'w>>, PlannerError> {
    let (candidates, truncated) = candidate_assignments(state, opts)?;
    let base = state.epoch_time();
    let out: Vec<Successor<'w>> = candidates
        .into_par_iter()
        .filter_map(|asg| {
            let mut child = apply(state, &asg)?;
            child.truncated += truncated as u64;
            let added_cost = child.epoch_time() - base;
            Some(Successor {
                assignment: asg,
                state: child,
                added_cost,
            })
        })
        .collect();
    Ok(out)
}

/// Re-runs a decision history with sampling on.
pub fn replay<'w>(
    world: &'w World,
    config: SimConfig,
    history: &[Assignment],
) -> Result<Sim<'w>, PlannerError> {
    let mut sim = Sim::new(
        world,
        SimConfig {
            record_samples: true,
            ..config
        },
    );
    for asg in history {
        for &(r, o) in asg {
            sim.assign(r, o)?;
        }
        advance(&mut sim)?;
    }
    Ok(sim)
}

/// Turns a goal history into a plan with a sampled trace.
pub(crate) fn finish_plan(
    world: &World,
    algorithm: Algorithm,
    opts: &PlannerOptions,
    history: &[Assignment],
    nodes_expanded: u64,
    truncated: u64,
    started: Instant,
) -> Result<Plan, PlannerError> {
    let sim = replay(world, opts.sim_config(), history)?;
    if !sim.is_done() {
        return Err(PlannerError::Infeasible(
            "decision history does not clear the scene".into(),
        ));
    }
    Ok(plan_from_sim(
        world,
        algorithm,
        opts.lookahead,
        sim,
        nodes_expanded,
        truncated,
        started,
    ))
}

pub(crate) fn plan_from_sim(
    world: &World,
    algorithm: Algorithm,
    lookahead: bool,
    sim: Sim<'_>,
    nodes_expanded: u64,
    truncated: u64,
    started: Instant,
) -> Plan {
    let sequences = sim
        .issued()
        .iter()
        .map(|s| s.iter().map(|&o| world.id(o)).collect())
        .collect();
    let trace = sim.into_trace();
    Plan {
        algorithm,
        lookahead,
        sequences,
        makespan: trace.makespan,
        trace,
        compute_time: started.elapsed().as_secs_f64(),
        nodes_expanded,
        truncated_epochs: truncated,
    }
}
