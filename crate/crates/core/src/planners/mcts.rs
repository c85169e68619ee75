//! Receding-horizon Monte Carlo tree search: simulated epochs in the tree,
//! an interaction-free timing model for rollouts.

use std::time::Instant;

use crate::access::reachable_set;
use crate::motion::{estimate_cost, Phase};
use crate::planners::search::{
    apply, candidate_assignments, finish_plan, initial_state, Assignment, SearchState,
};
use crate::planners::{Algorithm, Plan, PlannerError, PlannerOptions};
use crate::world::{ObjSet, World};

/// Upper confidence bound of a child with `visits` visits and mean reward
/// `mean` under a parent visited `parent` times. Unvisited children come
/// first.
pub(crate) fn ucb(mean: f64, visits: u32, parent: u32, c: f64) -> f64 {
    if visits == 0 {
        return f64::INFINITY;
    }
    mean + c * ((parent.max(1) as f64).ln() / visits as f64).sqrt()
}

/// Interaction-free timing model: every robot starts trips from its slot,
/// drives the picking distance both ways and waits for blockers.
#[derive(Clone, Debug)]
struct Abstract<'w> {
    world: &'w World,
    lookahead: bool,
    free_at: Vec<f64>,
    assigned: ObjSet,
    /// Per object: when its pick completes (infinite while unassigned).
    pick_end: Vec<f64>,
}

impl<'w> Abstract<'w> {
    fn from_state(state: &SearchState<'w>, lookahead: bool) -> Self {
        let w = state.world();
        let sim = &state.sim;
        let t = state.epoch_time();
        let finish = sim.finish_lower_bounds();
        let mut pick_end = vec![f64::INFINITY; w.n()];
        for o in sim.picked().iter() {
            pick_end[o] = 0.0;
        }
        for (r, issued) in sim.issued().iter().enumerate() {
            if let Some(&o) = issued.last() {
                if !sim.picked().contains(o)
                    && matches!(sim.phase(r), Phase::Outbound | Phase::Picking)
                {
                    let back = w.picking_distance(o) / w.v_max() + w.t_unload();
                    pick_end[o] = (finish[r] - back).max(t);
                }
            }
        }
        Self {
            world: w,
            lookahead,
            free_at: finish.iter().map(|&f| f.max(t)).collect(),
            assigned: sim.assigned(),
            pick_end,
        }
    }

    fn picked_by(&self, t: f64) -> ObjSet {
        let mut s = ObjSet::EMPTY;
        for o in self.assigned.iter() {
            if self.pick_end[o] <= t {
                s.insert(o);
            }
        }
        s
    }

    fn unassigned(&self) -> ObjSet {
        self.world.all().minus(self.assigned)
    }

    /// Robot that becomes free first (lowest id on ties).
    fn next_robot(&self) -> usize {
        (0..self.free_at.len())
            .min_by(|&a, &b| self.free_at[a].total_cmp(&self.free_at[b]))
            .unwrap_or(0)
    }

    /// Earliest time at or after `free_at[robot]` at which the robot has
    /// something to take, and the candidates then.
    fn options(&self, robot: usize) -> Vec<usize> {
        let mut t = self.free_at[robot];
        loop {
            let removed = if self.lookahead {
                self.assigned
            } else {
                self.picked_by(t)
            };
            let open = reachable_set(self.world, removed).intersect(self.unassigned());
            if !open.is_empty() {
                return open.iter().collect();
            }
            let next = self
                .assigned
                .iter()
                .map(|o| self.pick_end[o])
                .filter(|&p| p > t && p.is_finite())
                .fold(f64::INFINITY, f64::min);
            if !next.is_finite() {
                return Vec::new();
            }
            t = next;
        }
    }

    /// Sends `robot` for `object` as soon as it is free and the object can
    /// be reached.
    fn assign(&mut self, robot: usize, object: usize, not_before: f64) {
        let w = self.world;
        let mut t = self.free_at[robot].max(not_before);
        let travel = w.picking_distance(object) / w.v_max();
        if !reachable_set(w, self.picked_by(t)).contains(object) {
            // Wait for the objects still in flight.
            let pending = self.assigned.minus(self.picked_by(t));
            let mut arrival = t;
            for p in pending.iter() {
                arrival = arrival.max(self.pick_end[p]);
            }
            t = t.max(arrival - travel);
        }
        self.pick_end[object] = t + travel + w.t_pick();
        self.free_at[robot] = t + estimate_cost(w, object);
        self.assigned.insert(object);
    }

    fn makespan(&self) -> f64 {
        self.free_at.iter().copied().fold(0.0, f64::max)
    }

    /// Greedy completion: the first free robot takes the candidate with the
    /// cheapest estimate. `None` when the model gets stuck.
    fn rollout(mut self) -> Option<f64> {
        while !self.unassigned().is_empty() {
            let r = self.next_robot();
            let options = self.options(r);
            let o = options.into_iter().min_by(|&a, &b| {
                estimate_cost(self.world, a)
                    .total_cmp(&estimate_cost(self.world, b))
                    .then(a.cmp(&b))
            })?;
            self.assign(r, o, 0.0);
        }
        Some(self.makespan())
    }
}

struct Node<'w> {
    state: SearchState<'w>,
    /// Candidate assignments at this epoch (computed on first visit).
    actions: Option<Vec<Assignment>>,
    /// Next action to try expanding.
    next_action: usize,
    /// (action index, node id) of feasible expanded children.
    children: Vec<(usize, usize)>,
    visits: u32,
    reward: f64,
    depth: usize,
}

impl<'w> Node<'w> {
    fn new(state: SearchState<'w>, depth: usize) -> Self {
        Self {
            state,
            actions: None,
            next_action: 0,
            children: Vec::new(),
            visits: 0,
            reward: 0.0,
            depth,
        }
    }

    fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.reward / self.visits as f64
        }
    }
}

/// Reward of the fastest completion the timing model finds from `state`.
fn evaluate(state: &SearchState<'_>, t_ref: f64, lookahead: bool) -> f64 {
    let estimate = if state.is_goal() {
        Some(state.epoch_time())
    } else {
        Abstract::from_state(state, lookahead).rollout()
    };
    estimate.map_or(0.0, |t| t_ref / t.max(1e-9))
}

/// Grows a tree of simulated epochs below `root` and returns it; node 0 is
/// the root.
fn search<'w>(root: SearchState<'w>, opts: &PlannerOptions, created: &mut u64) -> Vec<Node<'w>> {
    let t_ref = Abstract::from_state(&root, opts.lookahead)
        .rollout()
        .unwrap_or(f64::INFINITY)
        .max(1e-9);
    let mut nodes = vec![Node::new(root, 0)];
    for _ in 0..opts.mcts_iterations {
        let mut path = vec![0usize];
        let mut current = 0usize;
        loop {
            let depth = nodes[current].depth;
            if depth >= opts.mcts_depth || nodes[current].state.is_goal() {
                break;
            }
            if nodes[current].actions.is_none() {
                let actions = candidate_assignments(&nodes[current].state, opts)
                    .map(|(a, _)| a)
                    .unwrap_or_default();
                nodes[current].actions = Some(actions);
            }
            // Expand the next feasible untried action, if any.
            let mut expanded = None;
            while let Some(action) = {
                let nd = &nodes[current];
                let actions = nd.actions.as_ref().expect("computed above");
                (nd.next_action < actions.len()).then_some(nd.next_action)
            } {
                nodes[current].next_action += 1;
                let asg = &nodes[current].actions.as_ref().expect("computed above")[action];
                if let Some(child) = apply(&nodes[current].state, asg) {
                    nodes.push(Node::new(child, depth + 1));
                    *created += 1;
                    let id = nodes.len() - 1;
                    nodes[current].children.push((action, id));
                    expanded = Some(id);
                    break;
                }
            }
            if let Some(id) = expanded {
                path.push(id);
                current = id;
                break;
            }
            let parent = nodes[current].visits;
            let Some(&(_, next)) = nodes[current].children.iter().max_by(|&&(_, a), &&(_, b)| {
                let ua = ucb(nodes[a].mean(), nodes[a].visits, parent, opts.exploration_c);
                let ub = ucb(nodes[b].mean(), nodes[b].visits, parent, opts.exploration_c);
                // Earlier children win ties.
                ua.total_cmp(&ub).then(b.cmp(&a))
            }) else {
                break;
            };
            path.push(next);
            current = next;
        }
        let reward = evaluate(&nodes[current].state, t_ref, opts.lookahead);
        for id in path {
            nodes[id].visits += 1;
            nodes[id].reward += reward;
        }
    }
    nodes
}

/// Commits, epoch by epoch, the most-visited root action of a fresh
/// search tree; the committed decisions are re-simulated at the end.
pub fn plan_mcts(world: &World, opts: &PlannerOptions) -> Result<Plan, PlannerError> {
    let started = Instant::now();
    let mut state = initial_state(world, opts);
    let mut nodes_created = 0u64;
    while !state.is_goal() {
        let (candidates, truncated) = candidate_assignments(&state, opts)?;
        let next = if candidates.len() == 1 {
            apply(&state, &candidates[0])
        } else {
            let mut tree = search(state.clone(), opts, &mut nodes_created);
            let mut children = tree[0].children.clone();
            children.sort_by(|&(a, x), &(b, y)| {
                tree[y]
                    .visits
                    .cmp(&tree[x].visits)
                    .then(tree[y].mean().total_cmp(&tree[x].mean()))
                    .then(a.cmp(&b))
            });
            children
                .first()
                .map(|&(_, id)| std::mem::replace(&mut tree[id].state, state.clone()))
        };
        let next = next.ok_or(PlannerError::NoFeasibleAssignment {
            time: state.epoch_time(),
            remaining: state.unassigned().len(),
        })?;
        state = SearchState {
            truncated: state.truncated + truncated as u64,
            ..next
        };
        nodes_created += 1;
    }
    finish_plan(
        world,
        Algorithm::Mcts,
        opts,
        &state.history,
        nodes_created,
        state.truncated,
        started,
    )
}
