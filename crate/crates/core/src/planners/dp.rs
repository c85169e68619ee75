//! Approximate subset dynamic programming over witness schedules.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::access::reachable_set;
use crate::motion::{QueuedTrip, Sim, SimConfig};
use crate::planners::search::plan_from_sim;
use crate::planners::{Algorithm, Plan, PlannerError, PlannerOptions};
use crate::world::{ObjSet, World};

/// Work counters of one DP run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DpStats {
    /// Subsets visited, the empty set included.
    pub subsets: u64,
    /// (object, robot) pairs considered.
    pub recursion: u64,
}

/// The schedule realizing a subset value.
#[derive(Clone)]
struct Witness<'w> {
    /// Simulated makespan of the schedule.
    cost: f64,
    /// Object indices per robot, in pick order.
    lists: Vec<Vec<usize>>,
    /// The same trips with the absent sets they departed with, so the
    /// final simulation takes the witness's paths.
    trips: Vec<Vec<QueuedTrip>>,
    /// Per robot: the simulation right after its last unload.
    snapshots: Vec<Arc<Sim<'w>>>,
    /// Per robot: when it became free.
    avail: Vec<f64>,
}

/// Runs `lists` from `base`, rebuilding the queues of every robot, and
/// returns the witness of the result.
fn extend<'w>(base: &Sim<'w>, lists: Vec<Vec<usize>>) -> Option<Witness<'w>> {
    let mut sim = base.clone();
    sim.clear_queues();
    let mut target = ObjSet::EMPTY;
    for (r, list) in lists.iter().enumerate() {
        for &o in list {
            target.insert(o);
        }
        for &o in &list[sim.departed(r)..] {
            sim.enqueue(r, QueuedTrip::new(o));
        }
    }
    sim.set_target(target);
    let k = lists.len();
    let mut snaps: Vec<Option<Arc<Sim<'w>>>> = vec![None; k];
    let finished = |sim: &Sim<'w>, r: usize| {
        sim.is_free(r)
            && sim.departed(r) == lists[r].len()
            && lists[r].last().is_none_or(|&o| sim.unloaded().contains(o))
    };
    for (r, snap) in snaps.iter_mut().enumerate() {
        if finished(&sim, r) {
            *snap = Some(Arc::new(sim.clone()));
        }
    }
    sim.run_until_quiescent_with(|s| {
        for (r, snap) in snaps.iter_mut().enumerate() {
            if snap.is_none() && finished(s, r) {
                *snap = Some(Arc::new(s.clone()));
            }
        }
    })
    .ok()?;
    if !sim.is_done() {
        return None;
    }
    let snapshots: Vec<Arc<Sim<'w>>> = snaps.into_iter().collect::<Option<_>>()?;
    let avail = (0..k).map(|r| snapshots[r].clock(r)).collect();
    let trips = lists
        .iter()
        .map(|list| list.iter().map(|&o| sim.departed_trip(o)).collect())
        .collect::<Option<_>>()?;
    Some(Witness {
        cost: sim.trace().makespan,
        lists,
        trips,
        snapshots,
        avail,
    })
}

/// Best witness for `set` given the values of all its subsets one smaller.
fn evaluate<'w>(
    world: &'w World,
    initial: &Sim<'w>,
    previous: &HashMap<u64, Witness<'w>>,
    set: ObjSet,
    opts: &PlannerOptions,
) -> (Option<Witness<'w>>, u64) {
    let k = world.k();
    let mut best: Option<Witness<'w>> = None;
    let mut considered = 0;
    for o in set.iter() {
        let rest = set.without(o);
        considered += k as u64;
        let Some(prev) = previous.get(&rest.0) else {
            continue;
        };
        if !reachable_set(world, rest).contains(o) {
            continue;
        }
        for j in 0..k {
            let bound = prev.cost.max(prev.avail[j] + world.trip_lower_bound(o));
            if best.as_ref().is_some_and(|b| bound >= b.cost) {
                continue;
            }
            let mut lists = prev.lists.clone();
            lists[j].push(o);
            let base = if opts.full_resim {
                initial
            } else {
                prev.snapshots[j].as_ref()
            };
            if let Some(w) = extend(base, lists) {
                if best.as_ref().is_none_or(|b| w.cost < b.cost) {
                    best = Some(w);
                }
            }
        }
    }
    (best, considered)
}

/// Subsets of `0..n` with `m` members, ascending by bitmask.
fn subsets_of_size(n: usize, m: usize) -> Vec<ObjSet> {
    (0u64..1 << n)
        .filter(|s| s.count_ones() as usize == m)
        .map(ObjSet)
        .collect()
}

/// Subset DP: the value of a set is the best over its members `o` and
/// robots `j` of appending `o` to `j` in the witness of the set without `o`,
/// simulated from `j`'s availability snapshot. The final schedule is
/// simulated once more end to end, with each trip pinned to the path it
/// took in the witness.
pub fn plan_dp(world: &World, opts: &PlannerOptions) -> Result<(Plan, DpStats), PlannerError> {
    let started = Instant::now();
    let n = world.n();
    if n > opts.dp_cap {
        return Err(PlannerError::CapExceeded {
            n,
            cap: opts.dp_cap,
        });
    }
    let k = world.k();
    let initial = Sim::new(world, opts.sim_config());
    let empty = Witness {
        cost: 0.0,
        lists: vec![Vec::new(); k],
        trips: vec![Vec::new(); k],
        snapshots: std::iter::repeat_n(Arc::new(initial.clone()), k).collect(),
        avail: vec![0.0; k],
    };
    let mut stats = DpStats {
        subsets: 1,
        recursion: 0,
    };
    let mut level: HashMap<u64, Witness<'_>> = HashMap::from([(0, empty)]);
    for m in 1..=n {
        let sets = subsets_of_size(n, m);
        let results: Vec<(ObjSet, Option<Witness<'_>>, u64)> = sets
            .into_par_iter()
            .map(|set| {
                let (w, c) = evaluate(world, &initial, &level, set, opts);
                (set, w, c)
            })
            .collect();
        stats.subsets += results.len() as u64;
        let mut next = HashMap::new();
        for (set, witness, considered) in results {
            stats.recursion += considered;
            if let Some(w) = witness {
                next.insert(set.0, w);
            }
        }
        level = next;
    }
    let best = level
        .remove(&world.all().0)
        .ok_or_else(|| PlannerError::Infeasible("no subset schedule clears every object".into()))?;
    let mut sim = Sim::new(
        world,
        SimConfig {
            record_samples: true,
            ..opts.sim_config()
        },
    );
    for (r, trips) in best.trips.iter().enumerate() {
        for &trip in trips {
            sim.enqueue(r, trip);
        }
    }
    sim.run_until_quiescent()?;
    if !sim.is_done() {
        return Err(PlannerError::Infeasible(
            "the subset schedule does not clear the scene".into(),
        ));
    }
    let plan = plan_from_sim(
        world,
        Algorithm::Dp,
        opts.lookahead,
        sim,
        stats.recursion,
        0,
        started,
    );
    Ok((plan, stats))
}
