//! Optimal clearing order for a single robot.

use std::time::Instant;

use crate::access::reachable_set;
use crate::motion::{plan_trip, QueuedTrip, Sim, SimConfig};
use crate::planners::search::plan_from_sim;
use crate::planners::{Algorithm, Plan, PlannerError, PlannerOptions};
use crate::world::{ObjSet, World};

/// Duration of the trip for `object` from the slot of robot 0 with
/// `removed` already cleared, if it can be planned.
fn trip_cost(world: &World, object: usize, removed: ObjSet) -> Option<f64> {
    if !reachable_set(world, removed).contains(object) {
        return None;
    }
    let slot = world.slots()[world.slot_of(0)];
    plan_trip(world, 0, slot, object, removed)
        .ok()
        .map(|p| p.nominal_duration)
}

/// Time robot 0 of `world` needs to clear `order` (object indices) one
/// after another from its slot; `None` if some object is not reachable in
/// turn. Robot 0 is alone, so no interaction delays occur.
pub fn single_order_cost(world: &World, order: &[usize]) -> Option<f64> {
    let mut removed = ObjSet::EMPTY;
    let mut total = 0.0;
    for &o in order {
        total += trip_cost(world, o, removed)?;
        removed.insert(o);
    }
    Some(total)
}

/// Minimum over all n! orders, by depth-first enumeration (test oracle).
/// Uses a one-robot copy of the instance.
pub fn brute_force_single(world: &World) -> Option<f64> {
    fn dfs(world: &World, removed: ObjSet, so_far: f64, best: &mut Option<f64>) {
        let rest = world.all().minus(removed);
        if rest.is_empty() {
            if best.is_none_or(|b| so_far < b) {
                *best = Some(so_far);
            }
            return;
        }
        for o in rest.iter() {
            if let Some(c) = trip_cost(world, o, removed) {
                dfs(world, removed.with(o), so_far + c, best);
            }
        }
    }
    let single = World::new(&world.instance().with_robot_count(1));
    let mut best = None;
    dfs(&single, ObjSet::EMPTY, 0.0, &mut best);
    best
}

/// Optimal single-robot makespan T and its simulated plan, by subset DP:
/// best(S) = min over reachable o ∈ S of best(S \ o) + trip(o | S \ o
/// cleared). The robot always leaves from and returns to the exit, so the
/// last object does not affect later trips.
pub fn plan_single_optimal(
    world: &World,
    opts: &PlannerOptions,
) -> Result<(f64, Plan), PlannerError> {
    let started = Instant::now();
    let n = world.n();
    if n > opts.single_cap {
        return Err(PlannerError::CapExceeded {
            n,
            cap: opts.single_cap,
        });
    }
    let single = World::new(&world.instance().with_robot_count(1));
    let size = 1usize << n;
    let mut best = vec![f64::INFINITY; size];
    let mut last = vec![usize::MAX; size];
    best[0] = 0.0;
    let mut evaluations = 0u64;
    for s in 1..size {
        let set = ObjSet(s as u64);
        for o in set.iter() {
            let rest = set.without(o);
            if !best[rest.0 as usize].is_finite() {
                continue;
            }
            evaluations += 1;
            if let Some(c) = trip_cost(&single, o, rest) {
                let v = best[rest.0 as usize] + c;
                if v < best[s] {
                    best[s] = v;
                    last[s] = o;
                }
            }
        }
    }
    let full = size - 1;
    if !best[full].is_finite() {
        return Err(PlannerError::Infeasible(
            "no order clears every object".into(),
        ));
    }
    let mut order = Vec::with_capacity(n);
    let mut s = full;
    while s != 0 {
        order.push(last[s]);
        s &= !(1 << last[s]);
    }
    order.reverse();
    let mut sim = Sim::new(
        &single,
        SimConfig {
            record_samples: true,
            ..opts.sim_config()
        },
    );
    for &o in &order {
        sim.enqueue(0, QueuedTrip::new(o));
    }
    sim.run_until_quiescent()?;
    if !sim.is_done() {
        return Err(PlannerError::Infeasible(
            "the optimal order does not clear the scene".into(),
        ));
    }
    let plan = plan_from_sim(
        &single,
        Algorithm::Single,
        opts.lookahead,
        sim,
        evaluations,
        0,
        started,
    );
    Ok((best[full], plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{OrientedRect, Point2};
    use crate::scene::{generate, Fleet, GenMode, GenParams, Instance};

    #[test]
    fn single_object_is_one_nominal_trip() {
        let inst = Instance::with_objects(
            &Fleet::narrow(3),
            &[OrientedRect::new(Point2::new(3.0, 6.0), 0.5, 0.25, 0.7)],
        );
        let w = World::new(&inst);
        let (t, plan) = plan_single_optimal(&w, &PlannerOptions::default()).unwrap();
        let single = World::new(&inst.with_robot_count(1));
        let nominal = plan_trip(&single, 0, single.start(0), 0, ObjSet::EMPTY)
            .unwrap()
            .nominal_duration;
        assert!((t - nominal).abs() < 1e-9);
        assert!((plan.makespan - t).abs() < 1e-6);
        assert_eq!(plan.sequences, vec![vec![w.id(0)]]);
    }

    #[test]
    fn matches_brute_force_and_simulation() {
        for seed in 0..3 {
            let inst = generate(
                &GenParams::new(GenMode::Cluttered, 5),
                &Fleet::narrow(2),
                40 + seed,
            )
            .unwrap();
            let w = World::new(&inst);
            let (t, plan) = plan_single_optimal(&w, &PlannerOptions::default()).unwrap();
            let brute = brute_force_single(&w).unwrap();
            assert!((t - brute).abs() < 1e-6, "{t} vs {brute}");
            assert!((plan.makespan - t).abs() < 1e-6, "{} vs {t}", plan.makespan);
            plan.validate(&w).unwrap();
        }
    }

    #[test]
    fn blocked_order_is_rejected() {
        let inst = crate::access::tests::chain_scene();
        let w = World::new(&inst.with_robot_count(1));
        // o1 sits behind the plug o0.
        assert!(single_order_cost(&w, &[1, 0]).is_none());
        let n = w.n();
        let mut order: Vec<usize> = (0..n).collect();
        assert!(single_order_cost(&w, &order).is_some());
        order.swap(0, 1);
        assert!(single_order_cost(&w, &order).is_none());
    }

    #[test]
    fn cap_is_enforced() {
        let inst = generate(&GenParams::new(GenMode::Scattered, 5), &Fleet::narrow(2), 1).unwrap();
        let w = World::new(&inst);
        let opts = PlannerOptions {
            single_cap: 3,
            ..PlannerOptions::default()
        };
        assert!(matches!(
            plan_single_optimal(&w, &opts),
            Err(PlannerError::CapExceeded { n: 5, cap: 3 })
        ));
    }
}
