//! Single-trip planning (exit → grasp → drop-off slot) and cost estimates.

use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{polyline_length, Point2};
use crate::world::{GraspPose, ObjSet, TripKey, World};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("object {object_id} cannot be reached from ({x:.3}, {y:.3})")]
    Unreachable { object_id: u32, x: f64, y: f64 },
}

/// One planned retrieval: drive to a grasp pose, pick, return to a slot.
#[derive(Clone, Debug, PartialEq)]
pub struct TripPlan {
    pub robot: usize,
    /// Object index (position in id order).
    pub object: usize,
    pub object_id: u32,
    pub grasp: GraspPose,
    pub out_path: Vec<Point2>,
    pub back_path: Vec<Point2>,
    pub out_length: f64,
    pub back_length: f64,
    /// Path length / v_max + t_pick + t_unload.
    pub nominal_duration: f64,
    pub slot: usize,
    /// Objects treated as absent when planning. Any of them still on the
    /// floor when the robot gets there makes it wait.
    pub removed: ObjSet,
}

impl TripPlan {
    pub fn length(&self) -> f64 {
        self.out_length + self.back_length
    }
}

/// Memoized trip cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripCostEntry {
    pub nominal_duration: f64,
    pub length: f64,
}

fn key(start: Point2, object: usize, removed: ObjSet, slot: usize) -> TripKey {
    TripKey {
        qx: (start.x * 100.0).round() as i64,
        qy: (start.y * 100.0).round() as i64,
        object: object as u8,
        removed: removed.0,
        slot: slot as u8,
    }
}

/// Cached cost of a trip, if it has been planned before from exactly this
/// start.
pub fn trip_cache_get(
    world: &World,
    start: Point2,
    object: usize,
    removed: ObjSet,
    slot: usize,
) -> Option<TripCostEntry> {
    let entry = world.trip_cache.get(&key(start, object, removed, slot))?;
    match entry.value() {
        Some(plan) if plan.out_path[0] == start => Some(TripCostEntry {
            nominal_duration: plan.nominal_duration,
            length: plan.length(),
        }),
        _ => None,
    }
}

/// Plans without touching the memo.
pub fn plan_trip_uncached(
    world: &World,
    start: Point2,
    object: usize,
    removed: ObjSet,
    slot: usize,
) -> Result<TripPlan, MotionError> {
    let unreachable = || MotionError::Unreachable {
        object_id: world.id(object),
        x: start.x,
        y: start.y,
    };
    debug_assert!(!removed.contains(object));
    let present = world.all().minus(removed).with(object);
    if !world.is_free(present, start) {
        return Err(unreachable());
    }
    let grasps = world.valid_grasps(object, present);
    if grasps.is_empty() {
        return Err(unreachable());
    }
    let points: Vec<Point2> = grasps.iter().map(|g| g.robot_center).collect();
    let slot_point = world.slots()[slot];
    let out = world.query(present, start, &points);
    let back = world.query(present.without(object), slot_point, &points);
    let mut best: Option<(usize, f64, f64)> = None;
    for i in 0..points.len() {
        if let (Some(a), Some(b)) = (out.distance(i), back.distance(i)) {
            if best.is_none_or(|(_, ba, bb)| a + b < ba + bb) {
                best = Some((i, a, b));
            }
        }
    }
    let (i, out_length, back_length) = best.ok_or_else(unreachable)?;
    let out_path = out.path(i).expect("distance implies path");
    let mut back_path = back.path(i).expect("distance implies path");
    back_path.reverse();
    debug_assert!((polyline_length(&out_path) - out_length).abs() < 1e-9);
    Ok(TripPlan {
        robot: usize::MAX,
        object,
        object_id: world.id(object),
        grasp: grasps[i],
        out_path,
        back_path,
        out_length,
        back_length,
        nominal_duration: (out_length + back_length) / world.v_max()
            + world.t_pick()
            + world.t_unload(),
        slot,
        removed,
    })
}

/// Memoized trip from `start` to object `object` and back to `slot`.
pub fn plan_trip_to_slot(
    world: &World,
    start: Point2,
    object: usize,
    removed: ObjSet,
    slot: usize,
) -> Result<Arc<TripPlan>, MotionError> {
    let k = key(start, object, removed, slot);
    if let Some(entry) = world.trip_cache.get(&k) {
        match entry.value() {
            Some(plan) if plan.out_path[0] == start => return Ok(plan.clone()),
            None if start.x == (k.qx as f64) / 100.0 && start.y == (k.qy as f64) / 100.0 => {
                return Err(MotionError::Unreachable {
                    object_id: world.id(object),
                    x: start.x,
                    y: start.y,
                })
            }
            _ => {}
        }
    }
    let result = plan_trip_uncached(world, start, object, removed, slot).map(Arc::new);
    match &result {
        Ok(plan) => {
            world
                .trip_cache
                .entry(k)
                .or_insert_with(|| Some(plan.clone()));
        }
        Err(_) if start.x == (k.qx as f64) / 100.0 && start.y == (k.qy as f64) / 100.0 => {
            world.trip_cache.entry(k).or_insert(None);
        }
        Err(_) => {}
    }
    result
}

/// Trip for a robot from `start`, returning to the robot's own slot.
pub fn plan_trip(
    world: &World,
    robot: usize,
    start: Point2,
    object: usize,
    removed: ObjSet,
) -> Result<TripPlan, MotionError> {
    let mut plan =
        (*plan_trip_to_slot(world, start, object, removed, world.slot_of(robot))?).clone();
    plan.robot = robot;
    Ok(plan)
}

pub(crate) fn plan_for_robot(
    world: &World,
    robot: usize,
    start: Point2,
    object: usize,
    removed: ObjSet,
) -> Result<Arc<TripPlan>, MotionError> {
    let shared = plan_trip_to_slot(world, start, object, removed, world.slot_of(robot))?;
    if shared.robot == robot {
        return Ok(shared);
    }
    let mut plan = (*shared).clone();
    plan.robot = robot;
    Ok(Arc::new(plan))
}

/// Optimistic duration of a trip for the object: twice its picking distance
/// at full speed plus the stationary pick and unload times.
pub fn estimate_cost(world: &World, object: usize) -> f64 {
    2.0 * world.picking_distance(object) / world.v_max() + world.t_pick() + world.t_unload()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OrientedRect;
    use crate::scene::{generate, Fleet, GenMode, GenParams, Instance};
    use crate::world::GRASP_OFFSET;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn straight_trip_has_closed_form_duration() {
        let fleet = Fleet::with_exit(1, 3.0);
        let d = 4.0;
        let hy = 0.25;
        let inst = Instance::with_objects(
            &fleet,
            &[OrientedRect::axis_aligned(Point2::new(5.0, d), 0.3, hy)],
        );
        let w = World::new(&inst);
        let plan = plan_trip(&w, 0, w.start(0), 0, ObjSet::EMPTY).unwrap();
        // Distance from the slot to the nearest grasp: d - hy - standoff.
        let reach = d - hy - (w.radius() + GRASP_OFFSET);
        assert_eq!(plan.out_path.len(), 2);
        assert_eq!(plan.back_path.len(), 2);
        assert!(
            (plan.nominal_duration - (2.0 * reach / w.v_max() + w.t_pick() + w.t_unload())).abs()
                < 1e-9
        );
        assert_eq!(plan.out_path[0], w.start(0));
        assert_eq!(*plan.back_path.last().unwrap(), w.slots()[0]);
    }

    #[test]
    fn estimate_formula() {
        let fleet = Fleet::with_exit(1, 3.0);
        // Bottom grasps sit exactly 4 m above the exit.
        let hy = 0.25;
        let cy = 4.0 + hy + fleet.robot_radius + GRASP_OFFSET;
        let inst = Instance::with_objects(
            &fleet,
            &[OrientedRect::axis_aligned(Point2::new(5.0, cy), 0.3, hy)],
        );
        let w = World::new(&inst);
        assert!((estimate_cost(&w, 0) - (8.0 + 10.0)).abs() < 1e-9);
        // An object sitting right at the exit: its bottom grasps lie on the
        // exit segment, so only the stationary time remains.
        let cy = hy + fleet.robot_radius + GRASP_OFFSET;
        let inst = Instance::with_objects(
            &fleet,
            &[OrientedRect::axis_aligned(Point2::new(5.0, cy), 0.3, hy)],
        );
        let w = World::new(&inst);
        assert!((estimate_cost(&w, 0) - (w.t_pick() + w.t_unload())).abs() < 1e-12);
    }

    #[test]
    fn estimate_never_exceeds_planned_duration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut checked = 0;
        for seed in 0..25 {
            let mode = if seed % 2 == 0 {
                GenMode::Cluttered
            } else {
                GenMode::Scattered
            };
            let inst = generate(&GenParams::new(mode, 10), &Fleet::narrow(2), seed).unwrap();
            let w = World::new(&inst);
            for _ in 0..20 {
                let o = rng.random_range(0..w.n());
                let removed: ObjSet = (0..w.n())
                    .filter(|&i| i != o && rng.random_bool(0.5))
                    .collect();
                let robot = rng.random_range(0..w.k());
                if let Ok(plan) = plan_trip(&w, robot, w.start(robot), o, removed) {
                    assert!(estimate_cost(&w, o) <= plan.nominal_duration + 1e-9);
                    assert!(w.trip_lower_bound(o) <= plan.nominal_duration + 1e-9);
                    checked += 1;
                }
            }
        }
        assert!(checked >= 250, "{checked}");
    }

    #[test]
    fn removing_others_never_lengthens_a_trip() {
        for seed in 0..10 {
            let inst = generate(
                &GenParams::new(GenMode::Cluttered, 10),
                &Fleet::narrow(2),
                40 + seed,
            )
            .unwrap();
            let w = World::new(&inst);
            for o in 0..w.n() {
                if let Ok(base) = plan_trip(&w, 0, w.start(0), o, ObjSet::EMPTY) {
                    let cleared = plan_trip(&w, 0, w.start(0), o, w.all().without(o)).unwrap();
                    assert!(cleared.nominal_duration <= base.nominal_duration + 1e-9);
                }
            }
        }
    }

    #[test]
    fn cache_hits_match_fresh_plans() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = generate(&GenParams::new(GenMode::Cluttered, 8), &Fleet::narrow(2), 7).unwrap();
        let w = World::new(&inst);
        let starts = [w.start(0), w.start(1), Point2::new(5.0, 0.0)];
        for _ in 0..10_000 {
            let o = rng.random_range(0..w.n());
            let removed: ObjSet = (0..w.n())
                .filter(|&i| i != o && rng.random_bool(0.5))
                .collect();
            let start = starts[rng.random_range(0..starts.len())];
            let cached = plan_trip_to_slot(&w, start, o, removed, 0);
            if rng.random_bool(0.01) {
                let fresh = plan_trip_uncached(&w, start, o, removed, 0);
                assert_eq!(
                    cached.as_ref().map(|p| (**p).clone()).map_err(Clone::clone),
                    fresh
                );
            }
            if let Ok(plan) = cached {
                let hit = trip_cache_get(&w, start, o, removed, 0).unwrap();
                assert_eq!(hit.nominal_duration, plan.nominal_duration);
            }
        }
    }
}
