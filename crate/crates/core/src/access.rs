//! Grasp sampling, accessibility and lookahead reachability.
//!
//! An object is accessible when some collision-free grasp pose is connected
//! to the query point through free space, with every other present object
//! (and the object itself) acting as an obstacle.

use crate::geometry::Point2;
use crate::world::{GraspPose, ObjSet, World};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AvailabilityStatus {
    ReachableNow,
    /// Reachable once the listed in-flight objects (indices) are lifted.
    ReachableAfter(ObjSet),
    Unreachable,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Availability {
    pub object: usize,
    pub object_id: u32,
    pub status: AvailabilityStatus,
}

impl Availability {
    /// Objects that must be lifted first (empty for reachable-now).
    pub fn blockers(&self) -> Option<ObjSet> {
        match self.status {
            AvailabilityStatus::ReachableNow => Some(ObjSet::EMPTY),
            AvailabilityStatus::ReachableAfter(s) => Some(s),
            AvailabilityStatus::Unreachable => None,
        }
    }
}

/// Object bookkeeping at a decision epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpochView {
    /// Objects already lifted off the floor.
    pub picked: ObjSet,
    /// Objects assigned to robots but not yet lifted.
    pub pending: ObjSet,
    pub unassigned: ObjSet,
}

/// Collision-free grasp poses of object `index` when `removed` objects are
/// gone.
pub fn sample_grasps(world: &World, index: usize, removed: ObjSet) -> Vec<GraspPose> {
    debug_assert!(!removed.contains(index));
    world.valid_grasps(index, world.all().minus(removed))
}

/// True iff some grasp pose of `index` can be reached from `from`.
pub fn accessible(world: &World, index: usize, removed: ObjSet, from: Point2) -> bool {
    let present = world.all().minus(removed).with(index);
    let targets: Vec<Point2> = world
        .valid_grasps(index, present)
        .iter()
        .map(|g| g.robot_center)
        .collect();
    if targets.is_empty() {
        return false;
    }
    world
        .reachable(present, from, &targets)
        .into_iter()
        .any(|r| r)
}

/// Objects outside `removed` that are accessible from the entrance.
pub fn reachable_set(world: &World, removed: ObjSet) -> ObjSet {
    if let Some(hit) = world.cached_reachable_set(removed) {
        return hit;
    }
    let present = world.all().minus(removed);
    let mut owners = Vec::new();
    let mut targets = Vec::new();
    for i in present.iter() {
        for g in world.valid_grasps(i, present) {
            owners.push(i);
            targets.push(g.robot_center);
        }
    }
    let mut result = ObjSet::EMPTY;
    if !targets.is_empty() {
        for (owner, ok) in
            owners
                .into_iter()
                .zip(world.reachable(present, world.entrance(), &targets))
        {
            if ok {
                result.insert(owner);
            }
        }
    }
    world.store_reachable_set(removed, result);
    result
}

/// Status of every unassigned object, virtually removing in-flight ones.
///
/// Objects unlocked only by other unassigned objects stay unreachable; the
/// blocker set reported for reachable-after objects is inclusion-minimal,
/// found by dropping members in ascending order while the object stays
/// reachable.
pub fn lookahead_availability(world: &World, view: &EpochView) -> Vec<Availability> {
    let now = reachable_set(world, view.picked);
    let after = reachable_set(world, view.picked.union(view.pending));
    view.unassigned
        .iter()
        .map(|o| {
            let status = if now.contains(o) {
                AvailabilityStatus::ReachableNow
            } else if after.contains(o) {
                AvailabilityStatus::ReachableAfter(shrink_blockers(
                    world,
                    o,
                    view.picked,
                    view.pending,
                ))
            } else {
                AvailabilityStatus::Unreachable
            };
            Availability {
                object: o,
                object_id: world.id(o),
                status,
            }
        })
        .collect()
}

/// Drops members of `pending` in ascending order while `o` stays reachable
/// with `picked` and the remaining members gone.
fn shrink_blockers(world: &World, o: usize, picked: ObjSet, pending: ObjSet) -> ObjSet {
    let mut needed = pending;
    for s in pending.iter() {
        let trial = needed.without(s);
        if reachable_set(world, picked.union(trial)).contains(o) {
            needed = trial;
        }
    }
    needed
}

/// In-flight objects that must be lifted before `o` becomes reachable:
/// empty when it is reachable now, `None` when lifting all of `pending` is
/// not enough.
pub fn blockers_of(world: &World, o: usize, picked: ObjSet, pending: ObjSet) -> Option<ObjSet> {
    let pending = pending.without(o).minus(picked);
    if reachable_set(world, picked).contains(o) {
        Some(ObjSet::EMPTY)
    } else if reachable_set(world, picked.union(pending)).contains(o) {
        Some(shrink_blockers(world, o, picked, pending))
    } else {
        None
    }
}

/// Objects that may be assigned now, with the in-flight objects each one
/// waits for. Without lookahead only reachable-now objects qualify.
pub fn assignable(world: &World, view: &EpochView, lookahead: bool) -> Vec<(usize, ObjSet)> {
    if !lookahead {
        let now = reachable_set(world, view.picked);
        return view
            .unassigned
            .intersect(now)
            .iter()
            .map(|o| (o, ObjSet::EMPTY))
            .collect();
    }
    lookahead_availability(world, view)
        .into_iter()
        .filter_map(|a| a.blockers().map(|b| (a.object, b)))
        .collect()
}

/// Repeatedly removes the lowest-index accessible object. Returns whether
/// everything could be removed and the removal order (ids).
pub fn peel_feasible(world: &World) -> (bool, Vec<u32>) {
    let mut removed = ObjSet::EMPTY;
    let mut order = Vec::with_capacity(world.n());
    loop {
        let open = reachable_set(world, removed).minus(removed);
        match open.iter().next() {
            Some(o) => {
                removed.insert(o);
                order.push(world.id(o));
            }
            None => break,
        }
    }
    (removed == world.all(), order)
}
