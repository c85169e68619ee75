//! Precomputed geometry of one instance plus the shared planning caches.
//!
//! Objects are addressed by their index in id order; sets of objects are
//! 64-bit masks ([`ObjSet`]).

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use dashmap::DashMap;

use crate::geometry::{
    inflate, Aabb, ConvexPolygon, OrientedRect, PathQuery, Point2, TangentGraph,
};
use crate::scene::Instance;

/// Corner tangents per quarter turn used for every object obstacle.
pub const CORNER_SEGMENTS: usize = 4;
/// Largest supported object count (one bit per object).
pub const MAX_OBJECTS: usize = 64;
/// Distance from an object edge to the robot boundary at a grasp.
pub const GRASP_OFFSET: f64 = 0.05;
/// Grasp candidates per rectangle edge.
pub const SAMPLES_PER_EDGE: usize = 3;
/// Wall slab thickness.
pub const WALL_THICKNESS: f64 = 0.25;
/// Depth of the staging area below the exit where idle robots park.
pub const POCKET_DEPTH: f64 = 2.5;
/// Drop-off slot spacing in robot diameters.
pub const SLOT_SPACING_DIAMETERS: f64 = 1.5;

const GRAPH_CACHE_LIMIT: usize = 4096;

/// Set of object indices.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjSet(pub u64);

impl ObjSet {
    pub const EMPTY: ObjSet = ObjSet(0);

    pub fn full(n: usize) -> Self {
        if n >= 64 {
            ObjSet(u64::MAX)
        } else {
            ObjSet((1u64 << n) - 1)
        }
    }

    pub fn single(i: usize) -> Self {
        ObjSet(1u64 << i)
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn with(self, i: usize) -> Self {
        ObjSet(self.0 | 1u64 << i)
    }

    pub fn without(self, i: usize) -> Self {
        ObjSet(self.0 & !(1u64 << i))
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1u64 << i;
    }

    pub fn remove(&mut self, i: usize) {
        self.0 &= !(1u64 << i);
    }

    pub fn union(self, o: Self) -> Self {
        ObjSet(self.0 | o.0)
    }

    pub fn intersect(self, o: Self) -> Self {
        ObjSet(self.0 & o.0)
    }

    pub fn minus(self, o: Self) -> Self {
        ObjSet(self.0 & !o.0)
    }

    pub fn is_subset(self, o: Self) -> bool {
        self.0 & !o.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Members in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(i)
        })
    }
}

impl fmt::Debug for ObjSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<usize> for ObjSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = ObjSet::EMPTY;
        for i in iter {
            s.insert(i);
        }
        s
    }
}

/// Robot placement for grasping one object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraspPose {
    pub object_id: u32,
    pub robot_center: Point2,
    /// Direction the robot faces, pointing into the object.
    pub approach_heading: f64,
}

#[derive(Debug)]
struct GraspCandidate {
    pose: GraspPose,
    wall_free: bool,
    /// Objects whose obstacle contains the pose.
    blockers: ObjSet,
    exit_distance: f64,
}

/// Key of the trip memo: quantized start, object, removed set and slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) struct TripKey {
    pub qx: i64,
    pub qy: i64,
    pub object: u8,
    pub removed: u64,
    pub slot: u8,
}

/// Instance geometry, derived constants and caches.
pub struct World {
    inst: Instance,
    ids: Vec<u32>,
    rects: Vec<OrientedRect>,
    object_polys: Vec<ConvexPolygon>,
    wall_polys: Vec<ConvexPolygon>,
    region: Aabb,
    slots: Vec<Point2>,
    parking: Vec<Point2>,
    starts: Vec<Point2>,
    grasps: Vec<Vec<GraspCandidate>>,
    picking_distance: Vec<f64>,
    trip_lower_bound: Vec<f64>,
    graphs: Mutex<HashMap<u64, Arc<TangentGraph>>>,
    reach_cache: DashMap<u64, u64>,
    pub(crate) trip_cache: DashMap<TripKey, Option<Arc<crate::motion::TripPlan>>>,
}

impl fmt::Debug for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("World")
            .field("n", &self.n())
            .field("k", &self.k())
            .field("slots", &self.slots)
            .finish()
    }
}

impl World {
    /// Precomputes geometry. The instance must pass the basic parameter
    /// checks (positive sizes, at most [`MAX_OBJECTS`] objects).
    pub fn new(inst: &Instance) -> Self {
        let mut objects = inst.objects.clone();
        objects.sort_by_key(|o| o.id);
        let r = inst.robot_radius;
        let l = inst.side_l;
        let ids: Vec<u32> = objects.iter().map(|o| o.id).collect();
        let rects: Vec<OrientedRect> = objects.iter().map(|o| o.rect).collect();
        let object_polys = rects
            .iter()
            .map(|rect| inflate(rect, r, CORNER_SEGMENTS))
            .collect();

        let t = WALL_THICKNESS;
        let ex = inst.exit_center.x;
        let half = inst.exit_width / 2.0;
        let slab = |x0: f64, x1: f64, y0: f64, y1: f64| {
            OrientedRect::axis_aligned(
                Point2::new((x0 + x1) / 2.0, (y0 + y1) / 2.0),
                (x1 - x0) / 2.0,
                (y1 - y0) / 2.0,
            )
        };
        let mut wall_polys = vec![
            inflate(&slab(-t, 0.0, -POCKET_DEPTH - t, l + t), r, 0),
            inflate(&slab(l, l + t, -POCKET_DEPTH - t, l + t), r, 0),
            inflate(&slab(-t, l + t, l, l + t), r, 0),
            inflate(&slab(-t, l + t, -POCKET_DEPTH - t, -POCKET_DEPTH), r, 0),
        ];
        if ex - half > -t {
            wall_polys.push(inflate(&slab(-t, ex - half, -t, 0.0), r, CORNER_SEGMENTS));
        }
        if ex + half < l + t {
            wall_polys.push(inflate(
                &slab(ex + half, l + t, -t, 0.0),
                r,
                CORNER_SEGMENTS,
            ));
        }
        let region = Aabb::new(
            Point2::new(-3.0, -POCKET_DEPTH - 3.0),
            Point2::new(l + 3.0, l + 3.0),
        );

        let k = inst.robot_count.max(1);
        let lanes = (inst.exit_width / (SLOT_SPACING_DIAMETERS * 2.0 * r) + 1e-9).floor() as usize;
        let m = lanes.clamp(1, k);
        let slots: Vec<Point2> = if m == 1 {
            vec![inst.exit_center]
        } else {
            (0..m)
                .map(|j| {
                    Point2::new(
                        ex - half + (j as f64 + 0.5) * inst.exit_width / m as f64,
                        0.0,
                    )
                })
                .collect()
        };
        let park_y = -(t + POCKET_DEPTH) / 2.0;
        let parking: Vec<Point2> = (0..k)
            .map(|i| {
                let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                Point2::new(ex + side * (1.0 + 0.8 * (i / 2) as f64), park_y)
            })
            .collect();
        let starts = (0..k)
            .map(|i| if i < m { slots[i] } else { parking[i] })
            .collect();

        let mut world = Self {
            inst: inst.clone(),
            ids,
            rects,
            object_polys,
            wall_polys,
            region,
            slots,
            parking,
            starts,
            grasps: Vec::new(),
            picking_distance: Vec::new(),
            trip_lower_bound: Vec::new(),
            graphs: Mutex::new(HashMap::new()),
            reach_cache: DashMap::new(),
            trip_cache: DashMap::new(),
        };
        world.grasps = (0..world.n()).map(|i| world.grasp_candidates(i)).collect();
        world.picking_distance = world
            .grasps
            .iter()
            .map(|gs| {
                gs.iter()
                    .filter(|g| g.wall_free)
                    .map(|g| g.exit_distance)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        world.trip_lower_bound = world
            .grasps
            .iter()
            .map(|gs| {
                let best = gs
                    .iter()
                    .filter(|g| g.wall_free)
                    .map(|g| {
                        let back = world
                            .slots
                            .iter()
                            .map(|s| s.distance(g.pose.robot_center))
                            .fold(f64::INFINITY, f64::min);
                        g.exit_distance + back
                    })
                    .fold(f64::INFINITY, f64::min);
                best / inst.v_max + inst.t_pick + inst.t_unload
            })
            .collect();
        world
    }

    fn grasp_candidates(&self, i: usize) -> Vec<GraspCandidate> {
        let rect = &self.rects[i];
        let corners = rect.corners();
        let standoff = self.inst.robot_radius + GRASP_OFFSET;
        let mut out = Vec::with_capacity(4 * SAMPLES_PER_EDGE);
        for e in 0..4 {
            let a = corners[e];
            let b = corners[(e + 1) % 4];
            let d = b - a;
            let normal = Point2::new(d.y, -d.x).normalized();
            for s in 0..SAMPLES_PER_EDGE {
                let frac = (s as f64 + 1.0) / (SAMPLES_PER_EDGE as f64 + 1.0);
                let p = a.lerp(b, frac) + normal * standoff;
                let heading = crate::geometry::normalize_angle((-normal).y.atan2((-normal).x));
                let blockers = (0..self.n())
                    .filter(|&j| j != i && self.object_polys[j].contains_strict(p))
                    .collect::<ObjSet>();
                out.push(GraspCandidate {
                    pose: GraspPose {
                        object_id: self.ids[i],
                        robot_center: p,
                        approach_heading: heading,
                    },
                    wall_free: !self.wall_polys.iter().any(|w| w.contains_strict(p)),
                    blockers,
                    exit_distance: crate::geometry::point_segment_distance(
                        p,
                        self.exit_left(),
                        self.exit_right(),
                    ),
                });
            }
        }
        out
    }

    pub fn instance(&self) -> &Instance {
        &self.inst
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn k(&self) -> usize {
        self.inst.robot_count
    }

    pub fn all(&self) -> ObjSet {
        ObjSet::full(self.n())
    }

    pub fn radius(&self) -> f64 {
        self.inst.robot_radius
    }

    pub fn v_max(&self) -> f64 {
        self.inst.v_max
    }

    pub fn t_pick(&self) -> f64 {
        self.inst.t_pick
    }

    pub fn t_unload(&self) -> f64 {
        self.inst.t_unload
    }

    pub fn id(&self, index: usize) -> u32 {
        self.ids[index]
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn rect(&self, index: usize) -> &OrientedRect {
        &self.rects[index]
    }

    pub fn object_polygon(&self, index: usize) -> &ConvexPolygon {
        &self.object_polys[index]
    }

    pub fn wall_polygons(&self) -> &[ConvexPolygon] {
        &self.wall_polys
    }

    pub fn exit_left(&self) -> Point2 {
        self.inst.exit_center - Point2::new(self.inst.exit_width / 2.0, 0.0)
    }

    pub fn exit_right(&self) -> Point2 {
        self.inst.exit_center + Point2::new(self.inst.exit_width / 2.0, 0.0)
    }

    /// Point from which accessibility is judged.
    pub fn entrance(&self) -> Point2 {
        self.inst.exit_center
    }

    pub fn slots(&self) -> &[Point2] {
        &self.slots
    }

    pub fn slot_of(&self, robot: usize) -> usize {
        robot % self.slots.len()
    }

    /// True when another robot unloads at the same slot.
    pub fn slot_shared(&self, robot: usize) -> bool {
        self.k() > self.slots.len()
            || (0..self.k()).any(|j| j != robot && self.slot_of(j) == self.slot_of(robot))
    }

    pub fn parking(&self, robot: usize) -> Point2 {
        self.parking[robot]
    }

    pub fn start(&self, robot: usize) -> Point2 {
        self.starts[robot]
    }

    /// Lower bound on the travel distance of any trip for the object: twice
    /// the distance from its nearest grasp candidate to the exit segment.
    pub fn picking_distance(&self, index: usize) -> f64 {
        self.picking_distance[index]
    }

    /// Lower bound on the duration of any trip that removes the object.
    pub fn trip_lower_bound(&self, index: usize) -> f64 {
        self.trip_lower_bound[index]
    }

    /// Wall polygons followed by the obstacles of present objects.
    pub fn polygons(&self, present: ObjSet) -> Vec<&ConvexPolygon> {
        self.wall_polys
            .iter()
            .chain(present.iter().map(|i| &self.object_polys[i]))
            .collect()
    }

    /// True when `p` lies outside all present obstacles.
    pub fn is_free(&self, present: ObjSet, p: Point2) -> bool {
        !self.wall_polys.iter().any(|w| w.contains_strict(p))
            && !present
                .iter()
                .any(|i| self.object_polys[i].contains_strict(p))
    }

    /// Bitangent visibility graph for a set of present objects (memoized).
    pub fn graph(&self, present: ObjSet) -> Arc<TangentGraph> {
        if let Some(g) = self
            .graphs
            .lock()
            .expect("graph cache poisoned")
            .get(&present.0)
        {
            return g.clone();
        }
        let g = Arc::new(TangentGraph::build(&self.polygons(present), &self.region));
        let mut cache = self.graphs.lock().expect("graph cache poisoned");
        if cache.len() >= GRAPH_CACHE_LIMIT {
            cache.clear();
        }
        cache.entry(present.0).or_insert(g).clone()
    }

    /// Shortest paths from `source` to each target among present obstacles.
    pub fn query(&self, present: ObjSet, source: Point2, targets: &[Point2]) -> PathQuery {
        self.graph(present)
            .query(source, targets, &self.polygons(present))
    }

    pub fn reachable(&self, present: ObjSet, source: Point2, targets: &[Point2]) -> Vec<bool> {
        self.graph(present)
            .reachable(source, targets, &self.polygons(present))
    }

    /// Every grasp candidate of the object, valid or not.
    pub fn grasp_poses(&self, index: usize) -> impl Iterator<Item = &GraspPose> + '_ {
        self.grasps[index].iter().map(|g| &g.pose)
    }

    /// Grasp candidates that are collision-free when `present` objects
    /// remain, in edge-then-parameter order.
    pub fn valid_grasps(&self, index: usize, present: ObjSet) -> Vec<GraspPose> {
        self.grasps[index]
            .iter()
            .filter(|g| g.wall_free && g.blockers.intersect(present).is_empty())
            .map(|g| g.pose)
            .collect()
    }

    pub(crate) fn cached_reachable_set(&self, removed: ObjSet) -> Option<ObjSet> {
        self.reach_cache.get(&removed.0).map(|v| ObjSet(*v))
    }

    pub(crate) fn store_reachable_set(&self, removed: ObjSet, value: ObjSet) {
        self.reach_cache.insert(removed.0, value.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Fleet;

    #[test]
    fn objset_operations() {
        let s: ObjSet = [0, 3, 5].into_iter().collect();
        assert_eq!(s.len(), 3);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 3, 5]);
        assert!(s.contains(3) && !s.contains(4));
        assert_eq!(
            s.without(3).with(4).iter().collect::<Vec<_>>(),
            vec![0, 4, 5]
        );
        assert!(ObjSet::single(5).is_subset(s));
        assert_eq!(ObjSet::full(64).len(), 64);
        assert_eq!(ObjSet::full(3), ObjSet(7));
    }

    #[test]
    fn slot_counts_follow_exit_width() {
        assert_eq!(
            World::new(&Instance::empty(&Fleet::with_exit(2, 3.0)))
                .slots()
                .len(),
            2
        );
        assert_eq!(
            World::new(&Instance::empty(&Fleet::narrow(2)))
                .slots()
                .len(),
            1
        );
        assert_eq!(
            World::new(&Instance::empty(&Fleet::with_exit(1, 3.0)))
                .slots()
                .len(),
            1
        );
        assert_eq!(
            World::new(&Instance::empty(&Fleet::scaled(5)))
                .slots()
                .len(),
            5
        );
    }

    #[test]
    fn starts_slots_and_parking_are_free_and_separated() {
        for fleet in [
            Fleet::narrow(2),
            Fleet::with_exit(2, 3.0),
            Fleet::scaled(3),
            Fleet::scaled(5),
            Fleet::narrow(4),
        ] {
            let w = World::new(&Instance::empty(&fleet));
            let mut pts: Vec<Point2> = (0..w.k()).map(|i| w.start(i)).collect();
            pts.extend((0..w.k()).map(|i| w.parking(i)));
            for &p in &pts {
                assert!(w.is_free(ObjSet::EMPTY, p), "{p:?} blocked for {fleet:?}");
            }
            for &s in w.slots() {
                assert!(w.is_free(ObjSet::EMPTY, s));
            }
            for i in 0..w.k() {
                for j in (i + 1)..w.k() {
                    assert!(w.start(i).distance(w.start(j)) >= 2.0 * w.radius());
                    assert!(w.parking(i).distance(w.parking(j)) >= 2.0 * w.radius());
                }
            }
        }
    }

    #[test]
    fn parking_connects_to_the_workspace_through_the_exit() {
        let w = World::new(&Instance::empty(&Fleet::narrow(2)));
        let q = w.query(
            ObjSet::EMPTY,
            w.parking(1),
            &[Point2::new(5.0, 5.0), w.slots()[0]],
        );
        assert!(q.distance(0).is_some());
        assert!(q.distance(1).is_some());
    }

    #[test]
    fn isolated_object_has_every_grasp() {
        let inst = Instance::with_objects(
            &Fleet::default(),
            &[OrientedRect::axis_aligned(Point2::new(5.0, 5.0), 0.3, 0.2)],
        );
        let w = World::new(&inst);
        let grasps = w.valid_grasps(0, w.all());
        assert_eq!(grasps.len(), 4 * SAMPLES_PER_EDGE);
        for g in &grasps {
            let d = w.rect(0).distance_to_point(g.robot_center);
            assert!((d - w.radius() - GRASP_OFFSET).abs() < 1e-9);
            assert!(!w.object_polygon(0).contains_strict(g.robot_center));
        }
        // Picking distance: bottom edge grasps are 5 - 0.2 - 0.35 above the exit.
        assert!((w.picking_distance(0) - (5.0 - 0.2 - 0.35)).abs() < 1e-9);
    }
}
