//! Time-stepped kinematic simulation of the robot fleet.
//!
//! Every robot keeps a local clock inside the current step so that timed
//! events (pick and unload completions, arrivals at full speed) happen at
//! exact times rather than on the step grid. Robots follow their planned
//! polylines at `v_max`; conflicts between robots are resolved with a
//! sampled reciprocal-velocity-obstacle rule, and a final safety pass undoes
//! any move that would bring two robots closer than a diameter.

use std::collections::VecDeque;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::access::{assignable, blockers_of, EpochView};
use crate::geometry::{visible_among, Point2};
use crate::motion::trace::{Event, EventKind, Sample, Trace};
use crate::motion::trip::{plan_for_robot, MotionError, TripPlan};
use crate::world::{ObjSet, World, GRASP_OFFSET};

/// Number of sampled headings per candidate speed.
const DIRECTIONS: usize = 36;
const SPEED_FRACTIONS: [f64; 4] = [1.0, 0.75, 0.5, 0.25];
/// Radius, in robot radii, of the exclusive area around a shared slot.
const ZONE_RADII: f64 = 4.0;
/// Extra clearance kept between a waiting robot and a blocking object.
const WAIT_MARGIN: f64 = 0.05;
/// Seconds a robot stays blocked by a lower-numbered robot before it backs
/// off, and how long it keeps backing off.
const YIELD_AFTER: f64 = 1.0;
const YIELD_FOR: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    /// Horizon of the velocity-obstacle test.
    pub tau: f64,
    /// Simulated seconds without progress before giving up.
    pub stall_timeout: f64,
    pub contact_tol: f64,
    pub max_time: f64,
    pub record_samples: bool,
    /// Whether queued trips may start toward objects that other robots
    /// still have to clear.
    pub lookahead: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            tau: 2.0,
            stall_timeout: 60.0,
            contact_tol: 1e-6,
            max_time: 20_000.0,
            record_samples: false,
            lookahead: true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulation stalled at t = {time:.2} s")]
    Stall { time: f64 },
    #[error("simulation exceeded {time:.0} s")]
    Timeout { time: f64 },
    #[error(transparent)]
    Unreachable(#[from] MotionError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Outbound,
    Picking,
    Returning,
    Unloading,
    Parking,
}

/// A trip waiting in a robot's queue. `removed` overrides the set of objects
/// the planner may treat as absent; by default it is derived at departure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueuedTrip {
    pub object: usize,
    pub removed: Option<ObjSet>,
}

impl QueuedTrip {
    pub fn new(object: usize) -> Self {
        Self {
            object,
            removed: None,
        }
    }
}

/// Why [`Sim::run_until_epoch`] returned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stop {
    /// Some robot is idle and can be given work.
    Epoch,
    /// Every target object has been unloaded.
    Done,
    /// No robot has work left but targets remain.
    Quiescent,
}

#[derive(Clone, Debug)]
struct Robot {
    pos: Point2,
    vel: Point2,
    clock: f64,
    phase: Phase,
    path: Vec<Point2>,
    /// Index of the next waypoint in `path`.
    wp: usize,
    trip: Option<Arc<TripPlan>>,
    queue: VecDeque<QueuedTrip>,
    timer_end: f64,
    parked: bool,
    waiting: bool,
    off_path: bool,
    /// Picked set at the last failed departure.
    failed_at: Option<ObjSet>,
    /// Since when another robot has held this one in place.
    blocked_since: Option<f64>,
    /// Backing off to clear the way for a lower-numbered robot until then.
    yield_until: f64,
    /// While waiting: step aside along this direction until the given time,
    /// because a moving robot is stuck behind this one.
    make_way: Option<(Point2, f64)>,
}

impl Robot {
    fn remaining(&self) -> f64 {
        if self.wp >= self.path.len() {
            return 0.0;
        }
        let mut total = self.pos.distance(self.path[self.wp]);
        for w in self.path[self.wp..].windows(2) {
            total += w[0].distance(w[1]);
        }
        total
    }

    fn moving(&self) -> bool {
        matches!(
            self.phase,
            Phase::Outbound | Phase::Returning | Phase::Parking
        )
    }

    fn free(&self) -> bool {
        matches!(self.phase, Phase::Idle | Phase::Parking) && self.queue.is_empty()
    }

    /// Remaining polyline starting at the current position.
    fn polyline(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let first = self.path.get(self.wp).map(|&p| (self.pos, p));
        first.into_iter().chain(
            self.path
                .get(self.wp..)
                .unwrap_or(&[])
                .windows(2)
                .map(|w| (w[0], w[1])),
        )
    }

    /// Position after moving `s` along the path.
    fn advance(&self, mut s: f64) -> (Point2, usize) {
        let mut pos = self.pos;
        let mut wp = self.wp;
        while wp < self.path.len() {
            let d = pos.distance(self.path[wp]);
            if s < d {
                return (pos.lerp(self.path[wp], s / d), wp);
            }
            s -= d;
            pos = self.path[wp];
            wp += 1;
        }
        (pos, wp)
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct StepFlags {
    pick_end: bool,
    unload_end: bool,
    event_time: f64,
}

#[derive(Clone, Copy)]
struct Move {
    pos: Point2,
    wp: usize,
    arrival: Option<f64>,
    on_path: bool,
}

/// Joint simulation state. Cheap to clone for search.
#[derive(Clone, Debug)]
pub struct Sim<'w> {
    world: &'w World,
    cfg: SimConfig,
    robots: Vec<Robot>,
    step: u64,
    picked: ObjSet,
    unloaded: ObjSet,
    assigned: ObjSet,
    target: ObjSet,
    /// Per slot: the robot allowed inside its exclusive area.
    claims: Vec<Option<usize>>,
    /// Objects issued to each robot, in order.
    issued: Vec<Vec<usize>>,
    /// Per object: the set its trip treated as absent, once departed.
    departed_removed: Vec<Option<ObjSet>>,
    trace: Trace,
    last_event_time: f64,
    last_progress: f64,
    best_remaining: f64,
}

impl<'w> Sim<'w> {
    pub fn new(world: &'w World, cfg: SimConfig) -> Self {
        let k = world.k();
        let robots: Vec<Robot> = (0..k)
            .map(|i| {
                let pos = world.start(i);
                Robot {
                    pos,
                    vel: Point2::ORIGIN,
                    clock: 0.0,
                    phase: Phase::Idle,
                    path: Vec::new(),
                    wp: 0,
                    trip: None,
                    queue: VecDeque::new(),
                    timer_end: 0.0,
                    parked: pos != world.slots()[world.slot_of(i)],
                    waiting: false,
                    off_path: false,
                    failed_at: None,
                    blocked_since: None,
                    yield_until: f64::NEG_INFINITY,
                    make_way: None,
                }
            })
            .collect();
        let mut claims = vec![None; world.slots().len()];
        for (i, r) in robots.iter().enumerate() {
            let s = world.slot_of(i);
            if world.slot_shared(i) && !r.parked && claims[s].is_none() {
                claims[s] = Some(i);
            }
        }
        let mut sim = Self {
            world,
            cfg,
            robots,
            step: 0,
            picked: ObjSet::EMPTY,
            unloaded: ObjSet::EMPTY,
            assigned: ObjSet::EMPTY,
            target: world.all(),
            claims,
            issued: vec![Vec::new(); k],
            departed_removed: vec![None; world.n()],
            trace: Trace {
                dt: cfg.dt,
                robot_count: k,
                min_separation: f64::INFINITY,
                ..Trace::default()
            },
            last_event_time: 0.0,
            last_progress: 0.0,
            best_remaining: f64::INFINITY,
        };
        sim.record(0.0);
        sim
    }

    pub fn world(&self) -> &'w World {
        self.world
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn set_config(&mut self, cfg: SimConfig) {
        self.cfg = cfg;
    }

    /// Simulated time at the end of the last step.
    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.dt
    }

    /// Time of the latest pick or unload completion.
    pub fn last_event_time(&self) -> f64 {
        self.last_event_time
    }

    pub fn picked(&self) -> ObjSet {
        self.picked
    }

    pub fn unloaded(&self) -> ObjSet {
        self.unloaded
    }

    /// Objects given to some robot (including finished ones).
    pub fn assigned(&self) -> ObjSet {
        self.assigned
    }

    pub fn target(&self) -> ObjSet {
        self.target
    }

    /// Restricts completion to a subset of the objects.
    pub fn set_target(&mut self, target: ObjSet) {
        self.target = target;
    }

    pub fn unassigned(&self) -> ObjSet {
        self.target.minus(self.assigned)
    }

    pub fn phase(&self, robot: usize) -> Phase {
        self.robots[robot].phase
    }

    pub fn position(&self, robot: usize) -> Point2 {
        self.robots[robot].pos
    }

    pub fn clock(&self, robot: usize) -> f64 {
        self.robots[robot].clock
    }

    pub fn queue_len(&self, robot: usize) -> usize {
        self.robots[robot].queue.len()
    }

    /// Objects issued to each robot so far, in order.
    pub fn issued(&self) -> &[Vec<usize>] {
        &self.issued
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    /// Robots without work: idle, or heading to their parking spot.
    pub fn idle_robots(&self) -> Vec<usize> {
        (0..self.robots.len())
            .filter(|&i| self.robots[i].free())
            .collect()
    }

    pub fn is_done(&self) -> bool {
        self.target.is_subset(self.unloaded)
    }

    pub fn epoch_view(&self) -> EpochView {
        EpochView {
            picked: self.picked,
            pending: self.assigned.minus(self.picked),
            unassigned: self.unassigned(),
        }
    }

    /// Unassigned objects an idle robot could be sent to now, with the
    /// in-flight objects each one waits for.
    pub fn assignable(&self) -> Vec<(usize, ObjSet)> {
        assignable(self.world, &self.epoch_view(), self.cfg.lookahead)
    }

    /// Gives `object` to an idle robot, which departs immediately.
    pub fn assign(&mut self, robot: usize, object: usize) -> Result<(), SimError> {
        self.assign_with(robot, QueuedTrip::new(object))
    }

    pub fn assign_with(&mut self, robot: usize, trip: QueuedTrip) -> Result<(), SimError> {
        debug_assert!(self.robots[robot].free(), "robot {robot} is busy");
        debug_assert!(!self.assigned.contains(trip.object));
        let removed = self
            .departure_removed(robot, trip)
            .ok_or(MotionError::Unreachable {
                object_id: self.world.id(trip.object),
                x: self.robots[robot].pos.x,
                y: self.robots[robot].pos.y,
            })?;
        let plan = plan_for_robot(
            self.world,
            robot,
            self.robots[robot].pos,
            trip.object,
            removed,
        )?;
        self.assigned.insert(trip.object);
        self.issued[robot].push(trip.object);
        self.start_trip(robot, plan);
        Ok(())
    }

    /// Appends a trip to a robot's queue; it starts when the robot is free.
    pub fn enqueue(&mut self, robot: usize, trip: QueuedTrip) {
        debug_assert!(!self.assigned.contains(trip.object));
        self.assigned.insert(trip.object);
        self.issued[robot].push(trip.object);
        self.robots[robot].queue.push_back(trip);
    }

    /// The trip of `object` as it departed: the object together with the
    /// set its path treated as absent. `None` before departure.
    pub fn departed_trip(&self, object: usize) -> Option<QueuedTrip> {
        self.departed_removed[object].map(|removed| QueuedTrip {
            object,
            removed: Some(removed),
        })
    }

    /// Number of trips robot `robot` has started (issued minus queued).
    pub fn departed(&self, robot: usize) -> usize {
        self.issued[robot].len() - self.robots[robot].queue.len()
    }

    /// Withdraws every trip that has not departed yet.
    pub fn clear_queues(&mut self) {
        for (i, r) in self.robots.iter_mut().enumerate() {
            while let Some(q) = r.queue.pop_back() {
                self.assigned.remove(q.object);
                let last = self.issued[i].pop();
                debug_assert_eq!(last, Some(q.object));
            }
            r.failed_at = None;
        }
    }

    /// Whether the robot has nothing left to do (idle or parking, empty
    /// queue).
    pub fn is_free(&self, robot: usize) -> bool {
        self.robots[robot].free()
    }

    fn departure_removed(&self, robot: usize, trip: QueuedTrip) -> Option<ObjSet> {
        let o = trip.object;
        if let Some(r) = trip.removed {
            return Some(r.union(self.picked).without(o));
        }
        // Objects still queued for this robot are picked after `o`, so they
        // cannot be waited for.
        let own = self.robots[robot]
            .queue
            .iter()
            .fold(ObjSet::EMPTY, |mut s, q| {
                s.insert(q.object);
                s
            });
        let pending = self.assigned.minus(self.picked).minus(own);
        let needed = blockers_of(self.world, o, self.picked, pending)?;
        if !needed.is_empty() && !self.cfg.lookahead {
            return None;
        }
        Some(self.picked.union(needed))
    }

    fn start_trip(&mut self, robot: usize, plan: Arc<TripPlan>) {
        let r = &mut self.robots[robot];
        r.phase = Phase::Outbound;
        r.path = plan.out_path.clone();
        r.wp = 1;
        r.off_path = false;
        r.parked = false;
        r.failed_at = None;
        let ev = Event {
            time: r.clock,
            robot,
            kind: EventKind::Depart,
            object_id: plan.object_id,
            pos: r.pos,
        };
        self.departed_removed[plan.object] = Some(plan.removed);
        r.trip = Some(plan);
        self.trace.events.push(ev);
        self.mark_progress(ev.time);
    }

    /// Starts the next queued trip if it can be planned now.
    fn try_depart(&mut self, robot: usize) -> bool {
        let Some(&next) = self.robots[robot].queue.front() else {
            return false;
        };
        if self.robots[robot].failed_at == Some(self.picked) {
            return false;
        }
        let plan = self.departure_removed(robot, next).and_then(|removed| {
            plan_for_robot(
                self.world,
                robot,
                self.robots[robot].pos,
                next.object,
                removed,
            )
            .ok()
        });
        match plan {
            Some(plan) => {
                self.robots[robot].queue.pop_front();
                self.start_trip(robot, plan);
                true
            }
            None => {
                self.robots[robot].failed_at = Some(self.picked);
                false
            }
        }
    }

    fn mark_progress(&mut self, time: f64) {
        self.last_progress = self.last_progress.max(time);
        self.best_remaining = f64::INFINITY;
    }

    fn present(&self) -> ObjSet {
        self.world.all().minus(self.picked)
    }

    fn zone_radius(&self) -> f64 {
        ZONE_RADII * self.world.radius()
    }

    fn needs_claim(&self, robot: usize) -> bool {
        self.world.slot_shared(robot)
    }

    /// Advances one step. Returns which completions happened.
    fn step_once(&mut self) -> Result<StepFlags, SimError> {
        let dt = self.cfg.dt;
        let t0 = self.time();
        let t1 = (self.step + 1) as f64 * dt;
        let k = self.robots.len();
        let mut flags = StepFlags::default();

        // Departures and parking.
        for i in 0..k {
            let r = &self.robots[i];
            if !r.queue.is_empty() && matches!(r.phase, Phase::Idle | Phase::Parking) {
                if !self.try_depart(i) && self.robots[i].phase == Phase::Idle {
                    self.robots[i].clock = self.robots[i].clock.max(t0);
                }
                continue;
            }
            if r.phase == Phase::Idle && r.queue.is_empty() {
                self.robots[i].clock = r.clock.max(t0);
                if self.needs_claim(i) && !self.robots[i].parked {
                    self.start_parking(i);
                }
            }
        }

        // Timers.
        let mut due: Vec<(f64, usize)> = (0..k)
            .filter(|&i| matches!(self.robots[i].phase, Phase::Picking | Phase::Unloading))
            .filter(|&i| self.robots[i].timer_end <= t1 + 1e-12)
            .map(|i| (self.robots[i].timer_end, i))
            .collect();
        due.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (end, i) in due {
            let trip = self.robots[i].trip.clone().expect("timed phase has a trip");
            let pos = self.robots[i].pos;
            let r = &mut self.robots[i];
            r.clock = end;
            if r.phase == Phase::Picking {
                r.phase = Phase::Returning;
                r.path = trip.back_path.clone();
                r.wp = 1;
                r.off_path = false;
                self.picked.insert(trip.object);
                self.trace.events.push(Event {
                    time: end,
                    robot: i,
                    kind: EventKind::PickEnd,
                    object_id: trip.object_id,
                    pos,
                });
                flags.pick_end = true;
            } else {
                r.phase = Phase::Idle;
                r.trip = None;
                r.path.clear();
                r.wp = 0;
                self.unloaded.insert(trip.object);
                self.trace.events.push(Event {
                    time: end,
                    robot: i,
                    kind: EventKind::UnloadEnd,
                    object_id: trip.object_id,
                    pos,
                });
                self.trace.makespan = self.trace.makespan.max(end);
                flags.unload_end = true;
                self.try_depart(i);
            }
            flags.event_time = flags.event_time.max(end);
            self.mark_progress(end);
        }

        self.update_claims(t1);
        let moves = self.plan_moves(t1);
        let moves = self.safety_pass(moves);
        self.apply_moves(moves, t1);

        self.step += 1;
        self.record(t1);

        let total: f64 = self
            .robots
            .iter()
            .filter(|r| r.moving())
            .map(Robot::remaining)
            .sum();
        if total < self.best_remaining - 1e-6 {
            self.best_remaining = total;
            self.last_progress = t1;
        }
        if t1 - self.last_progress > self.cfg.stall_timeout {
            return Err(SimError::Stall { time: t1 });
        }
        if t1 > self.cfg.max_time {
            return Err(SimError::Timeout { time: t1 });
        }
        if flags.pick_end || flags.unload_end {
            self.last_event_time = flags.event_time;
        }
        Ok(flags)
    }

    fn start_parking(&mut self, i: usize) {
        let goal = self.world.parking(i);
        let pos = self.robots[i].pos;
        let q = self.world.query(self.present(), pos, &[goal]);
        if let Some(path) = q.path(0) {
            let r = &mut self.robots[i];
            r.phase = Phase::Parking;
            r.path = path;
            r.wp = 1;
            r.off_path = false;
        }
    }

    fn update_claims(&mut self, t1: f64) {
        let zone = self.zone_radius();
        for s in 0..self.claims.len() {
            let center = self.world.slots()[s];
            if let Some(h) = self.claims[s] {
                let r = &self.robots[h];
                if r.pos.distance(center) > zone + 1e-9 && r.phase != Phase::Returning {
                    self.claims[s] = None;
                }
            }
            if self.claims[s].is_some() {
                continue;
            }
            for i in 0..self.robots.len() {
                if self.world.slot_of(i) != s || !self.needs_claim(i) {
                    continue;
                }
                let r = &self.robots[i];
                let inside = r.pos.distance(center) <= zone + 1e-9;
                let reach = self.world.v_max() * (t1 - r.clock).max(0.0);
                let entering =
                    r.moving() && zone_entry(r, center, zone).is_some_and(|a| a <= reach + 1e-9);
                if inside || entering {
                    self.claims[s] = Some(i);
                    break;
                }
            }
        }
    }

    fn holds_claim(&self, i: usize) -> bool {
        !self.needs_claim(i) || self.claims[self.world.slot_of(i)] == Some(i)
    }

    /// Longest distance robot `i` may travel along its path this step.
    fn path_cap(&self, i: usize) -> f64 {
        let r = &self.robots[i];
        let mut cap = r.remaining();
        if let Some(trip) = &r.trip {
            let standoff = 2.0 * self.world.radius() + GRASP_OFFSET + WAIT_MARGIN;
            for o in trip.removed.minus(self.picked).without(trip.object).iter() {
                if let Some(a) = poly_entry(r, self.world.object_polygon(o)) {
                    cap = cap.min(a - standoff);
                }
            }
        }
        if !self.holds_claim(i) {
            let center = self.world.slots()[self.world.slot_of(i)];
            if let Some(a) = zone_entry(r, center, self.zone_radius()) {
                cap = cap.min(a - 1e-3);
            }
        }
        cap.max(0.0)
    }

    fn plan_moves(&mut self, t1: f64) -> Vec<Move> {
        let k = self.robots.len();
        let present = self.present();
        let polys = self.world.polygons(present);
        let v = self.world.v_max();
        let two_r = 2.0 * self.world.radius() + 1e-3;
        let mut moves: Vec<Move> = self
            .robots
            .iter()
            .map(|r| Move {
                pos: r.pos,
                wp: r.wp,
                arrival: None,
                on_path: true,
            })
            .collect();
        // Velocity used this step, and whether the robot stands still.
        let mut new_vel: Vec<Option<Point2>> = vec![None; k];
        let mut is_static: Vec<bool> = self
            .robots
            .iter()
            .map(|r| !r.moving() || r.waiting)
            .collect();
        let mut blocked: Vec<Option<f64>> = self.robots.iter().map(|r| r.blocked_since).collect();
        let mut yielding: Vec<f64> = self.robots.iter().map(|r| r.yield_until).collect();
        let mut make_way: Vec<Option<(Point2, f64)>> =
            self.robots.iter().map(|r| r.make_way).collect();

        for i in 0..k {
            if !self.robots[i].moving() {
                new_vel[i] = Some(Point2::ORIGIN);
                continue;
            }
            let avail = t1 - self.robots[i].clock;
            if avail <= 1e-12 {
                new_vel[i] = Some(Point2::ORIGIN);
                is_static[i] = true;
                continue;
            }
            if self.robots[i].off_path {
                self.rejoin_path(i, present);
            }
            let r = &self.robots[i];
            let remaining = r.remaining();
            let cap = self.path_cap(i);
            let step_len = (v * avail).min(cap);
            let (fast_pos, fast_wp) = r.advance(step_len);
            let u_pref = (fast_pos - r.pos) * (1.0 / avail);
            let heading = match r.path.get(r.wp) {
                Some(&p) if p != r.pos => (p - r.pos).normalized(),
                _ => u_pref.normalized(),
            };

            let conflicts = |u: Point2| -> Vec<(usize, f64)> {
                let mut out = Vec::new();
                for j in 0..k {
                    if j == i {
                        continue;
                    }
                    let d = self.robots[j].pos - r.pos;
                    let vj = new_vel[j].unwrap_or(self.robots[j].vel);
                    let w = if is_static[j] || vj == Point2::ORIGIN {
                        u
                    } else {
                        u * 2.0 - r.vel - vj
                    };
                    if let Some(t) = time_to_collision(d, w, two_r, self.cfg.tau) {
                        out.push((j, t));
                    }
                }
                out
            };

            let fast_conflicts = conflicts(u_pref);
            let aside = make_way[i]
                .filter(|&(_, until)| until > r.clock)
                .map(|(dir, _)| dir);
            if fast_conflicts.is_empty() && aside.is_none() {
                let arrival = (step_len >= remaining - 1e-12 && remaining <= v * avail + 1e-12)
                    .then(|| self.robots[i].clock + remaining / v);
                moves[i] = Move {
                    pos: fast_pos,
                    wp: fast_wp,
                    arrival,
                    on_path: true,
                };
                new_vel[i] = Some(u_pref);
                is_static[i] = step_len <= 1e-12;
                blocked[i] = None;
                continue;
            }

            // Sampled velocities, closest to the preferred one first.
            let mut keyed: Vec<(f64, usize, Point2)> =
                Vec::with_capacity(DIRECTIONS * SPEED_FRACTIONS.len() + 1);
            keyed.push((u_pref.norm_sq(), 0, Point2::ORIGIN));
            let h = if heading.norm_sq() > 0.5 {
                heading
            } else {
                Point2::new(1.0, 0.0)
            };
            for (m, &(c, s)) in rotations().iter().enumerate() {
                let dir = Point2::new(h.x * c - h.y * s, h.x * s + h.y * c);
                for (f_idx, f) in SPEED_FRACTIONS.iter().enumerate() {
                    let u = dir * (f * v);
                    keyed.push((
                        (u - u_pref).norm_sq(),
                        1 + m * SPEED_FRACTIONS.len() + f_idx,
                        u,
                    ));
                }
            }
            keyed.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let candidates: Vec<Point2> = keyed.into_iter().map(|(_, _, u)| u).collect();
            let zone_guard =
                (!self.holds_claim(i)).then(|| self.world.slots()[self.world.slot_of(i)]);
            let statically_ok = |u: Point2| -> bool {
                let q = r.pos + u * avail;
                if u == Point2::ORIGIN {
                    return true;
                }
                if let Some(c) = zone_guard {
                    if q.distance(c) <= self.zone_radius() {
                        return false;
                    }
                }
                self.world.is_free(present, q) && visible_among(r.pos, q, polys.iter().copied())
            };
            let mut chosen = None;
            let mut fallback: Option<(f64, Point2)> = None;
            let mut lower_mover_conflict = false;
            for &u in &candidates {
                if !statically_ok(u) {
                    continue;
                }
                let c = conflicts(u);
                if c.is_empty() {
                    chosen = Some(u);
                    break;
                }
                if c.iter().any(|&(j, _)| j < i && !is_static[j]) {
                    lower_mover_conflict = true;
                }
                let ttc = c.iter().map(|&(_, t)| t).fold(f64::INFINITY, f64::min);
                let penalty = (u - u_pref).norm() / v + 0.5 / ttc.max(1e-2);
                if fallback.is_none_or(|(p, _)| penalty < p) {
                    fallback = Some((penalty, u));
                }
            }
            let mut u = match chosen {
                Some(u) => u,
                None if lower_mover_conflict => Point2::ORIGIN,
                None => fallback.map(|(_, u)| u).unwrap_or(Point2::ORIGIN),
            };
            // Two robots can hold each other still indefinitely; the
            // higher-numbered one then backs away from the lower ones that
            // want to move.
            let now = r.clock;
            let held = u == Point2::ORIGIN && u_pref != Point2::ORIGIN;
            let held_by_rule = |j: usize| self.robots[j].moving() && self.path_cap(j) <= 1e-9;
            if held {
                let since = *blocked[i].get_or_insert(now);
                let lower: Vec<usize> = fast_conflicts
                    .iter()
                    .map(|&(j, _)| j)
                    .filter(|&j| j < i && !held_by_rule(j))
                    .collect();
                if !lower.is_empty() && (now - since >= YIELD_AFTER - 1e-9 || yielding[i] > now) {
                    let away = lower.iter().fold(Point2::ORIGIN, |acc, &j| {
                        acc + (r.pos - self.robots[j].pos).normalized()
                    });
                    let best = candidates
                        .iter()
                        .filter(|&&c| {
                            c != Point2::ORIGIN && statically_ok(c) && conflicts(c).is_empty()
                        })
                        .map(|&c| (c.dot(away), c))
                        .filter(|&(d, _)| d > 0.0)
                        .max_by(|a, b| a.0.total_cmp(&b.0));
                    if let Some((_, c)) = best {
                        u = c;
                        if yielding[i] <= now {
                            yielding[i] = now + YIELD_FOR;
                        }
                    }
                }
            } else if u != Point2::ORIGIN && yielding[i] <= now {
                blocked[i] = None;
            }
            // A robot stuck behind one that waits for a slot or a blocker
            // asks it to step off its line of travel.
            if held && blocked[i].is_some_and(|since| now - since >= YIELD_AFTER - 1e-9) {
                let ahead = u_pref.normalized();
                for &(j, _) in &fast_conflicts {
                    let other = &self.robots[j];
                    if !held_by_rule(j) || make_way[j].is_some_and(|(_, until)| until > now) {
                        continue;
                    }
                    let off = other.pos - r.pos;
                    let side = off - ahead * off.dot(ahead);
                    let dir = if side.norm_sq() > 1e-12 {
                        side.normalized()
                    } else {
                        Point2::new(-ahead.y, ahead.x)
                    };
                    make_way[j] = Some((dir, now + YIELD_FOR));
                }
            }
            if let Some(dir) = aside {
                let best = candidates
                    .iter()
                    .filter(|&&c| {
                        c != Point2::ORIGIN && statically_ok(c) && conflicts(c).is_empty()
                    })
                    .map(|&c| (c.dot(dir), c))
                    .filter(|&(d, _)| d > 0.0)
                    .max_by(|a, b| a.0.total_cmp(&b.0));
                if let Some((_, c)) = best {
                    u = c;
                }
            }
            let q = r.pos + u * avail;
            moves[i] = Move {
                pos: q,
                wp: r.wp,
                arrival: None,
                on_path: u == Point2::ORIGIN,
            };
            new_vel[i] = Some(u);
            is_static[i] = u == Point2::ORIGIN;
        }
        for (i, (r, u)) in self.robots.iter_mut().zip(new_vel).enumerate() {
            r.vel = u.unwrap_or(Point2::ORIGIN);
            r.blocked_since = blocked[i];
            r.yield_until = yielding[i];
            r.make_way = make_way[i];
        }
        moves
    }

    /// After a detour: keep following the path if its next waypoint is in
    /// sight, otherwise plan a fresh path to the leg's goal.
    fn rejoin_path(&mut self, i: usize, present: ObjSet) {
        let r = &self.robots[i];
        let Some(&next) = r.path.get(r.wp) else {
            return;
        };
        let ignore = r.trip.as_ref().map(|t| t.removed).unwrap_or(ObjSet::EMPTY);
        let visible_set = present.minus(ignore);
        let polys = self.world.polygons(visible_set);
        if visible_among(r.pos, next, polys.iter().copied()) {
            return;
        }
        let goal = *r.path.last().expect("non-empty path");
        if let Some(path) = self.world.query(visible_set, r.pos, &[goal]).path(0) {
            let r = &mut self.robots[i];
            r.path = path;
            r.wp = 1;
        }
    }

    /// Undoes moves of higher-numbered robots until all pairs are at least a
    /// diameter apart.
    fn safety_pass(&self, mut moves: Vec<Move>) -> Vec<Move> {
        let k = moves.len();
        let limit = 2.0 * self.world.radius() - self.cfg.contact_tol * 0.1;
        for _ in 0..k * k + 1 {
            let mut clean = true;
            'pairs: for a in 0..k {
                for b in (a + 1)..k {
                    if moves[a].pos.distance(moves[b].pos) >= limit {
                        continue;
                    }
                    let moved = |x: usize| moves[x].pos != self.robots[x].pos;
                    let victim = if moved(b) {
                        b
                    } else if moved(a) {
                        a
                    } else {
                        continue;
                    };
                    let r = &self.robots[victim];
                    moves[victim] = Move {
                        pos: r.pos,
                        wp: r.wp,
                        arrival: None,
                        on_path: true,
                    };
                    clean = false;
                    break 'pairs;
                }
            }
            if clean {
                break;
            }
        }
        moves
    }

    fn apply_moves(&mut self, moves: Vec<Move>, t1: f64) {
        let tp = self.world.t_pick();
        let tu = self.world.t_unload();
        let mut arrivals = Vec::new();
        for (i, m) in moves.into_iter().enumerate() {
            let r = &mut self.robots[i];
            if !r.moving() {
                continue;
            }
            let moved = m.pos != r.pos;
            if moved && r.pos != m.pos && !m.on_path {
                r.off_path = true;
            } else if moved {
                r.off_path = false;
            }
            if !moved {
                r.vel = Point2::ORIGIN;
            }
            r.pos = m.pos;
            r.wp = m.wp;
            r.clock = t1;
            let object_id = r.trip.as_ref().map(|t| t.object_id);
            let waiting = !moved && m.arrival.is_none() && r.remaining() > 1e-9;
            if waiting != r.waiting {
                r.waiting = waiting;
                if let Some(object_id) = object_id {
                    let kind = if waiting {
                        EventKind::WaitStart
                    } else {
                        EventKind::WaitEnd
                    };
                    self.trace.events.push(Event {
                        time: t1,
                        robot: i,
                        kind,
                        object_id,
                        pos: m.pos,
                    });
                }
            }
            if let Some(at) = m.arrival {
                arrivals.push((at, i));
            }
        }
        arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (at, i) in arrivals {
            let r = &mut self.robots[i];
            r.path.clear();
            r.wp = 0;
            r.vel = Point2::ORIGIN;
            r.clock = at;
            let pos = r.pos;
            match r.phase {
                Phase::Outbound => {
                    let object_id = r.trip.as_ref().expect("trip").object_id;
                    r.phase = Phase::Picking;
                    r.timer_end = at + tp;
                    self.trace.events.push(Event {
                        time: at,
                        robot: i,
                        kind: EventKind::PickStart,
                        object_id,
                        pos,
                    });
                    self.mark_progress(at);
                }
                Phase::Returning => {
                    let object_id = r.trip.as_ref().expect("trip").object_id;
                    r.phase = Phase::Unloading;
                    r.timer_end = at + tu;
                    self.trace.events.push(Event {
                        time: at,
                        robot: i,
                        kind: EventKind::UnloadStart,
                        object_id,
                        pos,
                    });
                    self.mark_progress(at);
                }
                Phase::Parking => {
                    r.phase = Phase::Idle;
                    r.parked = true;
                }
                _ => unreachable!("only moving robots arrive"),
            }
        }
    }

    fn record(&mut self, t: f64) {
        let k = self.robots.len();
        for a in 0..k {
            for b in (a + 1)..k {
                let d = self.robots[a].pos.distance(self.robots[b].pos);
                self.trace.min_separation = self.trace.min_separation.min(d);
            }
        }
        let present = self.present();
        if self
            .robots
            .iter()
            .any(|r| !self.world.is_free(present, r.pos))
        {
            self.trace.obstacle_violations += 1;
        }
        if self.cfg.record_samples {
            for (i, r) in self.robots.iter().enumerate() {
                let carrying = match r.phase {
                    Phase::Returning | Phase::Unloading => r.trip.as_ref().map(|t| t.object_id),
                    _ => None,
                };
                self.trace.samples.push(Sample {
                    time: t,
                    robot: i,
                    pos: r.pos,
                    carrying,
                });
            }
        }
    }

    fn has_work(&self) -> bool {
        self.robots
            .iter()
            .any(|r| !r.queue.is_empty() || !matches!(r.phase, Phase::Idle | Phase::Parking))
    }

    /// Runs until a robot can take new work, all targets are unloaded, or
    /// nothing is left to do.
    pub fn run_until_epoch(&mut self) -> Result<Stop, SimError> {
        loop {
            if self.is_done() {
                return Ok(Stop::Done);
            }
            if !self.has_work() {
                return Ok(Stop::Quiescent);
            }
            let flags = self.step_once()?;
            if self.is_done() {
                return Ok(Stop::Done);
            }
            if (flags.pick_end || flags.unload_end)
                && self.robots.iter().any(Robot::free)
                && !self.unassigned().is_empty()
                && !self.assignable().is_empty()
            {
                return Ok(Stop::Epoch);
            }
        }
    }

    /// Runs until every robot has finished its queue.
    pub fn run_until_quiescent(&mut self) -> Result<(), SimError> {
        self.run_until_quiescent_with(|_| {})
    }

    /// Like [`Sim::run_until_quiescent`], calling `observe` after every step.
    pub fn run_until_quiescent_with(
        &mut self,
        mut observe: impl FnMut(&Self),
    ) -> Result<(), SimError> {
        while self.has_work() {
            self.step_once()?;
            observe(self);
        }
        Ok(())
    }

    /// Straight-line distance robot `robot` still has to drive for its
    /// current trip (zero when it has none).
    pub fn remaining_distance_lower_bound(&self, robot: usize) -> f64 {
        let r = &self.robots[robot];
        let slot = self.world.slots()[self.world.slot_of(robot)];
        match (r.phase, &r.trip) {
            (Phase::Outbound, Some(t)) => {
                r.pos.distance(t.grasp.robot_center) + t.grasp.robot_center.distance(slot)
            }
            (Phase::Picking, Some(t)) => t.grasp.robot_center.distance(slot),
            (Phase::Returning, Some(_)) => r.pos.distance(slot),
            _ => 0.0,
        }
    }

    /// Per robot: a lower bound on when it finishes its current and queued
    /// work, ignoring interactions.
    pub fn finish_lower_bounds(&self) -> Vec<f64> {
        let v = self.world.v_max();
        let tp = self.world.t_pick();
        let tu = self.world.t_unload();
        self.robots
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let slot = self.world.slots()[self.world.slot_of(i)];
                let current = match (r.phase, &r.trip) {
                    (Phase::Outbound, Some(t)) => {
                        let g = t.grasp.robot_center;
                        r.clock + (r.pos.distance(g) + g.distance(slot)) / v + tp + tu
                    }
                    (Phase::Picking, Some(t)) => {
                        r.timer_end + t.grasp.robot_center.distance(slot) / v + tu
                    }
                    (Phase::Returning, Some(_)) => r.clock + r.pos.distance(slot) / v + tu,
                    (Phase::Unloading, _) => r.timer_end,
                    _ => r.clock,
                };
                current
                    + r.queue
                        .iter()
                        .map(|q| self.world.trip_lower_bound(q.object))
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Cosine and sine of the sampled heading offsets.
fn rotations() -> &'static [(f64, f64); DIRECTIONS] {
    static TABLE: OnceLock<[(f64, f64); DIRECTIONS]> = OnceLock::new();
    TABLE.get_or_init(|| {
        std::array::from_fn(|m| {
            let a = m as f64 * std::f64::consts::TAU / DIRECTIONS as f64;
            (a.cos(), a.sin())
        })
    })
}

/// Earliest time in `[0, tau]` at which a disc moving with relative
/// velocity `w` from offset `-d` comes within `radius`, if any.
fn time_to_collision(d: Point2, w: Point2, radius: f64, tau: f64) -> Option<f64> {
    let c = d.norm_sq() - radius * radius;
    if c < 0.0 {
        return (d.dot(w) > 1e-12).then_some(0.0);
    }
    let a = w.norm_sq();
    if a < 1e-18 {
        return None;
    }
    let b = d.dot(w);
    if b <= 0.0 {
        return None;
    }
    let disc = b * b - a * c;
    if disc <= 0.0 {
        return None;
    }
    let t = (b - disc.sqrt()) / a;
    (t <= tau).then_some(t)
}

/// Arc length along the robot's remaining path to its first point within
/// `radius` of `center`.
fn zone_entry(r: &Robot, center: Point2, radius: f64) -> Option<f64> {
    let mut arc = 0.0;
    for (a, b) in r.polyline() {
        let d = b - a;
        let len = d.norm();
        let f = a - center;
        if f.norm() <= radius {
            return Some(arc);
        }
        if len > 0.0 {
            let qa = d.norm_sq();
            let qb = f.dot(d);
            let qc = f.norm_sq() - radius * radius;
            let disc = qb * qb - qa * qc;
            if disc >= 0.0 {
                let t = (-qb - disc.sqrt()) / qa;
                if (0.0..=1.0).contains(&t) {
                    return Some(arc + t * len);
                }
            }
        }
        arc += len;
    }
    None
}

/// Arc length along the robot's remaining path to where it first enters
/// the polygon's interior.
fn poly_entry(r: &Robot, poly: &crate::geometry::ConvexPolygon) -> Option<f64> {
    let mut arc = 0.0;
    for (a, b) in r.polyline() {
        let len = a.distance(b);
        if poly.segment_enters_interior(a, b) {
            if let Some((t, _)) = poly.segment_interior_span(a, b) {
                return Some(arc + t * len);
            }
        }
        arc += len;
    }
    None
}

/// Runs prefilled per-robot queues to completion and returns the trace.
pub fn simulate_joint(
    world: &World,
    schedule: &[Vec<QueuedTrip>],
    cfg: SimConfig,
) -> Result<Trace, SimError> {
    let mut sim = Sim::new(world, cfg);
    let mut target = ObjSet::EMPTY;
    for (robot, trips) in schedule.iter().enumerate() {
        for &t in trips {
            target.insert(t.object);
            sim.enqueue(robot, t);
        }
    }
    sim.set_target(target);
    sim.run_until_quiescent()?;
    Ok(sim.into_trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OrientedRect;
    use crate::motion::trip::plan_trip;
    use crate::scene::{generate, Fleet, GenMode, GenParams, Instance};

    fn recorded() -> SimConfig {
        SimConfig {
            record_samples: true,
            ..SimConfig::default()
        }
    }

    #[test]
    fn collision_time_formula() {
        // Head-on at closing speed 2 from 3 m: contact at separation 0.6.
        let t = time_to_collision(Point2::new(3.0, 0.0), Point2::new(2.0, 0.0), 0.6, 2.0).unwrap();
        assert!((t - 1.2).abs() < 1e-12);
        assert_eq!(
            time_to_collision(Point2::new(3.0, 0.0), Point2::new(-2.0, 0.0), 0.6, 2.0),
            None
        );
        assert_eq!(
            time_to_collision(Point2::new(3.0, 0.0), Point2::new(1.0, 0.0), 0.6, 2.0),
            None
        );
        assert_eq!(
            time_to_collision(Point2::new(3.0, 0.0), Point2::new(0.0, 2.0), 0.6, 2.0),
            None
        );
    }

    #[test]
    fn single_robot_makespan_is_sum_of_trip_durations() {
        for seed in 0..4 {
            let inst = generate(
                &GenParams::new(GenMode::Scattered, 5),
                &Fleet::narrow(1),
                seed,
            )
            .unwrap();
            let w = World::new(&inst);
            // Pick order by peeling; each trip planned from the slot with
            // earlier objects gone.
            let (ok, order) = crate::access::peel_feasible(&w);
            assert!(ok);
            let mut removed = ObjSet::EMPTY;
            let mut expected = 0.0;
            let mut queue = Vec::new();
            for id in order {
                let o = w.index_of(id).unwrap();
                expected += plan_trip(&w, 0, w.start(0), o, removed)
                    .unwrap()
                    .nominal_duration;
                removed.insert(o);
                queue.push(QueuedTrip::new(o));
            }
            let trace = simulate_joint(&w, &[queue], SimConfig::default()).unwrap();
            assert!(
                (trace.makespan - expected).abs() < 1e-6,
                "{} vs {expected}",
                trace.makespan
            );
            assert!(trace.check_conservation(w.ids()).is_ok());
        }
    }

    #[test]
    fn separated_robots_barely_interact() {
        let fleet = Fleet::with_exit(2, 6.0);
        let inst = Instance::with_objects(
            &fleet,
            &[
                OrientedRect::axis_aligned(Point2::new(1.5, 6.0), 0.3, 0.3),
                OrientedRect::axis_aligned(Point2::new(8.5, 6.0), 0.3, 0.3),
            ],
        );
        let w = World::new(&inst);
        let d0 = plan_trip(&w, 0, w.start(0), 0, ObjSet::EMPTY)
            .unwrap()
            .nominal_duration;
        let d1 = plan_trip(&w, 1, w.start(1), 1, ObjSet::EMPTY)
            .unwrap()
            .nominal_duration;
        let trace = simulate_joint(
            &w,
            &[vec![QueuedTrip::new(0)], vec![QueuedTrip::new(1)]],
            SimConfig::default(),
        )
        .unwrap();
        let bound = d0.max(d1);
        assert!(
            trace.makespan >= bound - 1e-9 && trace.makespan <= bound * 1.05,
            "{} vs {bound}",
            trace.makespan
        );
    }

    #[test]
    fn corridor_interaction_costs_time_but_stays_safe() {
        // Both robots share one slot and fetch objects straight above it.
        let fleet = Fleet::narrow(2);
        let inst = Instance::with_objects(
            &fleet,
            &[
                OrientedRect::axis_aligned(Point2::new(5.0, 3.0), 0.3, 0.3),
                OrientedRect::axis_aligned(Point2::new(5.0, 6.0), 0.3, 0.3),
            ],
        );
        let w = World::new(&inst);
        let d0 = plan_trip(&w, 0, w.start(0), 0, ObjSet::EMPTY)
            .unwrap()
            .nominal_duration;
        let d1 = plan_trip(&w, 1, w.start(1), 1, ObjSet::EMPTY)
            .unwrap()
            .nominal_duration;
        let trace = simulate_joint(
            &w,
            &[vec![QueuedTrip::new(0)], vec![QueuedTrip::new(1)]],
            recorded(),
        )
        .unwrap();
        assert!(
            trace.makespan > d0.max(d1) + 1e-6,
            "{} vs {}",
            trace.makespan,
            d0.max(d1)
        );
        assert!(trace.min_separation >= 2.0 * w.radius() - 1e-6);
        assert_eq!(trace.obstacle_violations, 0);
        assert!(trace.check_conservation(w.ids()).is_ok());
    }

    #[test]
    fn identical_schedules_give_identical_traces() {
        let inst = generate(&GenParams::new(GenMode::Cluttered, 6), &Fleet::narrow(2), 5).unwrap();
        let w = World::new(&inst);
        let (_, order) = crate::access::peel_feasible(&w);
        let mut schedule = vec![Vec::new(), Vec::new()];
        for (i, id) in order.iter().enumerate() {
            schedule[i % 2].push(QueuedTrip::new(w.index_of(*id).unwrap()));
        }
        let a = simulate_joint(&w, &schedule, recorded()).unwrap();
        let b = simulate_joint(&w, &schedule, recorded()).unwrap();
        assert_eq!(a, b);
        assert!(a.check_conservation(w.ids()).is_ok());
        assert!(a.min_separation >= 2.0 * w.radius() - 1e-6);
        assert_eq!(a.obstacle_violations, 0);
        let total: f64 = a
            .events
            .iter()
            .filter(|e| e.kind == EventKind::UnloadEnd)
            .count() as f64;
        assert_eq!(total as usize, w.n());
    }

    #[test]
    fn blocked_trip_waits_for_the_blocker() {
        // o1 sits behind o0 in a dead-end; robot 1 departs for o1 at once
        // and must wait until robot 0 has lifted o0.
        let inst = crate::access::tests::chain_scene();
        let w = World::new(&inst.with_robot_count(2));
        let mut sim = Sim::new(&w, recorded());
        sim.assign(0, 0).unwrap();
        sim.enqueue(1, QueuedTrip::new(1));
        sim.run_until_quiescent().unwrap();
        let trace = sim.trace();
        let pick0 = trace
            .events
            .iter()
            .find(|e| e.kind == EventKind::PickEnd && e.object_id == w.id(0))
            .unwrap();
        let pick1 = trace
            .events
            .iter()
            .find(|e| e.kind == EventKind::PickStart && e.object_id == w.id(1))
            .unwrap();
        assert!(pick1.time > pick0.time);
        assert!(trace
            .events
            .iter()
            .any(|e| e.kind == EventKind::WaitStart && e.robot == 1));
        assert!(trace.min_separation >= 2.0 * w.radius() - 1e-6);
        assert_eq!(trace.obstacle_violations, 0);
    }

    #[test]
    fn invariants_hold_on_random_schedules() {
        for seed in 0..6 {
            let mode = if seed % 2 == 0 {
                GenMode::Cluttered
            } else {
                GenMode::Scattered
            };
            let inst = generate(&GenParams::new(mode, 7), &Fleet::narrow(2), 100 + seed).unwrap();
            let w = World::new(&inst);
            let (_, order) = crate::access::peel_feasible(&w);
            let mut schedule = vec![Vec::new(), Vec::new()];
            let mut durations = Vec::new();
            let mut removed = ObjSet::EMPTY;
            for (i, id) in order.iter().enumerate() {
                let o = w.index_of(*id).unwrap();
                durations.push(
                    plan_trip(&w, 0, w.slots()[0], o, removed)
                        .unwrap()
                        .nominal_duration,
                );
                removed.insert(o);
                schedule[(i / 2) % 2].push(QueuedTrip::new(o));
            }
            let trace = simulate_joint(&w, &schedule, SimConfig::default()).unwrap();
            assert!(trace.check_conservation(w.ids()).is_ok());
            assert!(
                trace.min_separation >= 2.0 * w.radius() - 1e-6,
                "seed {seed}: {}",
                trace.min_separation
            );
            assert_eq!(trace.obstacle_violations, 0, "seed {seed}");
            let sum: f64 = durations.iter().sum();
            assert!(trace.makespan >= sum / 2.0 - 1e-6);
        }
    }
}
