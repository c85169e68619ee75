//! Problem instances: data model, validation, file I/O and random generation.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access;
use crate::geometry::{inflate, OrientedRect, Point2};
use crate::world::{World, CORNER_SEGMENTS, MAX_OBJECTS};

/// Version tag written to and required in instance files.
pub const SCHEMA_VERSION: u32 = 1;

/// Placement attempts allowed before generation gives up.
pub const GENERATION_BUDGET: u64 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneObject {
    pub id: u32,
    pub rect: OrientedRect,
}

/// Immutable description of one clutter-removal problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub side_l: f64,
    pub exit_center: Point2,
    pub exit_width: f64,
    pub robot_radius: f64,
    pub robot_count: usize,
    pub v_max: f64,
    pub t_pick: f64,
    pub t_unload: f64,
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

impl Instance {
    /// An instance with the given fleet and no objects.
    pub fn empty(fleet: &Fleet) -> Self {
        Self {
            side_l: fleet.side_l,
            exit_center: Point2::new(fleet.side_l / 2.0, 0.0),
            exit_width: fleet.exit_width,
            robot_radius: fleet.robot_radius,
            robot_count: fleet.robot_count,
            v_max: fleet.v_max,
            t_pick: fleet.t_pick,
            t_unload: fleet.t_unload,
            objects: Vec::new(),
            seed: 0,
        }
    }

    pub fn with_objects(fleet: &Fleet, rects: &[OrientedRect]) -> Self {
        let mut inst = Self::empty(fleet);
        inst.objects = rects
            .iter()
            .enumerate()
            .map(|(i, &rect)| SceneObject { id: i as u32, rect })
            .collect();
        inst
    }

    pub fn n(&self) -> usize {
        self.objects.len()
    }

    /// Same scene with a different fleet size.
    pub fn with_robot_count(&self, k: usize) -> Self {
        Self {
            robot_count: k,
            ..self.clone()
        }
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }
}

/// Robot fleet and workspace parameters shared by generated instances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fleet {
    pub side_l: f64,
    pub exit_width: f64,
    pub robot_radius: f64,
    pub robot_count: usize,
    pub v_max: f64,
    pub t_pick: f64,
    pub t_unload: f64,
}

impl Default for Fleet {
    fn default() -> Self {
        let side_l = 10.0;
        let v_max = 1.0;
        let robot_radius = 0.3;
        Self {
            side_l,
            exit_width: 3.0 * 2.0 * robot_radius,
            robot_radius,
            robot_count: 2,
            v_max,
            t_pick: side_l / 2.0 / v_max,
            t_unload: side_l / 2.0 / v_max,
        }
    }
}

impl Fleet {
    /// Default fleet of `k` robots with an exit `diameters` robot diameters
    /// wide.
    pub fn with_exit(k: usize, diameters: f64) -> Self {
        let base = Self::default();
        Self {
            robot_count: k,
            exit_width: diameters * 2.0 * base.robot_radius,
            ..base
        }
    }

    /// The narrow single-lane exit used for two-robot comparisons.
    pub fn narrow(k: usize) -> Self {
        Self::with_exit(k, 2.2)
    }

    /// Exit widened so every robot has its own drop-off slot.
    pub fn scaled(k: usize) -> Self {
        Self::with_exit(k, (1.5 * k as f64).max(3.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenMode {
    Cluttered,
    Scattered,
}

impl GenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GenMode::Cluttered => "cluttered",
            GenMode::Scattered => "scattered",
        }
    }
}

impl fmt::Display for GenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GenMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cluttered" => Ok(GenMode::Cluttered),
            "scattered" => Ok(GenMode::Scattered),
            other => Err(format!(
                "unknown mode '{other}' (expected cluttered or scattered)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenParams {
    pub mode: GenMode,
    pub n: usize,
    pub min_clearance: f64,
    /// Full footprint size range per axis, meters.
    pub object_size_range: (f64, f64),
    pub clutter_radius_fraction: f64,
}

impl GenParams {
    pub fn new(mode: GenMode, n: usize) -> Self {
        Self {
            mode,
            n,
            min_clearance: 0.05,
            object_size_range: (0.4, 0.8),
            clutter_radius_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NonFinite { field: &'static str },
    NonPositive { field: &'static str, value: f64 },
    NoRobots,
    ExitOffBoundary,
    ExitTooNarrow { width: f64, min: f64 },
    TooManyObjects { n: usize, max: usize },
    BadObjectShape { id: u32 },
    DuplicateId { id: u32 },
    OutOfBounds { id: u32 },
    Overlap { a: u32, b: u32 },
    ExitBlocked { id: u32 },
    PeelInfeasible { stuck: Vec<u32> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { field } => write!(f, "{field} is not finite"),
            Violation::NonPositive { field, value } => {
                write!(f, "{field} must be positive (got {value})")
            }
            Violation::NoRobots => write!(f, "robot_count must be at least 1"),
            Violation::ExitOffBoundary => write!(f, "exit segment must lie on the south boundary"),
            Violation::ExitTooNarrow { width, min } => {
                write!(f, "exit width {width} is below one robot diameter {min}")
            }
            Violation::TooManyObjects { n, max } => {
                write!(f, "{n} objects exceeds the supported maximum {max}")
            }
            Violation::BadObjectShape { id } => {
                write!(f, "object {id} has a non-positive or non-finite shape")
            }
            Violation::DuplicateId { id } => write!(f, "object id {id} appears more than once"),
            Violation::OutOfBounds { id } => {
                write!(f, "object {id} is not fully inside the workspace")
            }
            Violation::Overlap { a, b } => write!(f, "objects {a} and {b} overlap"),
            Violation::ExitBlocked { id } => write!(f, "object {id} blocks a drop-off slot"),
            Violation::PeelInfeasible { stuck } => {
                write!(f, "objects {stuck:?} can never be reached")
            }
        }
    }
}

/// Every invariant an instance violates; empty means valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema version {found} does not match supported version {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("invalid instance: {0}")]
    Invalid(ValidationReport),
    #[error("generation gave up after {attempts} rejected placements")]
    GenerationBudgetExceeded { attempts: u64 },
}

/// Checks every instance invariant, geometric feasibility included.
pub fn validate(inst: &Instance) -> ValidationReport {
    let mut violations = basic_violations(inst);
    if violations.is_empty() {
        let world = World::new(inst);
        for o in &inst.objects {
            let poly = inflate(&o.rect, inst.robot_radius, CORNER_SEGMENTS);
            if world
                .slots()
                .iter()
                .chain(std::iter::once(&world.entrance()))
                .any(|&p| poly.contains_strict(p))
            {
                violations.push(Violation::ExitBlocked { id: o.id });
            }
        }
        if violations.is_empty() {
            let (ok, order) = access::peel_feasible(&world);
            if !ok {
                let stuck = inst
                    .objects
                    .iter()
                    .map(|o| o.id)
                    .filter(|id| !order.contains(id))
                    .collect::<Vec<_>>();
                let mut stuck = stuck;
                stuck.sort_unstable();
                violations.push(Violation::PeelInfeasible { stuck });
            }
        }
    }
    ValidationReport { violations }
}

/// Parameter and pairwise-object checks that need no path planning.
fn basic_violations(inst: &Instance) -> Vec<Violation> {
    let mut v = Vec::new();
    let scalars = [
        ("side_l", inst.side_l),
        ("exit_width", inst.exit_width),
        ("robot_radius", inst.robot_radius),
        ("v_max", inst.v_max),
        ("t_pick", inst.t_pick),
        ("t_unload", inst.t_unload),
    ];
    for (field, value) in scalars {
        if !value.is_finite() {
            v.push(Violation::NonFinite { field });
        } else if value <= 0.0 && !(field.starts_with("t_") && value == 0.0) {
            v.push(Violation::NonPositive { field, value });
        }
    }
    if !inst.exit_center.is_finite() {
        v.push(Violation::NonFinite {
            field: "exit_center",
        });
    }
    if inst.robot_count == 0 {
        v.push(Violation::NoRobots);
    }
    if !v.is_empty() {
        return v;
    }
    let half = inst.exit_width / 2.0;
    if inst.exit_center.y != 0.0
        || inst.exit_center.x - half < 0.0
        || inst.exit_center.x + half > inst.side_l
    {
        v.push(Violation::ExitOffBoundary);
    }
    if inst.exit_width < 2.0 * inst.robot_radius {
        v.push(Violation::ExitTooNarrow {
            width: inst.exit_width,
            min: 2.0 * inst.robot_radius,
        });
    }
    if inst.objects.len() > MAX_OBJECTS {
        v.push(Violation::TooManyObjects {
            n: inst.objects.len(),
            max: MAX_OBJECTS,
        });
    }
    let mut shape_ok = vec![true; inst.objects.len()];
    for (i, o) in inst.objects.iter().enumerate() {
        let (hx, hy) = o.rect.half_extents;
        let finite = o.rect.center.is_finite() && o.rect.heading.is_finite();
        if !finite || !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
            v.push(Violation::BadObjectShape { id: o.id });
            shape_ok[i] = false;
        }
    }
    for (i, o) in inst.objects.iter().enumerate() {
        if inst.objects[..i].iter().any(|p| p.id == o.id) {
            v.push(Violation::DuplicateId { id: o.id });
        }
    }
    for (i, o) in inst.objects.iter().enumerate() {
        if shape_ok[i]
            && o.rect
                .corners()
                .iter()
                .any(|c| c.x < 0.0 || c.y < 0.0 || c.x > inst.side_l || c.y > inst.side_l)
        {
            v.push(Violation::OutOfBounds { id: o.id });
        }
    }
    for i in 0..inst.objects.len() {
        for j in (i + 1)..inst.objects.len() {
            if shape_ok[i] && shape_ok[j] && inst.objects[i].rect.overlaps(&inst.objects[j].rect) {
                v.push(Violation::Overlap {
                    a: inst.objects[i].id,
                    b: inst.objects[j].id,
                });
            }
        }
    }
    v
}

/// Serializes to the instance file format. Numbers use the shortest
/// representation that loads back to the same value.
pub fn to_string(inst: &Instance) -> String {
    fn num(x: f64) -> String {
        format!("{x:?}")
    }
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "  \"schema_version\": {SCHEMA_VERSION},");
    let _ = writeln!(s, "  \"side_l\": {},", num(inst.side_l));
    let _ = writeln!(
        s,
        "  \"exit_center\": {{\"x\": {}, \"y\": {}}},",
        num(inst.exit_center.x),
        num(inst.exit_center.y)
    );
    let _ = writeln!(s, "  \"exit_width\": {},", num(inst.exit_width));
    let _ = writeln!(s, "  \"robot_radius\": {},", num(inst.robot_radius));
    let _ = writeln!(s, "  \"robot_count\": {},", inst.robot_count);
    let _ = writeln!(s, "  \"v_max\": {},", num(inst.v_max));
    let _ = writeln!(s, "  \"t_pick\": {},", num(inst.t_pick));
    let _ = writeln!(s, "  \"t_unload\": {},", num(inst.t_unload));
    s.push_str("  \"objects\": [");
    for (i, o) in inst.objects.iter().enumerate() {
        s.push_str(if i == 0 { "\n" } else { ",\n" });
        let _ = write!(
            s,
            "    {{\"id\": {}, \"cx\": {}, \"cy\": {}, \"hx\": {}, \"hy\": {}, \"heading\": {}}}",
            o.id,
            num(o.rect.center.x),
            num(o.rect.center.y),
            num(o.rect.half_extents.0),
            num(o.rect.half_extents.1),
            num(o.rect.heading)
        );
    }
    if !inst.objects.is_empty() {
        s.push_str("\n  ");
    }
    s.push_str("],\n");
    let _ = writeln!(s, "  \"seed\": {}", inst.seed);
    s.push_str("}\n");
    s
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExitCenterRecord {
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    id: u32,
    cx: f64,
    cy: f64,
    hx: f64,
    hy: f64,
    heading: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    #[allow(dead_code)]
    schema_version: u32,
    side_l: f64,
    exit_center: ExitCenterRecord,
    exit_width: f64,
    robot_radius: f64,
    robot_count: usize,
    v_max: f64,
    t_pick: f64,
    t_unload: f64,
    objects: Vec<ObjectRecord>,
    seed: u64,
}

fn parse_error(e: serde_json::Error) -> SceneError {
    SceneError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses instance text without validating it.
pub fn from_str_unchecked(text: &str) -> Result<Instance, SceneError> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(parse_error)?;
    if probe.schema_version != SCHEMA_VERSION {
        return Err(SceneError::SchemaMismatch {
            found: probe.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let rec: InstanceRecord = serde_json::from_str(text).map_err(parse_error)?;
    Ok(Instance {
        side_l: rec.side_l,
        exit_center: Point2::new(rec.exit_center.x, rec.exit_center.y),
        exit_width: rec.exit_width,
        robot_radius: rec.robot_radius,
        robot_count: rec.robot_count,
        v_max: rec.v_max,
        t_pick: rec.t_pick,
        t_unload: rec.t_unload,
        objects: rec
            .objects
            .into_iter()
            .map(|o| SceneObject {
                id: o.id,
                rect: OrientedRect {
                    center: Point2::new(o.cx, o.cy),
                    half_extents: (o.hx, o.hy),
                    heading: o.heading,
                },
            })
            .collect(),
        seed: rec.seed,
    })
}

/// Parses and validates instance text.
pub fn from_str(text: &str) -> Result<Instance, SceneError> {
    let inst = from_str_unchecked(text)?;
    let report = validate(&inst);
    if report.is_valid() {
        Ok(inst)
    } else {
        Err(SceneError::Invalid(report))
    }
}

pub fn save(inst: &Instance, path: &Path) -> Result<(), SceneError> {
    std::fs::write(path, to_string(inst)).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Instance, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_str(&text)
}

/// Corpus location of one generated instance.
pub fn corpus_path(root: &Path, mode: GenMode, n: usize, seed: u64) -> PathBuf {
    root.join(mode.as_str())
        .join(n.to_string())
        .join(format!("{seed}.inst"))
}

/// Draws a random valid instance. A pure function of its arguments.
pub fn generate(params: &GenParams, fleet: &Fleet, seed: u64) -> Result<Instance, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejected: u64 = 0;
    let l = fleet.side_l;
    let center = Point2::new(l / 2.0, l / 2.0);
    let (smin, smax) = params.object_size_range;
    let mut inst = Instance::empty(fleet);
    inst.seed = seed;
    let probe = World::new(&inst);
    let keep_clear: Vec<Point2> = probe
        .slots()
        .iter()
        .copied()
        .chain(std::iter::once(probe.entrance()))
        .collect();
    loop {
        let mut objects: Vec<SceneObject> = Vec::with_capacity(params.n);
        while objects.len() < params.n {
            if rejected >= GENERATION_BUDGET {
                return Err(SceneError::GenerationBudgetExceeded { attempts: rejected });
            }
            let c = match params.mode {
                GenMode::Cluttered => {
                    let radius = params.clutter_radius_fraction * l * rng.random::<f64>().sqrt();
                    center + Point2::from_angle(rng.random_range(-PI..PI)) * radius
                }
                GenMode::Scattered => {
                    Point2::new(rng.random_range(0.0..l), rng.random_range(0.0..l))
                }
            };
            let hx = rng.random_range(smin..=smax) / 2.0;
            let hy = rng.random_range(smin..=smax) / 2.0;
            let heading = rng.random_range(-PI..PI);
            let rect = OrientedRect::new(c, hx, hy, heading);
            let inside = rect
                .corners()
                .iter()
                .all(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= l && p.y <= l);
            let clear = objects
                .iter()
                .all(|o| o.rect.distance_to_rect(&rect) >= params.min_clearance);
            let poly = inflate(&rect, fleet.robot_radius, CORNER_SEGMENTS);
            let exit_free = keep_clear.iter().all(|&p| !poly.contains_strict(p));
            if inside && clear && exit_free {
                objects.push(SceneObject {
                    id: objects.len() as u32,
                    rect,
                });
            } else {
                rejected += 1;
            }
        }
        inst.objects = objects;
        if validate(&inst).is_valid() {
            return Ok(inst);
        }
        rejected += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(mode: GenMode, n: usize, seed: u64) -> Instance {
        generate(&GenParams::new(mode, n), &Fleet::default(), seed).unwrap()
    }

    #[test]
    fn single_object_generation_is_valid() {
        for mode in [GenMode::Cluttered, GenMode::Scattered] {
            let inst = sample(mode, 1, 3);
            assert_eq!(inst.n(), 1);
            assert!(validate(&inst).is_valid());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = sample(GenMode::Scattered, 15, 42);
        let b = sample(GenMode::Scattered, 15, 42);
        assert_eq!(to_string(&a), to_string(&b));
        assert_ne!(
            to_string(&a),
            to_string(&sample(GenMode::Scattered, 15, 43))
        );
    }

    #[test]
    fn scattered_is_more_spread_than_cluttered() {
        let spread = |mode| {
            let mut total = 0.0;
            let mut count = 0.0;
            for seed in 0..100 {
                let inst = sample(mode, 10, seed);
                for (i, a) in inst.objects.iter().enumerate() {
                    for b in &inst.objects[i + 1..] {
                        total += a.rect.center.distance(b.rect.center);
                        count += 1.0;
                    }
                }
            }
            total / count
        };
        assert!(spread(GenMode::Scattered) > spread(GenMode::Cluttered));
    }

    #[test]
    fn round_trip_is_exact() {
        for seed in 0..20 {
            let inst = sample(
                if seed % 2 == 0 {
                    GenMode::Cluttered
                } else {
                    GenMode::Scattered
                },
                8,
                seed,
            );
            let back = from_str(&to_string(&inst)).unwrap();
            assert_eq!(back, inst);
        }
    }

    #[test]
    fn identical_rectangles_overlap() {
        let r = OrientedRect::axis_aligned(Point2::new(5.0, 5.0), 0.3, 0.3);
        let inst = Instance::with_objects(&Fleet::default(), &[r, r]);
        let report = validate(&inst);
        assert!(
            report
                .violations
                .contains(&Violation::Overlap { a: 0, b: 1 }),
            "{report}"
        );
    }

    #[test]
    fn sealed_object_is_peel_infeasible() {
        // Two slabs filling the room: every grasp of each lies in a wall or
        // in the other slab.
        let rects = [
            OrientedRect::axis_aligned(Point2::new(2.5, 5.175), 2.45, 4.775),
            OrientedRect::axis_aligned(Point2::new(7.5, 5.175), 2.45, 4.775),
        ];
        let inst = Instance::with_objects(&Fleet::default(), &rects);
        let basic = basic_violations(&inst);
        assert!(basic.is_empty(), "{basic:?}");
        let report = validate(&inst);
        assert!(
            matches!(report.violations.as_slice(), [Violation::PeelInfeasible { stuck }] if stuck == &vec![0, 1]),
            "{report}"
        );
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let text = to_string(&sample(GenMode::Cluttered, 3, 1));
        let cut = &text[..text.len() / 2];
        assert!(matches!(from_str(cut), Err(SceneError::Parse { .. })));
    }

    #[test]
    fn negative_radius_fails_on_load() {
        let text = to_string(&sample(GenMode::Cluttered, 3, 1));
        let edited = text.replace("\"robot_radius\": 0.3", "\"robot_radius\": -1");
        assert_ne!(edited, text);
        match from_str(&edited) {
            Err(SceneError::Invalid(report)) => {
                assert!(report.violations.iter().any(|v| matches!(
                    v,
                    Violation::NonPositive {
                        field: "robot_radius",
                        ..
                    }
                )))
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn schema_mismatch_and_unknown_fields_are_rejected() {
        let text = to_string(&sample(GenMode::Cluttered, 2, 1));
        let bumped = text.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(
            from_str(&bumped),
            Err(SceneError::SchemaMismatch { found: 9, .. })
        ));
        let extra = text.replace("\"seed\":", "\"colour\": 1,\n  \"seed\":");
        match from_str(&extra) {
            Err(SceneError::Parse { line, .. }) => assert!(line > 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn over_dense_parameters_exhaust_the_budget() {
        let params = GenParams {
            object_size_range: (3.0, 3.0),
            ..GenParams::new(GenMode::Cluttered, 30)
        };
        assert!(matches!(
            generate(&params, &Fleet::default(), 0),
            Err(SceneError::GenerationBudgetExceeded { .. })
        ));
    }
}
