//! Planar primitives: points, oriented rectangles, convex configuration-space
//! obstacles, segment visibility and visibility-graph shortest paths.
//!
//! Obstacles are convex polygons stored as half-plane sets. Every interior test
//! uses a slack of [`EPS`], so a segment that only grazes a boundary is
//! considered free.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boundary slack for interior tests (meters).
pub const EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("terminal {index} at ({x}, {y}) lies inside an obstacle")]
    TerminalInsideObstacle { index: usize, x: f64, y: f64 },
    #[error("point ({x}, {y}) is not a terminal of the graph")]
    NotATerminal { x: f64, y: f64 },
    #[error("no path between the query terminals")]
    NoPath,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, o: Self) -> f64 {
        (self - o).norm()
    }

    /// Counterclockwise perpendicular.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn lerp(self, o: Self, t: f64) -> Self {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self / n
        } else {
            self
        }
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Div<f64> for Point2 {
    type Output = Point2;
    fn div(self, s: f64) -> Point2 {
        Point2::new(self.x / s, self.y / s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let a = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if a >= PI {
        a - 2.0 * PI
    } else {
        a
    }
}

/// Distance from `p` to the closed segment `ab`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let d = b - a;
    let len_sq = d.norm_sq();
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(d) / len_sq).clamp(0.0, 1.0);
    p.distance(a + d * t)
}

/// Length of a polyline.
pub fn polyline_length(points: &[Point2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point2,
    pub max: Point2,
}

impl Aabb {
    pub fn new(min: Point2, max: Point2) -> Self {
        Self { min, max }
    }

    pub fn from_points(points: &[Point2]) -> Self {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Self { min, max }
    }

    pub fn of_segment(p: Point2, q: Point2) -> Self {
        Self {
            min: Point2::new(p.x.min(q.x), p.y.min(q.y)),
            max: Point2::new(p.x.max(q.x), p.y.max(q.y)),
        }
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x
            && o.min.x <= self.max.x
            && self.min.y <= o.max.y
            && o.min.y <= self.max.y
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Self {
            min: Point2::new(self.min.x - margin, self.min.y - margin),
            max: Point2::new(self.max.x + margin, self.max.y + margin),
        }
    }
}

/// Rectangle with arbitrary heading; the 2D footprint of an object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Point2,
    pub half_extents: (f64, f64),
    pub heading: f64,
}

impl OrientedRect {
    pub fn new(center: Point2, hx: f64, hy: f64, heading: f64) -> Self {
        Self {
            center,
            half_extents: (hx, hy),
            heading: normalize_angle(heading),
        }
    }

    pub fn axis_aligned(center: Point2, hx: f64, hy: f64) -> Self {
        Self::new(center, hx, hy, 0.0)
    }

    /// Unit vectors along the local x and y axes.
    pub fn axes(&self) -> (Point2, Point2) {
        let u = Point2::from_angle(self.heading);
        (u, u.perp())
    }

    /// Corners in counterclockwise order.
    pub fn corners(&self) -> [Point2; 4] {
        let (u, v) = self.axes();
        let (hx, hy) = self.half_extents;
        let c = self.center;
        [
            c - u * hx - v * hy,
            c + u * hx - v * hy,
            c + u * hx + v * hy,
            c - u * hx + v * hy,
        ]
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_extents.0 * self.half_extents.1
    }

    /// Support function: max of `n · x` over the rectangle.
    pub fn support(&self, n: Point2) -> f64 {
        let (u, v) = self.axes();
        self.center.dot(n)
            + self.half_extents.0 * u.dot(n).abs()
            + self.half_extents.1 * v.dot(n).abs()
    }

    fn local(&self, p: Point2) -> Point2 {
        let (u, v) = self.axes();
        let d = p - self.center;
        Point2::new(d.dot(u), d.dot(v))
    }

    /// Euclidean distance from `p` to the closed rectangle (0 inside).
    pub fn distance_to_point(&self, p: Point2) -> f64 {
        let l = self.local(p);
        let dx = (l.x.abs() - self.half_extents.0).max(0.0);
        let dy = (l.y.abs() - self.half_extents.1).max(0.0);
        dx.hypot(dy)
    }

    pub fn contains(&self, p: Point2) -> bool {
        let l = self.local(p);
        l.x.abs() <= self.half_extents.0 && l.y.abs() <= self.half_extents.1
    }

    pub fn polygon(&self) -> ConvexPolygon {
        ConvexPolygon::new(self.corners().to_vec())
    }

    /// Separation distance between two rectangles; zero when they touch or
    /// overlap.
    pub fn distance_to_rect(&self, other: &OrientedRect) -> f64 {
        if self.overlaps(other) {
            return 0.0;
        }
        let a = self.corners();
        let b = other.corners();
        let mut best = f64::INFINITY;
        for i in 0..4 {
            let (p, q) = (a[i], a[(i + 1) % 4]);
            for &c in &b {
                best = best.min(point_segment_distance(c, p, q));
            }
            let (p, q) = (b[i], b[(i + 1) % 4]);
            for &c in &a {
                best = best.min(point_segment_distance(c, p, q));
            }
        }
        best
    }

    /// Separating-axis test on the closed rectangles.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let (u1, v1) = self.axes();
        let (u2, v2) = other.axes();
        for axis in [u1, v1, u2, v2] {
            let d = (other.center - self.center).dot(axis).abs();
            let r1 =
                self.half_extents.0 * u1.dot(axis).abs() + self.half_extents.1 * v1.dot(axis).abs();
            let r2 = other.half_extents.0 * u2.dot(axis).abs()
                + other.half_extents.1 * v2.dot(axis).abs();
            if d > r1 + r2 {
                return false;
            }
        }
        true
    }
}

/// Convex polygon with counterclockwise vertices and cached edge half-planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
    normals: Vec<Point2>,
    offsets: Vec<f64>,
    bbox: Aabb,
}

impl ConvexPolygon {
    /// Builds from counterclockwise vertices. Consecutive duplicates are
    /// dropped.
    pub fn new(mut vertices: Vec<Point2>) -> Self {
        vertices.dedup_by(|a, b| a.distance(*b) <= 1e-12);
        while vertices.len() > 1 && vertices[0].distance(vertices[vertices.len() - 1]) <= 1e-12 {
            vertices.pop();
        }
        let n = vertices.len();
        let mut normals = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let d = b - a;
            let normal = Point2::new(d.y, -d.x).normalized();
            normals.push(normal);
            offsets.push(normal.dot(a));
        }
        let bbox = Aabb::from_points(&vertices);
        Self {
            vertices,
            normals,
            offsets,
            bbox,
        }
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| self.vertices[i].cross(self.vertices[(i + 1) % n]))
            .sum::<f64>()
            * 0.5
    }

    pub fn is_convex_ccw(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            (b - a).cross(c - b) >= -1e-12
        })
    }

    /// True when `p` is inside by more than [`EPS`].
    pub fn contains_strict(&self, p: Point2) -> bool {
        if !self.bbox.contains(p) {
            return false;
        }
        self.normals
            .iter()
            .zip(&self.offsets)
            .all(|(n, &o)| n.dot(p) < o - EPS)
    }

    /// True when `p` is inside or within `tol` of the boundary.
    pub fn contains_closed(&self, p: Point2, tol: f64) -> bool {
        self.normals
            .iter()
            .zip(&self.offsets)
            .all(|(n, &o)| n.dot(p) <= o + tol)
    }

    /// Parameter interval `(t0, t1)` of the part of segment `pq` that lies
    /// deeper than [`EPS`] inside the polygon, if any.
    pub fn segment_interior_span(&self, p: Point2, q: Point2) -> Option<(f64, f64)> {
        let d = q - p;
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for (n, &o) in self.normals.iter().zip(&self.offsets) {
            let a = n.dot(d);
            let c = o - EPS - n.dot(p);
            if a.abs() < 1e-15 {
                if c <= 0.0 {
                    return None;
                }
            } else if a > 0.0 {
                hi = hi.min(c / a);
            } else {
                lo = lo.max(c / a);
            }
            if lo >= hi {
                return None;
            }
        }
        Some((lo, hi))
    }

    /// True when the open segment `pq` passes through the interior.
    pub fn segment_enters_interior(&self, p: Point2, q: Point2) -> bool {
        if !self.bbox.intersects(&Aabb::of_segment(p, q)) {
            return false;
        }
        self.segment_interior_span(p, q).is_some()
    }
}

/// Builds the conservative configuration-space obstacle of `rect` for a disc
/// of `radius`.
///
/// The boundary is the intersection of half-planes tangent to the exact
/// Minkowski sum: the four offset edges plus `corner_segments` intermediate
/// tangents at each corner. With zero corner segments the corners are sharp,
/// which equals the sum with the bounding square of the disc.
pub fn inflate(rect: &OrientedRect, radius: f64, corner_segments: usize) -> ConvexPolygon {
    let step = FRAC_PI_2 / (corner_segments as f64 + 1.0);
    let mut lines: Vec<(Point2, f64)> = Vec::with_capacity(4 * (corner_segments + 1));
    for quadrant in 0..4 {
        let base = rect.heading - FRAC_PI_2 + quadrant as f64 * FRAC_PI_2;
        for j in 0..=corner_segments {
            let n = Point2::from_angle(base + j as f64 * step);
            lines.push((n, rect.support(n) + radius));
        }
    }
    let m = lines.len();
    let mut vertices = Vec::with_capacity(m);
    for i in 0..m {
        let (n1, c1) = lines[i];
        let (n2, c2) = lines[(i + 1) % m];
        let det = n1.cross(n2);
        vertices.push(Point2::new(
            (c1 * n2.y - c2 * n1.y) / det,
            (n1.x * c2 - n2.x * c1) / det,
        ));
    }
    ConvexPolygon::new(vertices)
}

/// Where an obstacle came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObstacleSource {
    Object(u32),
    Wall(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InflatedObstacle {
    pub source: ObstacleSource,
    pub polygon: ConvexPolygon,
}

impl InflatedObstacle {
    pub fn object(id: u32, rect: &OrientedRect, radius: f64, corner_segments: usize) -> Self {
        Self {
            source: ObstacleSource::Object(id),
            polygon: inflate(rect, radius, corner_segments),
        }
    }
}

/// True iff the open segment `pq` meets no obstacle interior.
pub fn visible(p: Point2, q: Point2, obstacles: &[InflatedObstacle]) -> bool {
    visible_among(p, q, obstacles.iter().map(|o| &o.polygon))
}

pub fn visible_among<'a>(
    p: Point2,
    q: Point2,
    polygons: impl IntoIterator<Item = &'a ConvexPolygon>,
) -> bool {
    if p == q {
        return true;
    }
    let bb = Aabb::of_segment(p, q);
    polygons
        .into_iter()
        .all(|poly| !poly.bbox().intersects(&bb) || poly.segment_interior_span(p, q).is_none())
}

/// Full visibility graph over obstacle vertices and query terminals.
#[derive(Clone, Debug)]
pub struct VisGraph {
    pub nodes: Vec<Point2>,
    adjacency: Vec<Vec<(usize, f64)>>,
    terminal_start: usize,
}

impl VisGraph {
    pub fn terminals(&self) -> &[Point2] {
        &self.nodes[self.terminal_start..]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, adj)| {
            adj.iter()
                .filter(move |(j, _)| *j > i)
                .map(move |&(j, w)| (i, j, w))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].iter().any(|&(j, _)| j == b)
    }

    fn terminal_index(&self, p: Point2) -> Option<usize> {
        (self.terminal_start..self.nodes.len()).find(|&i| self.nodes[i] == p)
    }
}

/// Connects every mutually visible pair of nodes. Nodes are the obstacle
/// vertices that are not buried inside another obstacle, followed by the
/// terminals.
pub fn build_visgraph(
    obstacles: &[InflatedObstacle],
    terminals: &[Point2],
) -> Result<VisGraph, GeometryError> {
    for (index, &t) in terminals.iter().enumerate() {
        if obstacles.iter().any(|o| o.polygon.contains_strict(t)) {
            return Err(GeometryError::TerminalInsideObstacle {
                index,
                x: t.x,
                y: t.y,
            });
        }
    }
    let mut nodes = Vec::new();
    for (i, o) in obstacles.iter().enumerate() {
        for &v in o.polygon.vertices() {
            let buried = obstacles
                .iter()
                .enumerate()
                .any(|(j, other)| j != i && other.polygon.contains_strict(v));
            if !buried {
                nodes.push(v);
            }
        }
    }
    let terminal_start = nodes.len();
    nodes.extend_from_slice(terminals);
    let mut adjacency = vec![Vec::new(); nodes.len()];
    for a in 0..nodes.len() {
        for b in (a + 1)..nodes.len() {
            if visible(nodes[a], nodes[b], obstacles) {
                let w = nodes[a].distance(nodes[b]);
                adjacency[a].push((b, w));
                adjacency[b].push((a, w));
            }
        }
    }
    Ok(VisGraph {
        nodes,
        adjacency,
        terminal_start,
    })
}

#[derive(Clone, Copy, PartialEq)]
struct QueueEntry {
    dist: f64,
    node: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over an adjacency list; equal distances settle the smaller node
/// index first and keep the smaller predecessor.
fn dijkstra<F>(node_count: usize, source: usize, mut neighbors: F) -> (Vec<f64>, Vec<usize>)
where
    F: FnMut(usize, &mut dyn FnMut(usize, f64)),
{
    let mut dist = vec![f64::INFINITY; node_count];
    let mut pred = vec![usize::MAX; node_count];
    let mut done = vec![false; node_count];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(QueueEntry {
        dist: 0.0,
        node: source,
    });
    while let Some(QueueEntry { dist: d, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        neighbors(node, &mut |next, w| {
            if done[next] {
                return;
            }
            let nd = d + w;
            if nd < dist[next] || (nd == dist[next] && node < pred[next]) {
                dist[next] = nd;
                pred[next] = node;
                heap.push(QueueEntry {
                    dist: nd,
                    node: next,
                });
            }
        });
    }
    (dist, pred)
}

fn unwind(pred: &[usize], source: usize, target: usize) -> Vec<usize> {
    let mut path = vec![target];
    let mut cur = target;
    while cur != source {
        cur = pred[cur];
        path.push(cur);
    }
    path.reverse();
    path
}

/// Shortest path between two terminals of `g`.
pub fn shortest_path(
    g: &VisGraph,
    s: Point2,
    t: Point2,
) -> Result<(Vec<Point2>, f64), GeometryError> {
    let si = g
        .terminal_index(s)
        .ok_or(GeometryError::NotATerminal { x: s.x, y: s.y })?;
    let ti = g
        .terminal_index(t)
        .ok_or(GeometryError::NotATerminal { x: t.x, y: t.y })?;
    if si == ti {
        return Ok((vec![s], 0.0));
    }
    let (dist, pred) = dijkstra(g.nodes.len(), si, |n, f| {
        for &(m, w) in &g.adjacency[n] {
            f(m, w);
        }
    });
    if !dist[ti].is_finite() {
        return Err(GeometryError::NoPath);
    }
    let path = unwind(&pred, si, ti)
        .into_iter()
        .map(|i| g.nodes[i])
        .collect();
    Ok((path, dist[ti]))
}

/// Visibility graph restricted to bitangent edges, used by the planners.
///
/// An edge is kept only if its supporting line is tangent to the obstacle at
/// each obstacle-vertex endpoint. Shortest paths are the same as in the full
/// graph; the edge count is much smaller.
#[derive(Debug)]
pub struct TangentGraph {
    nodes: Vec<Point2>,
    /// Neighbouring polygon vertices (previous, next) of each node.
    corners: Vec<(Point2, Point2)>,
    adjacency: Vec<Vec<(u32, f64)>>,
}

/// Result of a single-source query against a [`TangentGraph`].
pub struct PathQuery {
    dist: Vec<f64>,
    pred: Vec<usize>,
    points: Vec<Point2>,
    target_start: usize,
}

impl PathQuery {
    pub fn distance(&self, target: usize) -> Option<f64> {
        let d = self.dist[self.target_start + target];
        d.is_finite().then_some(d)
    }

    pub fn path(&self, target: usize) -> Option<Vec<Point2>> {
        let t = self.target_start + target;
        if !self.dist[t].is_finite() {
            return None;
        }
        let source = self.target_start - 1;
        Some(
            unwind(&self.pred, source, t)
                .into_iter()
                .map(|i| self.points[i])
                .collect(),
        )
    }
}

fn tangent_at(v: Point2, corner: (Point2, Point2), w: Point2) -> bool {
    let d = w - v;
    let ca = d.cross(corner.0 - v);
    let cb = d.cross(corner.1 - v);
    ca * cb >= -1e-12
}

impl TangentGraph {
    pub fn build(polygons: &[&ConvexPolygon], region: &Aabb) -> Self {
        let mut nodes = Vec::new();
        let mut corners = Vec::new();
        let mut owner = Vec::new();
        for (pi, poly) in polygons.iter().enumerate() {
            let vs = poly.vertices();
            let n = vs.len();
            for (i, &v) in vs.iter().enumerate() {
                if !region.contains(v) {
                    continue;
                }
                if polygons
                    .iter()
                    .enumerate()
                    .any(|(j, other)| j != pi && other.contains_strict(v))
                {
                    continue;
                }
                nodes.push(v);
                corners.push((vs[(i + n - 1) % n], vs[(i + 1) % n]));
                owner.push((pi, i));
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for a in 0..nodes.len() {
            for b in (a + 1)..nodes.len() {
                let (pa, ia) = owner[a];
                let (pb, ib) = owner[b];
                if pa == pb {
                    let n = polygons[pa].len();
                    if (ia + 1) % n != ib && (ib + 1) % n != ia {
                        continue;
                    }
                } else if !tangent_at(nodes[a], corners[a], nodes[b])
                    || !tangent_at(nodes[b], corners[b], nodes[a])
                {
                    continue;
                }
                if visible_among(nodes[a], nodes[b], polygons.iter().copied()) {
                    let w = nodes[a].distance(nodes[b]);
                    adjacency[a].push((b as u32, w));
                    adjacency[b].push((a as u32, w));
                }
            }
        }
        Self {
            nodes,
            corners,
            adjacency,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Graph nodes reachable from a free point `p`, with edge weights.
    fn links(&self, p: Point2, polygons: &[&ConvexPolygon]) -> Vec<(usize, f64)> {
        (0..self.nodes.len())
            .filter(|&i| {
                let v = self.nodes[i];
                v != p
                    && tangent_at(v, self.corners[i], p)
                    && visible_among(p, v, polygons.iter().copied())
            })
            .map(|i| (i, self.nodes[i].distance(p)))
            .collect()
    }

    /// Shortest distances (and paths) from `source` to each of `targets`.
    pub fn query(
        &self,
        source: Point2,
        targets: &[Point2],
        polygons: &[&ConvexPolygon],
    ) -> PathQuery {
        let v = self.nodes.len();
        let src = v;
        let target_start = v + 1;
        let total = target_start + targets.len();
        let source_links = self.links(source, polygons);
        let mut reverse: Vec<Vec<(usize, f64)>> = vec![Vec::new(); v];
        let mut direct = vec![None; targets.len()];
        for (ti, &t) in targets.iter().enumerate() {
            for (node, w) in self.links(t, polygons) {
                reverse[node].push((target_start + ti, w));
            }
            if visible_among(source, t, polygons.iter().copied()) {
                direct[ti] = Some(source.distance(t));
            }
        }
        let (dist, pred) = dijkstra(total, src, |n, f| {
            if n == src {
                for &(m, w) in &source_links {
                    f(m, w);
                }
                for (ti, d) in direct.iter().enumerate() {
                    if let Some(d) = d {
                        f(target_start + ti, *d);
                    }
                }
            } else if n < v {
                for &(m, w) in &self.adjacency[n] {
                    f(m as usize, w);
                }
                for &(m, w) in &reverse[n] {
                    f(m, w);
                }
            }
        });
        let mut points = self.nodes.clone();
        points.push(source);
        points.extend_from_slice(targets);
        PathQuery {
            dist,
            pred,
            points,
            target_start,
        }
    }

    /// Which of `targets` are connected to `source` through free space.
    pub fn reachable(
        &self,
        source: Point2,
        targets: &[Point2],
        polygons: &[&ConvexPolygon],
    ) -> Vec<bool> {
        let v = self.nodes.len();
        let mut seen = vec![false; v];
        let mut stack: Vec<usize> = self
            .links(source, polygons)
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        for &i in &stack {
            seen[i] = true;
        }
        while let Some(n) = stack.pop() {
            for &(m, _) in &self.adjacency[n] {
                let m = m as usize;
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        targets
            .iter()
            .map(|&t| {
                if visible_among(source, t, polygons.iter().copied()) {
                    return true;
                }
                (0..v).any(|i| {
                    seen[i]
                        && tangent_at(self.nodes[i], self.corners[i], t)
                        && visible_among(t, self.nodes[i], polygons.iter().copied())
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> OrientedRect {
        OrientedRect::axis_aligned(Point2::ORIGIN, 0.5, 0.5)
    }

    #[test]
    fn zero_radius_inflation_is_identity() {
        for segs in [0, 1, 4, 8] {
            let poly = inflate(&unit_square(), 0.0, segs);
            assert_eq!(poly.len(), 4, "segments {segs}");
            assert!((poly.area() - 1.0).abs() < 1e-12);
            for c in unit_square().corners() {
                assert!(poly.vertices().iter().any(|v| v.distance(c) < 1e-12));
            }
        }
    }

    #[test]
    fn sharp_inflation_is_offset_square() {
        let poly = inflate(&unit_square(), 0.3, 0);
        assert_eq!(poly.len(), 4);
        assert!((poly.area() - 1.6 * 1.6).abs() < 1e-12);
        for v in poly.vertices() {
            assert!((v.x.abs() - 0.8).abs() < 1e-12 && (v.y.abs() - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn rounded_inflation_area_is_bracketed() {
        // Exact Minkowski area: area + perimeter * r + pi r^2.
        let exact = 1.0 + 4.0 * 0.3 + PI * 0.09;
        let sharp = inflate(&unit_square(), 0.3, 0).area();
        let poly = inflate(&unit_square(), 0.3, 4);
        assert!(poly.is_convex_ccw());
        assert!(poly.area() >= exact - 1e-12, "{} < {}", poly.area(), exact);
        assert!(poly.area() <= sharp + 1e-12);
        assert_eq!(poly.len(), 20);
    }

    #[test]
    fn inflation_is_conservative_for_random_rects() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let rect = OrientedRect::new(
                Point2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
                rng.random_range(0.1..1.0),
                rng.random_range(0.1..1.0),
                rng.random_range(-PI..PI),
            );
            let r = rng.random_range(0.0..0.6);
            let polys: Vec<_> = [0, 1, 2, 4, 7]
                .iter()
                .map(|&s| inflate(&rect, r, s))
                .collect();
            for _ in 0..500 {
                // Sample a point within distance r of the rectangle.
                let on_rect = rect.center
                    + rect.axes().0 * rng.random_range(-rect.half_extents.0..=rect.half_extents.0)
                    + rect.axes().1 * rng.random_range(-rect.half_extents.1..=rect.half_extents.1);
                let p = on_rect
                    + Point2::from_angle(rng.random_range(0.0..2.0 * PI))
                        * (r * rng.random::<f64>());
                assert!(rect.distance_to_point(p) <= r + 1e-12);
                for poly in &polys {
                    assert!(poly.contains_closed(p, 1e-9));
                }
            }
        }
    }

    #[test]
    fn heading_is_normalized() {
        let r = OrientedRect::new(Point2::ORIGIN, 1.0, 1.0, PI);
        assert!((r.heading + PI).abs() < 1e-12);
        assert!((normalize_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn zero_length_segment_is_visible() {
        let obs = vec![InflatedObstacle::object(0, &unit_square(), 0.2, 4)];
        assert!(visible(Point2::ORIGIN, Point2::ORIGIN, &obs));
    }

    #[test]
    fn crossing_segment_is_blocked_and_grazing_is_not() {
        let obs = vec![InflatedObstacle::object(0, &unit_square(), 0.0, 0)];
        assert!(!visible(
            Point2::new(-2.0, 0.0),
            Point2::new(2.0, 0.0),
            &obs
        ));
        assert!(visible(Point2::new(-2.0, 0.5), Point2::new(2.0, 0.5), &obs));
        assert!(visible(
            Point2::new(-2.0, -2.0),
            Point2::new(-0.5, -0.5),
            &obs
        ));
    }

    #[test]
    fn visibility_matches_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut blocked = 0;
        for _ in 0..1000 {
            let rect = OrientedRect::new(
                Point2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                rng.random_range(0.2..1.0),
                rng.random_range(0.2..1.0),
                rng.random_range(-PI..PI),
            );
            let poly = inflate(&rect, rng.random_range(0.0..0.4), 4);
            let p = Point2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let q = Point2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let oracle = (1..=1000).all(|i| !poly.contains_strict(p.lerp(q, i as f64 / 1001.0)));
            let obs = [InflatedObstacle {
                source: ObstacleSource::Object(0),
                polygon: poly,
            }];
            assert_eq!(visible(p, q, &obs), oracle, "p={p:?} q={q:?}");
            blocked += usize::from(!oracle);
        }
        assert!(blocked > 100);
    }

    #[test]
    fn empty_scene_graph_has_single_edge() {
        let s = Point2::new(0.0, 0.0);
        let t = Point2::new(3.0, 4.0);
        let g = build_visgraph(&[], &[s, t]).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edge_count(), 1);
        let (path, len) = shortest_path(&g, s, t).unwrap();
        assert_eq!(path, vec![s, t]);
        assert!((len - 5.0).abs() < 1e-12);
    }

    #[test]
    fn blocking_square_removes_direct_edge() {
        let obs = vec![InflatedObstacle::object(
            0,
            &OrientedRect::axis_aligned(Point2::new(2.0, 0.0), 0.5, 0.5),
            0.0,
            4,
        )];
        let s = Point2::new(0.0, 0.0);
        let t = Point2::new(4.0, 0.0);
        let g = build_visgraph(&obs, &[s, t]).unwrap();
        let si = g.nodes.len() - 2;
        assert!(!g.has_edge(si, si + 1));
        let (_, len) = shortest_path(&g, s, t).unwrap();
        assert!(len > 4.0);
    }

    #[test]
    fn terminal_inside_obstacle_is_rejected() {
        let obs = vec![InflatedObstacle::object(0, &unit_square(), 0.1, 4)];
        let err = build_visgraph(&obs, &[Point2::ORIGIN]).unwrap_err();
        assert!(matches!(
            err,
            GeometryError::TerminalInsideObstacle { index: 0, .. }
        ));
    }

    #[test]
    fn enclosed_terminal_has_no_path() {
        // Four bars touching at their ends seal the target in.
        let bars = [
            OrientedRect::axis_aligned(Point2::new(0.0, 1.0), 1.2, 0.2),
            OrientedRect::axis_aligned(Point2::new(0.0, -1.0), 1.2, 0.2),
            OrientedRect::axis_aligned(Point2::new(1.0, 0.0), 0.2, 1.2),
            OrientedRect::axis_aligned(Point2::new(-1.0, 0.0), 0.2, 1.2),
        ];
        let obs: Vec<_> = bars
            .iter()
            .enumerate()
            .map(|(i, r)| InflatedObstacle::object(i as u32, r, 0.0, 0))
            .collect();
        let s = Point2::new(5.0, 5.0);
        let t = Point2::ORIGIN;
        let g = build_visgraph(&obs, &[s, t]).unwrap();
        assert_eq!(shortest_path(&g, s, t).unwrap_err(), GeometryError::NoPath);
    }
}
