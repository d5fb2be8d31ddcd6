//! Convex polygonal domains with mixed boundary data, and their
//! triangulation into conforming P1 meshes.
//!
//! Meshes are built from a structured lattice clipped to the polygon plus
//! boundary nodes placed along every segment; the union is triangulated by
//! Delaunay, with cocircular lattice cells resolved to one canonical
//! diagonal so that interior patches stay translation-invariant.

use crate::geom::{point_segment_distance, Vec2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// Tolerance used for "point lies on the boundary" tests.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("domain is not convex and counter-clockwise")]
    NonConvexDomain,
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("invalid boundary segments: {0}")]
    InvalidSegments(String),
    #[error("at least one Dirichlet segment required")]
    NoDirichletSegment,
    #[error("invalid resolution h = {0}")]
    InvalidResolution(f64),
    #[error("resolution too coarse: no interior lattice node")]
    ResolutionTooCoarse,
    #[error("point ({0}, {1}) is not on the domain boundary")]
    PointNotOnBoundary(f64, f64),
    #[error("triangulation failed: {0}")]
    Triangulation(String),
    #[error("mesh dump line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Boundary datum carried by one segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BoundaryCondition {
    /// Prescribed displacement `w(x) = a + b·x₁ + c·x₂`.
    Dirichlet { a: f64, b: f64, c: f64 },
    /// Prescribed traction `σ·ν = g`.
    Neumann { g: f64 },
}

impl BoundaryCondition {
    pub fn dirichlet(a: f64, b: f64, c: f64) -> Self {
        BoundaryCondition::Dirichlet { a, b, c }
    }

    pub fn neumann(g: f64) -> Self {
        BoundaryCondition::Neumann { g }
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self, BoundaryCondition::Dirichlet { .. })
    }

    /// Displacement datum at `x`, `None` for Neumann data.
    pub fn value(&self, x: Vec2) -> Option<f64> {
        match *self {
            BoundaryCondition::Dirichlet { a, b, c } => Some(a + b * x.x + c * x.y),
            BoundaryCondition::Neumann { .. } => None,
        }
    }

    /// Gradient of the affine datum.
    pub fn gradient(&self) -> Option<Vec2> {
        match *self {
            BoundaryCondition::Dirichlet { b, c, .. } => Some(Vec2::new(b, c)),
            BoundaryCondition::Neumann { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySegment {
    pub start: Vec2,
    pub end: Vec2,
    pub condition: BoundaryCondition,
}

impl BoundarySegment {
    pub fn new(start: Vec2, end: Vec2, condition: BoundaryCondition) -> Self {
        BoundarySegment { start, end, condition }
    }

    pub fn length(&self) -> f64 {
        self.start.dist(self.end)
    }

    /// Outward unit normal (the polygon is counter-clockwise).
    pub fn normal(&self) -> Vec2 {
        -(self.end - self.start).perp().normalized()
    }
}

/// Convex counter-clockwise polygon whose boundary is partitioned into
/// segments carrying Dirichlet or Neumann data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Domain {
    vertices: Vec<Vec2>,
    segments: Vec<BoundarySegment>,
}

#[derive(Deserialize)]
struct DomainRepr {
    vertices: Vec<Vec2>,
    segments: Vec<BoundarySegment>,
}

impl<'de> Deserialize<'de> for Domain {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let repr = DomainRepr::deserialize(de)?;
        Domain::new(repr.vertices, repr.segments).map_err(serde::de::Error::custom)
    }
}

impl Domain {
    /// Validates convexity, orientation and the segment partition.
    pub fn new(vertices: Vec<Vec2>, segments: Vec<BoundarySegment>) -> Result<Self, MeshError> {
        let n = vertices.len();
        if n < 3 {
            return Err(MeshError::DegeneratePolygon("fewer than three vertices".into()));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(MeshError::DegeneratePolygon("non-finite vertex".into()));
        }
        let scale = bbox_diameter(&vertices);
        if !(scale > 0.0) {
            return Err(MeshError::DegeneratePolygon("zero extent".into()));
        }
        for i in 0..n {
            if vertices[i].dist(vertices[(i + 1) % n]) <= 1e-12 * scale {
                return Err(MeshError::DegeneratePolygon(format!("repeated vertex {i}")));
            }
        }
        let mut strict = 0;
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let cr = (b - a).cross(c - b);
            if cr < -1e-12 * scale * scale {
                return Err(MeshError::NonConvexDomain);
            }
            if cr > 1e-12 * scale * scale {
                strict += 1;
            }
        }
        if strict < 3 {
            return Err(MeshError::DegeneratePolygon("fewer than three corners".into()));
        }
        // A convex polygon with all turns left can still wind twice.
        let total_turn: f64 = (0..n)
            .map(|i| {
                let d0 = vertices[(i + 1) % n] - vertices[i];
                let d1 = vertices[(i + 2) % n] - vertices[(i + 1) % n];
                d0.cross(d1).atan2(d0.dot(d1))
            })
            .sum();
        if (total_turn - std::f64::consts::TAU).abs() > 1e-6 {
            return Err(MeshError::NonConvexDomain);
        }

        let domain = Domain { vertices, segments };
        domain.validate_segments(scale)?;
        if !domain.segments.iter().any(|s| s.condition.is_dirichlet()) {
            return Err(MeshError::NoDirichletSegment);
        }
        Ok(domain)
    }

    /// One segment per polygon edge, `conditions[i]` on edge `i → i+1`.
    pub fn with_edge_conditions(
        vertices: Vec<Vec2>,
        conditions: &[BoundaryCondition],
    ) -> Result<Self, MeshError> {
        if conditions.len() != vertices.len() {
            return Err(MeshError::InvalidSegments(format!(
                "{} conditions for {} edges",
                conditions.len(),
                vertices.len()
            )));
        }
        let n = vertices.len();
        let segments = (0..n)
            .map(|i| BoundarySegment::new(vertices[i], vertices[(i + 1) % n], conditions[i]))
            .collect();
        Domain::new(vertices, segments)
    }

    fn validate_segments(&self, scale: f64) -> Result<(), MeshError> {
        let tol = 1e-9 * scale.max(1.0);
        if self.segments.is_empty() {
            return Err(MeshError::InvalidSegments("no segments".into()));
        }
        let n = self.vertices.len();
        // edge index -> list of (t_start, t_end)
        let mut per_edge: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
        for (id, s) in self.segments.iter().enumerate() {
            if !s.start.is_finite() || !s.end.is_finite() {
                return Err(MeshError::InvalidSegments(format!("segment {id} is not finite")));
            }
            if s.length() <= tol {
                return Err(MeshError::InvalidSegments(format!("segment {id} has zero length")));
            }
            if let BoundaryCondition::Dirichlet { a, b, c } = s.condition {
                if !(a.is_finite() && b.is_finite() && c.is_finite()) {
                    return Err(MeshError::InvalidSegments(format!("segment {id} datum is not finite")));
                }
            }
            if let BoundaryCondition::Neumann { g } = s.condition {
                if !g.is_finite() {
                    return Err(MeshError::InvalidSegments(format!("segment {id} datum is not finite")));
                }
            }
            let edge = (0..n).find_map(|e| {
                let a = self.vertices[e];
                let b = self.vertices[(e + 1) % n];
                let (d0, t0) = point_segment_distance(s.start, a, b);
                let (d1, t1) = point_segment_distance(s.end, a, b);
                (d0 <= tol && d1 <= tol && t1 > t0).then_some((e, t0, t1))
            });
            match edge {
                Some((e, t0, t1)) => per_edge[e].push((t0, t1)),
                None => {
                    return Err(MeshError::InvalidSegments(format!(
                        "segment {id} does not lie on a polygon edge in counter-clockwise direction"
                    )))
                }
            }
        }
        for (e, spans) in per_edge.iter_mut().enumerate() {
            spans.sort_by(|a, b| a.0.total_cmp(&b.0));
            let len = self.vertices[e].dist(self.vertices[(e + 1) % n]);
            let ttol = tol / len;
            let mut cursor = 0.0;
            for &(t0, t1) in spans.iter() {
                if (t0 - cursor).abs() > ttol {
                    return Err(MeshError::InvalidSegments(format!(
                        "edge {e} is not covered exactly once near t = {cursor:.6}"
                    )));
                }
                cursor = t1;
            }
            if (1.0 - cursor).abs() > ttol {
                return Err(MeshError::InvalidSegments(format!("edge {e} is not fully covered")));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn segments(&self) -> &[BoundarySegment] {
        &self.segments
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    /// Largest vertex-to-vertex distance.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                d = d.max(a.dist(*b));
            }
        }
        d
    }

    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        bbox(&self.vertices)
    }

    /// Signed distance to the boundary: positive inside.
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        let n = self.vertices.len();
        let mut inside = true;
        let mut dmin = f64::INFINITY;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if (b - a).cross(p - a) < 0.0 {
                inside = false;
            }
            dmin = dmin.min(point_segment_distance(p, a, b).0);
        }
        if inside {
            dmin
        } else {
            -dmin
        }
    }

    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        self.signed_distance(p) >= -tol
    }

    /// Dirichlet datum at a boundary point. `Ok(None)` on Neumann portions.
    ///
    /// At a junction the segment whose interior is nearest wins, ties going
    /// to the lower segment id; Dirichlet data takes precedence over Neumann
    /// data at a mixed junction.
    pub fn boundary_value(&self, x: Vec2) -> Result<Option<f64>, MeshError> {
        match self.boundary_segment_at(x) {
            Some(id) => Ok(self.segments[id].condition.value(x)),
            None => Err(MeshError::PointNotOnBoundary(x.x, x.y)),
        }
    }

    /// Segment id containing `x` per the junction rule of [`Domain::boundary_value`].
    pub fn boundary_segment_at(&self, x: Vec2) -> Option<usize> {
        let mut best: Option<(bool, f64, usize)> = None;
        for (id, s) in self.segments.iter().enumerate() {
            let (d, _) = point_segment_distance(x, s.start, s.end);
            if d > BOUNDARY_TOL {
                continue;
            }
            let neumann = !s.condition.is_dirichlet();
            let better = match best {
                None => true,
                Some((bn, bd, _)) => (neumann, d) < (bn, bd - 1e-12),
            };
            if better {
                best = Some((neumann, d, id));
            }
        }
        best.map(|(_, _, id)| id)
    }

    pub fn dirichlet_segments(&self) -> impl Iterator<Item = (usize, &BoundarySegment)> {
        self.segments.iter().enumerate().filter(|(_, s)| s.condition.is_dirichlet())
    }
}

fn polygon_area(v: &[Vec2]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| v[i].cross(v[(i + 1) % n])).sum::<f64>()
}

fn bbox(v: &[Vec2]) -> (Vec2, Vec2) {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in v {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

fn bbox_diameter(v: &[Vec2]) -> f64 {
    let (lo, hi) = bbox(v);
    (hi - lo).norm()
}

/// A boundary edge of the mesh and the segment id it lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub segment: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<Vec2>,
    /// Counter-clockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Target edge length the mesh was built for.
    pub h: f64,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, t: usize) -> [Vec2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(c - a)
    }

    pub fn centroid(&self, t: usize) -> Vec2 {
        let [a, b, c] = self.corners(t);
        (a + b + c) / 3.0
    }

    /// Gradients of the three P1 hat functions on triangle `t`.
    pub fn hat_gradients(&self, t: usize) -> [Vec2; 3] {
        let [a, b, c] = self.corners(t);
        let twice = (b - a).cross(c - a);
        [
            (b - c).perp() / -twice,
            (c - a).perp() / -twice,
            (a - b).perp() / -twice,
        ]
    }

    /// Nodes lying on some boundary edge.
    pub fn boundary_node_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        for e in &self.boundary_edges {
            mask[e.nodes[0]] = true;
            mask[e.nodes[1]] = true;
        }
        mask
    }

    /// Neighbour across the edge opposite each corner, `None` on the boundary.
    pub fn triangle_neighbors(&self) -> Vec<[Option<usize>; 3]> {
        let mut edges: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                edges.entry((a.min(b), a.max(b))).or_default().push((t, k));
            }
        }
        let mut nb = vec![[None; 3]; self.triangles.len()];
        for list in edges.values() {
            if let [(t0, k0), (t1, k1)] = list[..] {
                nb[t0][k0] = Some(t1);
                nb[t1][k1] = Some(t0);
            }
        }
        nb
    }

    pub fn min_angle_deg(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let p = self.corners(t);
                (0..3)
                    .map(|k| {
                        let u = p[(k + 1) % 3] - p[k];
                        let v = p[(k + 2) % 3] - p[k];
                        u.cross(v).abs().atan2(u.dot(v)).to_degrees()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_edge_length(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let p = self.corners(t);
                (0..3).map(|k| p[k].dist(p[(k + 1) % 3])).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Text dump: `N x y`, `T i j k`, `B i j seg`, one record per line.
    pub fn to_dump(&self) -> String {
        let mut s = String::with_capacity(64 * (self.nodes.len() + self.triangles.len()));
        for p in &self.nodes {
            let _ = writeln!(s, "N {:.16e} {:.16e}", p.x, p.y);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "T {} {} {}", t[0], t[1], t[2]);
        }
        for e in &self.boundary_edges {
            let _ = writeln!(s, "B {} {} {}", e.nodes[0], e.nodes[1], e.segment);
        }
        s
    }

    /// Parses [`Mesh::to_dump`] output. Indices are range-checked and
    /// triangles must have positive area.
    pub fn from_dump(text: &str, h: f64) -> Result<Mesh, MeshError> {
        let err = |line: usize, msg: &str| MeshError::Parse { line, msg: msg.to_string() };
        let mut nodes = Vec::new();
        let mut triangles = Vec::new();
        let mut boundary_edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let mut it = raw.split_whitespace();
            let Some(tag) = it.next() else { continue };
            let fields: Vec<&str> = it.collect();
            match tag {
                "N" => {
                    if fields.len() != 2 {
                        return Err(err(line, "node record needs 2 coordinates"));
                    }
                    let x: f64 = fields[0].parse().map_err(|_| err(line, "bad x coordinate"))?;
                    let y: f64 = fields[1].parse().map_err(|_| err(line, "bad y coordinate"))?;
                    if !(x.is_finite() && y.is_finite()) {
                        return Err(err(line, "non-finite coordinate"));
                    }
                    nodes.push(Vec2::new(x, y));
                }
                "T" | "B" => {
                    if fields.len() != 3 {
                        return Err(err(line, "record needs 3 indices"));
                    }
                    let mut idx = [0usize; 3];
                    for (k, f) in fields.iter().enumerate() {
                        idx[k] = f.parse().map_err(|_| err(line, "bad index"))?;
                    }
                    if tag == "T" {
                        triangles.push((line, idx));
                    } else {
                        boundary_edges.push((line, idx));
                    }
                }
                _ => return Err(err(line, "unknown record tag")),
            }
        }
        let n = nodes.len();
        let mut tris = Vec::with_capacity(triangles.len());
        for (line, t) in triangles {
            if t.iter().any(|&k| k >= n) {
                return Err(err(line, "node index out of range"));
            }
            let (a, b, c) = (nodes[t[0]], nodes[t[1]], nodes[t[2]]);
            if !((b - a).cross(c - a) > 0.0) {
                return Err(err(line, "triangle is not positively oriented"));
            }
            tris.push(t);
        }
        let mut bedges = Vec::with_capacity(boundary_edges.len());
        for (line, e) in boundary_edges {
            if e[0] >= n || e[1] >= n || e[0] == e[1] {
                return Err(err(line, "node index out of range"));
            }
            bedges.push(BoundaryEdge { nodes: [e[0], e[1]], segment: e[2] });
        }
        Ok(Mesh { nodes, triangles: tris, boundary_edges: bedges, h })
    }
}

/// Triangulates `domain` at target edge length `h`.
pub fn triangulate(domain: &Domain, h: f64) -> Result<Mesh, MeshError> {
    if !(h > 0.0 && h.is_finite()) || h >= 0.5 * domain.diameter() {
        return Err(MeshError::InvalidResolution(h));
    }
    let (lo, hi) = domain.bounding_box();
    let nx = ((hi.x - lo.x) / h - 1e-9).ceil().max(1.0) as usize;
    let ny = ((hi.y - lo.y) / h - 1e-9).ceil().max(1.0) as usize;
    let hx = (hi.x - lo.x) / nx as f64;
    let hy = (hi.y - lo.y) / ny as f64;

    let mut points: Vec<Vec2> = Vec::new();
    // Boundary nodes, walking the polygon counter-clockwise.
    let n = domain.vertices.len();
    let mut chain: Vec<(usize, f64, usize)> = Vec::new(); // (edge, t_start, segment id)
    for (id, s) in domain.segments.iter().enumerate() {
        for e in 0..n {
            let a = domain.vertices[e];
            let b = domain.vertices[(e + 1) % n];
            let (d0, t0) = point_segment_distance(s.start, a, b);
            let (d1, t1) = point_segment_distance(s.end, a, b);
            let tol = 1e-9 * domain.diameter().max(1.0);
            if d0 <= tol && d1 <= tol && t1 > t0 {
                chain.push((e, t0, id));
                break;
            }
        }
    }
    chain.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
    for &(_, _, id) in &chain {
        let s = &domain.segments[id];
        let k = (s.length() / h - 1e-9).ceil().max(1.0) as usize;
        for i in 0..k {
            points.push(s.start.lerp(s.end, i as f64 / k as f64));
        }
    }
    let n_boundary = points.len();

    let keep = 0.5 * hx.min(hy) * (1.0 - 1e-9);
    let mut n_interior = 0;
    for j in 1..ny {
        for i in 1..nx {
            let p = Vec2::new(lo.x + i as f64 * hx, lo.y + j as f64 * hy);
            if domain.signed_distance(p) >= keep {
                points.push(p);
                n_interior += 1;
            }
        }
    }
    if n_interior == 0 {
        return Err(MeshError::ResolutionTooCoarse);
    }

    let mut on_boundary = vec![true; n_boundary];
    on_boundary.resize(points.len(), false);
    let spacing = hx.min(hy);
    let mut triangles = build_triangles(&points, &on_boundary, spacing)?;
    refine(domain, h, spacing, &mut points, &mut on_boundary, &mut triangles)?;
    canonicalize_cocircular(&points, &mut triangles, hx.min(hy));
    triangles.sort_by_key(|t| {
        let mut s = *t;
        s.sort_unstable();
        s
    });

    // Boundary edges: edges with one incident triangle.
    let mut count: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for t in &triangles {
        for k in 0..3 {
            let a = t[k];
            let b = t[(k + 1) % 3];
            let e = count.entry((a.min(b), a.max(b))).or_insert((0, 0));
            e.0 += 1;
            e.1 = if a < b { 0 } else { 1 };
        }
    }
    let mut boundary_edges = Vec::new();
    for (&(a, b), &(c, dir)) in &count {
        if c != 1 {
            continue;
        }
        if !on_boundary[a] || !on_boundary[b] {
            return Err(MeshError::Triangulation("lattice node on the hull".into()));
        }
        let (p, q) = if dir == 0 { (a, b) } else { (b, a) };
        let mid = (points[p] + points[q]) * 0.5;
        let seg = domain
            .segments
            .iter()
            .position(|s| point_segment_distance(mid, s.start, s.end).0 <= BOUNDARY_TOL)
            .ok_or_else(|| MeshError::Triangulation("boundary edge off every segment".into()))?;
        boundary_edges.push(BoundaryEdge { nodes: [p, q], segment: seg });
    }

    Ok(Mesh { nodes: points, triangles, boundary_edges, h })
}

/// Chew/Ruppert-style refinement: triangles with an angle below
/// `MIN_ANGLE_DEG` or an edge longer than `MAX_EDGE_FACTOR·h` receive their
/// circumcenter, or split the boundary edge that circumcenter encroaches.
fn refine(
    domain: &Domain,
    h: f64,
    spacing: f64,
    points: &mut Vec<Vec2>,
    on_boundary: &mut Vec<bool>,
    triangles: &mut Vec<[usize; 3]>,
) -> Result<(), MeshError> {
    const MIN_ANGLE_DEG: f64 = 20.5;
    const MAX_EDGE_FACTOR: f64 = 1.45;
    for _round in 0..40 {
        let mut bnd_edges: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for t in triangles.iter() {
            for k in 0..3 {
                let a = t[k];
                let b = t[(k + 1) % 3];
                *bnd_edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let hull: Vec<(usize, usize)> =
            bnd_edges.iter().filter(|(_, &c)| c == 1).map(|(&e, _)| e).collect();
        let mut split: BTreeMap<(usize, usize), ()> = BTreeMap::new();
        let mut fresh: Vec<Vec2> = Vec::new();
        for t in triangles.iter() {
            let p = [points[t[0]], points[t[1]], points[t[2]]];
            let min_angle = (0..3)
                .map(|k| {
                    let u = p[(k + 1) % 3] - p[k];
                    let v = p[(k + 2) % 3] - p[k];
                    u.cross(v).abs().atan2(u.dot(v)).to_degrees()
                })
                .fold(f64::INFINITY, f64::min);
            let long = (0..3).map(|k| p[k].dist(p[(k + 1) % 3])).fold(0.0, f64::max);
            if min_angle >= MIN_ANGLE_DEG && long <= MAX_EDGE_FACTOR * h {
                continue;
            }
            let c = circumcenter(p[0], p[1], p[2]);
            let encroached = hull.iter().find(|&&(a, b)| {
                let (pa, pb) = (points[a], points[b]);
                c.dist((pa + pb) * 0.5) < 0.5 * pa.dist(pb) * (1.0 + 1e-9)
            });
            match encroached {
                Some(&e) => {
                    split.insert(e, ());
                }
                None if domain.signed_distance(c) > 0.0
                    && fresh.iter().all(|q| q.dist(c) > 0.25 * spacing) => {
                        fresh.push(c);
                    }
                None => {}
            }
        }
        if split.is_empty() && fresh.is_empty() {
            return Ok(());
        }
        // Circumcenters too close to a split midpoint are dropped.
        let mids: Vec<Vec2> = split.keys().map(|&(a, b)| (points[a] + points[b]) * 0.5).collect();
        fresh.retain(|c| mids.iter().all(|m| m.dist(*c) > 0.25 * spacing));
        for m in mids {
            points.push(m);
            on_boundary.push(true);
        }
        for c in fresh {
            points.push(c);
            on_boundary.push(false);
        }
        *triangles = build_triangles(points, on_boundary, spacing)?;
    }
    Ok(())
}

fn circumcenter(a: Vec2, b: Vec2, c: Vec2) -> Vec2 {
    let (ba, ca) = (b - a, c - a);
    let d = 2.0 * ba.cross(ca);
    let (b2, c2) = (ba.norm_sq(), ca.norm_sq());
    a + Vec2::new(ca.y * b2 - ba.y * c2, ba.x * c2 - ca.x * b2) / d
}

fn build_triangles(points: &[Vec2], on_boundary: &[bool], spacing: f64) -> Result<Vec<[usize; 3]>, MeshError> {
    let mut triangles = delaunay(points)?;
    // Rounded boundary nodes on slanted edges are not exactly collinear; the
    // slivers Delaunay spans between them are dropped.
    let sliver = 1e-10 * spacing * spacing;
    triangles.retain(|t| {
        let all_boundary = t.iter().all(|&k| on_boundary[k]);
        !(all_boundary && orient_ccw(points[t[0]], points[t[1]], points[t[2]]).abs() <= sliver)
    });
    Ok(triangles)
}

fn delaunay(points: &[Vec2]) -> Result<Vec<[usize; 3]>, MeshError> {
    use spade::{DelaunayTriangulation, Point2, Triangulation};
    let mut dt: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut map = Vec::with_capacity(points.len());
    for p in points {
        let handle = dt
            .insert(Point2::new(p.x, p.y))
            .map_err(|e| MeshError::Triangulation(format!("{e:?}")))?;
        map.push(handle.index());
    }
    let mut inverse = vec![usize::MAX; dt.num_vertices()];
    for (mine, &theirs) in map.iter().enumerate() {
        if inverse[theirs] != usize::MAX {
            return Err(MeshError::Triangulation("duplicate node".into()));
        }
        inverse[theirs] = mine;
    }
    let tris = dt
        .inner_faces()
        .map(|f| {
            let v = f.vertices();
            [inverse[v[0].fix().index()], inverse[v[1].fix().index()], inverse[v[2].fix().index()]]
        })
        .collect();
    Ok(tris)
}

/// Resolves every cocircular convex quad to the diagonal through its
/// lexicographically smallest corner. Flips among cocircular quads keep the
/// triangulation Delaunay.
fn canonicalize_cocircular(points: &[Vec2], tris: &mut [[usize; 3]], scale: f64) {
    let tol = 1e-9 * scale.powi(4);
    // Lexicographic order that treats coordinates within rounding noise as
    // equal, so lattice points rebuilt along boundary segments sort like
    // their exact lattice counterparts.
    let snap = 1e-9 * scale;
    let lex = |a: usize, b: usize| {
        let (p, q) = (points[a], points[b]);
        if (p.x - q.x).abs() > snap {
            p.x.partial_cmp(&q.x).unwrap()
        } else {
            p.y.partial_cmp(&q.y).unwrap()
        }
    };
    for _pass in 0..64 {
        let mut edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, tri) in tris.iter().enumerate() {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                edges.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        let mut touched = vec![false; tris.len()];
        let mut flips = 0;
        for (&(a, b), ts) in &edges {
            let [t0, t1] = ts[..] else { continue };
            if touched[t0] || touched[t1] {
                continue;
            }
            let c = *tris[t0].iter().find(|&&v| v != a && v != b).unwrap();
            let d = *tris[t1].iter().find(|&&v| v != a && v != b).unwrap();
            let quad = [a, b, c, d];
            let min = *quad.iter().min_by(|&&x, &&y| lex(x, y)).unwrap();
            if min == a || min == b {
                continue;
            }
            if incircle(points, tris[t0], d).abs() > tol {
                continue;
            }
            // New diagonal c–d must split the quad into two positive triangles.
            let (pa, pb, pc, pd) = (points[a], points[b], points[c], points[d]);
            let n0 = orient_ccw(pc, pd, pa);
            let n1 = orient_ccw(pd, pc, pb);
            let (ta, tb) = match (n0, n1) {
                (x, y) if x > 0.0 && y > 0.0 => ([c, d, a], [d, c, b]),
                (x, y) if x < 0.0 && y < 0.0 => ([d, c, a], [c, d, b]),
                _ => continue,
            };
            tris[t0] = ta;
            tris[t1] = tb;
            touched[t0] = true;
            touched[t1] = true;
            flips += 1;
        }
        if flips == 0 {
            break;
        }
    }
    for t in tris.iter_mut() {
        if orient_ccw(points[t[0]], points[t[1]], points[t[2]]) < 0.0 {
            t.swap(1, 2);
        }
    }
}

fn orient_ccw(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

/// Positive when `d` lies inside the circumcircle of the (ccw) triangle.
fn incircle(points: &[Vec2], t: [usize; 3], d: usize) -> f64 {
    let (mut a, mut b, c) = (points[t[0]], points[t[1]], points[t[2]]);
    if orient_ccw(a, b, c) < 0.0 {
        std::mem::swap(&mut a, &mut b);
    }
    let p = points[d];
    let (ax, ay) = (a.x - p.x, a.y - p.y);
    let (bx, by) = (b.x - p.x, b.y - p.y);
    let (cx, cy) = (c.x - p.x, c.y - p.y);
    (ax * ax + ay * ay) * (bx * cy - cx * by) - (bx * bx + by * by) * (ax * cy - cx * ay)
        + (cx * cx + cy * cy) * (ax * by - bx * ay)
}

/// Standard domains used by the examples and tests.
pub mod domains {
    use super::*;

    /// Unit square with the same Dirichlet datum on every side.
    pub fn unit_square_dirichlet(a: f64, b: f64, c: f64) -> Domain {
        let v = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        let bc = BoundaryCondition::dirichlet(a, b, c);
        Domain::with_edge_conditions(v, &[bc; 4]).expect("unit square is valid")
    }

    /// Axis-aligned rectangle with one Dirichlet datum on every side.
    pub fn rectangle(lo: Vec2, hi: Vec2, bc: BoundaryCondition) -> Result<Domain, MeshError> {
        let v = vec![lo, Vec2::new(hi.x, lo.y), hi, Vec2::new(lo.x, hi.y)];
        Domain::with_edge_conditions(v, &[bc; 4])
    }

    /// The trapezoid {0 < x < d, 0 < y < ell − x} loaded by
    /// `w = x/√2` on the bottom, `w = a·ell/√2` on the slanted top, and
    /// tractions `∓1/√2` on the two vertical sides.
    pub fn trapezoid(d: f64, ell: f64, a: f64) -> Result<Domain, MeshError> {
        if !(d > 0.0 && d < ell) {
            return Err(MeshError::DegeneratePolygon("trapezoid needs 0 < d < ell".into()));
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(d, 0.0),
            Vec2::new(d, ell - d),
            Vec2::new(0.0, ell),
        ];
        Domain::with_edge_conditions(
            v,
            &[
                BoundaryCondition::dirichlet(0.0, s, 0.0),
                BoundaryCondition::neumann(s),
                BoundaryCondition::dirichlet(a * ell * s, 0.0, 0.0),
                BoundaryCondition::neumann(-s),
            ],
        )
    }

    /// Circular sector around `apex` approximated by `n_arc` chords, with
    /// the chords carrying `arc_bc(start, end)` and the two radial edges
    /// carrying `radial`.
    pub fn sector(
        apex: Vec2,
        radius: f64,
        theta0: f64,
        theta1: f64,
        n_arc: usize,
        radial: BoundaryCondition,
        arc_bc: impl Fn(Vec2, Vec2) -> BoundaryCondition,
    ) -> Result<Domain, MeshError> {
        if !(theta1 > theta0 && theta1 - theta0 < std::f64::consts::PI) || n_arc == 0 {
            return Err(MeshError::DegeneratePolygon("sector span must lie in (0, π)".into()));
        }
        let mut v = vec![apex];
        for k in 0..=n_arc {
            let th = theta0 + (theta1 - theta0) * k as f64 / n_arc as f64;
            v.push(apex + Vec2::new(th.cos(), th.sin()) * radius);
        }
        let m = v.len();
        let mut bcs = Vec::with_capacity(m);
        bcs.push(radial);
        for k in 1..m - 1 {
            bcs.push(arc_bc(v[k], v[k + 1]));
        }
        bcs.push(radial);
        Domain::with_edge_conditions(v, &bcs)
    }
}

#[cfg(test)]
mod tests {
    use super::domains::*;
    use super::*;

    fn check_invariants(domain: &Domain, mesh: &Mesh) {
        for t in 0..mesh.n_triangles() {
            assert!(mesh.signed_area(t) > 0.0, "triangle {t} not positive");
        }
        let total: f64 = (0..mesh.n_triangles()).map(|t| mesh.signed_area(t)).sum();
        assert!((total - domain.area()).abs() <= 1e-9 * domain.area());
        assert!(mesh.max_edge_length() <= 1.5 * mesh.h, "max edge {}", mesh.max_edge_length() / mesh.h);
        assert!(mesh.min_angle_deg() >= 20.0, "min angle {}", mesh.min_angle_deg());
        // conforming: every edge has one or two triangles, boundary edges lie on ∂Ω
        let nb = mesh.triangle_neighbors();
        let open: usize = nb.iter().flatten().filter(|n| n.is_none()).count();
        assert_eq!(open, mesh.boundary_edges.len());
        for e in &mesh.boundary_edges {
            let s = &domain.segments()[e.segment];
            for &k in &e.nodes {
                assert!(point_segment_distance(mesh.nodes[k], s.start, s.end).0 <= 1e-12);
            }
        }
        for v in domain.vertices() {
            assert!(mesh.nodes.iter().any(|p| p.dist(*v) <= 1e-12));
        }
    }

    #[test]
    fn coarse_unit_square() {
        let d = unit_square_dirichlet(0.0, 0.0, 0.0);
        let m = triangulate(&d, 0.5).unwrap();
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_triangles(), 8);
        check_invariants(&d, &m);
    }

    #[test]
    fn fine_unit_square_lattice_count() {
        let d = unit_square_dirichlet(0.0, 0.0, 0.0);
        let m = triangulate(&d, 1.0 / 64.0).unwrap();
        let target = 65.0 * 65.0;
        assert!((m.n_nodes() as f64 - target).abs() <= 0.05 * target);
        check_invariants(&d, &m);
        // all diagonals of the lattice cells point the same way
        assert!((m.min_angle_deg() - 45.0).abs() < 1e-9);
    }

    #[test]
    fn trapezoid_boundary_nodes_on_boundary() {
        let d = trapezoid(1.0, 2.0, 1.2).unwrap();
        let m = triangulate(&d, 1.0 / 32.0).unwrap();
        check_invariants(&d, &m);
        let mask = m.boundary_node_mask();
        for (k, p) in m.nodes.iter().enumerate() {
            if mask[k] {
                assert!(d.signed_distance(*p).abs() <= 1e-12);
            }
        }
        let mut seen = std::collections::HashSet::new();
        for e in &m.boundary_edges {
            assert!(seen.insert((e.nodes[0].min(e.nodes[1]), e.nodes[0].max(e.nodes[1]))));
        }
    }

    #[test]
    fn sector_and_triangle_quality() {
        let s = sector(
            Vec2::ZERO,
            1.0,
            0.3,
            1.8,
            12,
            BoundaryCondition::neumann(0.0),
            |_, _| BoundaryCondition::dirichlet(0.0, 0.0, 0.0),
        )
        .unwrap();
        for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
            let m = triangulate(&s, h).unwrap();
            check_invariants(&s, &m);
        }
        let tri = Domain::with_edge_conditions(
            vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.3), Vec2::new(0.7, 1.6)],
            &[BoundaryCondition::dirichlet(0.0, 1.0, 0.0); 3],
        )
        .unwrap();
        for h in [0.1, 1.0 / 32.0, 1.0 / 50.0] {
            check_invariants(&tri, &triangulate(&tri, h).unwrap());
        }
    }

    #[test]
    fn random_convex_polygons() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut worst_angle: f64 = 90.0;
        let mut worst_edge: f64 = 0.0;
        for _ in 0..60 {
            let n = rng.gen_range(3..8);
            let mut ang: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            ang.sort_by(f64::total_cmp);
            let v: Vec<Vec2> = ang.iter().map(|a| Vec2::new(a.cos(), 0.6 * a.sin())).collect();
            let Ok(d) = Domain::with_edge_conditions(v, &vec![BoundaryCondition::dirichlet(0.0, 0.0, 0.0); n]) else { continue };
            let h = rng.gen_range(0.02..0.1);
            let Ok(m) = triangulate(&d, h) else { continue };
            let total: f64 = (0..m.n_triangles()).map(|t| m.signed_area(t)).sum();
            assert!((total - d.area()).abs() <= 1e-9 * d.area());
            // skip corner-angle-limited cases
            let min_corner = (0..n).map(|i| {
                let a = d.vertices()[(i + n - 1) % n] - d.vertices()[i];
                let b = d.vertices()[(i + 1) % n] - d.vertices()[i];
                a.cross(b).abs().atan2(a.dot(b)).to_degrees()
            }).fold(180.0, f64::min);
            if min_corner >= 40.0 {
                worst_angle = worst_angle.min(m.min_angle_deg());
            }
            worst_edge = worst_edge.max(m.max_edge_length() / m.h);
        }
        println!("worst angle {worst_angle} worst edge {worst_edge}");
        assert!(worst_edge <= 1.5);
        assert!(worst_angle >= 20.0);
    }

    #[test]
    fn node_count_scales_quadratically() {
        let d = trapezoid(1.0, 2.0, 1.2).unwrap();
        let a = triangulate(&d, 1.0 / 32.0).unwrap().n_nodes() as f64;
        let b = triangulate(&d, 1.0 / 64.0).unwrap().n_nodes() as f64;
        assert!((b / a - 4.0).abs() <= 0.4, "ratio {}", b / a);
    }

    #[test]
    fn deterministic() {
        let d = trapezoid(1.0, 2.0, 1.2).unwrap();
        let a = triangulate(&d, 1.0 / 40.0).unwrap();
        let b = triangulate(&d, 1.0 / 40.0).unwrap();
        assert_eq!(a.to_dump(), b.to_dump());
    }

    #[test]
    fn dump_round_trip() {
        let d = trapezoid(1.0, 2.0, 1.2).unwrap();
        let m = triangulate(&d, 0.125).unwrap();
        let back = Mesh::from_dump(&m.to_dump(), m.h).unwrap();
        assert_eq!(back, m);
        assert!(matches!(Mesh::from_dump("N 0 0\nT 0 1 2\n", 0.1), Err(MeshError::Parse { line: 2, .. })));
        assert!(matches!(Mesh::from_dump("Q 1\n", 0.1), Err(MeshError::Parse { line: 1, .. })));
    }

    #[test]
    fn invalid_domains() {
        let bowtie = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ];
        let bc = [BoundaryCondition::dirichlet(0.0, 0.0, 0.0); 4];
        assert_eq!(Domain::with_edge_conditions(bowtie, &bc), Err(MeshError::NonConvexDomain));
        let concave = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(1.0, 0.5),
            Vec2::new(2.0, 2.0),
            Vec2::new(0.0, 2.0),
        ];
        assert_eq!(
            Domain::with_edge_conditions(concave, &[bc[0]; 5]),
            Err(MeshError::NonConvexDomain)
        );
        let flat = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
        assert!(matches!(
            Domain::with_edge_conditions(flat, &bc[..3]),
            Err(MeshError::DegeneratePolygon(_))
        ));
        let sq = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        assert_eq!(
            Domain::with_edge_conditions(sq.clone(), &[BoundaryCondition::neumann(0.0); 4]),
            Err(MeshError::NoDirichletSegment)
        );
        // a gap in the partition
        let segs = vec![
            BoundarySegment::new(sq[0], Vec2::new(0.5, 0.0), bc[0]),
            BoundarySegment::new(sq[1], sq[2], bc[0]),
            BoundarySegment::new(sq[2], sq[3], bc[0]),
            BoundarySegment::new(sq[3], sq[0], bc[0]),
        ];
        assert!(matches!(Domain::new(sq, segs), Err(MeshError::InvalidSegments(_))));
    }

    #[test]
    fn resolution_errors() {
        let d = unit_square_dirichlet(0.0, 0.0, 0.0);
        assert!(matches!(triangulate(&d, 0.0), Err(MeshError::InvalidResolution(_))));
        assert!(matches!(triangulate(&d, 0.8), Err(MeshError::InvalidResolution(_))));
        let thin = rectangle(Vec2::ZERO, Vec2::new(1.0, 0.2), BoundaryCondition::dirichlet(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(triangulate(&thin, 0.45), Err(MeshError::ResolutionTooCoarse));
    }

    #[test]
    fn split_segments() {
        let sq = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        let dir = BoundaryCondition::dirichlet(0.0, 0.0, 0.0);
        let segs = vec![
            BoundarySegment::new(sq[0], Vec2::new(0.3, 0.0), dir),
            BoundarySegment::new(Vec2::new(0.3, 0.0), sq[1], BoundaryCondition::neumann(0.0)),
            BoundarySegment::new(sq[1], sq[2], dir),
            BoundarySegment::new(sq[2], sq[3], dir),
            BoundarySegment::new(sq[3], sq[0], dir),
        ];
        let d = Domain::new(sq, segs).unwrap();
        let m = triangulate(&d, 0.1).unwrap();
        check_invariants(&d, &m);
        assert!(m.nodes.iter().any(|p| p.dist(Vec2::new(0.3, 0.0)) < 1e-15));
    }

    #[test]
    fn boundary_values() {
        let d = trapezoid(1.0, 2.0, 1.2).unwrap();
        let v = d.boundary_value(Vec2::new(0.5, 0.0)).unwrap().unwrap();
        assert!((v - 0.5 / 2f64.sqrt()).abs() < 1e-15);
        let v = d.boundary_value(Vec2::new(0.5, 1.5)).unwrap().unwrap();
        assert!((v - 1.2 * 2.0 / 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(d.boundary_value(Vec2::new(0.0, 0.7)).unwrap(), None);
        assert!(matches!(d.boundary_value(Vec2::new(0.5, 0.5)), Err(MeshError::PointNotOnBoundary(..))));
        // Dirichlet wins at a Dirichlet/Neumann corner
        let corner = d.boundary_value(Vec2::new(1.0, 0.0)).unwrap().unwrap();
        assert!((corner - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn dirichlet_junction_ties_go_to_lower_id() {
        let sq = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        let bcs: Vec<_> = (0..4).map(|k| BoundaryCondition::dirichlet(k as f64, 0.0, 0.0)).collect();
        let d = Domain::with_edge_conditions(sq, &bcs).unwrap();
        assert_eq!(d.boundary_value(Vec2::new(1.0, 0.0)).unwrap(), Some(0.0));
        assert_eq!(d.boundary_value(Vec2::new(1.0, 1.0)).unwrap(), Some(1.0));
        // slightly inside the second segment's interior
        assert_eq!(d.boundary_value(Vec2::new(1.0, 1e-10)).unwrap(), Some(1.0));
    }
}
