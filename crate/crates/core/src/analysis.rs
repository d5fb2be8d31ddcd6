//! Plastic-zone analysis: thresholding, straight characteristics, fan and
//! constant-zone detection, and the rigidity checks (ordering, entropy
//! defect, Lipschitz bound, displacement constancy) as numeric diagnostics.

use crate::geom::{line_intersection, point_line_distance, point_segment_distance, Vec2};
use crate::mesh::{Domain, Mesh};
use crate::oracles::Oracle;
use crate::solver::{divergence_residual_excluding, flow_rule_balance, SolveResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("plastic zone is empty")]
    EmptyZone,
    #[error("seed ({0}, {1}) is not inside the plastic zone")]
    SeedOutsideZone(f64, f64),
    #[error("stress vanishes at ({0}, {1}); no characteristic direction")]
    DegenerateStress(f64, f64),
    #[error("bump support is not contained in the plastic zone")]
    BumpNotInsideZone,
    #[error("no zone point is farther than the margin from the zone outline")]
    EmptyInterior,
    #[error("no fan line reaches a Dirichlet part of the boundary")]
    NoDirichletIntersection,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{what} has {got} entries, expected {expected}")]
    FieldSizeMismatch { what: &'static str, expected: usize, got: usize },
}

/// Tolerances of the analysis pipeline. `step` and `cluster_radius`
/// default to `h/2` and `2h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub delta: f64,
    pub spacing: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    pub n_pairs: usize,
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_radius: Option<f64>,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { delta: 0.02, spacing: 0.025, step: None, n_pairs: 10_000, margin: 0.15, cluster_radius: None, seed: 0 }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::InvalidParameter(m.into()));
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return bad("delta must lie in (0, 0.5)");
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad("spacing must be positive");
        }
        if self.step.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return bad("step must be positive");
        }
        if self.cluster_radius.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return bad("cluster_radius must be positive");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if self.n_pairs == 0 {
            return bad("n_pairs must be positive");
        }
        Ok(())
    }

    pub fn step_for(&self, h: f64) -> f64 {
        self.step.unwrap_or(0.5 * h)
    }

    pub fn cluster_radius_for(&self, h: f64) -> f64 {
        self.cluster_radius.unwrap_or(2.0 * h)
    }
}

/// Uniform bucket grid for point location.
#[derive(Clone, Debug)]
struct Locator {
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl Locator {
    fn new(mesh: &Mesh) -> Locator {
        let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in &mesh.nodes {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let extent = (hi - lo).x.max((hi - lo).y).max(f64::MIN_POSITIVE);
        let target = ((mesh.n_triangles() as f64).sqrt()).clamp(1.0, 2048.0);
        let cell = extent / target;
        let nx = (((hi.x - lo.x) / cell).floor() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / cell).floor() as usize + 1).max(1);
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
        for t in 0..mesh.n_triangles() {
            let c = mesh.corners(t);
            let (mut a, mut b) = (c[0], c[0]);
            for p in &c[1..] {
                a = Vec2::new(a.x.min(p.x), a.y.min(p.y));
                b = Vec2::new(b.x.max(p.x), b.y.max(p.y));
            }
            let (i0, j0) = cell_index(lo, cell, nx, ny, a);
            let (i1, j1) = cell_index(lo, cell, nx, ny, b);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        let mut starts = Vec::with_capacity(nx * ny + 1);
        let mut items = Vec::new();
        for b in buckets {
            starts.push(items.len());
            items.extend(b);
        }
        starts.push(items.len());
        Locator { origin: lo, cell, nx, ny, starts, items }
    }

    fn locate(&self, mesh: &Mesh, p: Vec2) -> Option<usize> {
        if !p.is_finite() {
            return None;
        }
        let fx = (p.x - self.origin.x) / self.cell;
        let fy = (p.y - self.origin.y) / self.cell;
        let slack = 1e-9;
        if fx < -slack || fy < -slack || fx > self.nx as f64 + slack || fy > self.ny as f64 + slack {
            return None;
        }
        let (i, j) = cell_index(self.origin, self.cell, self.nx, self.ny, p);
        let k = j * self.nx + i;
        let mut best: Option<(f64, usize)> = None;
        for &t in &self.items[self.starts[k]..self.starts[k + 1]] {
            let b = barycentric(mesh, t, p);
            let m = b[0].min(b[1]).min(b[2]);
            if m >= -1e-10 && best.is_none_or(|(bm, _)| m > bm) {
                best = Some((m, t));
            }
        }
        best.map(|(_, t)| t)
    }
}

fn cell_index(origin: Vec2, cell: f64, nx: usize, ny: usize, p: Vec2) -> (usize, usize) {
    let i = ((p.x - origin.x) / cell).floor().clamp(0.0, (nx - 1) as f64) as usize;
    let j = ((p.y - origin.y) / cell).floor().clamp(0.0, (ny - 1) as f64) as usize;
    (i, j)
}

fn barycentric(mesh: &Mesh, t: usize, p: Vec2) -> [f64; 3] {
    let [a, b, c] = mesh.corners(t);
    let det = (b - a).cross(c - a);
    let l1 = (p - a).cross(c - a) / det;
    let l2 = (b - a).cross(p - a) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// A stress/displacement pair on a mesh, with point location. When an
/// exact oracle is attached, point queries evaluate it in closed form and
/// fall back to the sampled fields only where it is undefined.
pub struct FieldView<'a> {
    pub mesh: &'a Mesh,
    pub sigma: &'a [Vec2],
    pub u: &'a [f64],
    locator: Locator,
    exact: Option<&'a Oracle>,
}

impl<'a> FieldView<'a> {
    pub fn new(mesh: &'a Mesh, sigma: &'a [Vec2], u: &'a [f64]) -> Result<Self, AnalysisError> {
        if sigma.len() != mesh.n_triangles() {
            return Err(AnalysisError::FieldSizeMismatch { what: "sigma", expected: mesh.n_triangles(), got: sigma.len() });
        }
        if u.len() != mesh.n_nodes() {
            return Err(AnalysisError::FieldSizeMismatch { what: "u", expected: mesh.n_nodes(), got: u.len() });
        }
        Ok(FieldView { mesh, sigma, u, locator: Locator::new(mesh), exact: None })
    }

    pub fn from_result(mesh: &'a Mesh, result: &'a SolveResult) -> Result<Self, AnalysisError> {
        FieldView::new(mesh, &result.sigma, &result.u)
    }

    pub fn with_exact(mut self, oracle: &'a Oracle) -> Self {
        self.exact = Some(oracle);
        self
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn locate(&self, p: Vec2) -> Option<usize> {
        self.locator.locate(self.mesh, p)
    }

    pub fn sigma_at(&self, p: Vec2) -> Option<Vec2> {
        if let Some(Ok(pt)) = self.exact.map(|o| o.eval(p)) {
            return Some(pt.sigma);
        }
        self.locate(p).map(|t| self.sigma[t])
    }

    pub fn u_at(&self, p: Vec2) -> Option<f64> {
        if let Some(Ok(pt)) = self.exact.map(|o| o.eval(p)) {
            return Some(pt.u);
        }
        let t = self.locate(p)?;
        let b = barycentric(self.mesh, t, p);
        let tri = self.mesh.triangles[t];
        Some(b[0] * self.u[tri[0]] + b[1] * self.u[tri[1]] + b[2] * self.u[tri[2]])
    }

    /// Exact stress at `p`, when an oracle is attached and defined there.
    pub fn exact_sigma(&self, p: Vec2) -> Option<Vec2> {
        self.exact.and_then(|o| o.eval(p).ok()).map(|pt| pt.sigma)
    }

    pub fn u_range(&self) -> f64 {
        let (lo, hi) = self.u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    }
}

/// Triangles with `|σ| ≥ 1 − δ`.
#[derive(Clone, Debug)]
pub struct PlasticZone {
    pub triangle_mask: Vec<bool>,
    pub delta: f64,
    pub area: f64,
    /// Closed polylines (first point repeated at the end) along the mask boundary.
    pub outline: Vec<Vec<Vec2>>,
    segments: Vec<(Vec2, Vec2)>,
}

impl PlasticZone {
    pub fn masked(&self) -> impl Iterator<Item = usize> + '_ {
        self.triangle_mask.iter().enumerate().filter(|(_, m)| **m).map(|(t, _)| t)
    }

    pub fn n_masked(&self) -> usize {
        self.triangle_mask.iter().filter(|m| **m).count()
    }

    pub fn contains(&self, view: &FieldView<'_>, p: Vec2) -> bool {
        view.locate(p).is_some_and(|t| self.triangle_mask[t])
    }

    pub fn distance_to_outline(&self, p: Vec2) -> f64 {
        self.segments.iter().map(|&(a, b)| point_segment_distance(p, a, b).0).fold(f64::INFINITY, f64::min)
    }

    pub fn outline_length(&self) -> f64 {
        self.segments.iter().map(|(a, b)| a.dist(*b)).sum()
    }
}

/// Oriented boundary edges of a triangle set (CCW around the set), each
/// tagged with the triangle it belongs to and whether the far side is
/// outside `outer` (the zone) rather than just outside the set.
fn set_boundary_edges(mesh: &Mesh, neighbors: &[[Option<usize>; 3]], set: &[bool], outer: &[bool]) -> Vec<(usize, usize, bool)> {
    let mut out = Vec::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if !set[t] {
            continue;
        }
        for k in 0..3 {
            let nb = neighbors[t][k];
            if nb.is_some_and(|s| set[s]) {
                continue;
            }
            let on_outer = nb.is_none_or(|s| !outer[s]);
            out.push((tri[(k + 1) % 3], tri[(k + 2) % 3], on_outer));
        }
    }
    out
}

/// Chains oriented edges into closed loops of edge indices.
fn chain_loops(edges: &[(usize, usize, bool)]) -> Vec<Vec<usize>> {
    let mut by_start: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in edges.iter().enumerate() {
        by_start.entry(e.0).or_default().push(i);
    }
    let mut used = vec![false; edges.len()];
    let mut loops = Vec::new();
    for first in 0..edges.len() {
        if used[first] {
            continue;
        }
        let mut lp = vec![first];
        used[first] = true;
        let mut cur = first;
        loop {
            let next = by_start.get(&edges[cur].1).and_then(|c| c.iter().copied().find(|&i| !used[i]));
            match next {
                Some(n) => {
                    used[n] = true;
                    lp.push(n);
                    cur = n;
                }
                None => break,
            }
        }
        loops.push(lp);
    }
    loops
}

pub fn extract_plastic_zone(mesh: &Mesh, result: &SolveResult, delta: f64) -> Result<PlasticZone, AnalysisError> {
    zone_from_sigma(mesh, &result.sigma, delta)
}

pub fn zone_from_sigma(mesh: &Mesh, sigma: &[Vec2], delta: f64) -> Result<PlasticZone, AnalysisError> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(AnalysisError::InvalidParameter("delta must lie in (0, 0.5)".into()));
    }
    if sigma.len() != mesh.n_triangles() {
        return Err(AnalysisError::FieldSizeMismatch { what: "sigma", expected: mesh.n_triangles(), got: sigma.len() });
    }
    let mask: Vec<bool> = sigma.iter().map(|s| s.norm() >= 1.0 - delta).collect();
    let area: f64 = (0..mesh.n_triangles()).filter(|&t| mask[t]).map(|t| mesh.signed_area(t)).sum();
    if area <= 0.0 {
        return Err(AnalysisError::EmptyZone);
    }
    let neighbors = mesh.triangle_neighbors();
    let edges = set_boundary_edges(mesh, &neighbors, &mask, &mask);
    let segments: Vec<(Vec2, Vec2)> = edges.iter().map(|e| (mesh.nodes[e.0], mesh.nodes[e.1])).collect();
    let outline = chain_loops(&edges)
        .into_iter()
        .map(|lp| {
            let mut pts: Vec<Vec2> = lp.iter().map(|&i| mesh.nodes[edges[i].0]).collect();
            pts.push(mesh.nodes[edges[*lp.last().expect("non-empty loop")].1]);
            pts
        })
        .collect();
    Ok(PlasticZone { triangle_mask: mask, delta, area, outline, segments })
}

/// A traced straight characteristic `seed + ℝ·σ(seed)⊥` clipped to the zone.
#[derive(Clone, Debug, PartialEq)]
pub struct Characteristic {
    pub id: usize,
    pub seed: Vec2,
    pub direction: Vec2,
    /// Exit points in the `−direction` and `+direction` senses.
    pub endpoints: [Vec2; 2],
    /// Signed arclength of each sample from the seed, increasing.
    pub sample_params: Vec<f64>,
    pub sigma_samples: Vec<Vec2>,
    pub u_samples: Vec<f64>,
    pub sigma_deviation: f64,
    pub u_deviation: f64,
}

impl Characteristic {
    pub fn sample_point(&self, k: usize) -> Vec2 {
        self.seed + self.direction * self.sample_params[k]
    }

    pub fn length(&self) -> f64 {
        self.endpoints[0].dist(self.endpoints[1])
    }

    pub fn sigma_seed(&self) -> Vec2 {
        let k = self.sample_params.iter().position(|&s| s == 0.0).unwrap_or(0);
        self.sigma_samples[k]
    }

    pub fn u_mean(&self) -> f64 {
        self.u_samples.iter().sum::<f64>() / self.u_samples.len().max(1) as f64
    }

    pub fn distance_to(&self, p: Vec2) -> f64 {
        point_segment_distance(p, self.endpoints[0], self.endpoints[1]).0
    }
}

pub fn trace(view: &FieldView<'_>, zone: &PlasticZone, seed: Vec2, step: f64) -> Result<Characteristic, AnalysisError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(AnalysisError::InvalidParameter("step must be positive".into()));
    }
    if !zone.contains(view, seed) {
        return Err(AnalysisError::SeedOutsideZone(seed.x, seed.y));
    }
    let s0 = view.sigma_at(seed).ok_or(AnalysisError::SeedOutsideZone(seed.x, seed.y))?;
    if s0.norm() == 0.0 {
        return Err(AnalysisError::DegenerateStress(seed.x, seed.y));
    }
    let direction = s0.perp() / s0.norm();
    let inside = |s: f64| zone.contains(view, seed + direction * s);
    let (lo, hi) = mesh_extent(view.mesh);
    let max_steps = ((hi - lo).norm() / step).ceil() as usize + 2;

    let mut params = vec![0.0];
    let mut exits = [0.0; 2];
    for (side, sign) in [(0usize, -1.0f64), (1, 1.0)] {
        let mut last_in = 0.0;
        let mut k = 1;
        loop {
            let s = sign * step * k as f64;
            if k > max_steps || !inside(s) {
                // bisect the exit between the last inside sample and s
                let (mut a, mut b) = (last_in, s);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if inside(m) {
                        a = m;
                    } else {
                        b = m;
                    }
                    if (b - a).abs() <= 1e-13 * (1.0 + b.abs()) {
                        break;
                    }
                }
                exits[side] = 0.5 * (a + b);
                break;
            }
            params.push(s);
            last_in = s;
            k += 1;
        }
    }
    params.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut sigma_samples = Vec::with_capacity(params.len());
    let mut u_samples = Vec::with_capacity(params.len());
    for &s in &params {
        let p = seed + direction * s;
        sigma_samples.push(view.sigma_at(p).unwrap_or(s0));
        u_samples.push(view.u_at(p).unwrap_or(0.0));
    }
    let sigma_deviation = sigma_samples.iter().map(|s| (*s - s0).norm()).fold(0.0, f64::max);
    let (umin, umax) = u_samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(Characteristic {
        id: 0,
        seed,
        direction,
        endpoints: [seed + direction * exits[0], seed + direction * exits[1]],
        sample_params: params,
        sigma_samples,
        u_samples,
        sigma_deviation,
        u_deviation: umax - umin,
    })
}

fn mesh_extent(mesh: &Mesh) -> (Vec2, Vec2) {
    mesh.nodes.iter().fold(
        (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), p| (Vec2::new(lo.x.min(p.x), lo.y.min(p.y)), Vec2::new(hi.x.max(p.x), hi.y.max(p.y))),
    )
}

/// Traces from a lattice of seeds (anchored half a spacing inside the mesh
/// bounding box, row by row), skipping seeds within `step` of a line
/// already traced.
pub fn seed_and_trace(view: &FieldView<'_>, zone: &PlasticZone, spacing: f64, step: f64) -> Vec<Characteristic> {
    let (lo, hi) = mesh_extent(view.mesh);
    let mut lines: Vec<Characteristic> = Vec::new();
    if !(spacing > 0.0) {
        return lines;
    }
    let nx = ((hi.x - lo.x) / spacing).floor() as usize + 1;
    let ny = ((hi.y - lo.y) / spacing).floor() as usize + 1;
    for j in 0..ny {
        for i in 0..nx {
            let seed = lo + Vec2::new((i as f64 + 0.5) * spacing, (j as f64 + 0.5) * spacing);
            if seed.x > hi.x || seed.y > hi.y || !zone.contains(view, seed) {
                continue;
            }
            if lines.iter().any(|l| l.distance_to(seed) <= step) {
                continue;
            }
            if let Ok(mut c) = trace(view, zone, seed, step) {
                c.id = lines.len();
                lines.push(c);
            }
        }
    }
    lines
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FanKind {
    Boundary,
    Exterior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fan {
    pub apex: Vec2,
    pub alpha: f64,
    /// Polar angles (about the apex) spanned by the member lines, `θ₀ < θ₁`.
    pub angular_span: [f64; 2],
    pub kind: FanKind,
    pub member_lines: Vec<usize>,
    /// Sup over member samples of `|σ − α (x − z̄)⊥/|x − z̄||`.
    pub vortex_deviation: f64,
}

/// Sine below which two lines count as parallel for intersection purposes.
const PARALLEL_SIN: f64 = 1e-3;
/// Vortex-formula agreement required of fan members.
/// Apex errors of half the cluster radius per line must keep the fitted
/// apex within the cluster radius.
const MIN_PENCIL_CONDITIONING: f64 = 0.25;
const VORTEX_TOL: f64 = 0.1;
/// Share of a cluster's lines that must pass within the cluster radius of its apex.
const CONCURRENT_FRACTION: f64 = 0.9;
/// Radius, in cluster radii, around an apex excluded from the vortex test.
const APEX_CORE: f64 = 4.0;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

/// Point minimizing the summed squared distance to the given lines.
fn least_squares_apex(lines: &[&Characteristic]) -> Option<Vec2> {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    let mut rhs = Vec2::ZERO;
    for l in lines {
        let n = l.direction.perp();
        a += n.x * n.x;
        b += n.x * n.y;
        c += n.y * n.y;
        rhs += n * n.dot(l.seed);
    }
    let det = a * c - b * b;
    if det.abs() < 1e-12 * (a + c).powi(2) {
        return None;
    }
    Some(Vec2::new((c * rhs.x - b * rhs.y) / det, (a * rhs.y - b * rhs.x) / det))
}

/// Sign `α` and sup deviation of the member samples from the vortex about
/// `apex`, ignoring samples closer than `core` to the apex where the
/// sampled field cannot resolve the singularity.
fn vortex_fit(lines: &[&Characteristic], apex: Vec2, core: f64) -> (f64, f64) {
    let mut acc = 0.0;
    for l in lines {
        for k in 0..l.sample_params.len() {
            let x = l.sample_point(k);
            let r = x - apex;
            if r.norm() > 0.0 {
                acc += l.sigma_samples[k].dot(r.perp()) / r.norm();
            }
        }
    }
    let alpha = if acc >= 0.0 { 1.0 } else { -1.0 };
    let mut dev: f64 = 0.0;
    for l in lines {
        for k in 0..l.sample_params.len() {
            let r = l.sample_point(k) - apex;
            if r.norm() > core {
                dev = dev.max((l.sigma_samples[k] - r.perp() * (alpha / r.norm())).norm());
            }
        }
    }
    (alpha, dev)
}

pub fn detect_fans(view: &FieldView<'_>, lines: &[Characteristic], zone: &PlasticZone, cluster_radius: f64) -> Vec<Fan> {
    if lines.len() < 2 || !(cluster_radius > 0.0) {
        return Vec::new();
    }
    let (lo, hi) = mesh_extent(view.mesh);
    let center = (lo + hi) * 0.5;
    let reach = 10.0 * (hi - lo).norm();
    let mut points: Vec<(Vec2, usize, usize)> = Vec::new();
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let (a, b) = (&lines[i], &lines[j]);
            if let Some(p) = line_intersection(a.seed, a.direction, b.seed, b.direction, PARALLEL_SIN) {
                if p.dist(center) <= reach {
                    points.push((p, i, j));
                }
            }
        }
    }
    if points.is_empty() {
        return Vec::new();
    }
    // single-linkage clustering on a hash grid of cell size cluster_radius
    let key = |p: Vec2| ((p.x / cluster_radius).floor() as i64, (p.y / cluster_radius).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, (p, _, _)) in points.iter().enumerate() {
        grid.entry(key(*p)).or_default().push(k);
    }
    let mut parent: Vec<usize> = (0..points.len()).collect();
    for (k, (p, _, _)) in points.iter().enumerate() {
        let (ci, cj) = key(*p);
        for di in -1..=1 {
            for dj in -1..=1 {
                if let Some(bucket) = grid.get(&(ci + di, cj + dj)) {
                    for &m in bucket {
                        if m > k && points[m].0.dist(*p) <= cluster_radius {
                            union(&mut parent, k, m);
                        }
                    }
                }
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for k in 0..points.len() {
        let r = find(&mut parent, k);
        clusters.entry(r).or_default().push(k);
    }
    let mut ordered: Vec<&Vec<usize>> = clusters.values().collect();
    ordered.sort_by_key(|m| std::cmp::Reverse(m.len()));
    let mut used = vec![false; lines.len()];
    let mut fans: Vec<Fan> = Vec::new();
    for members in ordered {
        let mut ids: Vec<usize> = members.iter().flat_map(|&k| [points[k].1, points[k].2]).filter(|&i| !used[i]).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 3 {
            continue;
        }
        // the lines must genuinely pass through one point; single linkage
        // alone chains along envelopes of near-tangent line families
        let mut keep = ids.clone();
        let refs_of = |k: &[usize]| k.iter().map(|&i| &lines[i]).collect::<Vec<_>>();
        let Some(mut apex) = least_squares_apex(&refs_of(&keep)) else { continue };
        for _ in 0..2 {
            keep.retain(|&i| point_line_distance(apex, lines[i].seed, lines[i].direction) <= cluster_radius);
            if keep.len() < 3 || (keep.len() as f64) < CONCURRENT_FRACTION * ids.len() as f64 {
                keep.clear();
                break;
            }
            match least_squares_apex(&refs_of(&keep)) {
                Some(a) => apex = a,
                None => keep.clear(),
            }
            if keep.is_empty() {
                break;
            }
        }
        if keep.is_empty() {
            continue;
        }
        let ids = keep;
        let refs = refs_of(&ids);
        let (alpha, dev) = vortex_fit(&refs, apex, APEX_CORE * cluster_radius);
        if dev > VORTEX_TOL {
            continue;
        }
        let near_outline = zone.distance_to_outline(apex) <= cluster_radius;
        let kind = if near_outline {
            FanKind::Boundary
        } else if !zone.contains(view, apex) {
            FanKind::Exterior
        } else {
            // an apex strictly inside the zone contradicts non-intersection
            continue;
        };
        ids.iter().for_each(|&i| used[i] = true);
        // scattered near-parallel intersections may split one pencil into
        // several clusters; fold those back into the fan they belong to
        if let Some(f) = fans.iter_mut().find(|f| f.apex.dist(apex) <= 2.0 * cluster_radius && f.alpha == alpha) {
            f.member_lines.extend(ids);
            f.member_lines.sort_unstable();
            let refs = refs_of(&f.member_lines);
            if let Some(a) = least_squares_apex(&refs) {
                f.apex = a;
            }
            f.vortex_deviation = vortex_fit(&refs, f.apex, APEX_CORE * cluster_radius).1;
            f.angular_span = angular_span(&refs, f.apex);
            continue;
        }
        fans.push(Fan { apex, alpha, angular_span: angular_span(&refs, apex), kind, member_lines: ids, vortex_deviation: dev });
    }
    // a narrow pencil does not pin its apex: neighbouring lines of any
    // smooth family meet near their envelope and pass every test above
    fans.retain(|f| pencil_conditioning(&f.member_lines.iter().map(|&i| &lines[i]).collect::<Vec<_>>()) >= MIN_PENCIL_CONDITIONING);
    fans
}

/// Smallest eigenvalue of `Σ n nᵀ` over the unit line normals. A lateral
/// error `s` in every line moves the least-squares apex by about
/// `s/√λ_min`.
fn pencil_conditioning(lines: &[&Characteristic]) -> f64 {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for l in lines {
        let n = l.direction.perp();
        a += n.x * n.x;
        b += n.x * n.y;
        c += n.y * n.y;
    }
    let mean = 0.5 * (a + c);
    mean - (0.25 * (a - c).powi(2) + b * b).sqrt()
}

fn angular_span(lines: &[&Characteristic], apex: Vec2) -> [f64; 2] {
    let mid = |l: &Characteristic| (l.endpoints[0] + l.endpoints[1]) * 0.5;
    let mean = lines.iter().fold(Vec2::ZERO, |acc, l| acc + (mid(l) - apex).normalized());
    let base = mean.angle();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for l in lines {
        let mut d = (mid(l) - apex).angle() - base;
        while d > PI {
            d -= 2.0 * PI;
        }
        while d < -PI {
            d += 2.0 * PI;
        }
        lo = lo.min(base + d);
        hi = hi.max(base + d);
    }
    [lo, hi]
}

fn in_span(angle: f64, span: [f64; 2], pad: f64) -> bool {
    [angle, angle + 2.0 * PI, angle - 2.0 * PI].iter().any(|a| *a >= span[0] - pad && *a <= span[1] + pad)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantZone {
    pub sigma_bar: Vec2,
    pub triangles: Vec<usize>,
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Component {
    pub triangles: Vec<usize>,
    pub area: f64,
}

#[derive(Clone, Debug)]
pub struct ZoneDecomposition {
    pub fans: Vec<Fan>,
    /// Triangles assigned to each fan, parallel to `fans`.
    pub fan_triangles: Vec<Vec<usize>>,
    pub constant_zones: Vec<ConstantZone>,
    pub lines: Vec<Characteristic>,
    pub other_components: Vec<Component>,
    pub unclassified: Vec<usize>,
    pub unclassified_area_fraction: f64,
}

/// Agreement of σ with a common value required inside a constant zone.
const CONSTANT_TOL: f64 = 0.05;
/// Parallelism of constant-zone characteristics.
const PARALLEL_DEG: f64 = 2.0;
/// Components smaller than this fraction of the zone stay unclassified.
const MIN_COMPONENT_FRACTION: f64 = 0.01;

fn components(mesh: &Mesh, neighbors: &[[Option<usize>; 3]], set: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mesh.n_triangles()];
    let mut out = Vec::new();
    for start in 0..mesh.n_triangles() {
        if !set[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(t) = stack.pop() {
            comp.push(t);
            for s in neighbors[t].iter().flatten() {
                if set[*s] && !seen[*s] {
                    seen[*s] = true;
                    stack.push(*s);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

pub fn classify(
    view: &FieldView<'_>,
    zone: &PlasticZone,
    lines: Vec<Characteristic>,
    cluster_radius: f64,
) -> Result<ZoneDecomposition, AnalysisError> {
    if zone.n_masked() == 0 {
        return Err(AnalysisError::EmptyZone);
    }
    let mesh = view.mesh;
    let area = |ts: &[usize]| ts.iter().map(|&t| mesh.signed_area(t)).sum::<f64>();
    let fans = detect_fans(view, &lines, zone, cluster_radius);
    let mut free = zone.triangle_mask.clone();
    let mut fan_triangles = Vec::with_capacity(fans.len());
    for fan in &fans {
        let mut ts = Vec::new();
        for t in zone.masked() {
            if !free[t] {
                continue;
            }
            let r = mesh.centroid(t) - fan.apex;
            if r.norm() == 0.0 || !in_span(r.angle(), fan.angular_span, 0.1) {
                continue;
            }
            if (view.sigma[t] - r.perp() * (fan.alpha / r.norm())).norm() <= VORTEX_TOL {
                ts.push(t);
                free[t] = false;
            }
        }
        fan_triangles.push(ts);
    }

    let neighbors = mesh.triangle_neighbors();
    let mut constant_zones = Vec::new();
    for comp in components(mesh, &neighbors, &free) {
        let comp_area = area(&comp);
        let mut bar = comp.iter().fold(Vec2::ZERO, |acc, &t| acc + view.sigma[t] * mesh.signed_area(t)) / comp_area;
        let mut inliers: Vec<usize> = Vec::new();
        for _ in 0..3 {
            inliers = comp.iter().copied().filter(|&t| (view.sigma[t] - bar).norm() <= CONSTANT_TOL).collect();
            if inliers.is_empty() {
                break;
            }
            bar = inliers.iter().fold(Vec2::ZERO, |acc, &t| acc + view.sigma[t] * mesh.signed_area(t)) / area(&inliers);
        }
        let in_area = area(&inliers);
        if inliers.is_empty() || in_area < 0.5 * comp_area {
            continue;
        }
        let mut member = vec![false; mesh.n_triangles()];
        inliers.iter().for_each(|&t| member[t] = true);
        let axis = bar.perp().normalized();
        let sin_tol = PARALLEL_DEG.to_radians().sin();
        let parallel = lines
            .iter()
            .filter(|l| view.locate(l.seed).is_some_and(|t| member[t]))
            .all(|l| l.direction.cross(axis).abs() <= sin_tol);
        if !parallel {
            continue;
        }
        inliers.iter().for_each(|&t| free[t] = false);
        constant_zones.push(ConstantZone { sigma_bar: bar, triangles: inliers, area: in_area });
    }

    let mut other_components = Vec::new();
    let mut unclassified = Vec::new();
    for comp in components(mesh, &neighbors, &free) {
        let a = area(&comp);
        if a >= MIN_COMPONENT_FRACTION * zone.area {
            other_components.push(Component { triangles: comp, area: a });
        } else {
            unclassified.extend(comp);
        }
    }
    unclassified.sort_unstable();
    let unclassified_area_fraction = area(&unclassified) / zone.area;
    Ok(ZoneDecomposition { fans, fan_triangles, constant_zones, lines, other_components, unclassified, unclassified_area_fraction })
}

/// Number of connected arcs in which a triangle set's outline meets the zone outline.
pub fn outline_contact_arcs(mesh: &Mesh, zone: &PlasticZone, triangles: &[usize]) -> usize {
    let neighbors = mesh.triangle_neighbors();
    let mut set = vec![false; mesh.n_triangles()];
    triangles.iter().for_each(|&t| set[t] = true);
    let edges = set_boundary_edges(mesh, &neighbors, &set, &zone.triangle_mask);
    let mut arcs = 0;
    for lp in chain_loops(&edges) {
        let flags: Vec<bool> = lp.iter().map(|&i| edges[i].2).collect();
        if flags.iter().all(|f| *f) {
            arcs += 1;
            continue;
        }
        // count rising edges around the cyclic loop
        arcs += (0..flags.len()).filter(|&k| flags[k] && !flags[(k + flags.len() - 1) % flags.len()]).count();
    }
    arcs
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderingReport {
    pub n_pairs: usize,
    pub violations: usize,
    /// Largest `min(σ(x₀)·d̂, −σ(y₀)·d̂)` over pairs; violations exceed `tol`.
    pub worst_margin: f64,
    pub tol: f64,
    pub seed: u64,
}

fn sample_pairs(pool: &[usize], n_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_pairs).map(|_| (pool[rng.gen_range(0..pool.len())], pool[rng.gen_range(0..pool.len())])).collect()
}

pub fn check_ordering(view: &FieldView<'_>, zone: &PlasticZone, n_pairs: usize, tol: f64, seed: u64) -> Result<OrderingReport, AnalysisError> {
    let pool: Vec<usize> = zone.masked().collect();
    if pool.is_empty() {
        return Err(AnalysisError::EmptyZone);
    }
    let margins: Vec<Option<f64>> = sample_pairs(&pool, n_pairs, seed)
        .par_iter()
        .map(|&(a, b)| {
            let d = view.mesh.centroid(b) - view.mesh.centroid(a);
            let n = d.norm();
            if n == 0.0 {
                return None;
            }
            let d = d / n;
            // σ(x₀)·d > tol and σ(y₀)·d < −tol; the mirrored implication is the same pair reversed
            let forward = view.sigma[a].dot(d).min(-view.sigma[b].dot(d));
            let backward = (-view.sigma[b].dot(d)).min(view.sigma[a].dot(d));
            Some(forward.max(backward))
        })
        .collect();
    let worst_margin = margins.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let violations = margins.iter().flatten().filter(|&&m| m > tol).count();
    Ok(OrderingReport { n_pairs, violations, worst_margin: if worst_margin.is_finite() { worst_margin } else { 0.0 }, tol, seed })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UConstancyReport {
    pub n_lines: usize,
    pub p90: f64,
    pub max: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Nearest-rank percentile of a non-empty sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// `0.05·(max u − min u)`.
pub fn default_u_tolerance(view: &FieldView<'_>) -> f64 {
    0.05 * view.u_range()
}

pub fn check_u_constancy(lines: &[Characteristic], tolerance: f64) -> Result<UConstancyReport, AnalysisError> {
    if lines.is_empty() {
        return Err(AnalysisError::EmptyZone);
    }
    let devs: Vec<f64> = lines.iter().map(|l| l.u_deviation).collect();
    let p90 = percentile(&devs, 0.9);
    let max = devs.iter().copied().fold(0.0, f64::max);
    Ok(UConstancyReport { n_lines: lines.len(), p90, max, tolerance, pass: p90 <= tolerance })
}

/// `Φ^(ξ)(z) = |z|² ξ` if `z·ξ > 0`, else 0.
pub fn entropy_flux(z: Vec2, xi: Vec2) -> Vec2 {
    if z.dot(xi) > 0.0 {
        xi * z.norm_sq()
    } else {
        Vec2::ZERO
    }
}

/// Gradient of the mollifier `exp(1 − 1/(1 − (r/R)²))` on the ball `B(center, R)`.
pub fn bump_gradient(x: Vec2, center: Vec2, radius: f64) -> Vec2 {
    let d = x - center;
    let rho2 = d.norm_sq() / (radius * radius);
    if rho2 >= 1.0 {
        return Vec2::ZERO;
    }
    let q = 1.0 - rho2;
    let phi = (1.0 - 1.0 / q).exp();
    d * (-2.0 * phi / (radius * radius * q * q))
}

pub fn entropy_defect(view: &FieldView<'_>, zone: &PlasticZone, xi: Vec2, center: Vec2, radius: f64) -> Result<f64, AnalysisError> {
    if !(radius > 0.0) || (xi.norm() - 1.0).abs() > 1e-9 {
        return Err(AnalysisError::InvalidParameter("need radius > 0 and a unit direction".into()));
    }
    if !zone.contains(view, center) || zone.distance_to_outline(center) < radius {
        return Err(AnalysisError::BumpNotInsideZone);
    }
    let mesh = view.mesh;
    Ok((0..mesh.n_triangles())
        .map(|t| {
            let c = mesh.centroid(t);
            if c.dist(center) >= radius {
                return 0.0;
            }
            mesh.signed_area(t) * entropy_flux(view.sigma[t], xi).dot(bump_gradient(c, center, radius))
        })
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub n_pairs: usize,
    pub n_candidates: usize,
    /// Largest `|σ(x) − σ(y)|·margin/|x − y|`.
    pub worst_ratio: f64,
    /// Largest `|σ(x) − σ(y)| − |x − y|/margin`; the bound holds when ≤ slack.
    pub worst_excess: f64,
    pub violations: usize,
    pub slack: f64,
    pub seed: u64,
}

pub const LIPSCHITZ_SLACK: f64 = 0.05;

/// Centroid distance to the zone outline for each masked triangle.
fn outline_distances(view: &FieldView<'_>, zone: &PlasticZone) -> Vec<(usize, f64)> {
    let masked: Vec<usize> = zone.masked().collect();
    masked.par_iter().map(|&t| (t, zone.distance_to_outline(view.mesh.centroid(t)))).collect()
}

pub fn check_lipschitz(view: &FieldView<'_>, zone: &PlasticZone, margin: f64, n_pairs: usize, seed: u64) -> Result<LipschitzReport, AnalysisError> {
    if !(margin > 0.0) {
        return Err(AnalysisError::InvalidParameter("margin must be positive".into()));
    }
    let pool: Vec<usize> = outline_distances(view, zone).into_iter().filter(|(_, d)| *d > margin).map(|(t, _)| t).collect();
    if pool.is_empty() {
        return Err(AnalysisError::EmptyInterior);
    }
    let mut worst_ratio: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut violations = 0;
    for (a, b) in sample_pairs(&pool, n_pairs, seed) {
        let (x, y) = (view.mesh.centroid(a), view.mesh.centroid(b));
        let dx = x.dist(y);
        let ds = (view.sigma[a] - view.sigma[b]).norm();
        if dx > 0.0 {
            worst_ratio = worst_ratio.max(ds * margin / dx);
        }
        let excess = ds - dx / margin;
        worst_excess = worst_excess.max(excess);
        if excess > LIPSCHITZ_SLACK {
            violations += 1;
        }
    }
    Ok(LipschitzReport { n_pairs, n_candidates: pool.len(), worst_ratio, worst_excess, violations, slack: LIPSCHITZ_SLACK, seed })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FanTraceReport {
    pub hits: usize,
    pub max_discrepancy: f64,
}

/// Compares `u` on fan lines with the Dirichlet datum where the lines exit
/// through a Dirichlet part of `∂Ω`.
pub fn check_fan_trace_agreement(
    view: &FieldView<'_>,
    domain: &Domain,
    fan: &Fan,
    lines: &[Characteristic],
) -> Result<FanTraceReport, AnalysisError> {
    let tol = 2.0 * view.mesh.h;
    let mut hits = 0;
    let mut max_discrepancy: f64 = 0.0;
    for &id in &fan.member_lines {
        let Some(line) = lines.get(id) else { continue };
        for (side, &end) in line.endpoints.iter().enumerate() {
            let on_dirichlet = domain
                .dirichlet_segments()
                .map(|(_, s)| point_segment_distance(end, s.start, s.end).0)
                .any(|d| d <= tol);
            if !on_dirichlet {
                continue;
            }
            let Ok(Some(w)) = domain.boundary_value(end) else { continue };
            let k = if side == 0 { 0 } else { line.u_samples.len() - 1 };
            hits += 1;
            max_discrepancy = max_discrepancy.max((line.u_samples[k] - w).abs());
        }
    }
    if hits == 0 {
        return Err(AnalysisError::NoDirichletIntersection);
    }
    Ok(FanTraceReport { hits, max_discrepancy })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NonIntersectionReport {
    pub pairs: usize,
    pub violations: usize,
}

/// Pairs of non-collinear traced segments that cross inside the zone,
/// farther than `2h` from its outline.
pub fn check_non_intersection(view: &FieldView<'_>, zone: &PlasticZone, lines: &[Characteristic]) -> NonIntersectionReport {
    let tol = 2.0 * view.mesh.h;
    let n = lines.len();
    let violations: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = &lines[i];
            ((i + 1)..n)
                .filter(|&j| {
                    let b = &lines[j];
                    let Some(p) = line_intersection(a.endpoints[0], a.endpoints[1] - a.endpoints[0], b.endpoints[0], b.endpoints[1] - b.endpoints[0], 1e-9) else {
                        return false;
                    };
                    let on = |l: &Characteristic| l.distance_to(p) <= 1e-12 * (1.0 + l.length());
                    on(a) && on(b) && zone.contains(view, p) && zone.distance_to_outline(p) > tol
                })
                .count()
        })
        .sum();
    NonIntersectionReport { pairs: n * n.saturating_sub(1) / 2, violations }
}

/// One diagnostic record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub params: Map<String, Value>,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, params: Value, value: f64, threshold: f64, pass: bool, required: bool) -> Check {
        let mut params = match params {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        params.insert("required".into(), Value::Bool(required));
        Check { name: name.into(), params, value: finite_or_zero(value), threshold, pass }
    }

    /// A required check with an explicit verdict.
    pub fn simple(name: &str, params: Value, value: f64, threshold: f64, pass: bool) -> Check {
        Check::new(name, params, value, threshold, pass, true)
    }

    /// Checks are required unless they carry `"required": false`.
    pub fn required(&self) -> bool {
        self.params.get("required").and_then(Value::as_bool).unwrap_or(true)
    }

    /// `value ≤ threshold`.
    fn at_most(name: &str, params: Value, value: f64, threshold: f64, required: bool) -> Check {
        Check::new(name, params, value, threshold, value <= threshold, required)
    }
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v + 0.0
    } else {
        0.0
    }
}

/// Everything the analysis produced for one field.
pub struct AnalysisReport {
    pub zone: Option<PlasticZone>,
    pub decomposition: Option<ZoneDecomposition>,
    pub checks: Vec<Check>,
}

impl AnalysisReport {
    pub fn all_required_pass(&self) -> bool {
        self.checks.iter().filter(|c| c.required()).all(|c| c.pass)
    }
}

pub const ENTROPY_DIRECTIONS: usize = 16;

/// Zone centroid farthest from the outline, as a bump centre.
fn bump_site(view: &FieldView<'_>, zone: &PlasticZone) -> Option<(Vec2, f64)> {
    outline_distances(view, zone)
        .into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(b.0.cmp(&a.0)))
        .map(|(t, d)| (view.mesh.centroid(t), d))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiagnosticOptions {
    /// Exact oracle fields: tolerances tighten to what exact fields must
    /// meet and the structural checks become required.
    pub strict: bool,
    /// Solver output: the global flow-rule identity applies.
    pub flow_rule: bool,
}

/// Runs the whole diagnostic suite.
pub fn run_diagnostics(
    view: &FieldView<'_>,
    domain: &Domain,
    result: &SolveResult,
    config: &AnalysisConfig,
    options: DiagnosticOptions,
) -> Result<AnalysisReport, AnalysisError> {
    config.validate()?;
    let strict = options.strict;
    let mesh = view.mesh;
    let h = mesh.h;
    let step = config.step_for(h);
    let cluster_radius = config.cluster_radius_for(h);
    let mut checks = Vec::new();

    let zone = match zone_from_sigma(mesh, view.sigma, config.delta) {
        Ok(z) => z,
        Err(AnalysisError::EmptyZone) => {
            let exclude: Vec<(Vec2, f64)> = Vec::new();
            let div = divergence_residual_excluding(mesh, view.sigma, &exclude);
            checks.push(Check::at_most("div_residual", json!({}), div, 0.05, true));
            checks.push(Check::new("plastic_zone", json!({"delta": config.delta, "empty": true}), 0.0, 0.0, true, false));
            if options.flow_rule {
        push_flow_rule(&mut checks, mesh, domain, result);
    }
            return Ok(AnalysisReport { zone: None, decomposition: None, checks });
        }
        Err(e) => return Err(e),
    };
    let domain_area = domain.area();
    checks.push(Check::new(
        "plastic_zone",
        json!({"delta": config.delta, "outline_loops": zone.outline.len()}),
        zone.area / domain_area,
        0.0,
        true,
        false,
    ));

    let lines = seed_and_trace(view, &zone, config.spacing, step);
    let decomposition = classify(view, &zone, lines, cluster_radius)?;
    let lines = &decomposition.lines;
    let fans = &decomposition.fans;

    let exclude: Vec<(Vec2, f64)> = fans.iter().map(|f| (f.apex, config.margin)).collect();
    let div = if view.is_exact() {
        exact_divergence_residual(view, &exclude)
    } else {
        divergence_residual_excluding(mesh, view.sigma, &exclude)
    };
    checks.push(Check::at_most("div_residual", json!({"apex_exclusion_radius": config.margin, "excluded_apexes": exclude.len(), "quadrature": if view.is_exact() { "degree5" } else { "centroid" }}), div, 0.05, true));

    if !lines.is_empty() {
        let devs: Vec<f64> = lines.iter().map(|l| l.sigma_deviation).collect();
        let threshold = if strict { 1e-9 } else { 0.05 };
        checks.push(Check::at_most(
            "sigma_constancy",
            json!({"percentile": 0.9, "n_lines": lines.len(), "step": step, "spacing": config.spacing}),
            percentile(&devs, 0.9),
            threshold,
            true,
        ));
        let tol = default_u_tolerance(view);
        let u = check_u_constancy(lines, tol)?;
        checks.push(Check::new("u_constancy", json!({"percentile": 0.9, "n_lines": u.n_lines, "max": u.max}), u.p90, tol, u.pass, true));
        let ni = check_non_intersection(view, &zone, lines);
        let (value, threshold) = if strict {
            (ni.violations as f64, 0.0)
        } else {
            (ni.violations as f64 / ni.pairs.max(1) as f64, 0.01)
        };
        checks.push(Check::at_most("non_intersection", json!({"pairs": ni.pairs, "violations": ni.violations, "outline_tolerance": 2.0 * h}), value, threshold, true));
    }

    let ord = check_ordering(view, &zone, config.n_pairs, 0.02, config.seed)?;
    checks.push(Check::at_most(
        "ordering",
        json!({"n_pairs": ord.n_pairs, "tol": ord.tol, "seed": ord.seed, "worst_margin": ord.worst_margin}),
        ord.violations as f64,
        0.0,
        true,
    ));

    match check_lipschitz(view, &zone, config.margin, config.n_pairs, config.seed) {
        Ok(l) => checks.push(Check::at_most(
            "lipschitz",
            json!({"margin": config.margin, "n_pairs": l.n_pairs, "worst_ratio": l.worst_ratio, "violations": l.violations, "seed": l.seed}),
            l.worst_excess,
            l.slack,
            true,
        )),
        Err(AnalysisError::EmptyInterior) => {
            checks.push(Check::new("lipschitz", json!({"margin": config.margin, "vacuous": true}), 0.0, LIPSCHITZ_SLACK, true, false))
        }
        Err(e) => return Err(e),
    }

    if let Some((center, dist)) = bump_site(view, &zone) {
        let radius = 0.2f64.min(0.9 * dist);
        if radius > 2.0 * h {
            let mut worst: f64 = 0.0;
            for k in 0..ENTROPY_DIRECTIONS {
                let th = 2.0 * PI * k as f64 / ENTROPY_DIRECTIONS as f64;
                let d = entropy_defect(view, &zone, Vec2::new(th.cos(), th.sin()), center, radius)?;
                worst = worst.max(d.abs());
            }
            checks.push(Check::at_most(
                "entropy_defect",
                json!({"directions": ENTROPY_DIRECTIONS, "bump_center": [center.x, center.y], "bump_radius": radius}),
                worst,
                2.0 * h,
                true,
            ));
        }
    }

    for (i, fan) in fans.iter().enumerate() {
        let params = json!({"fan": i, "apex": [fan.apex.x, fan.apex.y]});
        match check_fan_trace_agreement(view, domain, fan, lines) {
            Ok(r) => {
                let mut p = params;
                p["hits"] = json!(r.hits);
                checks.push(Check::at_most("fan_trace_agreement", p, r.max_discrepancy, 0.05 * view.u_range().max(f64::MIN_POSITIVE), false));
            }
            Err(_) => {
                let mut p = params;
                p["no_dirichlet_intersection"] = json!(true);
                checks.push(Check::new("fan_trace_agreement", p, 0.0, 0.0, true, false));
            }
        }
    }

    checks.push(Check::at_most(
        "decomposition_coverage",
        json!({"fans": fans.len(), "constant_zones": decomposition.constant_zones.len(), "other_components": decomposition.other_components.len()}),
        decomposition.unclassified_area_fraction,
        0.1,
        strict,
    ));
    let worst_arcs = decomposition
        .other_components
        .iter()
        .map(|c| outline_contact_arcs(mesh, &zone, &c.triangles))
        .max()
        .unwrap_or(0);
    checks.push(Check::at_most("component_structure", json!({"components": decomposition.other_components.len()}), worst_arcs as f64, 2.0, strict));

    let hit = uncovered_outline_fraction(&zone, lines, config.spacing);
    checks.push(Check::new("uncovered_outline_fraction", json!({"radius": config.spacing}), hit, 0.0, true, false));

    if options.flow_rule {
        push_flow_rule(&mut checks, mesh, domain, result);
    }
    Ok(AnalysisReport { zone: Some(zone), decomposition: Some(decomposition), checks })
}

/// Degree-5 seven-point rule on the reference triangle: (weight, barycentrics).
const DUNAVANT5: [(f64, [f64; 3]); 7] = [
    (0.225, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
    (0.132394152788506, [0.059715871789770, 0.470142064105115, 0.470142064105115]),
    (0.132394152788506, [0.470142064105115, 0.059715871789770, 0.470142064105115]),
    (0.132394152788506, [0.470142064105115, 0.470142064105115, 0.059715871789770]),
    (0.125939180544827, [0.797426985353087, 0.101286507323456, 0.101286507323456]),
    (0.125939180544827, [0.101286507323456, 0.797426985353087, 0.101286507323456]),
    (0.125939180544827, [0.101286507323456, 0.101286507323456, 0.797426985353087]),
];

/// The scaled weak divergence of the attached exact field, integrated with
/// a degree-5 rule instead of centroid sampling. Centroid sampling of a
/// curved field leaves an O(|D²σ|) error on irregular node patches that
/// does not shrink with h.
fn exact_divergence_residual(view: &FieldView<'_>, exclude: &[(Vec2, f64)]) -> f64 {
    let mesh = view.mesh;
    let n = mesh.n_nodes();
    let mut acc = vec![0.0; n];
    let mut patch = vec![0.0; n];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        let c = mesh.corners(t);
        let mut mean = Vec2::ZERO;
        for (w, b) in DUNAVANT5 {
            let x = c[0] * b[0] + c[1] * b[1] + c[2] * b[2];
            mean += view.exact_sigma(x).unwrap_or(view.sigma[t]) * w;
        }
        let g = mesh.hat_gradients(t);
        for k in 0..3 {
            acc[tri[k]] += area * mean.dot(g[k]);
            patch[tri[k]] += area;
        }
    }
    let boundary = mesh.boundary_node_mask();
    (0..n)
        .filter(|&i| !boundary[i] && patch[i] > 0.0)
        .filter(|&i| exclude.iter().all(|(c, r)| mesh.nodes[i].dist(*c) > *r))
        .map(|i| acc[i].abs() / (mesh.h * patch[i]))
        .fold(0.0, f64::max)
}

fn push_flow_rule(checks: &mut Vec<Check>, mesh: &Mesh, domain: &Domain, result: &SolveResult) {
    if let Ok(b) = flow_rule_balance(mesh, domain, result) {
        checks.push(Check::at_most(
            "flow_rule_identity",
            json!({"plastic_mass": b.plastic_mass, "boundary_mass": b.boundary_mass, "work": b.work}),
            b.relative_defect(),
            0.05,
            true,
        ));
    }
}

/// Fraction of the zone outline farther than `radius` from every line
/// endpoint: a heuristic report of outline arcs no characteristic reaches.
pub fn uncovered_outline_fraction(zone: &PlasticZone, lines: &[Characteristic], radius: f64) -> f64 {
    let total = zone.outline_length();
    if total <= 0.0 {
        return 0.0;
    }
    let ends: Vec<Vec2> = lines.iter().flat_map(|l| l.endpoints).collect();
    let uncovered: f64 = zone
        .segments
        .iter()
        .filter(|(a, b)| {
            let m = (*a + *b) * 0.5;
            ends.iter().all(|e| e.dist(m) > radius)
        })
        .map(|(a, b)| a.dist(*b))
        .sum();
    uncovered / total
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// `line_id,x0,y0,x1,y1,sigma_x,sigma_y,u_mean,u_dev`.
pub fn characteristics_csv(lines: &[Characteristic]) -> String {
    let mut out = String::from("line_id,x0,y0,x1,y1,sigma_x,sigma_y,u_mean,u_dev\n");
    for l in lines {
        let s = l.sigma_seed();
        let [a, b] = l.endpoints;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            l.id,
            fmt17(a.x),
            fmt17(a.y),
            fmt17(b.x),
            fmt17(b.y),
            fmt17(s.x),
            fmt17(s.y),
            fmt17(l.u_mean()),
            fmt17(l.u_deviation)
        );
    }
    out
}

/// JSON summary of a decomposition.
pub fn decomposition_json(zone: &PlasticZone, d: &ZoneDecomposition) -> Value {
    json!({
        "zone_area": zone.area,
        "delta": zone.delta,
        "n_lines": d.lines.len(),
        "fans": d.fans.iter().zip(&d.fan_triangles).map(|(f, ts)| json!({
            "apex": [f.apex.x, f.apex.y],
            "alpha": f.alpha,
            "angular_span": f.angular_span,
            "kind": f.kind,
            "member_lines": f.member_lines,
            "vortex_deviation": f.vortex_deviation,
            "triangles": ts.len(),
        })).collect::<Vec<_>>(),
        "constant_zones": d.constant_zones.iter().map(|c| json!({
            "sigma_bar": [c.sigma_bar.x, c.sigma_bar.y],
            "area": c.area,
            "triangles": c.triangles,
        })).collect::<Vec<_>>(),
        "other_components": d.other_components.iter().map(|c| json!({
            "area": c.area,
            "triangles": c.triangles,
        })).collect::<Vec<_>>(),
        "unclassified_area_fraction": d.unclassified_area_fraction,
    })
}

/// SVG figure: domain outline, zone shading, characteristics and fan apexes.
/// A generation timestamp comment is added unless `reproducible` is set.
pub fn render_svg(mesh: &Mesh, domain: &Domain, zone: Option<&PlasticZone>, lines: &[Characteristic], fans: &[Fan], reproducible: bool) -> String {
    let (lo, hi) = mesh_extent(mesh);
    let size = (hi - lo).x.max((hi - lo).y).max(f64::MIN_POSITIVE);
    let scale = 800.0 / size;
    let pad = 20.0;
    let map = |p: Vec2| (pad + (p.x - lo.x) * scale, pad + (hi.y - p.y) * scale);
    let w = 2.0 * pad + (hi - lo).x * scale;
    let hgt = 2.0 * pad + (hi - lo).y * scale;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{hgt:.1}" viewBox="0 0 {w:.1} {hgt:.1}">"#);
    if !reproducible {
        let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let _ = writeln!(s, "<!-- generated at unix time {now} -->");
    }
    if let Some(z) = zone {
        let _ = write!(s, r##"<path fill="#f4c7a1" stroke="none" d=""##);
        for t in z.masked() {
            let c = mesh.corners(t);
            let (a, b, d) = (map(c[0]), map(c[1]), map(c[2]));
            let _ = write!(s, "M{:.2} {:.2}L{:.2} {:.2}L{:.2} {:.2}Z", a.0, a.1, b.0, b.1, d.0, d.1);
        }
        let _ = writeln!(s, r#""/>"#);
        for lp in &z.outline {
            let pts: Vec<String> = lp.iter().map(|p| map(*p)).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(s, r##"<polyline fill="none" stroke="#c0602a" stroke-width="1" points="{}"/>"##, pts.join(" "));
        }
    }
    let outline: Vec<String> = domain.vertices().iter().map(|p| map(*p)).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(s, r##"<polygon fill="none" stroke="#000000" stroke-width="2" points="{}"/>"##, outline.join(" "));
    for l in lines {
        let (a, b) = (map(l.endpoints[0]), map(l.endpoints[1]));
        let _ = writeln!(s, r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#1f4e9c" stroke-width="0.8"/>"##, a.0, a.1, b.0, b.1);
    }
    for f in fans {
        let (x, y) = map(f.apex);
        let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="#b00020"/>"##);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{domains, triangulate, BoundaryCondition};
    use crate::oracles::{oracle_fields_on_mesh, FanOracle, Family453Oracle, MonotoneTable, TrapezoidOracle};

    fn constant_result(mesh: &Mesh, s: Vec2) -> SolveResult {
        SolveResult {
            u: vec![0.0; mesh.n_nodes()],
            sigma: vec![s; mesh.n_triangles()],
            p: vec![Vec2::ZERO; mesh.n_triangles()],
            p_norm: vec![0.0; mesh.n_triangles()],
            energy_history: Vec::new(),
            div_residual: 0.0,
            eps_final: 0.0,
            stages: Vec::new(),
        }
    }

    fn vortex(apex: Vec2, lo: f64, hi: f64) -> Oracle {
        Oracle::Fan(FanOracle::new(apex, 1.0, MonotoneTable::new(vec![(lo, 0.0), (hi, hi - lo)]).unwrap()).unwrap())
    }

    fn sector_case(h: f64) -> (Domain, Mesh, Oracle) {
        let apex = Vec2::ZERO;
        let dir = BoundaryCondition::Dirichlet { a: 0.0, b: 0.0, c: 0.0 };
        let dom = domains::sector(apex, 1.0, 0.3, 1.4, 24, dir, |_, _| dir).unwrap();
        let mesh = triangulate(&dom, h).unwrap();
        (dom, mesh, vortex(apex, 0.3, 1.4))
    }

    #[test]
    fn elastic_field_has_empty_zone() {
        let d = domains::unit_square_dirichlet(0.0, 0.5, 0.0);
        let m = triangulate(&d, 0.1).unwrap();
        let r = constant_result(&m, Vec2::new(0.5, 0.0));
        assert!(matches!(extract_plastic_zone(&m, &r, 0.02), Err(AnalysisError::EmptyZone)));
        assert!(extract_plastic_zone(&m, &r, 0.7).is_err());
    }

    #[test]
    fn constant_field_traces_vertical_lines() {
        let d = domains::unit_square_dirichlet(0.0, 0.0, 0.0);
        let m = triangulate(&d, 1.0 / 16.0).unwrap();
        let r = constant_result(&m, Vec2::new(1.0, 0.0));
        let zone = extract_plastic_zone(&m, &r, 0.02).unwrap();
        assert!((zone.area - 1.0).abs() < 1e-12);
        assert_eq!(zone.outline.len(), 1);
        let view = FieldView::from_result(&m, &r).unwrap();
        let c = trace(&view, &zone, Vec2::new(0.5, 0.5), 1.0 / 32.0).unwrap();
        assert!(c.endpoints[0].dist(Vec2::new(0.5, 0.0)) < 1e-10, "{:?}", c.endpoints);
        assert!(c.endpoints[1].dist(Vec2::new(0.5, 1.0)) < 1e-10);
        assert_eq!(c.sigma_deviation, 0.0);
        assert!((c.direction.dot(Vec2::new(1.0, 0.0))).abs() < 1e-9);

        let lines = seed_and_trace(&view, &zone, 0.25, 1.0 / 32.0);
        assert_eq!(lines.len(), 4);
        assert!(detect_fans(&view, &lines, &zone, 0.1).is_empty());
        let dec = classify(&view, &zone, lines, 0.1).unwrap();
        assert_eq!(dec.constant_zones.len(), 1);
        assert!(dec.unclassified_area_fraction < 1e-12);

        let ord = check_ordering(&view, &zone, 1000, 0.02, 0).unwrap();
        assert_eq!(ord.violations, 0);
        let lip = check_lipschitz(&view, &zone, 0.15, 1000, 0).unwrap();
        assert_eq!(lip.worst_ratio, 0.0);
        assert!(matches!(check_lipschitz(&view, &zone, 0.6, 10, 0), Err(AnalysisError::EmptyInterior)));
        assert!(matches!(trace(&view, &zone, Vec2::new(2.0, 0.5), 0.1), Err(AnalysisError::SeedOutsideZone(..))));
    }

    #[test]
    fn entropy_defect_of_constant_fields() {
        let d = domains::unit_square_dirichlet(0.0, 0.0, 0.0);
        let m = triangulate(&d, 1.0 / 32.0).unwrap();
        let r = constant_result(&m, Vec2::new(1.0, 0.0));
        let zone = extract_plastic_zone(&m, &r, 0.02).unwrap();
        let view = FieldView::from_result(&m, &r).unwrap();
        let c = Vec2::new(0.5, 0.5);
        assert_eq!(entropy_defect(&view, &zone, Vec2::new(-1.0, 0.0), c, 0.2).unwrap(), 0.0);
        let v = entropy_defect(&view, &zone, Vec2::new(1.0, 0.0), c, 0.2).unwrap();
        assert!(v.abs() <= 1e-10, "{v}");
        assert!(matches!(entropy_defect(&view, &zone, Vec2::new(1.0, 0.0), Vec2::new(0.1, 0.5), 0.2), Err(AnalysisError::BumpNotInsideZone)));
    }

    #[test]
    fn bump_gradient_matches_finite_differences() {
        let c = Vec2::new(0.3, -0.1);
        let phi = |x: Vec2| {
            let rho2 = (x - c).norm_sq() / 0.04;
            if rho2 >= 1.0 { 0.0 } else { (1.0 - 1.0 / (1.0 - rho2)).exp() }
        };
        for x in [Vec2::new(0.35, -0.05), Vec2::new(0.2, -0.2), Vec2::new(0.3, 0.0)] {
            let e = 1e-7;
            let fd = Vec2::new(
                (phi(x + Vec2::new(e, 0.0)) - phi(x - Vec2::new(e, 0.0))) / (2.0 * e),
                (phi(x + Vec2::new(0.0, e)) - phi(x - Vec2::new(0.0, e))) / (2.0 * e),
            );
            assert!((fd - bump_gradient(x, c, 0.2)).norm() < 1e-6);
        }
    }

    #[test]
    fn vortex_trace_is_exact_radial_line() {
        let d = domains::rectangle(Vec2::new(-0.5, -0.5), Vec2::new(0.5, 0.5), BoundaryCondition::Dirichlet { a: 0.0, b: 0.0, c: 0.0 }).unwrap();
        let m = triangulate(&d, 1.0 / 16.0).unwrap();
        let o = vortex(Vec2::new(0.0, -1.0), 0.3, 2.9);
        let r = oracle_fields_on_mesh(&o, &m).unwrap();
        let zone = extract_plastic_zone(&m, &r, 0.02).unwrap();
        let view = FieldView::from_result(&m, &r).unwrap().with_exact(&o);
        let c = trace(&view, &zone, Vec2::ZERO, 1.0 / 32.0).unwrap();
        assert!(c.direction.cross(Vec2::new(0.0, 1.0)).abs() < 1e-12);
        assert!(c.sigma_deviation <= 1e-9);
        assert!(c.u_deviation <= 1e-12);
    }

    #[test]
    fn sector_vortex_yields_one_boundary_fan() {
        let h = 1.0 / 32.0;
        let (dom, mesh, o) = sector_case(h);
        let r = oracle_fields_on_mesh(&o, &mesh).unwrap();
        let zone = extract_plastic_zone(&mesh, &r, 0.02).unwrap();
        let view = FieldView::from_result(&mesh, &r).unwrap().with_exact(&o);
        let lines = seed_and_trace(&view, &zone, 0.05, h / 2.0);
        assert!(lines.len() >= 5);
        for a in &lines {
            for b in &lines {
                if let Some(p) = line_intersection(a.seed, a.direction, b.seed, b.direction, 1e-3) {
                    assert!(p.norm() <= 2.0 * h, "{p:?}");
                }
            }
        }
        let dec = classify(&view, &zone, lines, 2.0 * h).unwrap();
        assert_eq!(dec.fans.len(), 1);
        let fan = &dec.fans[0];
        assert_eq!(fan.kind, FanKind::Boundary);
        assert_eq!(fan.alpha, 1.0);
        assert!(fan.apex.norm() <= 2.0 * h);
        assert!(dec.constant_zones.is_empty());
        assert!(dec.unclassified_area_fraction <= 0.1);
        assert_eq!(check_non_intersection(&view, &zone, &dec.lines).violations, 0);
        assert!(matches!(
            check_fan_trace_agreement(&view, &dom, fan, &dec.lines),
            Ok(FanTraceReport { hits, .. }) if hits > 0
        ));

        // piecewise-constant lookup perturbs directions by O(h) but keeps the fan
        let sampled = FieldView::from_result(&mesh, &r).unwrap();
        let lines = seed_and_trace(&sampled, &zone, 0.05, h / 2.0);
        let fans = detect_fans(&sampled, &lines, &zone, 2.0 * h);
        assert_eq!(fans.len(), 1);
        assert!(fans[0].apex.norm() <= 2.0 * h);
    }

    #[test]
    fn fan_detection_is_invariant_under_profile_scaling() {
        let h = 1.0 / 32.0;
        let (_, mesh, _) = sector_case(h);
        let mk = |scale: f64| Oracle::Fan(FanOracle::new(Vec2::ZERO, 1.0, MonotoneTable::new(vec![(0.3, 0.0), (1.4, scale * 1.1)]).unwrap()).unwrap());
        let detect = |o: &Oracle| {
            let r = oracle_fields_on_mesh(o, &mesh).unwrap();
            let zone = extract_plastic_zone(&mesh, &r, 0.02).unwrap();
            let view = FieldView::from_result(&mesh, &r).unwrap();
            let lines = seed_and_trace(&view, &zone, 0.05, h / 2.0);
            detect_fans(&view, &lines, &zone, 2.0 * h).into_iter().map(|f| (f.apex, f.alpha)).collect::<Vec<_>>()
        };
        assert_eq!(detect(&mk(1.0)), detect(&mk(2.0)));
    }

    #[test]
    fn family453_is_neither_fan_nor_constant() {
        let o = Family453Oracle::with_default_profile(1.0).unwrap();
        let dom = o.domain().unwrap();
        // at h = 1/32 the traced lines are concurrent to within 2h and
        // cannot be told apart from an exterior fan
        let h = 1.0 / 64.0;
        let mesh = triangulate(&dom, h).unwrap();
        let oracle = Oracle::Family453(o);
        let r = oracle_fields_on_mesh(&oracle, &mesh).unwrap();
        let zone = extract_plastic_zone(&mesh, &r, 0.02).unwrap();
        let view = FieldView::from_result(&mesh, &r).unwrap().with_exact(&oracle);
        let lines = seed_and_trace(&view, &zone, 0.025, h / 2.0);
        assert!(lines.iter().all(|l| l.sigma_deviation <= 1e-9));
        assert_eq!(check_non_intersection(&view, &zone, &lines).violations, 0);
        let dec = classify(&view, &zone, lines, 2.0 * h).unwrap();
        assert!(dec.fans.is_empty(), "{:?}", dec.fans);
        assert!(dec.constant_zones.is_empty());
        let other: f64 = dec.other_components.iter().map(|c| c.area).sum();
        assert!(other >= 0.95 * zone.area);
        for c in &dec.other_components {
            assert!(outline_contact_arcs(&mesh, &zone, &c.triangles) <= 2);
        }
    }

    #[test]
    fn trapezoid_oracle_is_one_constant_zone() {
        let (d, ell, a) = (1.0, 2.0, 1.2);
        let o = Oracle::Trapezoid(TrapezoidOracle::new(d, ell, a, TrapezoidOracle::ramp_table(d, ell, a).unwrap()).unwrap());
        let dom = domains::trapezoid(d, ell, a).unwrap();
        let h = 1.0 / 32.0;
        let mesh = triangulate(&dom, h).unwrap();
        let r = oracle_fields_on_mesh(&o, &mesh).unwrap();
        let zone = extract_plastic_zone(&mesh, &r, 0.02).unwrap();
        let view = FieldView::from_result(&mesh, &r).unwrap().with_exact(&o);
        let lines = seed_and_trace(&view, &zone, 0.025, h / 2.0);
        let u = check_u_constancy(&lines, 2.0 * h).unwrap();
        assert!(u.max <= 1e-12, "{u:?}");
        let dec = classify(&view, &zone, lines, 2.0 * h).unwrap();
        assert!(dec.fans.is_empty());
        assert_eq!(dec.constant_zones.len(), 1);
        let bar = dec.constant_zones[0].sigma_bar;
        assert!((bar - Vec2::new(1.0, 1.0) / 2f64.sqrt()).norm() < 1e-12);
    }

    #[test]
    fn vortex_ordering_lipschitz_and_entropy() {
        let d = domains::unit_square_dirichlet(0.0, 0.0, 0.0);
        let apex = Vec2::new(-0.5, 0.5);
        let o = vortex(apex, -1.3, 1.3);
        let mut defects = Vec::new();
        for h in [1.0 / 32.0, 1.0 / 64.0] {
            let mesh = triangulate(&d, h).unwrap();
            let r = oracle_fields_on_mesh(&o, &mesh).unwrap();
            let zone = extract_plastic_zone(&mesh, &r, 0.02).unwrap();
            let view = FieldView::from_result(&mesh, &r).unwrap();
            assert_eq!(check_ordering(&view, &zone, 10_000, 0.02, 0).unwrap().violations, 0);
            let lip = check_lipschitz(&view, &zone, 0.15, 10_000, 0).unwrap();
            assert_eq!(lip.violations, 0);
            // apex at distance ≥ 0.5 from the square: ratio ≤ margin/0.5
            assert!(lip.worst_ratio <= 0.15 / 0.5 + 1e-9, "{}", lip.worst_ratio);
            let mut worst: f64 = 0.0;
            for k in 0..16 {
                let th = 2.0 * PI * k as f64 / 16.0;
                let v = entropy_defect(&view, &zone, Vec2::new(th.cos(), th.sin()), Vec2::new(0.5, 0.5), 0.2).unwrap();
                worst = worst.max(v.abs());
            }
            defects.push((h, worst));
        }
        assert!(defects[0].1 <= 2.0 * defects[0].0 && defects[1].1 <= 2.0 * defects[1].0, "{defects:?}");
        assert!(defects[1].1 <= 0.6 * defects[0].1, "{defects:?}");
    }

    #[test]
    fn percentile_is_nearest_rank() {
        let v: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        assert_eq!(percentile(&v, 0.9), 9.0);
        assert_eq!(percentile(&v, 1.0), 10.0);
        assert_eq!(percentile(&[3.0], 0.9), 3.0);
    }

    #[test]
    fn csv_and_svg_are_deterministic() {
        let d = domains::unit_square_dirichlet(0.0, 0.0, 0.0);
        let m = triangulate(&d, 1.0 / 8.0).unwrap();
        let r = constant_result(&m, Vec2::new(1.0, 0.0));
        let zone = extract_plastic_zone(&m, &r, 0.02).unwrap();
        let view = FieldView::from_result(&m, &r).unwrap();
        let lines = seed_and_trace(&view, &zone, 0.25, 1.0 / 16.0);
        let csv = characteristics_csv(&lines);
        assert_eq!(csv.lines().count(), lines.len() + 1);
        assert_eq!(render_svg(&m, &d, Some(&zone), &lines, &[], true), render_svg(&m, &d, Some(&zone), &lines, &[], true));
        assert!(!render_svg(&m, &d, Some(&zone), &lines, &[], true).contains("<!--"));
    }
}
