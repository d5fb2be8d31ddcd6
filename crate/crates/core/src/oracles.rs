//! Closed-form stress/displacement families used as ground truth.
//!
//! Three families are provided: a centred fan (vortex) around an apex, the
//! constant-stress trapezoid with its one-parameter family of
//! displacements, and a smooth non-fan family parametrized by straight
//! lines `y = x/t − t`. Each can be sampled onto a mesh in the same shape
//! as solver output, so the analysis runs on it unchanged.

use crate::geom::Vec2;
use crate::mesh::{domains, BoundaryCondition, Domain, Mesh, MeshError};
use crate::solver::{divergence_residual, SolveResult};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("point coincides with the fan apex")]
    ApexSingularity,
    #[error("angle {0} is outside the profile table")]
    AngleOutOfRange(f64),
    #[error("point ({0}, {1}) is outside the trapezoid")]
    PointOutsideTrapezoid(f64, f64),
    #[error("point ({0}, {1}) is outside the region of validity")]
    PointOutsideRegion(f64, f64),
    #[error("f'({t}) = {slope} exceeds the bound {bound}")]
    DerivativeConditionViolated { t: f64, slope: f64, bound: f64 },
    #[error("argument {0} is outside the function table")]
    OutsideTable(f64),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{what} {index} is not covered by the oracle: {source}")]
    Coverage {
        what: &'static str,
        index: usize,
        #[source]
        source: Box<OracleError>,
    },
    #[error("default domain: {0}")]
    Mesh(String),
}

impl From<MeshError> for OracleError {
    fn from(e: MeshError) -> Self {
        OracleError::Mesh(e.to_string())
    }
}

/// Nondecreasing piecewise-linear function. Repeated abscissae encode
/// jumps; evaluation is left-continuous.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneTable {
    knots: Vec<(f64, f64)>,
}

impl MonotoneTable {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, OracleError> {
        if knots.len() < 2 {
            return Err(OracleError::InvalidTable("need at least two knots".into()));
        }
        if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(OracleError::InvalidTable("non-finite knot".into()));
        }
        for w in knots.windows(2) {
            if w[1].0 < w[0].0 {
                return Err(OracleError::InvalidTable("abscissae must be nondecreasing".into()));
            }
            if w[1].1 < w[0].1 {
                return Err(OracleError::InvalidTable("values must be nondecreasing".into()));
            }
        }
        if knots[0].0 == knots[knots.len() - 1].0 {
            return Err(OracleError::InvalidTable("table has zero width".into()));
        }
        Ok(MonotoneTable { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn span(&self) -> (f64, f64) {
        (self.knots[0].0, self.knots[self.knots.len() - 1].0)
    }

    /// Index `i` of the piece `[t_i, t_{i+1}]` that contains `t` from the left.
    fn piece(&self, t: f64) -> Option<usize> {
        let (lo, hi) = self.span();
        if t < lo || t > hi {
            return None;
        }
        // first knot with abscissa ≥ t, then step back onto a non-degenerate piece
        let k = self.knots.partition_point(|&(s, _)| s < t);
        let mut i = k.saturating_sub(1);
        while i + 1 < self.knots.len() && self.knots[i + 1].0 == self.knots[i].0 {
            i += 1;
        }
        Some(i.min(self.knots.len() - 2))
    }

    pub fn value(&self, t: f64) -> Option<f64> {
        let i = self.piece(t)?;
        let (t0, v0) = self.knots[i];
        let (t1, v1) = self.knots[i + 1];
        if t1 == t0 {
            return Some(v0);
        }
        Some(v0 + (v1 - v0) * (t - t0) / (t1 - t0))
    }

    /// Absolutely continuous part of the derivative.
    pub fn slope(&self, t: f64) -> Option<f64> {
        let i = self.piece(t)?;
        let (t0, v0) = self.knots[i];
        let (t1, v1) = self.knots[i + 1];
        Some(if t1 > t0 { (v1 - v0) / (t1 - t0) } else { 0.0 })
    }

    /// Jump locations and heights.
    pub fn jumps(&self) -> Vec<(f64, f64)> {
        self.knots
            .windows(2)
            .filter(|w| w[0].0 == w[1].0 && w[1].1 > w[0].1)
            .map(|w| (w[0].0, w[1].1 - w[0].1))
            .collect()
    }
}

/// Monotone cubic Hermite (Fritsch–Carlson) interpolant; `C¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pchip {
    t: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(points: &[(f64, f64)]) -> Result<Self, OracleError> {
        if points.len() < 2 {
            return Err(OracleError::InvalidTable("need at least two knots".into()));
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(OracleError::InvalidTable("non-finite knot".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(OracleError::InvalidTable("abscissae must be strictly increasing".into()));
        }
        let t: Vec<f64> = points.iter().map(|p| p.0).collect();
        let y: Vec<f64> = points.iter().map(|p| p.1).collect();
        let n = t.len();
        let hs: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / hs[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d = vec![del[0]; 2];
        } else {
            for i in 1..n - 1 {
                if del[i - 1] * del[i] > 0.0 {
                    let w1 = 2.0 * hs[i] + hs[i - 1];
                    let w2 = hs[i] + 2.0 * hs[i - 1];
                    d[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
                }
            }
            d[0] = end_slope(hs[0], hs[1], del[0], del[1]);
            d[n - 1] = end_slope(hs[n - 2], hs[n - 3], del[n - 2], del[n - 3]);
        }
        Ok(Pchip { t, y, d })
    }

    pub fn span(&self) -> (f64, f64) {
        (self.t[0], self.t[self.t.len() - 1])
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.t.len()).map(move |i| (self.t[i], self.y[i], self.d[i]))
    }

    fn locate(&self, x: f64) -> Option<usize> {
        let (lo, hi) = self.span();
        if !(x >= lo && x <= hi) {
            return None;
        }
        Some(self.t.partition_point(|&s| s <= x).clamp(1, self.t.len() - 1) - 1)
    }

    /// Value and derivative at `x`.
    pub fn eval(&self, x: f64) -> Option<(f64, f64)> {
        let i = self.locate(x)?;
        let h = self.t[i + 1] - self.t[i];
        let s = (x - self.t[i]) / h;
        let (y0, y1, d0, d1) = (self.y[i], self.y[i + 1], self.d[i], self.d[i + 1]);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let v = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
        let dh00 = 6.0 * s * (s - 1.0);
        let dh10 = (1.0 - s) * (1.0 - 3.0 * s);
        let dh01 = -dh00;
        let dh11 = s * (3.0 * s - 2.0);
        let dv = (dh00 * y0 + dh01 * y1) / h + dh10 * d0 + dh11 * d1;
        Some((v, dv))
    }
}

/// Three-point end slope with the usual shape-preserving limits.
fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d * del0 <= 0.0 {
        0.0
    } else if del0 * del1 <= 0.0 && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

/// Sampled oracle values at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OraclePoint {
    pub sigma: Vec2,
    pub u: f64,
    pub p: Vec2,
}

/// Centred fan `σ = α (x − z̄)⊥/|x − z̄|`, `u = α h(θ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FanOracle {
    pub apex: Vec2,
    pub alpha: f64,
    pub profile: MonotoneTable,
}

impl FanOracle {
    pub fn new(apex: Vec2, alpha: f64, profile: MonotoneTable) -> Result<Self, OracleError> {
        if alpha != 1.0 && alpha != -1.0 {
            return Err(OracleError::InvalidParameter(format!("alpha must be ±1, got {alpha}")));
        }
        if !apex.is_finite() {
            return Err(OracleError::InvalidParameter("apex must be finite".into()));
        }
        let (lo, hi) = profile.span();
        if hi - lo > 2.0 * PI {
            return Err(OracleError::InvalidTable("angular span exceeds 2π".into()));
        }
        Ok(FanOracle { apex, alpha, profile })
    }

    /// Polar angle of `x` about the apex, unwrapped into the table span if possible.
    pub fn angle(&self, x: Vec2) -> Result<f64, OracleError> {
        let r = x - self.apex;
        if r.norm() == 0.0 {
            return Err(OracleError::ApexSingularity);
        }
        let theta = r.angle();
        let (lo, hi) = self.profile.span();
        [theta, theta + 2.0 * PI, theta - 2.0 * PI]
            .into_iter()
            .find(|t| *t >= lo - 1e-12 && *t <= hi + 1e-12)
            .map(|t| t.clamp(lo, hi))
            .ok_or(OracleError::AngleOutOfRange(theta))
    }

    pub fn sigma(&self, x: Vec2) -> Result<Vec2, OracleError> {
        let r = x - self.apex;
        let n = r.norm();
        if n == 0.0 {
            return Err(OracleError::ApexSingularity);
        }
        Ok(r.perp() * (self.alpha / n))
    }

    pub fn eval(&self, x: Vec2) -> Result<OraclePoint, OracleError> {
        let sigma = self.sigma(x)?;
        let theta = self.angle(x)?;
        let u = self.alpha * self.profile.value(theta).ok_or(OracleError::AngleOutOfRange(theta))?;
        // ∇u = h'(θ)/r · α e_θ = (h'/r)·σ
        let slope = self.profile.slope(theta).unwrap_or(0.0);
        let r = x.dist(self.apex);
        Ok(OraclePoint { sigma, u, p: sigma * (slope / r - 1.0) })
    }
}

/// Constant stress `(1, 1)/√2` on the trapezoid with displacement
/// `u = (x + y + Z(x + y))/√2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrapezoidOracle {
    pub d: f64,
    pub ell: f64,
    pub a: f64,
    pub z: MonotoneTable,
}

impl TrapezoidOracle {
    pub fn new(d: f64, ell: f64, a: f64, z: MonotoneTable) -> Result<Self, OracleError> {
        if !(d > 0.0 && d < ell && ell.is_finite()) {
            return Err(OracleError::InvalidParameter("need 0 < d < ell".into()));
        }
        if !(a > 1.0 && a.is_finite()) {
            return Err(OracleError::InvalidParameter("need a > 1".into()));
        }
        let (lo, hi) = z.span();
        if lo > 0.0 || hi < ell {
            return Err(OracleError::InvalidTable(format!("Z table must cover [0, {ell}]")));
        }
        for &(t, v) in z.knots() {
            if t <= d && v != 0.0 {
                return Err(OracleError::InvalidTable(format!("Z must vanish on (0, d), Z({t}) = {v}")));
            }
        }
        let target = (a - 1.0) * ell;
        let right = right_limit(&z, ell);
        if (right - target).abs() > 1e-12 * (1.0 + target) {
            return Err(OracleError::InvalidTable(format!("Z⁺(ell) = {right}, expected {target}")));
        }
        Ok(TrapezoidOracle { d, ell, a, z })
    }

    /// `Z` concentrated as a jump on the top edge: `u` is affine inside.
    pub fn step_table(d: f64, ell: f64, a: f64) -> Result<MonotoneTable, OracleError> {
        let _ = d;
        MonotoneTable::new(vec![(0.0, 0.0), (ell, 0.0), (ell, (a - 1.0) * ell)])
    }

    /// `Z` spread linearly over `(d, ell)`.
    pub fn ramp_table(d: f64, ell: f64, a: f64) -> Result<MonotoneTable, OracleError> {
        MonotoneTable::new(vec![(0.0, 0.0), (d, 0.0), (ell, (a - 1.0) * ell)])
    }

    pub fn contains(&self, x: Vec2) -> bool {
        let tol = 1e-9 * self.ell;
        x.x >= -tol && x.x <= self.d + tol && x.y >= -tol && x.x + x.y <= self.ell + tol
    }

    pub fn domain(&self) -> Result<Domain, OracleError> {
        Ok(domains::trapezoid(self.d, self.ell, self.a)?)
    }

    /// σ, u and the density of the plastic measure along the line `x + y = c`.
    pub fn eval_with_lambda(&self, x: Vec2) -> Result<(OraclePoint, f64), OracleError> {
        if !self.contains(x) {
            return Err(OracleError::PointOutsideTrapezoid(x.x, x.y));
        }
        let t = (x.x + x.y).clamp(0.0, self.ell);
        let sigma = Vec2::new(1.0, 1.0) / SQRT_2;
        let z = self.z.value(t).ok_or(OracleError::OutsideTable(t))?;
        let lambda = self.z.slope(t).unwrap_or(0.0);
        // ∇u = (1 + Z')(1, 1)/√2, so p = Z'·σ
        Ok((OraclePoint { sigma, u: (t + z) / SQRT_2, p: sigma * lambda }, lambda))
    }

    pub fn eval(&self, x: Vec2) -> Result<OraclePoint, OracleError> {
        self.eval_with_lambda(x).map(|r| r.0)
    }
}

fn right_limit(z: &MonotoneTable, t: f64) -> f64 {
    z.knots().iter().rev().find(|k| k.0 <= t).map(|k| k.1).unwrap_or(0.0)
}

/// The smooth non-fan family with characteristics `y = x/t − t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Family453Oracle {
    pub r: f64,
    pub f: Pchip,
}

/// Number of quadrature nodes of the default profile.
pub const FAMILY453_QUADRATURE_POINTS: usize = 10_000;

impl Family453Oracle {
    /// Validates `f′(t) ≤ −(R + t)/√(4 + t²)` at every knot and coverage of
    /// the parameter range `[0, 2√R]`.
    pub fn new(r: f64, f: Pchip) -> Result<Self, OracleError> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(OracleError::InvalidParameter("R must be positive".into()));
        }
        let (lo, hi) = f.span();
        let s_max = 2.0 * r.sqrt();
        if lo > 0.0 || hi < s_max {
            return Err(OracleError::InvalidTable(format!("f table must cover [0, {s_max}]")));
        }
        for (t, _, slope) in f.knots() {
            let bound = -(r + t) / (4.0 + t * t).sqrt();
            if slope > bound + 1e-12 {
                return Err(OracleError::DerivativeConditionViolated { t, slope, bound });
            }
        }
        Ok(Family453Oracle { r, f })
    }

    /// `f(0) = 0`, `f′(t) = −(R + t + 0.1)/√(4 + t²)`, integrated by the
    /// trapezoidal rule on a uniform grid over `[0, 2√R]`.
    pub fn default_table(r: f64) -> Vec<(f64, f64)> {
        let n = FAMILY453_QUADRATURE_POINTS;
        let s_max = 2.0 * r.sqrt();
        let fp = |t: f64| -(r + t + 0.1) / (4.0 + t * t).sqrt();
        let dt = s_max / (n - 1) as f64;
        let mut out = Vec::with_capacity(n);
        let mut acc = 0.0;
        out.push((0.0, 0.0));
        for i in 1..n {
            let (t0, t1) = ((i - 1) as f64 * dt, i as f64 * dt);
            acc += 0.5 * dt * (fp(t0) + fp(t1));
            out.push((if i == n - 1 { s_max } else { t1 }, acc));
        }
        out
    }

    pub fn with_default_profile(r: f64) -> Result<Self, OracleError> {
        Family453Oracle::new(r, Pchip::new(&Family453Oracle::default_table(r))?)
    }

    /// Characteristic parameter `s = √(y² + 4x) − y`: the point lies on `y = x/t − t` with `t = s/2`.
    pub fn parameter(x: Vec2) -> f64 {
        (x.y * x.y + 4.0 * x.x).sqrt() - x.y
    }

    /// `(0.2R, 0.8R)²`, away from the singular corner.
    pub fn domain(&self) -> Result<Domain, OracleError> {
        let bc = BoundaryCondition::Dirichlet { a: 0.0, b: 0.0, c: 0.0 };
        Ok(domains::rectangle(Vec2::new(0.2 * self.r, 0.2 * self.r), Vec2::new(0.8 * self.r, 0.8 * self.r), bc)?)
    }

    pub fn sigma(&self, x: Vec2) -> Result<Vec2, OracleError> {
        self.check(x)?;
        let s = Family453Oracle::parameter(x);
        Ok(Vec2::new(-1.0, 0.5 * s) * (2.0 / (4.0 + s * s).sqrt()))
    }

    fn check(&self, x: Vec2) -> Result<(), OracleError> {
        let tol = 1e-12 * self.r;
        let inside = x.x >= -tol && x.y >= -tol && x.x <= self.r + tol && x.y <= self.r + tol;
        if !inside || x.y * x.y + 4.0 * x.x <= 0.0 {
            return Err(OracleError::PointOutsideRegion(x.x, x.y));
        }
        Ok(())
    }

    pub fn eval(&self, x: Vec2) -> Result<OraclePoint, OracleError> {
        let sigma = self.sigma(x)?;
        let root = (x.y * x.y + 4.0 * x.x).sqrt();
        let s = root - x.y;
        let (u, fp) = self.f.eval(s).ok_or(OracleError::OutsideTable(s))?;
        let coef = -((4.0 + s * s).sqrt() / root * fp + 1.0);
        Ok(OraclePoint { sigma, u, p: sigma * coef })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Oracle {
    Fan(FanOracle),
    Trapezoid(TrapezoidOracle),
    Family453(Family453Oracle),
}

impl Oracle {
    pub fn eval(&self, x: Vec2) -> Result<OraclePoint, OracleError> {
        match self {
            Oracle::Fan(o) => o.eval(x),
            Oracle::Trapezoid(o) => o.eval(x),
            Oracle::Family453(o) => o.eval(x),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Oracle::Fan(_) => "fan",
            Oracle::Trapezoid(_) => "trapezoid",
            Oracle::Family453(_) => "family453",
        }
    }
}

/// Samples σ and p at centroids and u at nodes, packaged like solver
/// output. Fan apex nodes (where u is multivalued) get the mean of the
/// profile over its span.
pub fn oracle_fields_on_mesh(oracle: &Oracle, mesh: &Mesh) -> Result<SolveResult, OracleError> {
    let cover = |what, index| move |e: OracleError| OracleError::Coverage { what, index, source: Box::new(e) };
    let mut u = Vec::with_capacity(mesh.n_nodes());
    for (i, &x) in mesh.nodes.iter().enumerate() {
        let v = match (oracle, oracle.eval(x)) {
            (_, Ok(pt)) => pt.u,
            (Oracle::Fan(f), Err(OracleError::ApexSingularity)) => {
                let (lo, hi) = f.profile.span();
                let mean = (0..=64).map(|k| f.profile.value(lo + (hi - lo) * k as f64 / 64.0).unwrap_or(0.0)).sum::<f64>() / 65.0;
                f.alpha * mean
            }
            (_, Err(e)) => return Err(cover("node", i)(e)),
        };
        u.push(v);
    }
    let mut sigma = Vec::with_capacity(mesh.n_triangles());
    let mut p = Vec::with_capacity(mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let pt = oracle.eval(mesh.centroid(t)).map_err(cover("triangle", t))?;
        sigma.push(pt.sigma);
        p.push(pt.p);
    }
    let p_norm = p.iter().map(|v| v.norm()).collect();
    let div_residual = divergence_residual(mesh, &sigma);
    Ok(SolveResult { u, sigma, p, p_norm, energy_history: Vec::new(), div_residual, eps_final: 0.0, stages: Vec::new() })
}

/// Serialized oracle parameters: `{"type": "fan" | "trapezoid" | "family453", ..., "table": [[t, v], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OracleSpec {
    Fan {
        apex: Vec2,
        alpha: f64,
        table: Vec<[f64; 2]>,
    },
    Trapezoid {
        d: f64,
        ell: f64,
        a: f64,
        table: Vec<[f64; 2]>,
    },
    Family453 {
        #[serde(rename = "R", alias = "r")]
        r: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        table: Option<Vec<[f64; 2]>>,
    },
}

/// An oracle file: parameters plus, optionally, the domain to mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleFile {
    #[serde(flatten)]
    pub spec: OracleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
}

fn pairs(table: &[[f64; 2]]) -> Vec<(f64, f64)> {
    table.iter().map(|k| (k[0], k[1])).collect()
}

impl OracleSpec {
    pub fn build(&self) -> Result<Oracle, OracleError> {
        Ok(match self {
            OracleSpec::Fan { apex, alpha, table } => {
                Oracle::Fan(FanOracle::new(*apex, *alpha, MonotoneTable::new(pairs(table))?)?)
            }
            OracleSpec::Trapezoid { d, ell, a, table } => {
                Oracle::Trapezoid(TrapezoidOracle::new(*d, *ell, *a, MonotoneTable::new(pairs(table))?)?)
            }
            OracleSpec::Family453 { r, table: None } => Oracle::Family453(Family453Oracle::with_default_profile(*r)?),
            OracleSpec::Family453 { r, table: Some(t) } => {
                Oracle::Family453(Family453Oracle::new(*r, Pchip::new(&pairs(t))?)?)
            }
        })
    }
}

impl OracleFile {
    pub fn parse(text: &str) -> Result<OracleFile, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// The explicit domain, or the oracle's natural one (fans have none).
    pub fn domain(&self, oracle: &Oracle) -> Result<Domain, OracleError> {
        if let Some(d) = &self.domain {
            return Ok(d.clone());
        }
        match oracle {
            Oracle::Trapezoid(o) => o.domain(),
            Oracle::Family453(o) => o.domain(),
            Oracle::Fan(_) => Err(OracleError::InvalidParameter("fan oracle files need an explicit domain".into())),
        }
    }
}
