//! Perzyna continuation for the relaxed Hencky functional on P1 meshes.
//!
//! For each `ε` of a decreasing schedule the discrete energy
//!
//! ```text
//! E(u) = Σ_T |T|·w_ε(∇u|_T) + Σ_{Dirichlet e} |e|·Huber_κ(w − u)(mid e) − Σ_{Neumann e} |e|·g·u(mid e)
//! ```
//!
//! is minimized in `u` alone by accelerated gradient descent with
//! adaptive restart; stress and plastic strain are then recovered per
//! triangle from the pointwise prox.

use crate::energy::{density_and_stress, prox_unchecked};
use crate::geom::{point_segment_distance, Vec2};
use crate::mesh::{BoundaryCondition, Domain, Mesh};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("{0}")]
    InvalidConfig(String),
    #[error("field has {got} entries, expected {expected}")]
    FieldSizeMismatch { expected: usize, got: usize },
    #[error("mesh boundary edge refers to segment {0}, which the domain does not have")]
    Inconsistent(usize),
    #[error("not converged at eps = {eps} after {iterations} iterations (scaled gradient {scaled_gradient:.3e})")]
    NotConverged {
        eps: f64,
        iterations: usize,
        scaled_gradient: f64,
        best: Box<SolveResult>,
    },
    #[error("no triangle farther than the margin from the boundary")]
    EmptyInterior,
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub eps_schedule: Vec<f64>,
    pub max_iters_per_eps: usize,
    /// Threshold on the scaled gradient norm (a discrete L² norm of the
    /// nodal residual density).
    pub grad_tol: f64,
    /// Relative energy decrease over [`ENERGY_WINDOW`] iterations.
    pub energy_tol: f64,
    /// Boundary smoothing width as a multiple of the current `ε`.
    pub kappa_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps_schedule: vec![1e-1, 1e-2, 1e-3, 1e-4],
            max_iters_per_eps: 20_000,
            grad_tol: 1e-7,
            energy_tol: 1e-10,
            kappa_scale: 1.0,
        }
    }
}

/// Window (in iterations) of the relative energy decrease test.
pub const ENERGY_WINDOW: usize = 50;

/// Energy is logged every this many iterations, plus the last one of each stage.
const HISTORY_STRIDE: usize = 10;

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if self.eps_schedule.is_empty() {
            return bad("eps_schedule must not be empty");
        }
        if self.eps_schedule.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("eps_schedule entries must be positive");
        }
        if self.eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps_schedule must be strictly decreasing");
        }
        if self.max_iters_per_eps == 0 {
            return bad("max_iters_per_eps must be positive");
        }
        if !(self.grad_tol > 0.0) || !(self.energy_tol > 0.0) || !(self.kappa_scale > 0.0) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub eps: f64,
    pub iteration: usize,
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageSummary {
    pub eps: f64,
    pub kappa: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub energy: f64,
    /// `energy + κ/2·|∂Ω_D|`: the Huber term shifted to majorize `|w − u|`.
    /// Pointwise non-decreasing in `ε`, so it is monotone along the schedule.
    pub energy_upper: f64,
    pub scaled_gradient: f64,
    pub converged: bool,
    #[serde(skip)]
    pub sigma: Vec<Vec2>,
}

/// Fields and history of one continuation run (or of an oracle sampled
/// onto a mesh, with empty history).
#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub u: Vec<f64>,
    pub sigma: Vec<Vec2>,
    pub p: Vec<Vec2>,
    pub p_norm: Vec<f64>,
    pub energy_history: Vec<EnergyRecord>,
    pub div_residual: f64,
    pub eps_final: f64,
    pub stages: Vec<StageSummary>,
}

impl SolveResult {
    /// Per-stage stress fields, in schedule order.
    pub fn sigma_history(&self) -> Vec<Vec<Vec2>> {
        self.stages.iter().map(|s| s.sigma.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct DirichletEdge {
    nodes: [usize; 2],
    length: f64,
    w_mid: f64,
}

#[derive(Clone, Copy, Debug)]
struct NeumannEdge {
    nodes: [usize; 2],
    length: f64,
    g: f64,
}

/// Precomputed geometry of a mesh + boundary data pair.
pub struct Discretization<'a> {
    mesh: &'a Mesh,
    areas: Vec<f64>,
    grads: Vec<[Vec2; 3]>,
    dirichlet: Vec<DirichletEdge>,
    neumann: Vec<NeumannEdge>,
    lumped_mass: Vec<f64>,
    dirichlet_length: f64,
    total_area: f64,
}

impl<'a> Discretization<'a> {
    pub fn new(mesh: &'a Mesh, domain: &Domain) -> Result<Self, SolverError> {
        let n_tri = mesh.n_triangles();
        let areas: Vec<f64> = (0..n_tri).map(|t| mesh.signed_area(t)).collect();
        let grads: Vec<[Vec2; 3]> = (0..n_tri).map(|t| mesh.hat_gradients(t)).collect();
        let mut lumped_mass = vec![0.0; mesh.n_nodes()];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            for &k in tri {
                lumped_mass[k] += areas[t] / 3.0;
            }
        }
        let mut dirichlet = Vec::new();
        let mut neumann = Vec::new();
        for e in &mesh.boundary_edges {
            let seg = domain.segments().get(e.segment).ok_or(SolverError::Inconsistent(e.segment))?;
            let (a, b) = (mesh.nodes[e.nodes[0]], mesh.nodes[e.nodes[1]]);
            let length = a.dist(b);
            let mid = (a + b) * 0.5;
            match seg.condition {
                BoundaryCondition::Dirichlet { .. } => dirichlet.push(DirichletEdge {
                    nodes: e.nodes,
                    length,
                    w_mid: seg.condition.value(mid).unwrap_or(0.0),
                }),
                BoundaryCondition::Neumann { g } => neumann.push(NeumannEdge { nodes: e.nodes, length, g }),
            }
        }
        let dirichlet_length = dirichlet.iter().map(|e| e.length).sum();
        let total_area = areas.iter().sum();
        Ok(Discretization { mesh, areas, grads, dirichlet, neumann, lumped_mass, dirichlet_length, total_area })
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    pub fn dirichlet_length(&self) -> f64 {
        self.dirichlet_length
    }

    fn check_len(&self, u: &[f64]) -> Result<(), SolverError> {
        if u.len() != self.mesh.n_nodes() {
            return Err(SolverError::FieldSizeMismatch { expected: self.mesh.n_nodes(), got: u.len() });
        }
        Ok(())
    }

    #[inline]
    fn tri_gradient(&self, t: usize, u: &[f64]) -> Vec2 {
        let [a, b, c] = self.mesh.triangles[t];
        let g = &self.grads[t];
        g[0] * u[a] + g[1] * u[b] + g[2] * u[c]
    }

    /// P1 gradient on every triangle.
    pub fn gradients(&self, u: &[f64]) -> Vec<Vec2> {
        (0..self.mesh.n_triangles()).map(|t| self.tri_gradient(t, u)).collect()
    }

    fn energy(&self, u: &[f64], eps: f64, kappa: f64) -> f64 {
        let interior: Vec<f64> = (0..self.mesh.n_triangles())
            .into_par_iter()
            .map(|t| self.areas[t] * density_and_stress(self.tri_gradient(t, u), eps).0)
            .collect();
        let mut e: f64 = interior.iter().sum();
        for d in &self.dirichlet {
            let s = d.w_mid - 0.5 * (u[d.nodes[0]] + u[d.nodes[1]]);
            e += d.length * huber(s, kappa).0;
        }
        for n in &self.neumann {
            e -= n.length * n.g * 0.5 * (u[n.nodes[0]] + u[n.nodes[1]]);
        }
        e
    }

    /// Energy and its gradient; `grad` is overwritten. Triangle
    /// contributions are computed in parallel and reduced in triangle order.
    fn energy_and_gradient(&self, u: &[f64], eps: f64, kappa: f64, work: &mut [(f64, Vec2)], grad: &mut [f64]) -> f64 {
        work.par_iter_mut().enumerate().for_each(|(t, slot)| {
            let (w, s) = density_and_stress(self.tri_gradient(t, u), eps);
            *slot = (self.areas[t] * w, s * self.areas[t]);
        });
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut e = 0.0;
        for (t, &(w, s)) in work.iter().enumerate() {
            e += w;
            let tri = self.mesh.triangles[t];
            let g = &self.grads[t];
            for k in 0..3 {
                grad[tri[k]] += s.dot(g[k]);
            }
        }
        for d in &self.dirichlet {
            let s = d.w_mid - 0.5 * (u[d.nodes[0]] + u[d.nodes[1]]);
            let (h, dh) = huber(s, kappa);
            e += d.length * h;
            grad[d.nodes[0]] -= 0.5 * d.length * dh;
            grad[d.nodes[1]] -= 0.5 * d.length * dh;
        }
        for n in &self.neumann {
            e -= n.length * n.g * 0.5 * (u[n.nodes[0]] + u[n.nodes[1]]);
            grad[n.nodes[0]] -= 0.5 * n.length * n.g;
            grad[n.nodes[1]] -= 0.5 * n.length * n.g;
        }
        e
    }

    fn scaled_gradient(&self, grad: &[f64]) -> f64 {
        let s: f64 = grad.iter().zip(&self.lumped_mass).map(|(g, m)| g * g / m).sum();
        (s / self.total_area).sqrt()
    }

    /// Diagonal of `K + B/κ`: P1 stiffness plus the quadratic-branch Hessian
    /// of the boundary Huber term. Used as a Jacobi scaling of the step.
    fn diagonal(&self, kappa: f64) -> Vec<f64> {
        let mut diag = vec![0.0; self.mesh.n_nodes()];
        for (t, tri) in self.mesh.triangles.iter().enumerate() {
            for k in 0..3 {
                diag[tri[k]] += self.areas[t] * self.grads[t][k].norm_sq();
            }
        }
        for d in &self.dirichlet {
            diag[d.nodes[0]] += 0.25 * d.length / kappa;
            diag[d.nodes[1]] += 0.25 * d.length / kappa;
        }
        diag
    }

    /// `(K + B/κ)·v`.
    fn apply_operator(&self, v: &[f64], kappa: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (t, tri) in self.mesh.triangles.iter().enumerate() {
            let g = self.tri_gradient(t, v) * self.areas[t];
            for k in 0..3 {
                out[tri[k]] += g.dot(self.grads[t][k]);
            }
        }
        for d in &self.dirichlet {
            let s = 0.25 * d.length / kappa * (v[d.nodes[0]] + v[d.nodes[1]]);
            out[d.nodes[0]] += s;
            out[d.nodes[1]] += s;
        }
    }

    /// Largest eigenvalue of `D^{-1/2}(K + B/κ)D^{-1/2}` by power iteration
    /// from a fixed pseudo-random start.
    fn scaled_operator_norm(&self, diag: &[f64], kappa: f64, iterations: usize) -> f64 {
        let n = self.mesh.n_nodes();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tmp = vec![0.0; n];
        let mut av = vec![0.0; n];
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            for i in 0..n {
                tmp[i] = v[i] / diag[i].sqrt();
            }
            self.apply_operator(&tmp, kappa, &mut av);
            for i in 0..n {
                av[i] /= diag[i].sqrt();
            }
            lambda = v.iter().zip(&av).map(|(a, b)| a * b).sum();
            std::mem::swap(&mut v, &mut av);
        }
        lambda
    }

    /// Affine least-squares fit of the Dirichlet data, sampled at edge midpoints.
    fn affine_initial_guess(&self) -> Vec<f64> {
        let mut ata = [[0.0; 3]; 3];
        let mut atb = [0.0; 3];
        for d in &self.dirichlet {
            let mid = (self.mesh.nodes[d.nodes[0]] + self.mesh.nodes[d.nodes[1]]) * 0.5;
            let row = [1.0, mid.x, mid.y];
            for i in 0..3 {
                atb[i] += d.length * row[i] * d.w_mid;
                for j in 0..3 {
                    ata[i][j] += d.length * row[i] * row[j];
                }
            }
        }
        let ridge = 1e-10 * (ata[0][0] + ata[1][1] + ata[2][2]).max(1e-300);
        for (i, r) in ata.iter_mut().enumerate() {
            r[i] += ridge;
        }
        let c = solve3(ata, atb).unwrap_or([0.0; 3]);
        self.mesh.nodes.iter().map(|p| c[0] + c[1] * p.x + c[2] * p.y).collect()
    }

    /// Stress, plastic strain and its magnitude per triangle at `eps`.
    pub fn recover_fields(&self, u: &[f64], eps: f64) -> (Vec<Vec2>, Vec<Vec2>, Vec<f64>) {
        let n = self.mesh.n_triangles();
        let mut sigma = Vec::with_capacity(n);
        let mut p = Vec::with_capacity(n);
        let mut p_norm = Vec::with_capacity(n);
        for t in 0..n {
            let g = self.tri_gradient(t, u);
            let inc = prox_unchecked(g, eps);
            sigma.push(g - inc.p);
            p.push(inc.p);
            p_norm.push(inc.magnitude);
        }
        (sigma, p, p_norm)
    }
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut x = [0.0; 3];
    for (k, xk) in x.iter_mut().enumerate() {
        let mut m = a;
        for i in 0..3 {
            m[i][k] = b[i];
        }
        *xk = det(m) / d;
    }
    Some(x)
}

/// `Huber_κ(s)` and its derivative.
#[inline]
pub fn huber(s: f64, kappa: f64) -> (f64, f64) {
    if s.abs() <= kappa {
        (0.5 * s * s / kappa, s / kappa)
    } else {
        (s.abs() - 0.5 * kappa, s.signum())
    }
}

/// The discrete relaxed energy of `u` at regularization `eps` and boundary width `kappa`.
pub fn discrete_energy(mesh: &Mesh, domain: &Domain, u: &[f64], eps: f64, kappa: f64) -> Result<f64, SolverError> {
    if !(kappa > 0.0) {
        return Err(SolverError::InvalidConfig("kappa must be positive".into()));
    }
    if !(eps >= 0.0) {
        return Err(SolverError::InvalidConfig("eps must be non-negative".into()));
    }
    let disc = Discretization::new(mesh, domain)?;
    disc.check_len(u)?;
    Ok(disc.energy(u, eps, kappa))
}

/// Runs the continuation from the affine fit of the Dirichlet data.
pub fn minimize(mesh: &Mesh, domain: &Domain, config: &SolverConfig) -> Result<SolveResult, SolverError> {
    let disc = Discretization::new(mesh, domain)?;
    let u0 = disc.affine_initial_guess();
    run(&disc, config, u0)
}

/// Runs the continuation from a caller-supplied initial displacement.
pub fn minimize_from(mesh: &Mesh, domain: &Domain, config: &SolverConfig, u0: Vec<f64>) -> Result<SolveResult, SolverError> {
    let disc = Discretization::new(mesh, domain)?;
    disc.check_len(&u0)?;
    run(&disc, config, u0)
}

fn run(disc: &Discretization<'_>, config: &SolverConfig, mut u: Vec<f64>) -> Result<SolveResult, SolverError> {
    config.validate()?;
    let n = disc.mesh.n_nodes();

    let mut history = Vec::new();
    let mut stages = Vec::new();
    let mut failure: Option<(f64, usize, f64)> = None;
    let mut work = vec![(0.0, Vec2::ZERO); disc.mesh.n_triangles()];
    let mut grad = vec![0.0; n];
    let mut y = u.clone();
    let mut x_prev = u.clone();

    for &eps in &config.eps_schedule {
        let kappa = config.kappa_scale * eps;
        let diag = disc.diagonal(kappa);
        let mut lip = 1.1 * disc.scaled_operator_norm(&diag, kappa, 20);
        let mut e_x = disc.energy(&u, eps, kappa);
        let mut window: std::collections::VecDeque<f64> = std::collections::VecDeque::with_capacity(ENERGY_WINDOW + 1);
        window.push_back(e_x);
        history.push(EnergyRecord { eps, iteration: 0, energy: e_x });
        y.copy_from_slice(&u);
        x_prev.copy_from_slice(&u);
        let mut theta = 1.0f64;
        let mut momentum = false;
        let mut restarts = 0;
        let mut converged = false;
        let mut scaled = f64::INFINITY;
        let mut iterations = 0;
        let mut candidate = vec![0.0; n];

        while iterations < config.max_iters_per_eps {
            iterations += 1;
            disc.energy_and_gradient(&y, eps, kappa, &mut work, &mut grad);
            scaled = disc.scaled_gradient(&grad);
            if !momentum && scaled <= config.grad_tol {
                converged = true;
                break;
            }
            let step = 1.0 / lip;
            for i in 0..n {
                candidate[i] = y[i] - step * grad[i] / diag[i];
            }
            let e_c = disc.energy(&candidate, eps, kappa);
            if e_c > e_x {
                if momentum {
                    // adaptive restart: drop the momentum, retry from x
                    restarts += 1;
                    momentum = false;
                    theta = 1.0;
                    y.copy_from_slice(&u);
                } else {
                    lip *= 2.0;
                }
                continue;
            }
            std::mem::swap(&mut x_prev, &mut u);
            u.copy_from_slice(&candidate);
            e_x = e_c;
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let beta = (theta - 1.0) / theta_next;
            theta = theta_next;
            for i in 0..n {
                y[i] = u[i] + beta * (u[i] - x_prev[i]);
            }
            momentum = beta > 0.0;
            if iterations % HISTORY_STRIDE == 0 {
                history.push(EnergyRecord { eps, iteration: iterations, energy: e_x });
            }
            window.push_back(e_x);
            if window.len() > ENERGY_WINDOW + 1 {
                window.pop_front();
            }
            if window.len() == ENERGY_WINDOW + 1 {
                let drop = window[0] - e_x;
                if drop <= config.energy_tol * e_x.abs().max(f64::MIN_POSITIVE) {
                    converged = true;
                    break;
                }
            }
        }
        if history.last().map(|r| r.iteration) != Some(iterations) {
            history.push(EnergyRecord { eps, iteration: iterations, energy: e_x });
        }
        let (sigma, _, _) = disc.recover_fields(&u, eps);
        stages.push(StageSummary {
            eps,
            kappa,
            iterations,
            restarts,
            energy: e_x,
            energy_upper: e_x + 0.5 * kappa * disc.dirichlet_length,
            scaled_gradient: scaled,
            converged,
            sigma,
        });
        if !converged && failure.is_none() {
            failure = Some((eps, iterations, scaled));
        }
    }

    let eps_final = *config.eps_schedule.last().expect("validated non-empty");
    let (sigma, p, p_norm) = disc.recover_fields(&u, eps_final);
    let div_residual = divergence_residual(disc.mesh, &sigma);
    let result = SolveResult { u, sigma, p, p_norm, energy_history: history, div_residual, eps_final, stages };
    match failure {
        None => Ok(result),
        Some((eps, iterations, scaled_gradient)) => {
            Err(SolverError::NotConverged { eps, iterations, scaled_gradient, best: Box::new(result) })
        }
    }
}

/// Scaled weak divergence: the largest `|Σ_T |T|·σ_T·∇φ_i| / (h·Σ_{T∋i} |T|)`
/// over interior nodes `i`.
pub fn divergence_residual(mesh: &Mesh, sigma: &[Vec2]) -> f64 {
    divergence_residual_excluding(mesh, sigma, &[])
}

/// As [`divergence_residual`], skipping nodes inside any of the given balls
/// (used around vortex apexes, where the field is singular).
pub fn divergence_residual_excluding(mesh: &Mesh, sigma: &[Vec2], exclude: &[(Vec2, f64)]) -> f64 {
    let n = mesh.n_nodes();
    let mut acc = vec![0.0; n];
    let mut patch = vec![0.0; n];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        let g = mesh.hat_gradients(t);
        for k in 0..3 {
            acc[tri[k]] += area * sigma[t].dot(g[k]);
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

/// Distance from each triangle centroid to the mesh boundary.
pub fn centroid_boundary_distance(mesh: &Mesh) -> Vec<f64> {
    let edges: Vec<(Vec2, Vec2)> = mesh
        .boundary_edges
        .iter()
        .map(|e| (mesh.nodes[e.nodes[0]], mesh.nodes[e.nodes[1]]))
        .collect();
    (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| {
            let c = mesh.centroid(t);
            edges.iter().map(|&(a, b)| point_segment_distance(c, a, b).0).fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Least-squares gradient of a piecewise-constant vector field, per
/// triangle, from its edge and vertex neighbours. Returns the Frobenius norm.
pub(crate) fn reconstructed_gradient_norms(mesh: &Mesh, field: &[Vec2], tris: &[usize]) -> Vec<f64> {
    let mut node_tris: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_nodes()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for &k in tri {
            node_tris[k].push(t);
        }
    }
    tris.iter()
        .map(|&t| {
            let c = mesh.centroid(t);
            let mut m = [[0.0; 2]; 2];
            let mut bx = Vec2::ZERO;
            let mut by = Vec2::ZERO;
            let mut seen: Vec<usize> = Vec::with_capacity(16);
            for &k in &mesh.triangles[t] {
                for &s in &node_tris[k] {
                    if s == t || seen.contains(&s) {
                        continue;
                    }
                    seen.push(s);
                    let d = mesh.centroid(s) - c;
                    let df = field[s] - field[t];
                    m[0][0] += d.x * d.x;
                    m[0][1] += d.x * d.y;
                    m[1][1] += d.y * d.y;
                    bx += d * df.x;
                    by += d * df.y;
                }
            }
            m[1][0] = m[0][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() < 1e-300 {
                return 0.0;
            }
            let solve = |b: Vec2| Vec2::new((m[1][1] * b.x - m[0][1] * b.y) / det, (m[0][0] * b.y - m[1][0] * b.x) / det);
            let gx = solve(bx);
            let gy = solve(by);
            (gx.norm_sq() + gy.norm_sq()).sqrt()
        })
        .collect()
}

/// Discrete `H¹` seminorm of each stress field of `sigma_history` over the
/// triangles farther than `margin` from the boundary.
pub fn h1_seminorm_interior(mesh: &Mesh, sigma_history: &[Vec<Vec2>], margin: f64) -> Result<Vec<f64>, SolverError> {
    if !(margin > 0.0) {
        return Err(SolverError::InvalidConfig("margin must be positive".into()));
    }
    if sigma_history.len() < 2 {
        return Err(SolverError::InvalidConfig("need at least two stages".into()));
    }
    for s in sigma_history {
        if s.len() != mesh.n_triangles() {
            return Err(SolverError::FieldSizeMismatch { expected: mesh.n_triangles(), got: s.len() });
        }
    }
    let dist = centroid_boundary_distance(mesh);
    let interior: Vec<usize> = (0..mesh.n_triangles()).filter(|&t| dist[t] > margin).collect();
    if interior.is_empty() {
        return Err(SolverError::EmptyInterior);
    }
    Ok(sigma_history
        .iter()
        .map(|sigma| {
            let norms = reconstructed_gradient_norms(mesh, sigma, &interior);
            interior
                .iter()
                .zip(norms)
                .map(|(&t, g)| mesh.signed_area(t) * g * g)
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Terms of the global flow-rule identity `|p|(Ω̄) = ∫ σ·(∇w − σ)` for
/// problems with a single affine Dirichlet datum on the whole boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowRuleBalance {
    pub plastic_mass: f64,
    pub boundary_mass: f64,
    pub work: f64,
}

impl FlowRuleBalance {
    pub fn defect(&self) -> f64 {
        (self.plastic_mass + self.boundary_mass - self.work).abs()
    }

    /// `defect / (1 + plastic_mass)`.
    pub fn relative_defect(&self) -> f64 {
        self.defect() / (1.0 + self.plastic_mass)
    }
}

pub fn flow_rule_balance(mesh: &Mesh, domain: &Domain, result: &SolveResult) -> Result<FlowRuleBalance, SolverError> {
    let mut grad_w: Option<Vec2> = None;
    for s in domain.segments() {
        let Some(g) = s.condition.gradient() else {
            return Err(SolverError::Unsupported("flow-rule balance needs a fully Dirichlet boundary".into()));
        };
        match grad_w {
            None => grad_w = Some(g),
            Some(prev) if prev == g => {}
            _ => return Err(SolverError::Unsupported("flow-rule balance needs one affine datum".into())),
        }
    }
    let grad_w = grad_w.unwrap_or(Vec2::ZERO);
    let disc = Discretization::new(mesh, domain)?;
    let mut plastic_mass = 0.0;
    let mut work = 0.0;
    for t in 0..mesh.n_triangles() {
        plastic_mass += disc.areas[t] * result.p_norm[t];
        work += disc.areas[t] * result.sigma[t].dot(grad_w - result.sigma[t]);
    }
    let boundary_mass = disc
        .dirichlet
        .iter()
        .map(|d| d.length * (d.w_mid - 0.5 * (result.u[d.nodes[0]] + result.u[d.nodes[1]])).abs())
        .sum();
    Ok(FlowRuleBalance { plastic_mass, boundary_mass, work })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{domains, triangulate};

    #[test]
    fn energy_examples() {
        let d = domains::unit_square_dirichlet(0.0, 0.0, 0.0);
        let m = triangulate(&d, 0.125).unwrap();
        let zero = vec![0.0; m.n_nodes()];
        assert_eq!(discrete_energy(&m, &d, &zero, 0.1, 0.1).unwrap(), 0.0);

        let d = domains::unit_square_dirichlet(0.0, 0.5, 0.0);
        let m = triangulate(&d, 0.125).unwrap();
        let u: Vec<f64> = m.nodes.iter().map(|p| 0.5 * p.x).collect();
        for eps in [0.0, 1e-3, 0.5] {
            assert!((discrete_energy(&m, &d, &u, eps, 1e-2).unwrap() - 0.125).abs() < 1e-12);
        }
        let d = domains::unit_square_dirichlet(0.0, 2.0, 0.0);
        let u: Vec<f64> = m.nodes.iter().map(|p| 2.0 * p.x).collect();
        assert!((discrete_energy(&m, &d, &u, 0.0, 1e-2).unwrap() - 1.5).abs() < 1e-12);
        assert!(matches!(
            discrete_energy(&m, &d, &u[1..], 0.0, 1e-2),
            Err(SolverError::FieldSizeMismatch { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = domains::trapezoid(1.0, 2.0, 1.2).unwrap();
        let m = triangulate(&d, 0.25).unwrap();
        let disc = Discretization::new(&m, &d).unwrap();
        let u: Vec<f64> = m.nodes.iter().map(|p| 1.7 * p.x - 0.3 * p.y * p.y + 0.2 * (3.0 * p.x).sin()).collect();
        let (eps, kappa) = (0.05, 0.3);
        let mut work = vec![(0.0, Vec2::ZERO); m.n_triangles()];
        let mut grad = vec![0.0; m.n_nodes()];
        let e = disc.energy_and_gradient(&u, eps, kappa, &mut work, &mut grad);
        assert!((e - disc.energy(&u, eps, kappa)).abs() < 1e-13);
        for i in 0..m.n_nodes() {
            let mut up = u.clone();
            let mut um = u.clone();
            up[i] += 1e-6;
            um[i] -= 1e-6;
            let fd = (disc.energy(&up, eps, kappa) - disc.energy(&um, eps, kappa)) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-6, "node {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn config_validation_messages() {
        let mut c = SolverConfig::default();
        assert!(c.validate().is_ok());
        c.eps_schedule = vec![1e-2, 1e-1];
        assert_eq!(c.validate().unwrap_err().to_string(), "eps_schedule must be strictly decreasing");
        c.eps_schedule = vec![1e-1, -1.0];
        assert!(c.validate().is_err());
        c = SolverConfig { grad_tol: 0.0, ..SolverConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn constant_stress_is_weakly_divergence_free() {
        let d = domains::trapezoid(1.0, 2.0, 1.2).unwrap();
        let m = triangulate(&d, 1.0 / 24.0).unwrap();
        let sigma = vec![Vec2::new(1.0, 0.0); m.n_triangles()];
        assert!(divergence_residual(&m, &sigma) <= 1e-12);
    }

    #[test]
    fn h1_of_constant_history_is_zero() {
        let d = domains::unit_square_dirichlet(0.0, 0.0, 0.0);
        let m = triangulate(&d, 1.0 / 16.0).unwrap();
        let s = vec![Vec2::new(0.3, -0.2); m.n_triangles()];
        let out = h1_seminorm_interior(&m, &[s.clone(), s.clone(), s], 0.1).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(
            h1_seminorm_interior(&m, &vec![vec![Vec2::ZERO; m.n_triangles()]; 2], 0.6),
            Err(SolverError::EmptyInterior)
        ));
    }

    #[test]
    fn h1_reconstruction_is_exact_for_affine_fields() {
        let d = domains::unit_square_dirichlet(0.0, 0.0, 0.0);
        let m = triangulate(&d, 1.0 / 16.0).unwrap();
        // σ = (x, 2y) has |Dσ|_F = √5 everywhere
        let s: Vec<Vec2> = (0..m.n_triangles()).map(|t| {
            let c = m.centroid(t);
            Vec2::new(c.x, 2.0 * c.y)
        }).collect();
        let out = h1_seminorm_interior(&m, &[s.clone(), s], 0.2).unwrap();
        let dist = centroid_boundary_distance(&m);
        let area: f64 = (0..m.n_triangles()).filter(|&t| dist[t] > 0.2).map(|t| m.signed_area(t)).sum();
        assert!((out[0] - (5.0 * area).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn huber_is_c1() {
        let k = 0.1;
        let (a, da) = huber(k, k);
        let (b, db) = huber(k + 1e-12, k);
        assert!((a - b).abs() < 1e-11 && (da - db).abs() < 1e-9);
        assert_eq!(huber(-3.0, k), (3.0 - 0.05, -1.0));
    }

    #[test]
    fn small_elastic_solve() {
        let d = domains::unit_square_dirichlet(0.1, 0.5, -0.2);
        let m = triangulate(&d, 1.0 / 8.0).unwrap();
        let r = minimize(&m, &d, &SolverConfig::default()).unwrap();
        for s in &r.sigma {
            assert!((s.x - 0.5).abs() < 1e-3 && (s.y + 0.2).abs() < 1e-3);
        }
        assert!(r.p_norm.iter().all(|&p| p == 0.0));
    }
}
