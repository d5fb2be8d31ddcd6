//! Pointwise plastic energy densities.
//!
//! `Ψ(q) = ½|q|² + I_{|q|≤1}(q)` is the elastic energy restricted to the
//! unit yield disk; its conjugate `Ψ*` is the Huber-like density of the
//! relaxed problem. The Perzyna regularization adds `(ε/2)|p|²` to the
//! dissipation `|p|`; minimizing out `p` in closed form gives the reduced
//! density [`w_eps`], which is what the solver integrates.

use crate::geom::Vec2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("regularization parameter must be non-negative, got {0}")]
    NegativeEps(f64),
}

/// A gradient `∇u` (or the argument `q` of `Ψ*`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gradient2(pub Vec2);

impl From<Vec2> for Gradient2 {
    fn from(v: Vec2) -> Self {
        Gradient2(v)
    }
}

/// Plastic strain `p` with its cached magnitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlasticIncrement {
    pub p: Vec2,
    pub magnitude: f64,
}

impl PlasticIncrement {
    pub const ZERO: PlasticIncrement = PlasticIncrement { p: Vec2::ZERO, magnitude: 0.0 };
}

fn check_eps(eps: f64) -> Result<(), EnergyError> {
    if eps >= 0.0 {
        Ok(())
    } else {
        Err(EnergyError::NegativeEps(eps))
    }
}

/// `Ψ*(q) = ½|q|²` inside the unit disk, `|q| − ½` outside.
pub fn psi_star(q: Gradient2) -> f64 {
    let r = q.0.norm();
    if r <= 1.0 {
        0.5 * r * r
    } else {
        r - 0.5
    }
}

/// `DΨ*(q)`: the identity inside the unit disk, radial projection outside.
pub fn d_psi_star(q: Gradient2) -> Vec2 {
    let r = q.0.norm();
    if r <= 1.0 {
        q.0
    } else {
        q.0 / r
    }
}

/// Minimizer over `p` of `½|g − p|² + |p| + (ε/2)|p|²`.
///
/// Radial shrinkage: `p = ((|g| − 1)₊ / (1 + ε))·g/|g|`.
pub fn prox_plastic(g: Gradient2, eps: f64) -> Result<PlasticIncrement, EnergyError> {
    check_eps(eps)?;
    Ok(prox_unchecked(g.0, eps))
}

#[inline]
pub(crate) fn prox_unchecked(g: Vec2, eps: f64) -> PlasticIncrement {
    let r = g.norm();
    if r <= 1.0 {
        return PlasticIncrement::ZERO;
    }
    let m = (r - 1.0) / (1.0 + eps);
    let p = g * (m / r);
    PlasticIncrement { p, magnitude: p.norm() }
}

/// Reduced Perzyna density `min_p ½|g − p|² + |p| + (ε/2)|p|²`.
pub fn w_eps(g: Gradient2, eps: f64) -> Result<f64, EnergyError> {
    check_eps(eps)?;
    Ok(density_and_stress(g.0, eps).0)
}

/// Stress `σ = g − p*` conjugate to `g`, with `|σ| = 1 + ε|p*|` on the
/// plastic branch.
pub fn stress_from_gradient(g: Gradient2, eps: f64) -> Result<Vec2, EnergyError> {
    check_eps(eps)?;
    Ok(density_and_stress(g.0, eps).1)
}

/// Density value and its gradient (the stress) in one evaluation.
///
/// With `r = |g| > 1` and `m = (r − 1)/(1 + ε)`, the stress magnitude is
/// `s = r − m` and the density is `½s² + m + (ε/2)m²`.
#[inline]
pub(crate) fn density_and_stress(g: Vec2, eps: f64) -> (f64, Vec2) {
    let r2 = g.norm_sq();
    if r2 <= 1.0 {
        return (0.5 * r2, g);
    }
    let r = r2.sqrt();
    let m = (r - 1.0) / (1.0 + eps);
    let s = r - m;
    (0.5 * s * s + m + 0.5 * eps * m * m, g * (s / r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force minimization of `½(r − t)² + t + (ε/2)t²` over `t ∈ [0, t_max]`.
    /// The minimizer of the 2D problem is radial, so this scan is exhaustive.
    fn radial_scan(r: f64, eps: f64, t_max: f64, n: usize) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=n {
            let t = t_max * i as f64 / n as f64;
            let v = 0.5 * (r - t).powi(2) + t + 0.5 * eps * t * t;
            if v < best.0 {
                best = (v, t);
            }
        }
        best
    }

    fn g(x: f64, y: f64) -> Gradient2 {
        Gradient2(Vec2::new(x, y))
    }

    #[test]
    fn psi_star_branches() {
        assert_eq!(psi_star(g(0.5, 0.0)), 0.125);
        assert_eq!(psi_star(g(1.0, 0.0)), 0.5);
        assert_eq!(psi_star(g(2.0, 0.0)), 1.5);
        assert!((psi_star(g(0.0, 1.0 + 1e-12)) - 0.5).abs() < 1e-11);
    }

    #[test]
    fn d_psi_star_branches() {
        assert_eq!(d_psi_star(g(0.3, -0.4)), Vec2::new(0.3, -0.4));
        let r = d_psi_star(g(3.0, 4.0));
        assert!((r.x - 0.6).abs() < 1e-15 && (r.y - 0.8).abs() < 1e-15);
    }

    #[test]
    fn d_psi_star_jacobian_by_central_differences() {
        let q = Vec2::new(2.0, 0.0);
        let step = 1e-6;
        let mut jac = [[0.0; 2]; 2];
        for (j, e) in [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)].into_iter().enumerate() {
            let d = (d_psi_star(Gradient2(q + e * step)) - d_psi_star(Gradient2(q - e * step))) / (2.0 * step);
            jac[0][j] = d.x;
            jac[1][j] = d.y;
        }
        // (1/|q|)·P_{q⊥} = diag(0, 0.5)
        let expected = [[0.0, 0.0], [0.0, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((jac[i][j] - expected[i][j]).abs() < 1e-5, "{jac:?}");
            }
        }
    }

    #[test]
    fn prox_examples_against_scan() {
        assert_eq!(prox_plastic(g(0.0, 0.0), 0.1).unwrap(), PlasticIncrement::ZERO);
        // frozen from radial_scan(2, 0, 3, 3e6) and radial_scan(3, 1, 3, 3e6)
        let (_, t) = radial_scan(2.0, 0.0, 3.0, 3_000_000);
        assert!((t - 1.0).abs() <= 1e-6);
        let p = prox_plastic(g(2.0, 0.0), 0.0).unwrap();
        assert!((p.p.x - 1.0).abs() < 1e-15 && p.p.y == 0.0);
        let (_, t) = radial_scan(3.0, 1.0, 3.0, 3_000_000);
        assert!((t - 1.0).abs() <= 1e-6);
        let p = prox_plastic(g(3.0, 0.0), 1.0).unwrap();
        assert!((p.p.x - 1.0).abs() < 1e-15);
    }

    #[test]
    fn w_eps_examples() {
        for eps in [0.0, 0.1, 1.0, 7.0] {
            assert_eq!(w_eps(g(0.5, 0.0), eps).unwrap(), 0.125);
        }
        assert_eq!(w_eps(g(2.0, 0.0), 0.0).unwrap(), 1.5);
        let (v, _) = radial_scan(2.0, 1.0, 3.0, 3_000_000);
        assert!((v - 1.75).abs() < 1e-9);
        assert!((w_eps(g(2.0, 0.0), 1.0).unwrap() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn stress_examples() {
        assert_eq!(stress_from_gradient(g(0.5, 0.0), 0.1).unwrap(), Vec2::new(0.5, 0.0));
        assert_eq!(stress_from_gradient(g(2.0, 0.0), 0.0).unwrap(), Vec2::new(1.0, 0.0));
        let s = stress_from_gradient(g(3.0, 0.0), 1.0).unwrap();
        assert!((s.x - 2.0).abs() < 1e-15 && s.y == 0.0);
        let p = prox_plastic(g(3.0, 0.0), 1.0).unwrap();
        assert!((s.norm() - (1.0 + 1.0 * p.magnitude)).abs() < 1e-15);
    }

    #[test]
    fn negative_eps_rejected() {
        assert_eq!(prox_plastic(g(1.0, 1.0), -1e-3), Err(EnergyError::NegativeEps(-1e-3)));
        assert!(w_eps(g(1.0, 1.0), -1.0).is_err());
        assert!(stress_from_gradient(g(1.0, 1.0), -1.0).is_err());
    }

    #[test]
    fn w_eps_monotone_in_eps_and_converges() {
        for r in [1.5, 2.0, 5.0] {
            let q = g(r * 0.6, r * 0.8);
            let mut prev = f64::INFINITY;
            for eps in [1.0, 1e-1, 1e-2, 1e-3, 1e-4] {
                let v = w_eps(q, eps).unwrap();
                assert!(v <= prev + 1e-15 || eps == 1.0);
                prev = v;
            }
            // w_eps decreases towards Ψ* as ε ↓ 0; the excess is O(ε)
            for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
                let excess = w_eps(q, eps).unwrap() - psi_star(q);
                assert!(excess >= -1e-15);
                assert!(excess <= eps * (r - 1.0).powi(2), "{excess}");
            }
        }
    }

    proptest! {
        #[test]
        fn prox_satisfies_subdifferential_relation(x in -10.0..10.0f64, y in -10.0..10.0f64, eps in 0.0..2.0f64) {
            let q = Vec2::new(x, y);
            let p = prox_plastic(Gradient2(q), eps).unwrap();
            let resid = q - p.p - p.p * eps;
            if p.magnitude > 0.0 {
                // s ∈ ∂|·|(p) means s = p/|p|
                let unit = p.p / p.magnitude;
                prop_assert!((resid - unit).norm() < 1e-12);
            } else {
                prop_assert!(resid.norm() <= 1.0 + 1e-12);
            }
            prop_assert!((p.magnitude - p.p.norm()).abs() <= 1e-12);
        }

        #[test]
        fn d_psi_star_is_one_lipschitz(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64, d in -5.0..5.0f64) {
            let q1 = Vec2::new(a, b);
            let q2 = Vec2::new(c, d);
            let lhs = (d_psi_star(Gradient2(q1)) - d_psi_star(Gradient2(q2))).norm();
            prop_assert!(lhs <= (q1 - q2).norm() + 1e-12);
        }

        #[test]
        fn envelope_identity(x in -6.0..6.0f64, y in -6.0..6.0f64, eps in prop::sample::select(vec![0.0, 1e-3, 1e-1, 1.0])) {
            let q = Vec2::new(x, y);
            let step = 1e-6;
            let fd = Vec2::new(
                (w_eps(g(x + step, y), eps).unwrap() - w_eps(g(x - step, y), eps).unwrap()) / (2.0 * step),
                (w_eps(g(x, y + step), eps).unwrap() - w_eps(g(x, y - step), eps).unwrap()) / (2.0 * step),
            );
            prop_assert!((fd - stress_from_gradient(Gradient2(q), eps).unwrap()).norm() <= 1e-4);
            if eps == 0.0 {
                prop_assert!((w_eps(Gradient2(q), 0.0).unwrap() - psi_star(Gradient2(q))).abs() < 1e-12);
            }
        }
    }
}
