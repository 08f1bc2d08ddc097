//! Normal extremals of the time-optimal problem for a norm ψ on horizontal
//! velocities, and the equivalent second-order curvature equation.
//!
//! With `ℳ = λ_ξ + ½λ_z ξ^⊥` the Hamiltonian system reduces to
//! `ξ̇ = u`, `ż = ω(ξ, u)`, `ℳ̇ = λ_z u^⊥` with `ℳ = ∇ψ(u)` and `ψ*(ℳ) = 1`.

use serde::Serialize;
use thiserror::Error;

use crate::heis::{symplectic, HPoint, ParamCurve};
use crate::norm::Norm;
use crate::ode::{solve, OdeOptions, Problem, Stop};
use crate::vec2::{add, angle, cross, dot, norm, perp, scale, sub, V2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeodesicError {
    #[error("ψ*(ℳ₀) = {0}, expected 1")]
    NormalizationViolated(f64),
    #[error("ψ(ξ̇₀) = {0}, expected 1")]
    NotArclength(f64),
    #[error("could not invert ∇ψ at ℳ = {0:?}")]
    InversionFailed(V2),
    #[error("ψ has a flat piece at {0:?}: its Hessian is singular off the radial kernel")]
    HessianSingular(V2),
    #[error("ψ is crystalline; normal extremals need a C¹ strictly convex norm")]
    Crystalline,
    #[error("ψ is not C²: its Hessian blows up on some rays")]
    NotC2,
    #[error("integration failed at t = {0}")]
    IntegrationFailed(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct Extremal {
    pub t: Vec<f64>,
    pub points: Vec<HPoint>,
    /// `λ_ξ(t)`; `λ_z` is constant.
    pub lambda_xi: Vec<V2>,
    pub lambda_z: f64,
    pub control: Vec<V2>,
    pub m: Vec<V2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtremalChecks {
    /// `max |ψ*(ℳ) − 1|`.
    pub dual_normalization: f64,
    /// `max |ψ(u) − 1|`.
    pub arclength: f64,
    /// `max |⟨ℳ, u⟩ − 1|` (the maximized Hamiltonian).
    pub hamiltonian: f64,
    /// `max |ż − ω(ξ, u)|` by differencing the recorded states.
    pub horizontality: f64,
    /// `max |ℳ − ∇ψ(u)|`.
    pub gradient_identity: f64,
}

impl Extremal {
    pub fn projection(&self) -> ParamCurve {
        ParamCurve {
            t: self.t.clone(),
            xy: self.points.iter().map(|p| p.xi()).collect(),
            dxy: self.control.clone(),
            z: Some(self.points.iter().map(|p| p.z).collect()),
        }
    }

    pub fn checks(&self, psi: &Norm) -> ExtremalChecks {
        let dual = psi.dual().expect("dual of a valid norm");
        let mut out = ExtremalChecks { dual_normalization: 0.0, arclength: 0.0, hamiltonian: 0.0, horizontality: 0.0, gradient_identity: 0.0 };
        for k in 0..self.t.len() {
            let (m, u) = (self.m[k], self.control[k]);
            out.dual_normalization = out.dual_normalization.max((dual.eval(m) - 1.0).abs());
            out.arclength = out.arclength.max((psi.eval(u) - 1.0).abs());
            out.hamiltonian = out.hamiltonian.max((dot(m, u) - 1.0).abs());
            if let Ok(g) = psi.grad(u) {
                out.gradient_identity = out.gradient_identity.max(norm(sub(m, g)));
            }
            if k > 0 && k + 1 < self.t.len() {
                let (h1, h2) = (self.t[k] - self.t[k - 1], self.t[k + 1] - self.t[k]);
                let (a, b, c) = (self.points[k - 1], self.points[k], self.points[k + 1]);
                let dz = -h2 / (h1 * (h1 + h2)) * a.z + (h2 - h1) / (h1 * h2) * b.z + h1 / (h2 * (h1 + h2)) * c.z;
                out.horizontality = out.horizontality.max((dz - symplectic(b.xi(), u)).abs());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GeodesicOptions {
    pub ode: OdeOptions,
    /// Output nodes on `[0, T]`, endpoints included.
    pub samples: usize,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions { ode: OdeOptions { tol: 1e-12, h_init: 1e-3, h_max: 0.05, ..OdeOptions::default() }, samples: 2001 }
    }
}

fn check_smooth(psi: &Norm) -> Result<(), GeodesicError> {
    if psi.is_polygon() || !psi.gradient_kinks().is_empty() {
        return Err(GeodesicError::Crystalline);
    }
    Ok(())
}

fn sample_times(t_end: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (1..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect()
}

/// Integrates the Hamiltonian system in `ℳ` from `p₀` for time `T` (either
/// sign). After every accepted step `ℳ` is rescaled onto `ψ*(ℳ) = 1`.
///
/// The control is `u = ∇ψ*(ℳ)`, the maximizer of `⟨ℳ, ·⟩` on the unit ψ-ball.
pub fn normal_extremal(psi: &Norm, p0: HPoint, m0: V2, lambda_z: f64, t_end: f64, opts: GeodesicOptions) -> Result<Extremal, GeodesicError> {
    check_smooth(psi)?;
    let dual = psi.dual().map_err(|_| GeodesicError::Crystalline)?;
    let n0 = dual.eval(m0);
    if (n0 - 1.0).abs() > 1e-8 {
        return Err(GeodesicError::NormalizationViolated(n0));
    }
    let control = |m: V2| -> Option<V2> { dual.grad(m).ok().filter(|u| u[0].is_finite() && u[1].is_finite()) };
    if control(m0).is_none() {
        return Err(GeodesicError::InversionFailed(m0));
    }
    let mut rhs = |_t: f64, y: &[f64], d: &mut [f64]| -> bool {
        let Some(u) = control([y[3], y[4]]) else { return false };
        let xi = [y[0], y[1]];
        let up = perp(u);
        d[0] = u[0];
        d[1] = u[1];
        d[2] = symplectic(xi, u);
        d[3] = lambda_z * up[0];
        d[4] = lambda_z * up[1];
        true
    };
    let renormalize = |y: &mut [f64]| {
        let s = dual.eval([y[3], y[4]]);
        if s > 0.0 && s.is_finite() {
            y[3] /= s;
            y[4] /= s;
        }
    };
    let mut p = Problem { rhs: &mut rhs, events: vec![], project: Some(&renormalize) };
    let times = sample_times(t_end, opts.samples);
    let sol = solve(&mut p, 0.0, &[p0.x, p0.y, p0.z, m0[0], m0[1]], &times, opts.ode, false);
    if sol.stop != Stop::Finished {
        let (t, y) = sol.last();
        return Err(if sol.stop == Stop::RhsFailed { GeodesicError::InversionFailed([y[3], y[4]]) } else { GeodesicError::IntegrationFailed(*t) });
    }
    let mut ext = Extremal { t: sol.t.clone(), points: Vec::new(), lambda_xi: Vec::new(), lambda_z, control: Vec::new(), m: Vec::new() };
    for y in &sol.y {
        let m = [y[3], y[4]];
        let xi = [y[0], y[1]];
        let u = control(m).ok_or(GeodesicError::InversionFailed(m))?;
        ext.points.push(HPoint::new(y[0], y[1], y[2]));
        ext.lambda_xi.push(sub(m, scale(0.5 * lambda_z, perp(xi))));
        ext.control.push(u);
        ext.m.push(m);
    }
    Ok(ext)
}

/// Convenience: the extremal whose initial control is `u₀` (`ψ(u₀) = 1`).
pub fn normal_extremal_from_velocity(psi: &Norm, p0: HPoint, u0: V2, lambda_z: f64, t_end: f64, opts: GeodesicOptions) -> Result<Extremal, GeodesicError> {
    let m0 = psi.grad(u0).map_err(|_| GeodesicError::Crystalline)?;
    normal_extremal(psi, p0, m0, lambda_z, t_end, opts)
}

/// Solves `ℋψ(ξ̇)ξ̈ = λ₀ξ̇^⊥` on the unit ψ-circle.
///
/// `ℋψ(v)` has kernel `v`, so `ξ̈` is taken along the circle tangent
/// `T = ∇ψ(v)^⊥` and its length follows from the `v^⊥` component:
/// `ℋψ(v) = c·v̂^⊥v̂^⊥ᵀ` with `c = (g + g″)/|v|` from the angular profile.
/// The velocity is rescaled onto `ψ(v) = 1` after every step.
pub fn curvature_ode(psi: &Norm, xi0: V2, v0: V2, lambda0: f64, t_end: f64, opts: GeodesicOptions) -> Result<ParamCurve, GeodesicError> {
    check_smooth(psi)?;
    if lambda0 != 0.0 && !psi.hessian_kinks().is_empty() {
        return Err(GeodesicError::NotC2);
    }
    let s0 = psi.eval(v0);
    if (s0 - 1.0).abs() > 1e-8 {
        return Err(GeodesicError::NotArclength(s0));
    }
    let accel = |v: V2| -> Result<V2, GeodesicError> {
        if lambda0 == 0.0 {
            return Ok([0.0, 0.0]);
        }
        let th = angle(v);
        let pr = psi.profile(th);
        let r = norm(v);
        let c = (pr.g + pr.d2g) / r;
        let tangent = perp(psi.grad_unchecked(v));
        let vp = scale(1.0 / r, perp(v));
        let proj = c * dot(vp, tangent);
        if proj.abs() < 1e-12 {
            return Err(GeodesicError::HessianSingular(v));
        }
        // c·⟨v̂^⊥, T⟩·a·v̂^⊥ = λ₀·|v|·v̂^⊥.
        Ok(scale(lambda0 * r / proj, tangent))
    };
    accel(v0)?;
    let mut failure = None;
    let mut rhs = |_t: f64, y: &[f64], d: &mut [f64]| -> bool {
        let v = [y[2], y[3]];
        match accel(v) {
            Ok(a) => {
                d[0] = v[0];
                d[1] = v[1];
                d[2] = a[0];
                d[3] = a[1];
                d[4] = symplectic([y[0], y[1]], v);
                true
            }
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    };
    let renormalize = |y: &mut [f64]| {
        let s = psi.eval([y[2], y[3]]);
        if s > 0.0 {
            y[2] /= s;
            y[3] /= s;
        }
    };
    let mut p = Problem { rhs: &mut rhs, events: vec![], project: Some(&renormalize) };
    let times = sample_times(t_end, opts.samples);
    let sol = solve(&mut p, 0.0, &[xi0[0], xi0[1], v0[0], v0[1], 0.0], &times, opts.ode, false);
    drop(p);
    if sol.stop != Stop::Finished {
        return Err(failure.unwrap_or(GeodesicError::IntegrationFailed(*sol.last().0)));
    }
    Ok(ParamCurve {
        t: sol.t.clone(),
        xy: sol.y.iter().map(|y| [y[0], y[1]]).collect(),
        dxy: sol.y.iter().map(|y| [y[2], y[3]]).collect(),
        z: Some(sol.y.iter().map(|y| y[4]).collect()),
    })
}

/// Center `ξ₀` of the φ-circle traced by an extremal with `λ_z ≠ 0`:
/// `ℳ = λ_z(ξ^⊥ − ξ₀^⊥)`.
pub fn predicted_center(xi: V2, m: V2, lambda_z: f64) -> V2 {
    add(xi, scale(1.0 / lambda_z, perp(m)))
}

/// Largest pointwise distance between two sampled planar curves on the same
/// time grid.
pub fn pointwise_distance(a: &ParamCurve, b: &ParamCurve) -> f64 {
    a.xy.iter().zip(&b.xy).map(|(p, q)| norm(sub(*p, *q))).fold(0.0, f64::max)
}

/// Signed area swept by a closed planar polyline.
pub fn enclosed_area(pts: &[V2]) -> f64 {
    let n = pts.len();
    (0..n).map(|k| 0.5 * cross(pts[k], pts[(k + 1) % n])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::CircleParam;
    use crate::foliation::fit_phi_circle;
    use std::f64::consts::{PI, TAU};

    fn ellipse() -> Norm {
        Norm::ellipse(1.0, 0.5).unwrap()
    }

    fn daggers() -> Vec<(&'static str, Norm, Norm)> {
        [("euclidean", Norm::euclidean()), ("ellipse", ellipse()), ("l3", Norm::ellp(3.0).unwrap()), ("l4", Norm::ellp(4.0).unwrap())]
            .into_iter()
            .map(|(n, phi)| (n, phi.dagger().unwrap(), phi))
            .collect()
    }

    fn unit_m(psi: &Norm, th: f64) -> V2 {
        psi.dual().unwrap().unit_point(th)
    }

    #[test]
    fn euclidean_unit_circle_closes() {
        let psi = Norm::euclidean();
        let ext = normal_extremal(&psi, HPoint::new(0.0, 0.0, 0.0), [1.0, 0.0], 1.0, TAU, GeodesicOptions::default()).unwrap();
        let last = ext.points.last().unwrap();
        assert!(norm(last.xi()) < 1e-6, "{last:?}");
        // A unit circle through the origin encloses area π.
        assert!((last.z - PI).abs() < 1e-6 * PI, "{}", last.z);
        let fit = fit_phi_circle(&psi, &ext.projection().xy, 1.0);
        assert!(fit.max_deviation < 1e-8);
        let c = predicted_center([0.0, 0.0], [1.0, 0.0], 1.0);
        assert!(norm(sub(c, fit.center)) < 1e-8, "{c:?} {:?}", fit.center);
        let ch = ext.checks(&psi);
        assert!(ch.dual_normalization < 1e-10 && ch.arclength < 1e-7 && ch.horizontality < 1e-6, "{ch:?}");
    }

    #[test]
    fn zero_lambda_gives_lines() {
        for (_, psi, _) in daggers() {
            let m0 = unit_m(&psi, 0.7);
            let ext = normal_extremal(&psi, HPoint::new(0.3, -0.2, 1.0), m0, 0.0, 5.0, GeodesicOptions::default()).unwrap();
            let u0 = ext.control[0];
            for (k, p) in ext.points.iter().enumerate() {
                let want = add([0.3, -0.2], scale(ext.t[k], u0));
                assert!(norm(sub(p.xi(), want)) < 1e-12);
                assert!(norm(sub(ext.m[k], m0)) < 1e-14);
            }
            let line = curvature_ode(&psi, [0.3, -0.2], u0, 0.0, 5.0, GeodesicOptions::default()).unwrap();
            assert!(pointwise_distance(&line, &ext.projection()) < 1e-12);
        }
    }

    #[test]
    fn dagger_extremals_are_phi_circles() {
        for (name, psi, phi) in daggers() {
            for lz in [1.0f64, -2.0, 0.5] {
                let m0 = unit_m(&psi, 0.3);
                let t_end = 1.2 * psi.eval([1.0, 0.0]).max(1.0) * 8.0 / lz.abs();
                let ext = normal_extremal(&psi, HPoint::new(0.1, 0.2, 0.0), m0, lz, t_end, GeodesicOptions::default()).unwrap();
                let pts = ext.projection().xy;
                let fit = fit_phi_circle(&phi, &pts, 1.0 / lz.abs());
                assert!(fit.max_deviation < 1e-4, "{name} {lz} {fit:?}");
                let c = predicted_center([0.1, 0.2], m0, lz);
                let dev = pts.iter().map(|&p| (phi.eval(sub(p, c)) - 1.0 / lz.abs()).abs()).fold(0.0, f64::max);
                assert!(dev < 1e-8, "{name} {lz} {dev}");
                let ch = ext.checks(&psi);
                assert!(ch.arclength < 1e-7 && ch.dual_normalization < 1e-10 && ch.gradient_identity < 1e-7, "{name} {ch:?}");
            }
        }
    }

    #[test]
    fn z_gain_over_a_loop_is_disk_area() {
        for (name, psi, phi) in daggers() {
            let lz = 2.0;
            // ψ-length of the φ-circle of radius r is its φ†-perimeter: r·(2·Area(D_φ)).
            let area = CircleParam::euclid(&phi, 4096).disk_area();
            let r = 1.0 / lz;
            let period = 2.0 * area * r;
            let m0 = unit_m(&psi, 1.1);
            let ext = normal_extremal(&psi, HPoint::new(0.0, 0.0, 0.0), m0, lz, period, GeodesicOptions::default()).unwrap();
            let last = ext.points.last().unwrap();
            assert!(norm(last.xi()) < 1e-6, "{name} not closed: {last:?}");
            let want = area * r * r;
            assert!((last.z.abs() - want).abs() < 1e-5 * want, "{name} {} vs {want}", last.z);
            let poly = enclosed_area(&ext.projection().xy);
            assert!((poly - last.z).abs() < 1e-4 * want);
        }
    }

    #[test]
    fn integrators_agree() {
        let c2: Vec<(&str, Norm)> = vec![("euclidean", Norm::euclidean()), ("ellipse", ellipse().dagger().unwrap()), ("ellipse3", Norm::ellipse(1.0, 3.0).unwrap())];
        for (name, psi) in c2 {
            for lz in [1.0, -0.7] {
                let u0 = psi.unit_point(0.4);
                let opts = GeodesicOptions::default();
                let ext = normal_extremal_from_velocity(&psi, HPoint::new(0.2, 0.1, 0.0), u0, lz, 10.0, opts).unwrap();
                let curve = curvature_ode(&psi, [0.2, 0.1], u0, lz, 10.0, opts).unwrap();
                let d = pointwise_distance(&curve, &ext.projection());
                assert!(d < 1e-6, "{name} {lz}: {d}");
                let ar = curve.dxy.iter().map(|&v| (psi.eval(v) - 1.0).abs()).fold(0.0, f64::max);
                assert!(ar < 1e-7);
            }
        }
    }

    #[test]
    fn time_reversal_retraces() {
        for (name, psi, _) in daggers() {
            let opts = GeodesicOptions::default();
            let t_end = 3.0;
            let m0 = unit_m(&psi, 2.0);
            let fwd = normal_extremal(&psi, HPoint::new(0.0, 0.5, 0.0), m0, 1.3, t_end, opts).unwrap();
            let end = *fwd.points.last().unwrap();
            let back = normal_extremal(&psi, end, scale(-1.0, *fwd.m.last().unwrap()), -1.3, t_end, opts).unwrap();
            let n = fwd.points.len();
            for k in 0..n {
                let d = norm(sub(back.points[k].xi(), fwd.points[n - 1 - k].xi()));
                assert!(d < 1e-8, "{name} {k} {d}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let sq = Norm::linf();
        assert_eq!(normal_extremal(&sq, HPoint::new(0.0, 0.0, 0.0), [1.0, 0.0], 1.0, 1.0, GeodesicOptions::default()).unwrap_err(), GeodesicError::Crystalline);
        let e = Norm::euclidean();
        assert!(matches!(normal_extremal(&e, HPoint::new(0.0, 0.0, 0.0), [2.0, 0.0], 1.0, 1.0, GeodesicOptions::default()), Err(GeodesicError::NormalizationViolated(_))));
        assert!(matches!(curvature_ode(&e, [0.0, 0.0], [0.5, 0.0], 1.0, 1.0, GeodesicOptions::default()), Err(GeodesicError::NotArclength(_))));
        // (ℓ³)† is the rotated ℓ^{3/2} norm, whose Hessian is unbounded on the axes.
        let l3d = Norm::ellp(3.0).unwrap().dagger().unwrap();
        assert_eq!(curvature_ode(&l3d, [0.0, 0.0], l3d.unit_point(0.3), 1.0, 1.0, GeodesicOptions::default()).unwrap_err(), GeodesicError::NotC2);
        // ℓ⁴ has flat points on the axes, where its Hessian degenerates.
        let l4 = Norm::ellp(4.0).unwrap();
        assert!(matches!(curvature_ode(&l4, [0.0, 0.0], [1.0, 0.0], 1.0, 1.0, GeodesicOptions::default()), Err(GeodesicError::HessianSingular(_))));
    }

    #[test]
    fn euclidean_radius_half() {
        let e = Norm::euclidean();
        let c = curvature_ode(&e, [0.0, 0.0], [0.0, 1.0], 2.0, PI, GeodesicOptions::default()).unwrap();
        let fit = fit_phi_circle(&e, &c.xy, 0.5);
        assert!(fit.max_deviation < 1e-8, "{fit:?}");
        assert!(norm(*c.xy.last().unwrap()) < 1e-8);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn arclength_is_preserved(th in 0.0f64..TAU, lz in -3.0f64..3.0, p in 1.5f64..4.0) {
            let psi = Norm::ellp(p).unwrap().dagger().unwrap();
            let m0 = unit_m(&psi, th);
            let opts = GeodesicOptions { samples: 201, ..Default::default() };
            let ext = normal_extremal(&psi, HPoint::new(0.0, 0.0, 0.0), m0, lz, 4.0, opts).unwrap();
            let ch = ext.checks(&psi);
            proptest::prop_assert!(ch.arclength < 1e-7, "{:?}", ch);
            proptest::prop_assert!(ch.hamiltonian < 1e-7, "{:?}", ch);
        }
    }
}
