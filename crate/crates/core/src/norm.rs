//! Planar norms: values, gradients, angular profiles, duals and rotated duals.
//!
//! Every norm is described by its angular profile `g(θ) = φ(cos θ, sin θ)`.
//! Gradients, Hessians and the geometry of the unit circle are derived from
//! `g`, `g'` and `g''`; closed-form kinds compute these exactly.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};
use thiserror::Error;

use crate::quad::{gl64, PeriodicSpline};
use crate::vec2::{angle, angle_dist, cross, dot, norm, perp, scale, unit, wrap_angle, V2};

/// Angular tolerance used to decide that a direction lies on a kink ray.
pub const KINK_TOL: f64 = 1e-9;

/// Number of angular samples used by tabulated norms.
pub const TABLE_SIZE: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormError {
    #[error("norm is not differentiable in direction {angle:.9} rad")]
    NondifferentiablePoint { angle: f64 },
    #[error("gradient requested at the origin")]
    OriginInput,
    #[error("degenerate polygon: {0}")]
    DegenerateInput(String),
    #[error("invalid norm parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot read norm input: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, NormError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    /// Smooth with strictly positive curvature of the unit circle.
    CInfPlus,
    /// Finitely many derivatives (`u32::MAX` marks C^∞ without positive curvature).
    Ck(u32),
    /// C² away from finitely many rays.
    PiecewiseC2,
    Crystalline,
}

impl std::fmt::Display for Smoothness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Smoothness::CInfPlus => write!(f, "C^inf_+"),
            Smoothness::Ck(u32::MAX) => write!(f, "C^inf"),
            Smoothness::Ck(k) => write!(f, "C^{k}"),
            Smoothness::PiecewiseC2 => write!(f, "piecewise-C^2"),
            Smoothness::Crystalline => write!(f, "crystalline"),
        }
    }
}

/// Value and first two angular derivatives of `θ ↦ φ(u(θ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub g: f64,
    pub dg: f64,
    pub d2g: f64,
}

#[derive(Debug, Clone)]
struct Polygon {
    /// Vertices of the raw (unscaled) unit ball, anticlockwise.
    verts: Vec<V2>,
    /// `duals[i]` is orthogonal to the edge `verts[i] - verts[i-1]`.
    duals: Vec<V2>,
}

#[derive(Debug, Clone)]
enum Repr {
    Euclidean,
    Ellipse { a: f64, b: f64 },
    Lp { p: f64 },
    Polygon(Polygon),
    Tabulated { spline: PeriodicSpline, origin: Option<(Norm, f64)> },
    Dual(Norm),
    Dagger { base: Norm, dual: Norm },
}

/// An immutable planar norm. Cloning is cheap.
#[derive(Debug, Clone)]
pub struct Norm {
    repr: Arc<Repr>,
    /// Multiplier applied to the raw representation (the normalization factor).
    scale: f64,
}

impl Norm {
    fn with_scale(repr: Repr, scale: f64) -> Norm {
        Norm { repr: Arc::new(repr), scale }
    }

    /// Builds a norm scaled so that `φ(1,0) = 1`.
    fn normalized(repr: Repr) -> Norm {
        let raw = Norm::with_scale(repr, 1.0);
        let c = raw.eval([1.0, 0.0]);
        Norm { repr: raw.repr, scale: 1.0 / c }
    }

    pub fn euclidean() -> Norm {
        Norm::with_scale(Repr::Euclidean, 1.0)
    }

    /// `√((x/a)² + (y/b)²)`, rescaled so that `φ(1,0) = 1`.
    pub fn ellipse(a: f64, b: f64) -> Result<Norm> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(NormError::InvalidParameter(format!("ellipse semi-axes must be positive, got {a}, {b}")));
        }
        Ok(Norm::normalized(Repr::Ellipse { a, b }))
    }

    pub fn ellp(p: f64) -> Result<Norm> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(NormError::InvalidParameter(format!("l^p needs 1 < p < inf, got {p}")));
        }
        Ok(Norm::with_scale(Repr::Lp { p }, 1.0))
    }

    /// Crystalline norm whose unit ball has the given vertices (anticlockwise,
    /// centrally symmetric, strictly convex). Rescaled so that `φ(1,0) = 1`.
    pub fn polygon(vertices: &[V2]) -> Result<Norm> {
        Ok(Norm::normalized(Repr::Polygon(Polygon::new(vertices)?)))
    }

    /// The ℓ∞ square with corners (±1, ±1).
    pub fn linf() -> Norm {
        Norm::polygon(&[[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]).expect("square is valid")
    }

    /// Norm given by `n` uniform samples of its angular profile on `[0, 2π)`,
    /// rescaled so that `φ(1,0) = 1`.
    pub fn tabulated(samples: Vec<f64>) -> Result<Norm> {
        let repr = tabulated_repr(samples, None)?;
        Ok(Norm::normalized(repr))
    }

    /// Rotational mollification of `base` followed by the ε-euclidean
    /// regularization `√(ψ_ε² + ε|ξ|²)`. The result is not renormalized.
    pub fn mollified(base: &Norm, eps: f64) -> Result<Norm> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(NormError::InvalidParameter(format!("mollifier width must lie in (0,1), got {eps}")));
        }
        let samples = mollified_profile(base, eps, TABLE_SIZE);
        let repr = tabulated_repr(samples, Some((base.clone(), eps)))?;
        Ok(Norm::with_scale(repr, 1.0))
    }

    /// The factor multiplying the raw representation (`1/φ_raw(1,0)` for
    /// normalized kinds).
    pub fn normalization_scale(&self) -> f64 {
        self.scale
    }

    pub fn kind_name(&self) -> &'static str {
        match &*self.repr {
            Repr::Euclidean => "euclidean",
            Repr::Ellipse { .. } => "ellipse",
            Repr::Lp { .. } => "ellp",
            Repr::Polygon(_) => "polygon",
            Repr::Tabulated { origin: Some(_), .. } => "mollified",
            Repr::Tabulated { .. } => "tabulated",
            Repr::Dual(_) => "dual",
            Repr::Dagger { .. } => "dagger",
        }
    }

    pub fn is_polygon(&self) -> bool {
        matches!(&*self.repr, Repr::Polygon(_))
    }

    /// Vertices of the unit ball, when the norm is crystalline.
    pub fn polygon_vertices(&self) -> Option<Vec<V2>> {
        match &*self.repr {
            Repr::Polygon(poly) => Some(poly.verts.iter().map(|&v| scale(1.0 / self.scale, v)).collect()),
            _ => None,
        }
    }

    /// Vertices of the dual unit ball, when the norm is crystalline.
    pub fn polygon_dual_vertices(&self) -> Option<Vec<V2>> {
        match &*self.repr {
            Repr::Polygon(poly) => Some(poly.duals.iter().map(|&w| scale(self.scale, w)).collect()),
            _ => None,
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match &*self.repr {
            Repr::Euclidean | Repr::Ellipse { .. } => Smoothness::CInfPlus,
            Repr::Lp { p } => lp_smoothness(*p),
            Repr::Polygon(_) => Smoothness::Crystalline,
            Repr::Tabulated { .. } => Smoothness::Ck(2),
            Repr::Dual(inner) => dual_smoothness(inner),
            Repr::Dagger { base, .. } => dual_smoothness(base),
        }
    }

    /// Smooth with positive curvature, as needed by the pole expansions.
    pub fn is_smooth_positive(&self) -> bool {
        self.smoothness() == Smoothness::CInfPlus
    }

    pub fn eval(&self, xi: V2) -> f64 {
        self.scale * self.raw_eval(xi)
    }

    fn raw_eval(&self, xi: V2) -> f64 {
        match &*self.repr {
            Repr::Euclidean => norm(xi),
            Repr::Ellipse { a, b } => (xi[0] / a).hypot(xi[1] / b),
            Repr::Lp { p } => lp_value(*p, xi),
            Repr::Polygon(poly) => poly.duals.iter().map(|&w| dot(w, xi)).fold(f64::NEG_INFINITY, f64::max),
            Repr::Tabulated { spline, .. } => {
                let r = norm(xi);
                if r == 0.0 {
                    0.0
                } else {
                    r * spline.eval3(angle(xi)).0
                }
            }
            Repr::Dual(inner) => inner.support(xi).0,
            Repr::Dagger { dual, .. } => dual.eval(perp(xi)),
        }
    }

    /// Angular profile at `θ`.
    pub fn profile(&self, theta: f64) -> Profile {
        let s = self.scale;
        let raw = match &*self.repr {
            Repr::Euclidean => Profile { g: 1.0, dg: 0.0, d2g: 0.0 },
            Repr::Ellipse { .. } | Repr::Lp { .. } => {
                let u = unit(theta);
                let (g, grad, hess) = self.closed_form_derivs(u);
                let up = perp(u);
                let dg = dot(grad, up);
                let d2g = quad_form(&hess, up) - g;
                Profile { g, dg, d2g }
            }
            Repr::Polygon(poly) => {
                let u = unit(theta);
                let w = poly.active_dual(u);
                let g = dot(w, u);
                Profile { g, dg: dot(w, perp(u)), d2g: -g }
            }
            Repr::Tabulated { spline, .. } => {
                let (g, dg, d2g) = spline.eval3(theta);
                Profile { g, dg, d2g }
            }
            Repr::Dual(inner) => {
                let u = unit(theta);
                let (g, p) = inner.support(u);
                let k = inner.circle_curvature(angle(p));
                let radius = if k > 0.0 { 1.0 / k } else { f64::INFINITY };
                Profile { g, dg: dot(p, perp(u)), d2g: radius - g }
            }
            Repr::Dagger { dual, .. } => dual.profile(theta + FRAC_PI_2),
        };
        Profile { g: s * raw.g, dg: s * raw.dg, d2g: s * raw.d2g }
    }

    /// Raw value, gradient and Hessian for the closed-form smooth kinks.
    fn closed_form_derivs(&self, xi: V2) -> (f64, V2, [[f64; 2]; 2]) {
        match &*self.repr {
            Repr::Ellipse { a, b } => {
                let (ia2, ib2) = (1.0 / (a * a), 1.0 / (b * b));
                let v = (xi[0] * xi[0] * ia2 + xi[1] * xi[1] * ib2).sqrt();
                let gr = [xi[0] * ia2 / v, xi[1] * ib2 / v];
                let h = [
                    [(ia2 - gr[0] * gr[0]) / v, -gr[0] * gr[1] / v],
                    [-gr[0] * gr[1] / v, (ib2 - gr[1] * gr[1]) / v],
                ];
                (v, gr, h)
            }
            Repr::Lp { p } => {
                let p = *p;
                let v = lp_value(p, xi);
                let (ax, ay) = (xi[0].abs() / v, xi[1].abs() / v);
                let gr = [xi[0].signum() * ax.powf(p - 1.0), xi[1].signum() * ay.powf(p - 1.0)];
                let c = (p - 1.0) / v;
                let h = [
                    [c * (ax.powf(p - 2.0) - gr[0] * gr[0]), -c * gr[0] * gr[1]],
                    [-c * gr[0] * gr[1], c * (ay.powf(p - 2.0) - gr[1] * gr[1])],
                ];
                (v, gr, h)
            }
            _ => unreachable!("closed-form derivatives requested for a non closed-form kind"),
        }
    }

    /// Gradient of the active smooth piece, without the kink test.
    pub fn grad_unchecked(&self, xi: V2) -> V2 {
        match &*self.repr {
            Repr::Euclidean => scale(1.0 / norm(xi), xi),
            Repr::Ellipse { .. } | Repr::Lp { .. } => scale(self.scale, self.closed_form_derivs(xi).1),
            Repr::Polygon(poly) => scale(self.scale, poly.active_dual(xi)),
            Repr::Dual(inner) => scale(self.scale, inner.support(xi).1),
            _ => {
                let th = angle(xi);
                let pr = self.profile(th);
                let u = unit(th);
                [pr.g * u[0] - pr.dg * u[1], pr.g * u[1] + pr.dg * u[0]]
            }
        }
    }

    /// `∇φ(ξ)`; refuses the origin and kink rays.
    pub fn grad(&self, xi: V2) -> Result<V2> {
        if xi == [0.0, 0.0] {
            return Err(NormError::OriginInput);
        }
        let th = angle(xi);
        if on_kink(th, &self.gradient_kinks()) {
            return Err(NormError::NondifferentiablePoint { angle: wrap_angle(th) });
        }
        Ok(self.grad_unchecked(xi))
    }

    /// Hessian `(g + g'')/|ξ| · u^⊥ u^⊥ᵀ`; refuses rays where it is undefined.
    pub fn hessian(&self, xi: V2) -> Result<[[f64; 2]; 2]> {
        if xi == [0.0, 0.0] {
            return Err(NormError::OriginInput);
        }
        let th = angle(xi);
        if on_kink(th, &self.gradient_kinks()) || on_kink(th, &self.hessian_kinks()) {
            return Err(NormError::NondifferentiablePoint { angle: wrap_angle(th) });
        }
        if let Repr::Ellipse { .. } | Repr::Lp { .. } = &*self.repr {
            let h = self.closed_form_derivs(xi).2;
            return Ok([[self.scale * h[0][0], self.scale * h[0][1]], [self.scale * h[1][0], self.scale * h[1][1]]]);
        }
        let pr = self.profile(th);
        let c = (pr.g + pr.d2g) / norm(xi);
        let up = perp(unit(th));
        Ok([[c * up[0] * up[0], c * up[0] * up[1]], [c * up[1] * up[0], c * up[1] * up[1]]])
    }

    /// Directions (angles in `[0, 2π)`) where the gradient jumps.
    pub fn gradient_kinks(&self) -> Vec<f64> {
        match &*self.repr {
            Repr::Polygon(poly) => poly.verts.iter().map(|&v| wrap_angle(angle(v))).collect(),
            Repr::Dual(inner) => match &*inner.repr {
                Repr::Polygon(poly) => poly.duals.iter().map(|&w| wrap_angle(angle(w))).collect(),
                _ => Vec::new(),
            },
            Repr::Dagger { dual, .. } => dual.gradient_kinks().into_iter().map(|t| wrap_angle(t - FRAC_PI_2)).collect(),
            _ => Vec::new(),
        }
    }

    /// Directions where the gradient is continuous but the Hessian blows up
    /// (the unit circle has infinite curvature at the corresponding point).
    pub fn hessian_kinks(&self) -> Vec<f64> {
        match &*self.repr {
            Repr::Lp { p } if *p < 2.0 => axes(),
            Repr::Polygon(_) => self.gradient_kinks(),
            Repr::Dual(inner) => inner.normal_angles(&inner.flat_curvature_angles()),
            Repr::Dagger { dual, .. } => dual.hessian_kinks().into_iter().map(|t| wrap_angle(t - FRAC_PI_2)).collect(),
            _ => Vec::new(),
        }
    }

    /// Point angles where the curvature of the unit circle vanishes (isolated
    /// points only; polygon edges are not reported).
    fn flat_curvature_angles(&self) -> Vec<f64> {
        match &*self.repr {
            Repr::Lp { p } if *p > 2.0 => axes(),
            Repr::Dual(inner) => inner.normal_angles(&inner.hessian_kinks()),
            Repr::Dagger { dual, .. } => {
                dual.flat_curvature_angles().into_iter().map(|t| wrap_angle(t - FRAC_PI_2)).collect()
            }
            _ => Vec::new(),
        }
    }

    fn normal_angles(&self, point_angles: &[f64]) -> Vec<f64> {
        point_angles.iter().map(|&t| wrap_angle(angle(self.grad_unchecked(unit(t))))).collect()
    }

    /// All angles where the profile fails to be C².
    pub fn profile_breaks(&self) -> Vec<f64> {
        let mut v = self.gradient_kinks();
        for t in self.hessian_kinks() {
            if !on_kink(t, &v) {
                v.push(t);
            }
        }
        v.sort_by(f64::total_cmp);
        v
    }

    /// Point of the unit circle in direction `θ`.
    pub fn unit_point(&self, theta: f64) -> V2 {
        let u = unit(theta);
        scale(1.0 / self.eval(u), u)
    }

    /// Derivative in `θ` of [`Norm::unit_point`].
    pub fn unit_tangent(&self, theta: f64) -> V2 {
        let pr = self.profile(theta);
        tangent_from_profile(theta, pr)
    }

    /// Curvature of the unit circle at the point in direction `θ`.
    pub fn circle_curvature(&self, theta: f64) -> f64 {
        let pr = self.profile(theta);
        curvature_from_profile(pr)
    }

    /// `(φ*(w), ∇φ*(w))`: the support value of the unit ball and the point of
    /// the unit circle where it is attained.
    pub fn support(&self, w: V2) -> (f64, V2) {
        if w == [0.0, 0.0] {
            return (0.0, [0.0, 0.0]);
        }
        match &*self.repr {
            Repr::Euclidean => {
                let r = norm(w);
                (r, scale(1.0 / r, w))
            }
            Repr::Polygon(poly) => {
                let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
                for &v in &poly.verts {
                    let v = scale(1.0 / self.scale, v);
                    let s = dot(w, v);
                    if s > best.0 {
                        best = (s, v);
                    }
                }
                best
            }
            Repr::Dual(inner) => {
                // The unit ball of φ* has support function φ** = φ.
                let p = inner.grad_unchecked(w);
                (inner.eval(w) / self.scale, scale(1.0 / self.scale, p))
            }
            _ => {
                let th = self.normal_root(w);
                let p = self.unit_point(th);
                (dot(w, p), p)
            }
        }
    }

    /// Solves `ν(θ) = angle(w)` where `ν(θ) = θ + atan2(g', g)` is the angle of
    /// the outer normal of the unit circle at the point in direction `θ`.
    /// `ν` is increasing and `|ν(θ) − θ| < π/2`, which gives a bracket.
    fn normal_root(&self, w: V2) -> f64 {
        let target = angle(w);
        // The residual is the signed angle from `w` to the normal, taken from
        // cross and dot products so that flat points keep full precision.
        let resid = |th: f64| -> (f64, f64) {
            let nrm = self.grad_unchecked(unit(th));
            let f = cross(w, nrm).atan2(dot(w, nrm));
            let pr = self.profile(th);
            let df = pr.g * (pr.g + pr.d2g) / (pr.g * pr.g + pr.dg * pr.dg);
            (f, df)
        };
        let (mut lo, mut hi) = (target - FRAC_PI_2, target + FRAC_PI_2);
        let mut th = target;
        for _ in 0..200 {
            let (f, df) = resid(th);
            if f == 0.0 {
                return th;
            }
            if f < 0.0 {
                lo = th;
            } else {
                hi = th;
            }
            let mut next = th - f / df;
            if !next.is_finite() || next <= lo || next >= hi {
                next = 0.5 * (lo + hi);
            }
            if (next - th).abs() < 1e-15 || hi - lo < 1e-15 {
                return next;
            }
            th = next;
        }
        th
    }

    /// The dual norm φ*. Closed-form kinds map to closed forms
    /// (`(s·ℓᵖ)* = s⁻¹·ℓ^q`, ellipses to ellipses, polygons to polygons).
    pub fn dual(&self) -> Result<Norm> {
        match &*self.repr {
            Repr::Euclidean => Ok(Norm::with_scale(Repr::Dual(self.clone()), 1.0)),
            Repr::Lp { p } => Ok(Norm::with_scale(Repr::Lp { p: p / (p - 1.0) }, 1.0 / self.scale)),
            Repr::Ellipse { a, b } => Ok(Norm::with_scale(Repr::Ellipse { a: 1.0 / a, b: 1.0 / b }, 1.0 / self.scale)),
            Repr::Polygon(_) => {
                let duals = self.polygon_dual_vertices().unwrap();
                Ok(Norm::with_scale(Repr::Polygon(Polygon::new(&duals)?), 1.0))
            }
            // (φ†)*(w) = φ(w^⊥) = (φ*)†(w).
            Repr::Dagger { base, dual } if self.scale == 1.0 => Ok(Norm::with_scale(Repr::Dagger { base: dual.clone(), dual: base.clone() }, 1.0)),
            _ => Ok(Norm::with_scale(Repr::Dual(self.clone()), 1.0)),
        }
    }

    /// φ* through the support-function evaluator, whatever the kind.
    pub fn dual_generic(&self) -> Norm {
        Norm::with_scale(Repr::Dual(self.clone()), 1.0)
    }

    /// The rotated dual `φ†(ξ) = φ*(ξ^⊥)`.
    pub fn dagger(&self) -> Result<Norm> {
        let dual = self.dual()?;
        if let Some(vs) = dual.polygon_vertices() {
            // {φ*(ξ^⊥) ≤ 1} is the dual ball turned a quarter clockwise.
            let rot: Vec<V2> = vs.iter().map(|v| [v[1], -v[0]]).collect();
            return Ok(Norm::with_scale(Repr::Polygon(Polygon::new(&rot)?), 1.0));
        }
        Ok(Norm::with_scale(Repr::Dagger { base: self.clone(), dual }, 1.0))
    }

    /// `∇φ*(w)`, refusing the origin and the kink rays of φ*.
    pub fn grad_dual(&self, w: V2) -> Result<V2> {
        if w == [0.0, 0.0] {
            return Err(NormError::OriginInput);
        }
        let th = angle(w);
        if let Some(duals) = self.polygon_dual_vertices() {
            let kinks: Vec<f64> = duals.iter().map(|&d| wrap_angle(angle(d))).collect();
            if on_kink(th, &kinks) {
                return Err(NormError::NondifferentiablePoint { angle: wrap_angle(th) });
            }
        }
        Ok(self.support(w).1)
    }

    /// JSON descriptor `{kind, params, normalization_scale}`.
    pub fn descriptor(&self) -> Value {
        let params = match &*self.repr {
            Repr::Euclidean => json!({}),
            Repr::Ellipse { a, b } => json!({ "a": a, "b": b }),
            Repr::Lp { p } => json!({ "p": p }),
            Repr::Polygon(poly) => json!({ "vertices": poly.verts }),
            Repr::Tabulated { origin: Some((base, eps)), .. } => json!({ "base": base.descriptor(), "eps": eps }),
            Repr::Tabulated { spline, .. } => json!({ "samples": spline.samples() }),
            Repr::Dual(inner) => json!({ "base": inner.descriptor() }),
            Repr::Dagger { base, .. } => json!({ "base": base.descriptor() }),
        };
        json!({ "kind": self.kind_name(), "params": params, "normalization_scale": self.scale })
    }

    pub fn from_descriptor(v: &Value) -> Result<Norm> {
        let bad = |m: &str| NormError::InvalidParameter(format!("norm descriptor: {m}"));
        let kind = v.get("kind").and_then(Value::as_str).ok_or_else(|| bad("missing kind"))?;
        let params = v.get("params").cloned().unwrap_or(json!({}));
        let num = |k: &str| params.get(k).and_then(Value::as_f64).ok_or_else(|| bad(&format!("missing {k}")));
        let base = || Norm::from_descriptor(params.get("base").ok_or_else(|| bad("missing base"))?);
        let norm = match kind {
            "euclidean" => Norm::euclidean(),
            "ellipse" => Norm::ellipse(num("a")?, num("b")?)?,
            "ellp" => Norm::ellp(num("p")?)?,
            "polygon" => {
                let verts: Vec<V2> = serde_json::from_value(params.get("vertices").cloned().unwrap_or(Value::Null))
                    .map_err(|e| bad(&e.to_string()))?;
                Norm::polygon(&verts)?
            }
            "tabulated" => {
                let samples: Vec<f64> = serde_json::from_value(params.get("samples").cloned().unwrap_or(Value::Null))
                    .map_err(|e| bad(&e.to_string()))?;
                Norm::tabulated(samples)?
            }
            "mollified" => Norm::mollified(&base()?, num("eps")?)?,
            "dual" => base()?.dual()?,
            "dagger" => base()?.dagger()?,
            other => return Err(bad(&format!("unknown kind {other}"))),
        };
        match v.get("normalization_scale").and_then(Value::as_f64) {
            Some(s) if s > 0.0 => Ok(Norm { repr: norm.repr, scale: s }),
            _ => Ok(norm),
        }
    }

    /// Parses a command-line norm spec:
    /// `euclidean | ellp:<p> | ellipse:<a>,<b> | polygon:<csv file> | linf |
    /// mollified:<base>,<eps> | dual:<base> | dagger:<base>`.
    pub fn parse_spec(spec: &str) -> Result<Norm> {
        let spec = spec.trim();
        let bad = |m: String| NormError::InvalidParameter(m);
        let parse_f = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("not a number: {s:?}")));
        if spec == "euclidean" {
            return Ok(Norm::euclidean());
        }
        if spec == "linf" {
            return Ok(Norm::linf());
        }
        let (head, rest) = spec.split_once(':').ok_or_else(|| bad(format!("unknown norm {spec:?}")))?;
        match head {
            "ellp" => Norm::ellp(parse_f(rest)?),
            "ellipse" => {
                let (a, b) = rest.split_once(',').ok_or_else(|| bad("ellipse needs <a>,<b>".into()))?;
                Norm::ellipse(parse_f(a)?, parse_f(b)?)
            }
            "polygon" => Norm::polygon(&read_polygon_csv(Path::new(rest))?),
            "mollified" => {
                let (base, eps) = rest.rsplit_once(',').ok_or_else(|| bad("mollified needs <base>,<eps>".into()))?;
                Norm::mollified(&Norm::parse_spec(base)?, parse_f(eps)?)
            }
            "dual" => Norm::parse_spec(rest)?.dual(),
            "dagger" => Norm::parse_spec(rest)?.dagger(),
            _ => Err(bad(format!("unknown norm {spec:?}"))),
        }
    }
}

/// Reads polygon vertices from CSV rows `x,y` (blank lines and `#` comments
/// skipped; a non-numeric first row is treated as a header).
pub fn read_polygon_csv(path: &Path) -> Result<Vec<V2>> {
    let text = std::fs::read_to_string(path).map_err(|e| NormError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split(',').map(|s| s.trim().parse::<f64>());
        match (it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y))) => out.push([x, y]),
            _ if i == 0 && out.is_empty() => continue,
            _ => return Err(NormError::Io(format!("{}:{}: expected `x,y`", path.display(), i + 1))),
        }
    }
    Ok(out)
}

impl Polygon {
    fn new(vertices: &[V2]) -> Result<Polygon> {
        let n = vertices.len();
        if n < 4 || n % 2 != 0 {
            return Err(NormError::DegenerateInput(format!("need an even number >= 4 of vertices, got {n}")));
        }
        let size = vertices.iter().map(|&v| norm(v)).fold(0.0, f64::max);
        if !(size > 0.0 && size.is_finite()) {
            return Err(NormError::DegenerateInput("vertices must be finite and not all zero".into()));
        }
        let half = n / 2;
        let mut verts = vertices.to_vec();
        for i in 0..half {
            let (a, b) = (verts[i], verts[i + half]);
            if norm([a[0] + b[0], a[1] + b[1]]) > 1e-12 * size {
                return Err(NormError::DegenerateInput(format!("vertex {} is not opposite vertex {}", i + half, i)));
            }
            verts[i + half] = [-a[0], -a[1]];
        }
        for i in 0..n {
            let prev = verts[(i + n - 1) % n];
            let cur = verts[i];
            let next = verts[(i + 1) % n];
            let turn = cross([cur[0] - prev[0], cur[1] - prev[1]], [next[0] - cur[0], next[1] - cur[1]]);
            if turn <= 1e-14 * size * size {
                return Err(NormError::DegenerateInput(format!(
                    "vertices must be strictly convex and anticlockwise (fails at vertex {i})"
                )));
            }
        }
        let mut duals = Vec::with_capacity(n);
        for i in 0..n {
            let a = verts[(i + n - 1) % n];
            let b = verts[i];
            let det = cross(a, b);
            if det.abs() <= 1e-14 * size * size {
                return Err(NormError::DegenerateInput(format!("edge {i} passes through the origin")));
            }
            duals.push([(b[1] - a[1]) / det, (a[0] - b[0]) / det]);
        }
        Ok(Polygon { verts, duals })
    }

    fn active_dual(&self, xi: V2) -> V2 {
        let mut best = (f64::NEG_INFINITY, self.duals[0]);
        for &w in &self.duals {
            let s = dot(w, xi);
            if s > best.0 {
                best = (s, w);
            }
        }
        best.1
    }
}

fn tabulated_repr(samples: Vec<f64>, origin: Option<(Norm, f64)>) -> Result<Repr> {
    if samples.len() < 16 {
        return Err(NormError::InvalidParameter("tabulated norm needs at least 16 samples".into()));
    }
    if samples.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(NormError::InvalidParameter("tabulated profile must be positive".into()));
    }
    let n = samples.len();
    if n % 2 == 0 {
        let half = n / 2;
        let asym = (0..half).map(|i| (samples[i] - samples[i + half]).abs()).fold(0.0, f64::max);
        if asym > 1e-10 * samples[0] {
            return Err(NormError::InvalidParameter("tabulated profile must be even (φ(−ξ) = φ(ξ))".into()));
        }
    }
    Ok(Repr::Tabulated { spline: PeriodicSpline::new(TAU, samples), origin })
}

/// Profile of `√(ψ_ε² + ε)` where `ψ_ε = ρ_ε * g` is the rotational
/// convolution with the bump `ρ_ε(t) ∝ exp(−1/(1 − (t/(επ))²))` on `|t| < επ`.
fn mollified_profile(base: &Norm, eps: f64, n: usize) -> Vec<f64> {
    let width = eps * PI;
    let rule = gl64();
    let bump = |t: f64| {
        let s = t / width;
        if s.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - s * s)).exp()
        }
    };
    let mass = rule.integrate(-width, width, bump);
    let breaks = base.profile_breaks();
    (0..n)
        .map(|k| {
            let theta = TAU * k as f64 / n as f64;
            // Split the support at kinks of t ↦ g(θ + t) so each GL piece is smooth.
            let mut cuts = vec![-width, width];
            for &b in &breaks {
                for shift in [-TAU, 0.0, TAU] {
                    let t = b + shift - theta;
                    if t > -width && t < width {
                        cuts.push(t);
                    }
                }
            }
            cuts.sort_by(f64::total_cmp);
            let mut psi = 0.0;
            for w in cuts.windows(2) {
                if w[1] - w[0] > 1e-15 {
                    psi += rule.integrate(w[0], w[1], |t| bump(t) * base.eval(unit(theta + t)));
                }
            }
            psi /= mass;
            (psi * psi + eps).sqrt()
        })
        .collect()
}

fn lp_value(p: f64, xi: V2) -> f64 {
    let (ax, ay) = (xi[0].abs(), xi[1].abs());
    let m = ax.max(ay);
    if m == 0.0 {
        return 0.0;
    }
    let r = ax.min(ay) / m;
    m * (1.0 + r.powf(p)).powf(1.0 / p)
}

fn lp_smoothness(p: f64) -> Smoothness {
    if p == 2.0 {
        Smoothness::CInfPlus
    } else if p < 2.0 {
        // C¹, and smooth away from the axes where the Hessian blows up.
        Smoothness::PiecewiseC2
    } else if p.fract() == 0.0 && (p as u64) % 2 == 0 {
        Smoothness::Ck(u32::MAX)
    } else {
        Smoothness::Ck(p.ceil() as u32 - 1)
    }
}

fn dual_smoothness(inner: &Norm) -> Smoothness {
    match inner.smoothness() {
        Smoothness::CInfPlus => Smoothness::CInfPlus,
        Smoothness::Crystalline => Smoothness::Crystalline,
        _ if !inner.flat_curvature_angles().is_empty() => Smoothness::PiecewiseC2,
        _ => Smoothness::Ck(2),
    }
}

fn axes() -> Vec<f64> {
    vec![0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]
}

fn on_kink(theta: f64, kinks: &[f64]) -> bool {
    kinks.iter().any(|&k| angle_dist(theta, k) < KINK_TOL)
}

fn quad_form(h: &[[f64; 2]; 2], v: V2) -> f64 {
    h[0][0] * v[0] * v[0] + (h[0][1] + h[1][0]) * v[0] * v[1] + h[1][1] * v[1] * v[1]
}

/// `d/dθ (u/g) = u^⊥/g − u g'/g²`.
pub fn tangent_from_profile(theta: f64, pr: Profile) -> V2 {
    let u = unit(theta);
    let up = perp(u);
    let ig = 1.0 / pr.g;
    [up[0] * ig - u[0] * pr.dg * ig * ig, up[1] * ig - u[1] * pr.dg * ig * ig]
}

/// Curvature of the polar curve `r = 1/g(θ)`.
pub fn curvature_from_profile(pr: Profile) -> f64 {
    (pr.g + pr.d2g) * pr.g.powi(3) / (pr.g * pr.g + pr.dg * pr.dg).powf(1.5)
}
