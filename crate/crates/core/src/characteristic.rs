//! Characteristic sets of graph surfaces, the characteristic-curve
//! construction for constant-curvature surfaces, and the Taylor behaviour
//! of the bubble's lower sheet at the south pole.
//!
//! The curve construction works with the φ†-arclength parametrization `μ`
//! of `C_φ` (clockwise, period `M`). For a curvature `h` and a shift `s̄`
//! the parameter `τ(t)` solves
//! `τ̇ ω(μ̇(τ), μ(τ) − μ(τ+hs̄)) = h ω(μ(τ+hs̄), μ(τ))`, the base curve has
//! `Ξ̇ = μ(τ)`, and the surface is swept by
//! `ξ(t,s) = h⁻¹μ(τ(t)+hs) + Ξ(t) − h⁻¹Ξ̇(t)`.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector, Matrix2};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bubble::{BubbleError, HemisphereGraph, Sheet};
use crate::circle::{CircleError, CircleParam};
use crate::heis::{characteristic_points, symplectic, GraphPatch, GraphSurface};
use crate::norm::{Norm, NormError};
use crate::ode::{solve, OdeOptions, Problem, Stop};
use crate::quad::brent_root;
use crate::vec2::{add, angle, cross, dot, norm, perp, scale, sub, V2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CharError {
    #[error("h must be finite and nonzero, got {0}")]
    BadCurvature(f64),
    #[error("h·s̄ = {shift} is outside (0, {period})")]
    ShiftOutOfRange { shift: f64, period: f64 },
    #[error("denominator of the τ equation fell to {value:.3e} at t = {t}")]
    DegenerateDenominator { t: f64, value: f64 },
    #[error("integration failed at t = {0}")]
    IntegrationFailed(f64),
    #[error("t = {0} is outside the integrated span")]
    OutOfSpan(f64),
    #[error("no root of ⟨V, Z⟩ in (0, M/h) at t = {0}")]
    NoRootFound(f64),
    #[error("φ† is not differentiable in direction {0:.9} rad")]
    KinkDirection(f64),
    #[error("the norm must be C² with positive curvature")]
    NotSmooth,
    #[error("the hemisphere graph has no point over {0:?}")]
    OffGraph(V2),
    #[error("fit of {quantity} has R² = {r2:.6}")]
    InsufficientResolution { quantity: &'static str, r2: f64 },
    #[error(transparent)]
    Circle(#[from] CircleError),
    #[error(transparent)]
    Bubble(#[from] BubbleError),
    #[error(transparent)]
    Norm(#[from] NormError),
}

pub type Result<T> = std::result::Result<T, CharError>;

// ---------------------------------------------------------------------------
// Classification

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CharKind {
    Isolated,
    Curve,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifiedComponent {
    pub nodes: usize,
    pub center: V2,
    pub diameter: f64,
    pub classification: CharKind,
    pub jf_rank: usize,
    pub jf_det: f64,
    /// Singular values of `JF` at the center, largest first.
    pub singular_values: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct CharReport {
    pub tol: f64,
    pub components: Vec<ClassifiedComponent>,
}

/// Clusters the nodes with `|F|` below the patch's default tolerance and
/// reports the rank of `JF` at each cluster center.
pub fn classify_characteristic_set(patch: &GraphPatch) -> CharReport {
    classify_with_tol(patch, patch.default_char_tol())
}

pub fn classify_with_tol(patch: &GraphPatch, tol: f64) -> CharReport {
    let components = characteristic_points(patch, tol)
        .into_iter()
        .map(|c| {
            let (i, j) = c.center;
            let jf = field_jacobian(patch, i, j);
            let m = Matrix2::new(jf[0][0], jf[0][1], jf[1][0], jf[1][1]);
            let sv = m.singular_values();
            let (big, small) = (sv[0].max(sv[1]), sv[0].min(sv[1]));
            let jf_rank = if big == 0.0 {
                0
            } else if small > 1e-6 * big {
                2
            } else {
                1
            };
            ClassifiedComponent {
                nodes: c.nodes.len(),
                center: patch.node(i, j),
                diameter: c.diameter,
                classification: if c.isolated { CharKind::Isolated } else { CharKind::Curve },
                jf_rank,
                jf_det: m.determinant(),
                singular_values: [big, small],
            }
        })
        .collect();
    CharReport { tol, components }
}

/// `JF` at a node by differencing the cached `F` field; rows are components.
pub fn field_jacobian(patch: &GraphPatch, i: usize, j: usize) -> [[f64; 2]; 2] {
    let field = patch.proj_field();
    let mut out = [[0.0; 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = patch.diff_with(i, j, c, |a, b| field[patch.index(a, b)][r]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Characteristic curves

#[derive(Debug, Clone, Copy)]
pub struct CharCurveOptions {
    pub ode: OdeOptions,
    /// Number of uniform output nodes over the span.
    pub samples: usize,
    pub circle_nodes: usize,
}

impl Default for CharCurveOptions {
    fn default() -> Self {
        CharCurveOptions {
            ode: OdeOptions { tol: 1e-12, h_init: 1e-3, h_max: 0.02, ..OdeOptions::default() },
            samples: 4001,
            circle_nodes: 4096,
        }
    }
}

const DEGENERATE: f64 = 1e-10;

/// The integrated base curve `(Ξ, ζ)` and parameter `τ` on a uniform grid.
/// Between nodes the state is evaluated by cubic Hermite interpolation with
/// the exact rates.
#[derive(Debug, Clone, Serialize)]
pub struct CharCurveState {
    pub h: f64,
    pub s_bar: f64,
    pub tau0: f64,
    /// `M`, the φ†-length of `C_φ`.
    pub period: f64,
    pub t: Vec<f64>,
    pub tau: Vec<f64>,
    pub xi: Vec<V2>,
    pub zeta: Vec<f64>,
    /// `T₀` with `|τ(T₀) − τ₀| = M/2`, when reached inside the span.
    pub half_period: Option<f64>,
    #[serde(skip)]
    rates: Vec<[f64; 4]>,
    #[serde(skip)]
    mu: CircleParam,
    #[serde(skip)]
    dagger: Norm,
}

/// `(τ̇, denominator)` at `τ`.
fn tau_rate(mu: &CircleParam, h: f64, shift: f64, tau: f64) -> (f64, f64) {
    let (a, va, _) = mu.eval(tau);
    let b = mu.point(tau + shift);
    let den = symplectic(va, sub(a, b));
    (h * symplectic(b, a) / den, den)
}

fn state_rates(mu: &CircleParam, h: f64, shift: f64, y: &[f64]) -> ([f64; 4], f64) {
    let (rate, den) = tau_rate(mu, h, shift, y[0]);
    let v = mu.point(y[0]);
    ([rate, v[0], v[1], symplectic([y[1], y[2]], v)], den)
}

/// Integrates the τ equation together with `Ξ̇ = μ(τ)` and the horizontal
/// lift `ζ̇ = ω(Ξ, Ξ̇)`, starting from `Ξ = 0`, `ζ = 0` at `t_span.0`.
pub fn characteristic_curve(norm: &Norm, h: f64, s_bar: f64, tau0: f64, t_span: (f64, f64), opts: CharCurveOptions) -> Result<CharCurveState> {
    if !(h.is_finite() && h != 0.0) {
        return Err(CharError::BadCurvature(h));
    }
    let mu = CircleParam::dagger(norm, opts.circle_nodes)?;
    let period = mu.period();
    let shift = h * s_bar;
    if !(shift > 0.0 && shift < period) {
        return Err(CharError::ShiftOutOfRange { shift, period });
    }
    let dagger = norm.dagger()?;
    let (t_start, t_end) = t_span;
    let n = opts.samples.max(3);
    let grid: Vec<f64> = (0..n).map(|k| t_start + (t_end - t_start) * k as f64 / (n - 1) as f64).collect();

    let bad = Cell::new(None::<(f64, f64)>);
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (r, den) = state_rates(&mu, h, shift, y);
        if den.abs() < DEGENERATE || !r[0].is_finite() {
            bad.set(Some((t, den)));
            return false;
        }
        dy.copy_from_slice(&r);
        true
    };
    let (_, den0) = tau_rate(&mu, h, shift, tau0);
    if den0.abs() < DEGENERATE {
        return Err(CharError::DegenerateDenominator { t: t_start, value: den0 });
    }
    let mut problem = Problem { rhs: &mut rhs, events: Vec::new(), project: None };
    let sol = solve(&mut problem, t_start, &[tau0, 0.0, 0.0, 0.0], &grid[1..], opts.ode, false);
    match sol.stop {
        Stop::Finished => {}
        Stop::RhsFailed => {
            let (t, value) = bad.get().unwrap_or((*sol.last().0, f64::NAN));
            return Err(CharError::DegenerateDenominator { t, value });
        }
        _ => return Err(CharError::IntegrationFailed(*sol.last().0)),
    }
    let rates = sol.y.iter().map(|y| state_rates(&mu, h, shift, y).0).collect();
    let mut state = CharCurveState {
        h,
        s_bar,
        tau0,
        period,
        t: sol.t,
        tau: sol.y.iter().map(|y| y[0]).collect(),
        xi: sol.y.iter().map(|y| [y[1], y[2]]).collect(),
        zeta: sol.y.iter().map(|y| y[3]).collect(),
        half_period: None,
        rates,
        mu,
        dagger,
    };
    state.half_period = state.find_half_period();
    Ok(state)
}

/// The state at one time, with rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BasePoint {
    pub t: f64,
    pub tau: f64,
    pub tau_dot: f64,
    pub xi: V2,
    pub zeta: f64,
}

impl CharCurveState {
    pub fn circle(&self) -> &CircleParam {
        &self.mu
    }

    pub fn span(&self) -> (f64, f64) {
        (self.t[0], *self.t.last().unwrap())
    }

    fn node_state(&self, k: usize) -> [f64; 4] {
        [self.tau[k], self.xi[k][0], self.xi[k][1], self.zeta[k]]
    }

    /// Base point at `t` (Hermite interpolation between grid nodes).
    pub fn at(&self, t: f64) -> Result<BasePoint> {
        let (a, b) = self.span();
        let (lo, hi) = (a.min(b), a.max(b));
        if !(t >= lo - 1e-12 && t <= hi + 1e-12) {
            return Err(CharError::OutOfSpan(t));
        }
        let n = self.t.len();
        let dt = (b - a) / (n - 1) as f64;
        let k = (((t - a) / dt).floor() as isize).clamp(0, n as isize - 2) as usize;
        let u = (t - self.t[k]) / dt;
        let (y0, y1) = (self.node_state(k), self.node_state(k + 1));
        let (d0, d1) = (self.rates[k], self.rates[k + 1]);
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        let y: Vec<f64> = (0..4).map(|i| h00 * y0[i] + h10 * dt * d0[i] + h01 * y1[i] + h11 * dt * d1[i]).collect();
        let (tau_dot, _) = tau_rate(&self.mu, self.h, self.h * self.s_bar, y[0]);
        Ok(BasePoint { t, tau: y[0], tau_dot, xi: [y[1], y[2]], zeta: y[3] })
    }

    fn find_half_period(&self) -> Option<f64> {
        let target = 0.5 * self.period;
        let gap = |tau: f64| (tau - self.tau0).abs() - target;
        let k = (1..self.t.len()).find(|&k| gap(self.tau[k - 1]) < 0.0 && gap(self.tau[k]) >= 0.0)?;
        let f = |t: f64| self.at(t).map(|p| gap(p.tau)).unwrap_or(f64::NAN);
        brent_root(f, self.t[k - 1], self.t[k], 1e-14)
    }

    /// The `s`-fiber through the base point at `t`.
    pub fn fiber(&self, t: f64) -> Result<Fiber<'_>> {
        let base = self.at(t)?;
        let (m, dm, _) = self.mu.eval(base.tau);
        Ok(Fiber { state: self, base, mu: m, mu_dot: dm })
    }
}

/// The surface curve `s ↦ ξ(t, s)` at fixed `t`.
#[derive(Debug, Clone, Copy)]
pub struct Fiber<'a> {
    state: &'a CharCurveState,
    pub base: BasePoint,
    mu: V2,
    mu_dot: V2,
}

impl Fiber<'_> {
    /// `Ξ̇ = μ(τ)`.
    pub fn xi_dot(&self) -> V2 {
        self.mu
    }

    /// `Ξ̈ = τ̇ μ̇(τ)`.
    pub fn xi_ddot(&self) -> V2 {
        scale(self.base.tau_dot, self.mu_dot)
    }

    pub fn point(&self, s: f64) -> V2 {
        let h = self.state.h;
        let m = self.state.mu.point(self.base.tau + h * s);
        add(scale(1.0 / h, m), sub(self.base.xi, scale(1.0 / h, self.mu)))
    }

    /// `ξ_s = μ̇(τ + hs)`.
    pub fn d_s(&self, s: f64) -> V2 {
        self.state.mu.velocity(self.base.tau + self.state.h * s)
    }

    /// `ξ_t = h⁻¹τ̇ μ̇(τ+hs) + Ξ̇ − h⁻¹Ξ̈`.
    pub fn d_t(&self, s: f64) -> V2 {
        let h = self.state.h;
        let shifted = scale(self.base.tau_dot / h, self.d_s(s));
        add(shifted, sub(self.mu, scale(1.0 / h, self.xi_ddot())))
    }

    /// `⟨V(t,s), Z⟩ = 2[h⁻²ω(Ξ̈,Ξ̇) + ω(Ξ̇ − h⁻¹Ξ̈, h⁻¹μ(τ+hs))]`.
    pub fn vz(&self, s: f64) -> f64 {
        let h = self.state.h;
        let acc = self.xi_ddot();
        let m = self.state.mu.point(self.base.tau + h * s);
        2.0 * (symplectic(acc, self.mu) / (h * h) + symplectic(sub(self.mu, scale(1.0 / h, acc)), scale(1.0 / h, m)))
    }
}

/// `⟨V(t,s), Z⟩` along the swept surface.
pub fn jacobi_vz(state: &CharCurveState, t: f64, s: f64) -> Result<f64> {
    Ok(state.fiber(t)?.vz(s))
}

/// First root of `s ↦ ⟨V(t,s), Z⟩` in `(0, M/h)`, by sampling and Brent.
pub fn characteristic_time(state: &CharCurveState, t: f64) -> Result<f64> {
    let fiber = state.fiber(t)?;
    let end = state.period / state.h;
    let n = 512;
    let edge = 1e-6;
    let nodes: Vec<f64> = std::iter::once(edge)
        .chain((1..n).map(|k| k as f64 / n as f64))
        .chain(std::iter::once(1.0 - edge))
        .map(|u| u * end)
        .collect();
    let vals: Vec<f64> = nodes.iter().map(|&s| fiber.vz(s)).collect();
    for k in 1..nodes.len() {
        if vals[k - 1] * vals[k] <= 0.0 {
            let root = if vals[k - 1] == 0.0 {
                nodes[k - 1]
            } else {
                brent_root(|s| fiber.vz(s), nodes[k - 1], nodes[k], 1e-15).ok_or(CharError::NoRootFound(t))?
            };
            if fiber.vz(root).abs() < 1e-10 {
                return Ok(root);
            }
            return Err(CharError::NoRootFound(t));
        }
    }
    Err(CharError::NoRootFound(t))
}

/// `Λ_t(s) = ⟨V,Z⟩ − h⁻¹⟨∇φ†(ξ_s), ξ_t⟩` on `s_grid`. This combination has
/// `∂_s Λ_t = 0` because the fiber is a φ-circle of radius `1/h` run at unit
/// φ†-speed, so `∂_s ∇φ†(ξ_s) = −h ξ_s^⊥`.
pub fn conserved_quantity(state: &CharCurveState, t: f64, s_grid: &[f64]) -> Result<Vec<f64>> {
    let fiber = state.fiber(t)?;
    s_grid
        .iter()
        .map(|&s| {
            let ds = fiber.d_s(s);
            let g = state.dagger.grad(ds).map_err(|_| CharError::KinkDirection(angle(ds)))?;
            Ok(fiber.vz(s) - dot(g, fiber.d_t(s)) / state.h)
        })
        .collect()
}

/// Integrates far enough to see two half-periods of `τ`: a probe run on
/// growing spans finds `T₀`, then the curve is recomputed on `[0, 2.6T₀]`.
/// When `τ` never advances by `M/2` (the antipodal shift keeps it fixed)
/// the last probe is returned.
pub fn characteristic_loop(norm: &Norm, h: f64, s_bar: f64, tau0: f64, opts: CharCurveOptions) -> Result<CharCurveState> {
    let mut span = 40.0;
    loop {
        let probe = characteristic_curve(norm, h, s_bar, tau0, (0.0, span), opts)?;
        match probe.half_period {
            Some(t0) => return characteristic_curve(norm, h, s_bar, tau0, (0.0, 2.6 * t0), opts),
            None if span >= 640.0 || probe.tau.iter().all(|&t| (t - tau0).abs() < 1e-9) => return Ok(probe),
            None => span *= 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveDiagnostics {
    pub half_period: Option<f64>,
    /// `max | |τ(t+T₀) − τ(t)| − M/2 |` over the probe times.
    pub half_shift_error: Option<f64>,
    /// `max |Ξ(t+2T₀) − Ξ(t)|`.
    pub closure: Option<f64>,
    /// No two non-adjacent chords of the sampled loop cross.
    pub simple: Option<bool>,
    /// Largest distance of `Ξ` from the chord through its endpoints,
    /// relative to the chord length.
    pub straightness: f64,
    pub char_time_mean: f64,
    pub char_time_std: f64,
    /// Largest `|Λ_t(s)|` on `s ∈ [0, s*(t)]`.
    pub conserved_drift: f64,
}

fn segments_cross(a: V2, b: V2, c: V2, d: V2) -> bool {
    let side = |p: V2, q: V2, r: V2| cross(sub(q, p), sub(r, p));
    side(a, b, c) * side(a, b, d) < 0.0 && side(c, d, a) * side(c, d, b) < 0.0
}

/// Half-period shift, closure and simplicity of the base loop, the roots of
/// `⟨V,Z⟩` along the fibers and the drift of `Λ` up to them, at `probes`
/// times spread over the first half-period (or the span, for a line).
pub fn curve_diagnostics(state: &CharCurveState, probes: usize) -> Result<CurveDiagnostics> {
    let probes = probes.max(2);
    let (a, b) = state.span();
    let m = state.period;
    let first = state.xi[0];
    let chord = sub(*state.xi.last().unwrap(), first);
    let chord_len = norm(chord).max(f64::MIN_POSITIVE);
    let straightness = state.xi.iter().map(|&p| cross(chord, sub(p, first)).abs() / (chord_len * chord_len)).fold(0.0, f64::max);

    let (mut half_shift_error, mut closure, mut simple) = (None, None, None);
    let window = match state.half_period {
        Some(t0) if a + 2.0 * t0 < b => {
            let reach = (0.5 * t0).min(b - a - 2.0 * t0);
            let times: Vec<f64> = (0..probes).map(|k| a + reach * k as f64 / (probes - 1) as f64).collect();
            let (mut shift_err, mut close) = (0.0f64, 0.0f64);
            for &t in &times {
                let p0 = state.at(t)?;
                let p1 = state.at(t + t0)?;
                let p2 = state.at(t + 2.0 * t0)?;
                shift_err = shift_err.max(((p1.tau - p0.tau).abs() - 0.5 * m).abs());
                close = close.max(norm(sub(p2.xi, p0.xi)));
            }
            let n = 400;
            let pts: Vec<V2> = (0..=n).map(|k| state.at(a + 2.0 * t0 * k as f64 / n as f64).map(|p| p.xi)).collect::<Result<_>>()?;
            let crossing = (0..n).any(|i| (i + 2..n).any(|j| !(i == 0 && j == n - 1) && segments_cross(pts[i], pts[i + 1], pts[j], pts[j + 1])));
            half_shift_error = Some(shift_err);
            closure = Some(close);
            simple = Some(!crossing);
            t0
        }
        _ => b - a,
    };

    let times: Vec<f64> = (0..probes).map(|k| a + window * k as f64 / (probes - 1) as f64).collect();
    let roots: Vec<f64> = times.iter().map(|&t| characteristic_time(state, t)).collect::<Result<_>>()?;
    let mean = roots.iter().sum::<f64>() / roots.len() as f64;
    let std = (roots.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / roots.len() as f64).sqrt();
    let mut drift = 0.0f64;
    for (&t, &root) in times.iter().zip(&roots) {
        let grid: Vec<f64> = (0..=64).map(|k| root * k as f64 / 64.0).collect();
        drift = conserved_quantity(state, t, &grid)?.iter().fold(drift, |d, v| d.max(v.abs()));
    }
    Ok(CurveDiagnostics {
        half_period: state.half_period,
        half_shift_error,
        closure,
        simple,
        straightness,
        char_time_mean: mean,
        char_time_std: std,
        conserved_drift: drift,
    })
}

// ---------------------------------------------------------------------------
// South-pole expansion

#[derive(Debug, Clone, Copy)]
pub struct PoleOptions {
    pub rays: usize,
    /// `δ = 2^{-k}·L` for `k` in this inclusive range.
    pub ladder: (i32, i32),
    /// Finite-difference step for the Hessian, as a fraction of `δ`.
    pub fd_fraction: f64,
    pub min_r2: f64,
    /// Degree of the polynomial in `δ` fitted to each scaled quantity.
    pub degree: usize,
}

impl Default for PoleOptions {
    fn default() -> Self {
        PoleOptions { rays: 12, ladder: (3, 10), fd_fraction: 1.0 / 16.0, min_r2: 0.99, degree: 4 }
    }
}

/// Leading coefficient of one quantity, fitted ray by ray.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientFit {
    pub name: &'static str,
    pub fitted: Vec<f64>,
    pub predicted: Vec<f64>,
    pub max_abs_error: f64,
    /// `max|fitted − predicted| / max|predicted|`; absolute when the
    /// prediction vanishes.
    pub relative_error: f64,
    pub min_r2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoleReport {
    /// Parameters `t` of the rays, in Euclidean arclength of `C_φ`.
    pub rays: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lambda_rate: Vec<f64>,
    pub deltas: Vec<f64>,
    /// `⟨∇f, κ̇^⊥⟩/δ²` against `λ̇/(12λ)`.
    pub grad_normal: CoefficientFit,
    /// `⟨ℋf κ̇, κ̇⟩/δ` against `λ/2`.
    pub hess_tangential: CoefficientFit,
    /// `⟨ℋf κ̇, κ̇^⊥⟩/δ` against `λ̇/(6λ)`.
    pub hess_mixed: CoefficientFit,
    /// `⟨ℋf κ̇^⊥, κ̇^⊥⟩` against 0.
    pub hess_normal: CoefficientFit,
    /// Smallest `C` with `|∇f| ≤ Cδ²` over all samples.
    pub gradient_bound: f64,
    /// Least-squares ratio of the mixed to the gradient coefficient over
    /// rays where the latter is not small; `None` when `λ̇ ≈ 0`.
    pub mixed_to_gradient_ratio: Option<f64>,
}

struct RaySample {
    grad_normal: f64,
    hess_tt: f64,
    hess_tn: f64,
    hess_nn: f64,
    grad_ratio: f64,
}

/// Samples `∇f` (exact) and `ℋf` (five-point differences of `∇f`) of the
/// lower sheet at `ξ = κ(t) + κ(t − L/2 − δ)` on a geometric δ-ladder and
/// fits the leading coefficient of each expansion by a quadratic in `δ`.
pub fn pole_expansion_check(norm: &Norm, opts: PoleOptions) -> Result<PoleReport> {
    if !norm.is_smooth_positive() {
        return Err(CharError::NotSmooth);
    }
    let graph = HemisphereGraph::new(norm, Sheet::Lower)?;
    let circle = graph.circle();
    let len = circle.period();
    let deltas: Vec<f64> = (opts.ladder.0..=opts.ladder.1).map(|k| len * 2f64.powi(-k)).collect();
    let rays: Vec<f64> = (0..opts.rays).map(|r| len * (r as f64 + 0.25) / opts.rays as f64).collect();

    let sampled: Vec<Vec<RaySample>> = rays
        .par_iter()
        .map(|&t| deltas.iter().map(|&d| sample_ray(&graph, t, d, opts.fd_fraction)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    let lambda: Vec<f64> = rays.iter().map(|&t| circle.curvature(t)).collect();
    let lambda_rate: Vec<f64> = rays.iter().map(|&t| circle.curvature_rate(t)).collect();
    let predict = |f: &dyn Fn(usize) -> f64| (0..rays.len()).map(f).collect::<Vec<_>>();
    let fit = |name: &'static str, pick: fn(&RaySample) -> f64, predicted: Vec<f64>| -> Result<CoefficientFit> {
        let mut fitted = Vec::with_capacity(rays.len());
        let mut min_r2 = 1.0f64;
        for ray in &sampled {
            let ys: Vec<f64> = ray.iter().map(pick).collect();
            let (c0, r2) = leading_coefficient(&deltas, &ys, opts.degree);
            fitted.push(c0);
            min_r2 = min_r2.min(r2);
        }
        if min_r2 < opts.min_r2 {
            return Err(CharError::InsufficientResolution { quantity: name, r2: min_r2 });
        }
        let max_abs_error = fitted.iter().zip(&predicted).map(|(f, p)| (f - p).abs()).fold(0.0, f64::max);
        let scale = predicted.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        let relative_error = if scale > 1e-9 { max_abs_error / scale } else { max_abs_error };
        Ok(CoefficientFit { name, fitted, predicted, max_abs_error, relative_error, min_r2 })
    };

    let grad_normal = fit("grad_normal", |s| s.grad_normal, predict(&|i| lambda_rate[i] / (12.0 * lambda[i])))?;
    let hess_tangential = fit("hess_tangential", |s| s.hess_tt, predict(&|i| 0.5 * lambda[i]))?;
    let hess_mixed = fit("hess_mixed", |s| s.hess_tn, predict(&|i| lambda_rate[i] / (6.0 * lambda[i])))?;
    let hess_normal = fit("hess_normal", |s| s.hess_nn, vec![0.0; rays.len()])?;
    let gradient_bound = sampled.iter().flatten().map(|s| s.grad_ratio).fold(0.0, f64::max);

    let big = grad_normal.predicted.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mixed_to_gradient_ratio = (big > 1e-6).then(|| {
        let (mut num, mut den) = (0.0, 0.0);
        for ((a, c), p) in grad_normal.fitted.iter().zip(&hess_mixed.fitted).zip(&grad_normal.predicted) {
            if p.abs() > 0.25 * big {
                num += a * c;
                den += a * a;
            }
        }
        num / den
    });

    Ok(PoleReport { rays, lambda, lambda_rate, deltas, grad_normal, hess_tangential, hess_mixed, hess_normal, gradient_bound, mixed_to_gradient_ratio })
}

fn sample_ray(graph: &HemisphereGraph, t: f64, delta: f64, fd_fraction: f64) -> Result<RaySample> {
    let circle = graph.circle();
    let len = circle.period();
    let (kt, tangent, _) = circle.eval(t);
    let xi = add(kt, circle.point(t - 0.5 * len - delta));
    let grad_at = |p: V2| graph.gradient(p).ok_or(CharError::OffGraph(p));
    let grad = grad_at(xi)?;
    let e = fd_fraction * delta;
    let mut hess = [[0.0; 2]; 2];
    for (c, dir) in [[1.0, 0.0], [0.0, 1.0]].into_iter().enumerate() {
        let at = |k: f64| grad_at(add(xi, scale(k * e, dir)));
        let (m2, m1, p1, p2) = (at(-2.0)?, at(-1.0)?, at(1.0)?, at(2.0)?);
        for (r, row) in hess.iter_mut().enumerate() {
            row[c] = (m2[r] - 8.0 * m1[r] + 8.0 * p1[r] - p2[r]) / (12.0 * e);
        }
    }
    let sym = 0.5 * (hess[0][1] + hess[1][0]);
    hess[0][1] = sym;
    hess[1][0] = sym;
    let quad = |a: V2, b: V2| a[0] * (hess[0][0] * b[0] + hess[0][1] * b[1]) + a[1] * (hess[1][0] * b[0] + hess[1][1] * b[1]);
    let normal = perp(tangent);
    Ok(RaySample {
        grad_normal: dot(grad, normal) / (delta * delta),
        hess_tt: quad(tangent, tangent) / delta,
        hess_tn: quad(tangent, normal) / delta,
        hess_nn: quad(normal, normal),
        grad_ratio: norm(grad) / (delta * delta),
    })
}

/// Intercept of a least-squares quadratic in `x`, with the fit's `R²`.
/// A fit whose RMS residual is below 1e-9 counts as exact.
fn leading_coefficient(x: &[f64], y: &[f64], degree: usize) -> (f64, f64) {
    let n = x.len();
    let a = DMatrix::from_fn(n, degree + 1, |i, k| x[i].powi(k as i32));
    let b = DVector::from_column_slice(y);
    let coef = a.clone().svd(true, true).solve(&b, 1e-14).expect("svd solve");
    let res = &a * &coef - &b;
    let ss_res = res.norm_squared();
    let mean = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = if ss_res < n as f64 * 1e-18 { 1.0 } else if ss_tot == 0.0 { 0.0 } else { 1.0 - ss_res / ss_tot };
    (coef[0], r2)
}
