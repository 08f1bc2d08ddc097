//! φ-curvature of z-graphs, Legendre flows, the circle-foliation check,
//! first variation and the crystalline face classification.
//!
//! Orientation: a patch with orientation `o` uses the projected gradient
//! `G = o·F` of its defining function (`f − z` for subgraphs, `z − f` for
//! epigraphs). Curvature is `div ∇φ*(G)` and Legendre curves solve
//! `ξ̇ = G^⊥`.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::heis::{characteristic_points, symplectic, GraphPatch, GraphSurface, ParamCurve};
use crate::norm::Norm;
use crate::ode::{solve, OdeOptions, Problem, Stop};
use crate::vec2::{add, angle, cross, dot, norm, perp, scale, sub, wrap_angle, V2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FoliationError {
    #[error("seed point is outside the patch")]
    LeftDomain,
    #[error("seed point is characteristic (|F| below tolerance)")]
    HitCharacteristic,
    #[error("test function is nonzero within 3 cells of the patch boundary")]
    SupportTouchesBoundary,
    #[error("norm is not crystalline")]
    NotCrystalline,
    #[error("test field has {got} values, patch has {want} nodes")]
    ShapeMismatch { got: usize, want: usize },
}

/// `H_φ` on the nodes of a patch, with a validity mask.
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureField {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    /// Nodes dropped because the 4th- and 2nd-order stencils disagree by
    /// more than the resolution threshold (steep `𝒩` near a rim).
    pub unresolved: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl FieldStats {
    pub fn rel_std(&self) -> f64 {
        self.std / self.mean.abs()
    }
}

impl CurvatureField {
    pub fn stats(&self) -> FieldStats {
        let vals: Vec<f64> = self.values.iter().zip(&self.valid).filter(|(_, &v)| v).map(|(&h, _)| h).collect();
        let n = vals.len().max(1) as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n;
        FieldStats { mean, std: var.sqrt(), count: vals.len() }
    }
}

/// Options for [`phi_curvature_with`].
#[derive(Debug, Clone, Copy)]
pub struct CurvatureOptions {
    /// `|F|` threshold for characteristic nodes; `None` uses the patch default.
    pub char_tol: Option<f64>,
    /// Nodes within this many cells of a characteristic node are masked.
    pub char_radius: usize,
    /// Largest accepted `|D₄ − D₂|` between the two divergence stencils.
    pub resolution: f64,
}

impl Default for CurvatureOptions {
    fn default() -> Self {
        CurvatureOptions { char_tol: None, char_radius: 4, resolution: 1e-4 }
    }
}

pub fn phi_curvature(norm: &Norm, patch: &GraphPatch) -> CurvatureField {
    phi_curvature_with(norm, patch, CurvatureOptions::default())
}

/// Divergence of `𝒩 = ∇φ*(G)` by 4th-order central differences.
///
/// A node is valid when its whole 5-point stencil in each direction lies in
/// the mask, no stencil node is within `char_radius` cells of a
/// characteristic node, all stencil values of `G` lie in one sector between
/// consecutive non-smooth rays of `∇φ*`, and the 2nd-order stencil agrees
/// with the 4th-order one to `resolution`.
pub fn phi_curvature_with(norm: &Norm, patch: &GraphPatch, opts: CurvatureOptions) -> CurvatureField {
    let dual = norm.dual().expect("dual of a valid norm");
    let o = patch.orientation;
    let field = patch.proj_field();
    let nn = patch.nx * patch.ny;
    let tol = opts.char_tol.unwrap_or_else(|| patch.default_char_tol());

    let mut kinks: Vec<f64> = dual.profile_breaks().into_iter().map(wrap_angle).collect();
    kinks.sort_by(f64::total_cmp);
    let sector = |g: V2| -> usize {
        if kinks.is_empty() {
            return 0;
        }
        let a = wrap_angle(angle(g));
        kinks.iter().filter(|&&k| k <= a).count() % kinks.len()
    };

    let mut normal = vec![[f64::NAN; 2]; nn];
    let mut sect = vec![usize::MAX; nn];
    let mut near_char = vec![false; nn];
    for (i, j) in patch.nodes() {
        let k = patch.index(i, j);
        let g = scale(o, field[k]);
        if norm_v(g) < tol {
            let r = opts.char_radius as isize;
            for dj in -r..=r {
                for di in -r..=r {
                    let (a, b) = (i as isize + di, j as isize + dj);
                    if a >= 0 && b >= 0 && (a as usize) < patch.nx && (b as usize) < patch.ny {
                        near_char[patch.index(a as usize, b as usize)] = true;
                    }
                }
            }
            continue;
        }
        if let Ok(n) = dual.grad(g) {
            normal[k] = n;
            sect[k] = sector(g);
        }
    }

    let results: Vec<(usize, f64, bool, bool)> = patch
        .nodes()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(i, j)| {
            let k = patch.index(i, j);
            let stencil_ok = |axis: usize| -> bool {
                (-2isize..=2).all(|d| {
                    let (a, b) = if axis == 0 { (i as isize + d, j as isize) } else { (i as isize, j as isize + d) };
                    if !patch.inside(a, b) {
                        return false;
                    }
                    let kk = patch.index(a as usize, b as usize);
                    !near_char[kk] && normal[kk][0].is_finite() && sect[kk] == sect[k]
                })
            };
            if !(stencil_ok(0) && stencil_ok(1)) {
                return (k, f64::NAN, false, false);
            }
            let v = |a: usize, b: usize, c: usize| normal[patch.index(a, b)][c];
            let d4 = |axis: usize, c: usize| -> f64 {
                let h = if axis == 0 { patch.hx } else { patch.hy };
                let at = |d: isize| if axis == 0 { v((i as isize + d) as usize, j, c) } else { v(i, (j as isize + d) as usize, c) };
                (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / (12.0 * h)
            };
            let d2 = |axis: usize, c: usize| -> f64 {
                let h = if axis == 0 { patch.hx } else { patch.hy };
                let at = |d: isize| if axis == 0 { v((i as isize + d) as usize, j, c) } else { v(i, (j as isize + d) as usize, c) };
                (at(1) - at(-1)) / (2.0 * h)
            };
            let h4 = d4(0, 0) + d4(1, 1);
            let h2 = d2(0, 0) + d2(1, 1);
            let resolved = (h4 - h2).abs() <= opts.resolution * (1.0 + h4.abs());
            (k, h4, resolved, true)
        })
        .collect();

    let mut values = vec![f64::NAN; nn];
    let mut valid = vec![false; nn];
    let mut unresolved = 0;
    for (k, h, resolved, stencil) in results {
        values[k] = h;
        valid[k] = stencil && resolved && h.is_finite();
        if stencil && !resolved {
            unresolved += 1;
        }
    }
    CurvatureField { nx: patch.nx, ny: patch.ny, values, valid, unresolved }
}

#[inline]
fn norm_v(v: V2) -> f64 {
    norm(v)
}

/// Why a Legendre flow ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlowStop {
    Completed,
    LeftDomain,
    HitCharacteristic,
    StepFailure,
}

#[derive(Debug, Clone)]
pub struct LegendreFlow {
    /// Spatial curve `(ξ, z)` sampled at every accepted step, ordered by `t`.
    pub curve: ParamCurve,
    pub stop_backward: FlowStop,
    pub stop_forward: FlowStop,
    /// Largest `|z(t) − f(ξ(t))|`.
    pub graph_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    pub ode: OdeOptions,
    pub char_tol: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { ode: OdeOptions { tol: 1e-10, h_init: 1e-3, h_max: 0.02, ..OdeOptions::default() }, char_tol: 1e-3 }
    }
}

/// Integrates `ξ̇ = G^⊥(ξ)`, `ż = ω(ξ, ξ̇)` from `ξ₀` (with `z = f(ξ₀)`)
/// over `t_span = (t_back ≤ 0, t_fwd ≥ 0)`. The flow stops early when it
/// leaves the surface's domain or `|F|` drops below `char_tol`.
pub fn legendre_flow<S: GraphSurface + ?Sized>(surface: &S, xi0: V2, t_span: (f64, f64), opts: FlowOptions) -> Result<LegendreFlow, FoliationError> {
    let o = surface.orientation();
    let z0 = surface.height(xi0).ok_or(FoliationError::LeftDomain)?;
    let g0 = surface.proj_grad(xi0).ok_or(FoliationError::LeftDomain)?;
    if norm(g0) < opts.char_tol {
        return Err(FoliationError::HitCharacteristic);
    }
    let run = |t_end: f64| -> (Vec<f64>, Vec<Vec<f64>>, FlowStop) {
        if t_end == 0.0 {
            return (vec![0.0], vec![vec![xi0[0], xi0[1], z0]], FlowStop::Completed);
        }
        let mut rhs = |_t: f64, y: &[f64], d: &mut [f64]| -> bool {
            let xi = [y[0], y[1]];
            let Some(f) = surface.proj_grad(xi) else { return false };
            let v = perp(scale(o, f));
            d[0] = v[0];
            d[1] = v[1];
            d[2] = symplectic(xi, v);
            true
        };
        let ev = |_t: f64, y: &[f64]| -> f64 { surface.proj_grad([y[0], y[1]]).map(|f| norm(f) - opts.char_tol).unwrap_or(1.0) };
        let mut p = Problem { rhs: &mut rhs, events: vec![&ev], project: None };
        let sol = solve(&mut p, 0.0, &[xi0[0], xi0[1], z0], &[t_end], opts.ode, true);
        let stop = match sol.stop {
            Stop::Finished => FlowStop::Completed,
            Stop::Event(_) => FlowStop::HitCharacteristic,
            Stop::RhsFailed => FlowStop::LeftDomain,
            Stop::StepFailure => FlowStop::StepFailure,
        };
        (sol.t, sol.y, stop)
    };
    let (tb, yb, sb) = run(t_span.0.min(0.0));
    let (tf, yf, sf) = run(t_span.1.max(0.0));
    let mut ts = Vec::new();
    let mut ys: Vec<Vec<f64>> = Vec::new();
    for k in (1..tb.len()).rev() {
        ts.push(tb[k]);
        ys.push(yb[k].clone());
    }
    ts.extend_from_slice(&tf);
    ys.extend(yf);
    let mut xy = Vec::with_capacity(ts.len());
    let mut dxy = Vec::with_capacity(ts.len());
    let mut z = Vec::with_capacity(ts.len());
    let mut residual = 0.0f64;
    for y in &ys {
        let xi = [y[0], y[1]];
        xy.push(xi);
        z.push(y[2]);
        dxy.push(surface.proj_grad(xi).map(|f| perp(scale(o, f))).unwrap_or([f64::NAN; 2]));
        if let Some(h) = surface.height(xi) {
            residual = residual.max((h - y[2]).abs());
        }
    }
    Ok(LegendreFlow { curve: ParamCurve { t: ts, xy, dxy, z: Some(z) }, stop_backward: sb, stop_forward: sf, graph_residual: residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Clockwise,
    Anticlockwise,
}

/// Rotation sense of Legendre curves on a surface of constant curvature `h`.
///
/// From `d𝒩/dt = h·ξ̇ = h·G^⊥` and `⟨𝒩, G⟩ > 0`, the normal turns like
/// `G^⊥` relative to `G` when `h > 0`, i.e. anticlockwise.
pub fn expected_sense(h: f64) -> Sense {
    if h > 0.0 {
        Sense::Anticlockwise
    } else {
        Sense::Clockwise
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircleFit {
    pub center: V2,
    pub radius: f64,
    /// Largest `|φ(ξ − c) − r₀|` against the reference radius `r₀`.
    pub max_deviation: f64,
}

/// Least-squares φ-circle through the points: Gauss–Newton on
/// `φ(ξ_k − c) − r` from the centroid. The deviation is measured against
/// `reference_radius`.
pub fn fit_phi_circle(norm: &Norm, pts: &[V2], reference_radius: f64) -> CircleFit {
    let n = pts.len().max(1) as f64;
    let mut c = pts.iter().fold([0.0, 0.0], |a, &p| add(a, p));
    c = scale(1.0 / n, c);
    let mut r = pts.iter().map(|&p| norm.eval(sub(p, c))).sum::<f64>() / n;
    let mut lambda = 1e-6;
    let cost = |c: V2, r: f64| pts.iter().map(|&p| (norm.eval(sub(p, c)) - r).powi(2)).sum::<f64>();
    let mut cur = cost(c, r);
    for _ in 0..100 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for &p in pts {
            let d = sub(p, c);
            let res = norm.eval(d) - r;
            let g = norm.grad_unchecked(d);
            let row = Vector3::new(-g[0], -g[1], -1.0);
            jtj += row * row.transpose();
            jtr += row * res;
        }
        let mut improved = false;
        for _ in 0..20 {
            let a = jtj + Matrix3::from_diagonal(&jtj.diagonal().map(|v| lambda * v.max(1e-12)));
            let Some(step) = a.lu().solve(&(-jtr)) else { break };
            let (c2, r2) = ([c[0] + step[0], c[1] + step[1]], r + step[2]);
            let new = cost(c2, r2);
            if new <= cur {
                let small = step.norm() < 1e-15 * (1.0 + r.abs());
                c = c2;
                r = r2;
                cur = new;
                lambda = (lambda * 0.3).max(1e-12);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let dev = pts.iter().map(|&p| (norm.eval(sub(p, c)) - reference_radius).abs()).fold(0.0, f64::max);
    CircleFit { center: c, radius: r, max_deviation: dev }
}

/// Signed sense of travel of a curve around a point.
pub fn rotation_sense(pts: &[V2], center: V2) -> Sense {
    let s: f64 = pts.windows(2).map(|w| cross(sub(w[0], center), sub(w[1], w[0]))).sum();
    if s >= 0.0 {
        Sense::Anticlockwise
    } else {
        Sense::Clockwise
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedReport {
    pub seed: V2,
    pub center: V2,
    pub fitted_radius: f64,
    pub radius_deviation: f64,
    pub sense: Sense,
    pub sense_matches: bool,
    pub graph_residual: f64,
    /// Largest change of `𝒩(ξ) − hξ` along the curve.
    pub normal_drift: f64,
    /// Largest `|d𝒩/dt − h·ξ̇|` at the recorded RK nodes.
    pub normal_rate_residual: f64,
    pub points: usize,
    pub stop_backward: FlowStop,
    pub stop_forward: FlowStop,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoliationReport {
    pub h: f64,
    pub expected_sense: Sense,
    pub seeds: Vec<SeedReport>,
    pub max_radius_deviation: f64,
    /// Over curve points with `|F| ≥ min_f`, at least `min_depth` cells
    /// inside and away from the non-smooth rays of `∇φ*`.
    pub max_normal_drift: f64,
    /// Fraction of non-characteristic nodes within 3 cells of some trajectory.
    pub coverage: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct FoliationOptions {
    pub seeds: usize,
    pub rng_seed: u64,
    /// Seeds are drawn from nodes at least this many cells inside the mask
    /// and with `|F|` above `min_f`.
    pub min_depth: usize,
    pub min_f: f64,
    pub tolerance: f64,
    pub flow: FlowOptions,
    pub t_span: (f64, f64),
}

impl Default for FoliationOptions {
    fn default() -> Self {
        FoliationOptions { seeds: 32, rng_seed: 7, min_depth: 8, min_f: 0.05, tolerance: 1e-3, flow: FlowOptions::default(), t_span: (-20.0, 20.0) }
    }
}

/// Seeds Legendre flows on the patch, fits a φ-circle to each and checks
/// radius `1/|h|` and the rotation sense.
pub fn verify_circle_foliation(norm: &Norm, patch: &GraphPatch, h: f64, opts: FoliationOptions) -> FoliationReport {
    let field = patch.proj_field();
    let eligible: Vec<(usize, usize)> = patch
        .nodes()
        .filter(|&(i, j)| patch.depth(i, j, opts.min_depth) >= opts.min_depth && norm_v(field[patch.index(i, j)]) > opts.min_f)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    let picks: Vec<V2> = (0..opts.seeds.min(eligible.len()))
        .map(|_| {
            let (i, j) = eligible[rng.gen_range(0..eligible.len())];
            patch.node(i, j)
        })
        .collect();
    let dual = norm.dual().expect("dual");
    let o = patch.orientation;
    let want = expected_sense(h);
    let results: Vec<(SeedReport, Vec<V2>)> = picks
        .par_iter()
        .filter_map(|&seed| {
            let flow = legendre_flow(patch, seed, opts.t_span, opts.flow).ok()?;
            let interior = |x: V2| {
                let i = ((x[0] - patch.x0) / patch.hx).round();
                let j = ((x[1] - patch.y0) / patch.hy).round();
                patch.inside(i as isize, j as isize) && patch.depth(i as usize, j as usize, opts.min_depth) >= opts.min_depth
            };
            Some((seed_report(&dual, o, norm, patch, h, seed, &flow, want, opts.min_f, interior), flow.curve.xy.clone()))
        })
        .collect();
    let coverage = coverage(patch, results.iter().map(|r| r.1.as_slice()), 3);
    let seeds: Vec<SeedReport> = results.into_iter().map(|r| r.0).collect();
    let max_dev = seeds.iter().map(|s| s.radius_deviation).fold(0.0, f64::max);
    let max_drift = seeds.iter().map(|s| s.normal_drift).fold(0.0, f64::max);
    let pass = !seeds.is_empty() && seeds.iter().all(|s| s.radius_deviation < opts.tolerance && s.sense_matches);
    FoliationReport { h, expected_sense: want, seeds, max_radius_deviation: max_dev, max_normal_drift: max_drift, coverage, pass }
}

#[allow(clippy::too_many_arguments)]
fn seed_report<S: GraphSurface + ?Sized>(dual: &Norm, o: f64, norm: &Norm, surface: &S, h: f64, seed: V2, flow: &LegendreFlow, want: Sense, min_f: f64, interior: impl Fn(V2) -> bool) -> SeedReport {
    let pts = &flow.curve.xy;
    let fit = fit_phi_circle(norm, pts, 1.0 / h.abs());
    let sense = rotation_sense(pts, fit.center);
    // Near a characteristic point the direction of F, and so 𝒩, is
    // ill-conditioned; near the rim ∇f may be singular; near a ray where
    // ∇φ* is not Lipschitz (q < 2 axes) small errors in F are amplified.
    let kinks = dual.hessian_kinks();
    let regular = |g: V2| kinks.iter().all(|&k| (angle(g) - k).sin().abs() > 1e-2);
    let normals: Vec<Option<V2>> = pts
        .iter()
        .map(|&p| surface.proj_grad(p).filter(|&f| norm_v(f) >= min_f && interior(p) && regular(f)).and_then(|f| dual.grad(scale(o, f)).ok()))
        .collect();
    let k0 = flow.curve.t.iter().position(|&t| t == 0.0).unwrap_or(0);
    let base = normals[k0].map(|n| sub(n, scale(h, pts[k0])));
    let mut drift = 0.0f64;
    let mut rate = 0.0f64;
    for k in 0..pts.len() {
        if let (Some(n), Some(b)) = (normals[k], base) {
            drift = drift.max(norm_v(sub(sub(n, scale(h, pts[k])), b)));
        }
        if normals[k].is_some() {
            // d/dt 𝒩(ξ(t)) = D𝒩(ξ)·ξ̇, by a central difference along ξ̇.
            let xd = flow.curve.dxy[k];
            let delta = 1e-5 / (1.0 + norm_v(xd));
            let at = |s: f64| {
                let p = add(pts[k], scale(s, xd));
                surface.proj_grad(p).and_then(|f| dual.grad(scale(o, f)).ok())
            };
            if let (Some(a), Some(c)) = (at(-delta), at(delta)) {
                let dn = scale(0.5 / delta, sub(c, a));
                rate = rate.max(norm_v(sub(dn, scale(h, xd))));
            }
        }
    }
    SeedReport {
        seed,
        center: fit.center,
        fitted_radius: fit.radius,
        radius_deviation: fit.max_deviation,
        sense,
        sense_matches: sense == want,
        graph_residual: flow.graph_residual,
        normal_drift: drift,
        normal_rate_residual: rate,
        points: pts.len(),
        stop_backward: flow.stop_backward,
        stop_forward: flow.stop_forward,
    }
}

/// Fraction of non-characteristic nodes within `cells` of one of the curves.
pub fn coverage<'a>(patch: &GraphPatch, curves: impl Iterator<Item = &'a [V2]>, cells: usize) -> f64 {
    let tol = patch.default_char_tol();
    let field = patch.proj_field();
    let n = patch.nx * patch.ny;
    let mut hit = vec![false; n];
    let r = cells as isize;
    for c in curves {
        // Walk the polyline finely enough to touch every cell it crosses.
        for w in c.windows(2) {
            let len = norm(sub(w[1], w[0]));
            let steps = ((len / (0.5 * patch.hx.min(patch.hy))).ceil() as usize).clamp(1, 100_000);
            for s in 0..=steps {
                let p = add(w[0], scale(s as f64 / steps as f64, sub(w[1], w[0])));
                let i = ((p[0] - patch.x0) / patch.hx).round() as isize;
                let j = ((p[1] - patch.y0) / patch.hy).round() as isize;
                for dj in -r..=r {
                    for di in -r..=r {
                        let (a, b) = (i + di, j + dj);
                        if a >= 0 && b >= 0 && (a as usize) < patch.nx && (b as usize) < patch.ny {
                            hit[patch.index(a as usize, b as usize)] = true;
                        }
                    }
                }
            }
        }
    }
    let mut total = 0usize;
    let mut covered = 0usize;
    for (i, j) in patch.nodes() {
        let k = patch.index(i, j);
        if norm_v(field[k]) < tol {
            continue;
        }
        total += 1;
        if hit[k] {
            covered += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    covered as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstVariation {
    /// `∫⟨∇φ*(F), ∇ψ⟩ dξ`; the perimeter derivative for the deformation
    /// `f + sψ` (independent of orientation since φ* is even).
    pub d_perimeter: f64,
    /// Volume derivative `o·∫ψ dξ` (raising the graph grows a subgraph and
    /// shrinks an epigraph).
    pub d_volume: f64,
    /// `∫ψ dξ`.
    pub mass: f64,
    /// `d(P⁴/V³)/ds = (4·dP·V − 3·dV·P)·P³/V⁴`, when totals were given.
    pub quotient_derivative: Option<f64>,
    /// `(4·dP/P − 3·dV/V)/sup|ψ|`, the scale-free criticality measure.
    pub normalized: Option<f64>,
}

/// First variation of perimeter and volume under `f ↦ f + s·ψ` for a
/// node field `ψ` that vanishes within 3 cells of the patch boundary.
/// `totals = (P, V)` of the whole set enables the quotient derivative.
pub fn first_variation(norm: &Norm, patch: &GraphPatch, test: &[f64], totals: Option<(f64, f64)>) -> Result<FirstVariation, FoliationError> {
    let nn = patch.nx * patch.ny;
    if test.len() != nn {
        return Err(FoliationError::ShapeMismatch { got: test.len(), want: nn });
    }
    for k in 0..nn {
        if test[k] != 0.0 {
            let (i, j) = (k % patch.nx, k / patch.nx);
            if !patch.mask[k] || patch.depth(i, j, 3) < 3 {
                return Err(FoliationError::SupportTouchesBoundary);
            }
        }
    }
    let dual = norm.dual().expect("dual");
    let field = patch.proj_field();
    let cell = patch.hx * patch.hy;
    let mut dp = 0.0;
    let mut mass = 0.0;
    let mut sup = 0.0f64;
    for (i, j) in patch.nodes() {
        let k = patch.index(i, j);
        mass += test[k];
        sup = sup.max(test[k].abs());
        let gx = patch.diff(test, i, j, 0);
        let gy = patch.diff(test, i, j, 1);
        if gx == 0.0 && gy == 0.0 {
            continue;
        }
        let f = field[k];
        // ∇φ* is bounded; at a characteristic node (measure zero) it is skipped.
        if f == [0.0, 0.0] {
            continue;
        }
        let x = dual.grad(f).unwrap_or_else(|_| dual.grad_unchecked(f));
        dp += dot(x, [gx, gy]);
    }
    dp *= cell;
    mass *= cell;
    let dv = patch.orientation * mass;
    let (qd, normalized) = match totals {
        Some((p, v)) => (Some((4.0 * dp * v - 3.0 * dv * p) * p.powi(3) / v.powi(4)), Some((4.0 * dp / p - 3.0 * dv / v) / sup.max(f64::MIN_POSITIVE))),
        None => (None, None),
    };
    Ok(FirstVariation { d_perimeter: dp, d_volume: dv, mass, quotient_derivative: qd, normalized })
}

/// Smooth bump `amp·exp(1 − 1/(1 − |ξ−c|²/r²))` sampled on the patch nodes
/// (peak value `amp`).
pub fn bump_field(patch: &GraphPatch, center: V2, radius: f64, amp: f64) -> Vec<f64> {
    let mut out = vec![0.0; patch.nx * patch.ny];
    for (i, j) in patch.nodes() {
        let d = sub(patch.node(i, j), center);
        let q = dot(d, d) / (radius * radius);
        if q < 1.0 {
            out[patch.index(i, j)] = amp * (1.0 - 1.0 / (1.0 - q)).exp();
        }
    }
    out
}

/// Faces of a crystalline norm: kink lines `L_i = ℝ v_i*` of φ* and edge
/// directions `e_i` of the unit circle (`i < N`, half the edge count).
#[derive(Debug, Clone, Serialize)]
pub struct FaceData {
    pub dual_vertices: Vec<V2>,
    pub edges: Vec<V2>,
}

pub fn face_data(polygon: &Norm) -> Result<FaceData, FoliationError> {
    let verts = polygon.polygon_vertices().ok_or(FoliationError::NotCrystalline)?;
    let duals = polygon.polygon_dual_vertices().ok_or(FoliationError::NotCrystalline)?;
    let n = verts.len() / 2;
    let edges: Vec<V2> = (0..n).map(|i| sub(verts[i], verts[(i + verts.len() - 1) % verts.len()])).collect();
    Ok(FaceData { dual_vertices: duals[..n].to_vec(), edges })
}

#[derive(Debug, Clone, Serialize)]
pub struct FaceReport {
    /// Face index when every non-characteristic node has `F ∈ L_i` for one `i`.
    pub face: Option<usize>,
    /// Node counts per face line; the last entry counts nodes with `F`
    /// strictly inside a dual cone (off every line).
    pub partition: Vec<usize>,
    /// Largest `|⟨∇f, ê_i⟩ − ω(ξ, ê_i)|` over nodes of the reported face
    /// (the lines parallel to `e_i` are lifts on the graph).
    pub ruled_residual: f64,
    /// All nodes lie in one open dual cone: `∇φ*(F)` is constant there and
    /// the surface cannot be φ-isoperimetric (perimeter is stationary under
    /// every compactly supported variation while volume is not).
    pub open_cone: Option<usize>,
    pub message: String,
}

/// Classifies the projected gradient of a patch against the kink lines of
/// a crystalline φ*. `angle_tol` is the accepted angle between `F` and a line.
pub fn crystalline_face_foliation(polygon: &Norm, patch: &GraphPatch, angle_tol: f64) -> Result<FaceReport, FoliationError> {
    let data = face_data(polygon)?;
    let n = data.dual_vertices.len();
    let field = patch.proj_field();
    let char_tol = 1e-9;
    let mut partition = vec![0usize; n + 1];
    let mut cones = std::collections::BTreeSet::new();
    let mut node_face = Vec::new();
    let line_angles: Vec<f64> = data.dual_vertices.iter().map(|&v| angle(v)).collect();
    let duals_all = polygon.polygon_dual_vertices().unwrap();
    for (i, j) in patch.nodes() {
        let k = patch.index(i, j);
        let f = field[k];
        if norm_v(f) < char_tol {
            continue;
        }
        let a = angle(f);
        let hit = line_angles.iter().position(|&l| {
            let d = wrap_angle(a - l);
            d.abs() < angle_tol || (d.abs() - std::f64::consts::PI).abs() < angle_tol
        });
        match hit {
            Some(face) => {
                partition[face] += 1;
                node_face.push((i, j, face));
            }
            None => {
                partition[n] += 1;
                // Cone between consecutive dual vertices containing F.
                let m = duals_all.len();
                let cone = (0..m).find(|&c| cross(duals_all[c], f) > 0.0 && cross(f, duals_all[(c + 1) % m]) > 0.0).unwrap_or(0);
                cones.insert(cone);
            }
        }
    }
    let on_lines: usize = partition[..n].iter().sum();
    let faces_used: Vec<usize> = (0..n).filter(|&i| partition[i] > 0).collect();
    let mut ruled = 0.0f64;
    let face = if partition[n] == 0 && faces_used.len() == 1 { Some(faces_used[0]) } else { None };
    if let Some(fi) = face {
        let e = data.edges[fi];
        let eu = scale(1.0 / norm(e), e);
        for &(i, j, _) in &node_face {
            let g = patch.node_grad(i, j);
            let xi = patch.node(i, j);
            ruled = ruled.max((dot(g, eu) - symplectic(xi, eu)).abs());
        }
    }
    let open_cone = if on_lines == 0 && cones.len() == 1 { cones.iter().next().copied() } else { None };
    let message = match (face, open_cone) {
        (Some(i), _) => format!("single face {i}: F lies on the kink line of dual vertex {i}; lines parallel to e_{i} are lifts"),
        (None, Some(c)) => format!("F stays inside open dual cone {c}: the φ-normal is constant, perimeter is stationary for every variation while volume is not, so the set is not φ-isoperimetric"),
        _ => format!("no single face: {} nodes on {} lines, {} nodes off every line", on_lines, faces_used.len(), partition[n]),
    };
    Ok(FaceReport { face, partition, ruled_residual: ruled, open_cone, message })
}

/// Ruled graph over the face of dual vertex `i`:
/// `f(ξ) = g(⟨ξ,n̂⟩) + ⟨ξ,n̂⟩⟨ξ,ê⟩ω(n̂,ê)` with `n̂ ∥ v_i*`, `ê ∥ e_i`, so that
/// `⟨∇f, ê⟩ = ω(ξ, ê)` and every line parallel to `e_i` lifts into the graph.
/// Returns `(f, ∇f)` closures' values at `ξ`.
pub fn ruled_face_height(polygon: &Norm, face: usize, profile: impl Fn(f64) -> (f64, f64), xi: V2) -> Result<(f64, V2), FoliationError> {
    let data = face_data(polygon)?;
    let v = data.dual_vertices[face % data.dual_vertices.len()];
    let e = data.edges[face % data.edges.len()];
    let nh = scale(1.0 / norm(v), v);
    let eh = scale(1.0 / norm(e), e);
    let w = symplectic(nh, eh);
    let (a, b) = (dot(xi, nh), dot(xi, eh));
    let (g, dg) = profile(a);
    let f = g + a * b * w;
    let grad = add(scale(dg + b * w, nh), scale(a * w, eh));
    Ok((f, grad))
}

/// Convenience: the ruled face patch on `[-half, half]²` with `n × n` nodes.
pub fn ruled_face_patch(polygon: &Norm, face: usize, n: usize, half: f64) -> Result<GraphPatch, FoliationError> {
    face_data(polygon)?;
    let h = 2.0 * half / (n - 1) as f64;
    let prof = |a: f64| (2.0 * a + 0.3 * a * a, 2.0 + 0.6 * a);
    let f = |x: V2| ruled_face_height(polygon, face, prof, x).unwrap().0;
    let g = |x: V2| ruled_face_height(polygon, face, prof, x).unwrap().1;
    Ok(GraphPatch::from_fn(n, n, -half, -half, h, h, f, Some(&g), |_| true))
}

/// Helper: all characteristic components of a patch at its default tolerance.
pub fn characteristic_count(patch: &GraphPatch) -> usize {
    characteristic_points(patch, patch.default_char_tol()).len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble::{HemisphereGraph, Sheet};
    use crate::circle::phi_circle;
    use std::f64::consts::PI;

    fn hemisphere_patch(norm: &Norm, n: usize) -> GraphPatch {
        crate::bubble::lower_hemisphere_graph(norm, n).unwrap()
    }

    #[test]
    fn euclidean_hemisphere_has_unit_curvature() {
        let patch = hemisphere_patch(&Norm::euclidean(), 257);
        let field = phi_curvature(&Norm::euclidean(), &patch);
        let st = field.stats();
        // The region lies above the lower sheet: H = −3P/(4V) = −1.
        assert!((st.mean + 1.0).abs() < 1e-4, "{st:?} unresolved {}", field.unresolved);
        assert!(st.rel_std() < 1e-3, "{st:?}");
        assert!(st.count > 30_000, "{st:?}");
    }

    #[test]
    fn flipped_orientation_flips_curvature() {
        let mut patch = hemisphere_patch(&Norm::euclidean(), 129);
        patch.orientation = 1.0;
        patch.refresh();
        let st = phi_curvature(&Norm::euclidean(), &patch).stats();
        assert!((st.mean - 1.0).abs() < 1e-3, "{st:?}");
    }

    #[test]
    fn dilated_hemisphere_curvature_scales() {
        let lam = 2.0;
        let g = HemisphereGraph::new(&Norm::euclidean(), Sheet::Lower).unwrap();
        let n = 257;
        let half = 2.0 * lam;
        let h = 2.0 * half / (n - 1) as f64;
        let f = |x: V2| g.height(scale(1.0 / lam, x)).unwrap_or(0.0) * lam * lam;
        let gr = |x: V2| g.gradient(scale(1.0 / lam, x)).map(|v| scale(lam, v)).unwrap_or([0.0; 2]);
        let mut patch = GraphPatch::from_fn(n, n, -half, -half, h, h, f, Some(&gr), |x| norm(x) < 2.0 * lam - h);
        patch.orientation = -1.0;
        patch.refresh();
        let st = phi_curvature(&Norm::euclidean(), &patch).stats();
        assert!((st.mean + 1.0 / lam).abs() < 1e-4, "{st:?}");
    }

    #[test]
    fn constant_normal_has_zero_curvature() {
        // F stays in one open quadrant of a small plane patch, so ∇φ* is a
        // fixed vertex of the ℓ∞ ball.
        let n = 33;
        let patch = GraphPatch::from_fn(n, n, 0.0, 0.0, 0.01, 0.01, |x| 3.0 * x[0] + 2.0 * x[1], Some(&|_| [3.0, 2.0]), |_| true);
        let field = phi_curvature(&Norm::linf(), &patch);
        let st = field.stats();
        assert!(st.count > 500);
        assert_eq!(st.mean, 0.0);
        assert_eq!(st.std, 0.0);
    }

    #[test]
    fn legendre_flow_traces_unit_circle() {
        let g = HemisphereGraph::new(&Norm::euclidean(), Sheet::Lower).unwrap();
        let flow = legendre_flow(&g, [1.0, 0.0], (-20.0, 20.0), FlowOptions::default()).unwrap();
        assert!(flow.graph_residual < 1e-6, "{}", flow.graph_residual);
        // With the epigraph orientation the flow runs clockwise, from the
        // rim into the characteristic point at the origin.
        assert_eq!(flow.stop_backward, FlowStop::LeftDomain);
        assert_eq!(flow.stop_forward, FlowStop::HitCharacteristic);
        let fit = fit_phi_circle(&Norm::euclidean(), &flow.curve.xy, 1.0);
        assert!(fit.max_deviation < 1e-6, "{fit:?}");
        assert!((norm(*flow.curve.xy.first().unwrap()) - 2.0).abs() < 1e-3);
        assert!(norm(*flow.curve.xy.last().unwrap()) < 0.05);
        assert_eq!(rotation_sense(&flow.curve.xy, fit.center), Sense::Clockwise);
    }

    #[test]
    fn l3_flow_matches_phi_circle() {
        let n3 = Norm::ellp(3.0).unwrap();
        let patch = hemisphere_patch(&n3, 513);
        let flow = legendre_flow(&patch, [0.7, -0.4], (-20.0, 20.0), FlowOptions::default()).unwrap();
        assert!(flow.graph_residual < 1e-6);
        let fit = fit_phi_circle(&n3, &flow.curve.xy, 1.0);
        let circle = phi_circle(&n3, fit.center, 1.0, 40_000);
        let pts3: Vec<[f64; 3]> = flow.curve.xy.iter().map(|p| [p[0], p[1], 0.0]).collect();
        let circ3: Vec<[f64; 3]> = circle.xy.iter().map(|p| [p[0], p[1], 0.0]).collect();
        let d = crate::bubble::directed_hausdorff(&pts3, &circ3);
        assert!(d < 1e-4, "{d} {fit:?}");
    }

    #[test]
    fn foliation_report_sense_follows_curvature_sign() {
        let e = Norm::euclidean();
        let patch = hemisphere_patch(&e, 257);
        let h = phi_curvature(&e, &patch).stats().mean;
        let rep = verify_circle_foliation(&e, &patch, h, FoliationOptions { seeds: 8, ..Default::default() });
        assert!(rep.pass, "{:?}", rep.seeds.iter().map(|s| (s.radius_deviation, s.sense)).collect::<Vec<_>>());
        assert_eq!(rep.expected_sense, Sense::Clockwise);
        // Grid interpolation error; the exact graph meets 1e-5 (see below).
        assert!(rep.max_normal_drift < 1e-4, "{}", rep.max_normal_drift);
        let mut flipped = patch.clone();
        flipped.orientation = 1.0;
        flipped.refresh();
        let rep2 = verify_circle_foliation(&e, &flipped, -h, FoliationOptions { seeds: 8, ..Default::default() });
        assert!(rep2.pass);
        assert_eq!(rep2.expected_sense, Sense::Anticlockwise);
    }

    #[test]
    fn normal_rate_matches_curvature_on_exact_graph() {
        let e = Norm::euclidean();
        let g = HemisphereGraph::new(&e, Sheet::Lower).unwrap();
        let dual = e.dual().unwrap();
        for seed in [[1.0, 0.0], [0.3, 0.9], [-1.2, 0.4]] {
            let flow = legendre_flow(&g, seed, (-20.0, 20.0), FlowOptions::default()).unwrap();
            let rep = seed_report(&dual, -1.0, &e, &g, -1.0, seed, &flow, Sense::Clockwise, 0.05, |x| norm(x) < 1.9);
            assert!(rep.normal_rate_residual < 1e-4, "{rep:?}");
            assert!(rep.normal_drift < 1e-5, "{rep:?}");
            assert!(rep.sense_matches);
        }
    }

    #[test]
    fn bubble_is_critical() {
        let e = Norm::euclidean();
        let patch = hemisphere_patch(&e, 257);
        let (p, v) = (4.0 * PI * PI, 3.0 * PI * PI);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let c = [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)];
            let r = rng.gen_range(0.2..0.6);
            let bump = bump_field(&patch, c, r, 1.0);
            let fv = first_variation(&e, &patch, &bump, Some((p, v))).unwrap();
            assert!(fv.normalized.unwrap().abs() < 1e-3, "{fv:?}");
            assert!((fv.d_volume + fv.mass).abs() < 1e-15);
        }
    }

    #[test]
    fn support_near_rim_is_rejected() {
        let patch = hemisphere_patch(&Norm::euclidean(), 65);
        let bump = bump_field(&patch, [1.9, 0.0], 0.5, 1.0);
        assert_eq!(first_variation(&Norm::euclidean(), &patch, &bump, None), Err(FoliationError::SupportTouchesBoundary));
    }

    #[test]
    fn constant_normal_patch_has_zero_perimeter_variation() {
        let n = 65;
        let patch = GraphPatch::from_fn(n, n, 0.0, 0.0, 0.01, 0.01, |x| 3.0 * x[0] + 2.0 * x[1], Some(&|_| [3.0, 2.0]), |_| true);
        let bump = bump_field(&patch, [0.32, 0.32], 0.2, 1.0);
        let fv = first_variation(&Norm::linf(), &patch, &bump, None).unwrap();
        assert!(fv.d_perimeter.abs() < 1e-14, "{fv:?}");
        assert!(fv.mass > 0.0);
        let rep = crystalline_face_foliation(&Norm::linf(), &patch, 1e-9).unwrap();
        assert!(rep.open_cone.is_some() && rep.face.is_none(), "{rep:?}");
    }

    #[test]
    fn ruled_patch_is_single_face() {
        let sq = Norm::linf();
        for face in 0..2 {
            let patch = ruled_face_patch(&sq, face, 65, 0.5).unwrap();
            let rep = crystalline_face_foliation(&sq, &patch, 1e-9).unwrap();
            assert_eq!(rep.face, Some(face), "{rep:?}");
            assert!(rep.ruled_residual < 1e-8, "{}", rep.ruled_residual);
        }
    }

    #[test]
    fn euclidean_hemisphere_has_no_single_face() {
        let patch = hemisphere_patch(&Norm::euclidean(), 65);
        let rep = crystalline_face_foliation(&Norm::linf(), &patch, 1e-9).unwrap();
        assert_eq!(rep.face, None);
        assert!(rep.open_cone.is_none());
        assert!(crystalline_face_foliation(&Norm::euclidean(), &patch, 1e-9).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn legendre_invariants_on_exact_graph(r in 0.2f64..1.7, a in 0.0f64..std::f64::consts::TAU, p in 2.0f64..5.0) {
            let nm = Norm::ellp(p).unwrap();
            let g = HemisphereGraph::new(&nm, Sheet::Lower).unwrap();
            let seed = scale(r, nm.unit_point(a));
            let flow = legendre_flow(&g, seed, (-20.0, 20.0), FlowOptions::default()).unwrap();
            proptest::prop_assert!(flow.graph_residual < 1e-6);
            let dual = nm.dual().unwrap();
            let rep = seed_report(&dual, -1.0, &nm, &g, -1.0, seed, &flow, Sense::Clockwise, 0.05, |x| nm.eval(x) < 1.9);
            proptest::prop_assert!(rep.normal_drift < 1e-5, "{:?}", rep);
            proptest::prop_assert!(rep.sense_matches);
        }
    }

    #[test]
    fn circle_fit_recovers_center() {
        let n = Norm::ellp(3.0).unwrap();
        let c = [0.3, -0.2];
        let pts: Vec<V2> = (0..50).map(|k| add(c, scale(1.5, n.unit_point(0.05 * k as f64)))).collect();
        let fit = fit_phi_circle(&n, &pts, 1.5);
        assert!(norm(sub(fit.center, c)) < 1e-10 && fit.max_deviation < 1e-10, "{fit:?}");
        assert_eq!(rotation_sense(&pts, fit.center), Sense::Anticlockwise);
    }
}
