//! φ-bubbles: the surface `Φ(t, τ) = (κ(t) + κ(τ), z(t, τ))` over
//! `D = {τ ∈ [0, L], t ∈ [τ + L/2, τ + 3L/2]}`, its volume, φ-perimeter,
//! isoperimetric quotient and the two hemispheres as z-graphs.
//!
//! The mesh is stored on the grid `t = τ + L/2 + σ`, `σ ∈ [0, L]` sampled
//! at `n_t + 1` nodes and `τ` periodic with `n_τ` nodes. Point `(i, j)`
//! lives at index `i·n_τ + j`.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::circle::CircleParam;
use crate::heis::{group_mul, horizontal_frame, proj_from_grad, symplectic, GraphPatch, GraphSurface, HPoint};
use crate::norm::Norm;
use crate::quad::brent_root;
use crate::vec2::{add, angle, cross, sub, unit, V2};

pub type V3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BubbleError {
    #[error("mesh is degenerate: {0}")]
    DegenerateMesh(String),
    #[error("projection of the hemisphere is not injective (norm is not strictly convex)")]
    FoldOver,
    #[error("volume must be positive, got {0}")]
    NonPositiveVolume(f64),
    #[error("invalid mesh data: {0}")]
    InvalidData(String),
}

#[derive(Debug, Clone)]
pub struct BubbleMesh {
    pub norm: Norm,
    pub n_t: usize,
    pub n_tau: usize,
    /// Euclidean length `L` of the unit circle.
    pub length: f64,
    pub points: Vec<V3>,
    /// `Φ_t` and `Φ_τ` at the nodes (empty for meshes read back from JSON
    /// or moved by a transform that does not track them).
    pub d_t: Vec<V3>,
    pub d_tau: Vec<V3>,
    pub z_north: f64,
    /// Area of the unit φ-disk, from the circle tables.
    pub disk_area: f64,
    /// Absolute tolerance of the z integral along one column.
    pub z_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PoleReport {
    /// Largest `|Φ(τ + L/2, τ)|` over τ.
    pub south_max: f64,
    /// Spread `max − min` of `z(τ + 3L/2, τ)` and the largest horizontal offset.
    pub north_spread: f64,
    pub north_offset: f64,
    /// Largest `|z(τ + L, τ) − Area(D_φ)/2|`.
    pub equator_dev: f64,
    pub z_north: f64,
    pub half_area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PerimeterReport {
    pub perimeter: f64,
    /// Fraction of the total measure on triangles whose horizontal normal
    /// points along a kink ray of φ*.
    pub kink_fraction: f64,
    pub kink_warning: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    /// Absolute tolerance of the z integral along a whole column; each mesh
    /// step gets its share in proportion to the polar angle it sweeps.
    pub z_tol: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { z_tol: 1e-11 }
    }
}

/// Builds the bubble with default tolerances.
pub fn build_bubble(norm: &Norm, n_t: usize, n_tau: usize) -> BubbleMesh {
    build_bubble_with(norm, n_t, n_tau, BuildOptions::default())
}

pub fn build_bubble_with(norm: &Norm, n_t: usize, n_tau: usize, opts: BuildOptions) -> BubbleMesh {
    let n_t = n_t.max(4) & !1;
    let n_tau = n_tau.max(4);
    let circle = CircleParam::euclid(norm, 4096.max(n_t));
    assemble(&circle, n_t, n_tau, opts.z_tol)
}

struct Node {
    theta: f64,
    pos: V2,
    vel: V2,
}

fn assemble(circle: &CircleParam, n_t: usize, n_tau: usize, z_tol: f64) -> BubbleMesh {
    let norm = circle.norm().clone();
    let len = circle.period();
    // Circle data at every t needed: t = τ_j + L/2 + σ_i.
    let eval_node = |t: f64| -> Node {
        let theta = circle.theta_at(t);
        let (pos, vel, _) = circle.eval(t);
        Node { theta, pos, vel }
    };
    let aligned = n_t % n_tau == 0;
    let cache: Vec<Node> = if aligned {
        (0..n_t).into_par_iter().map(|k| eval_node(len * k as f64 / n_t as f64)).collect()
    } else {
        Vec::new()
    };
    let kinks = norm.profile_breaks();
    let columns: Vec<(Vec<V3>, Vec<V3>, Vec<V3>)> = (0..n_tau)
        .into_par_iter()
        .map(|j| {
            let tau = len * j as f64 / n_tau as f64;
            let base = if aligned { copy_node(&cache[(j * (n_t / n_tau)) % n_t]) } else { eval_node(tau) };
            let b = base.pos;
            let node_at = |i: usize| -> Node {
                if aligned {
                    let k = j * (n_t / n_tau) + n_t / 2 + i;
                    let wraps = (k / n_t) as f64;
                    let c = &cache[k % n_t];
                    Node { theta: c.theta + wraps * TAU, pos: c.pos, vel: c.vel }
                } else {
                    eval_node(tau + 0.5 * len + len * i as f64 / n_t as f64)
                }
            };
            let mut pts = Vec::with_capacity(n_t + 1);
            let mut dts = Vec::with_capacity(n_t + 1);
            let mut dtaus = Vec::with_capacity(n_t + 1);
            let mut z = 0.0;
            let mut prev_theta = base.theta + PI;
            for i in 0..=n_t {
                let nd = node_at(i);
                // Keep θ continuous along the column.
                let mut th = nd.theta;
                while th < prev_theta - 1e-9 {
                    th += TAU;
                }
                if i > 0 {
                    z += column_integral(&norm, b, prev_theta, th, z_tol, &kinks);
                }
                prev_theta = th;
                let xi = add(nd.pos, b);
                pts.push([xi[0], xi[1], z]);
                dts.push([nd.vel[0], nd.vel[1], symplectic(xi, nd.vel)]);
                dtaus.push([base.vel[0], base.vel[1], symplectic(base.vel, xi)]);
            }
            (pts, dts, dtaus)
        })
        .collect();
    let n = (n_t + 1) * n_tau;
    let mut points = vec![[0.0; 3]; n];
    let mut d_t = vec![[0.0; 3]; n];
    let mut d_tau = vec![[0.0; 3]; n];
    for (j, (p, a, b)) in columns.into_iter().enumerate() {
        for i in 0..=n_t {
            points[i * n_tau + j] = p[i];
            d_t[i * n_tau + j] = a[i];
            d_tau[i * n_tau + j] = b[i];
        }
    }
    let z_north = (0..n_tau).map(|j| points[n_t * n_tau + j][2]).sum::<f64>() / n_tau as f64;
    BubbleMesh { norm, n_t, n_tau, length: len, points, d_t, d_tau, z_north, disk_area: circle.disk_area(), z_tol }
}

fn copy_node(n: &Node) -> Node {
    Node { theta: n.theta, pos: n.pos, vel: n.vel }
}

/// `∫ ω(p(θ) + b, p'(θ)) dθ` over `[a, c]`, split at kink angles, by
/// adaptive Simpson on each smooth piece.
fn column_integral(norm: &Norm, b: V2, a: f64, c: f64, z_tol: f64, kinks: &[f64]) -> f64 {
    let mut cuts = vec![a, c];
    for &k in kinks {
        let mut x = k + ((a - k) / TAU).ceil() * TAU;
        while x < c {
            if x > a {
                cuts.push(x);
            }
            x += TAU;
        }
    }
    cuts.sort_by(f64::total_cmp);
    let f = |th: f64| {
        let pr = norm.profile(th);
        let p = crate::vec2::scale(1.0 / pr.g, unit(th));
        let dp = crate::norm::tangent_from_profile(th, pr);
        symplectic(add(p, b), dp)
    };
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo <= 0.0 {
            continue;
        }
        // Evaluate just inside the piece so one-sided derivatives are used at kinks.
        let nudge = 1e-13 * (1.0 + hi.abs());
        let (fa, fb) = (f(lo + nudge), f(hi - nudge));
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        total += adaptive_simpson(&f, lo, hi, fa, fm, fb, whole, z_tol * (hi - lo) / TAU, 0);
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth >= 40 || (depth >= 1 && delta.abs() <= 15.0 * tol) {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1) + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)
}

pub fn pole_report(mesh: &BubbleMesh) -> PoleReport {
    let (n_t, n_tau) = (mesh.n_t, mesh.n_tau);
    let mut south_max = 0.0f64;
    let mut north_offset = 0.0f64;
    let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let half = 0.5 * mesh.disk_area;
    let mut equator_dev = 0.0f64;
    for j in 0..n_tau {
        let s = mesh.points[j];
        south_max = south_max.max(s[0].abs()).max(s[1].abs()).max(s[2].abs());
        let nn = mesh.points[n_t * n_tau + j];
        north_offset = north_offset.max(nn[0].abs()).max(nn[1].abs());
        zmin = zmin.min(nn[2]);
        zmax = zmax.max(nn[2]);
        let e = mesh.points[(n_t / 2) * n_tau + j];
        equator_dev = equator_dev.max((e[2] - half).abs());
    }
    PoleReport { south_max, north_spread: zmax - zmin, north_offset, equator_dev, z_north: mesh.z_north, half_area: half }
}

impl BubbleMesh {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> V3 {
        self.points[i * self.n_tau + (j % self.n_tau)]
    }

    /// Triangles as index triples, two per grid cell.
    pub fn triangles(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.triangles_strided(1)
    }

    /// Triangles of the sub-grid that keeps every `stride`-th node.
    pub fn triangles_strided(&self, stride: usize) -> impl Iterator<Item = [usize; 3]> + '_ {
        let nt = self.n_tau;
        let s = stride;
        (0..self.n_t / s).flat_map(move |i| {
            (0..nt / s).flat_map(move |j| {
                let (i0, i1, j0, j1) = (i * s, (i + 1) * s, j * s, ((j + 1) * s) % nt);
                let p00 = i0 * nt + j0;
                let p10 = i1 * nt + j0;
                let p11 = i1 * nt + j1;
                let p01 = i0 * nt + j1;
                [[p00, p10, p11], [p00, p11, p01]]
            })
        })
    }

    /// Whether the half-resolution sub-grid exists (both counts even).
    pub fn can_coarsen(&self) -> bool {
        self.n_t % 4 == 0 && self.n_tau % 2 == 0
    }

    /// Applies a map to every point. Derivative data is dropped.
    pub fn mapped(&self, f: impl Fn(V3) -> V3) -> BubbleMesh {
        let points: Vec<V3> = self.points.iter().map(|&p| f(p)).collect();
        let north = f([0.0, 0.0, self.z_north]);
        BubbleMesh { points, d_t: Vec::new(), d_tau: Vec::new(), z_north: north[2], ..self.clone() }
    }

    /// Image under `δ_λ`.
    pub fn dilated(&self, lambda: f64) -> BubbleMesh {
        self.mapped(|p| [lambda * p[0], lambda * p[1], lambda * lambda * p[2]])
    }

    /// Image under left translation by `q`.
    pub fn translated(&self, q: HPoint) -> BubbleMesh {
        self.mapped(|p| {
            let r = group_mul(q, HPoint::new(p[0], p[1], p[2]));
            [r.x, r.y, r.z]
        })
    }

    /// Image under `z ↦ z_N − z`.
    pub fn reflected(&self) -> BubbleMesh {
        let zn = self.z_north;
        let mut out = self.mapped(|p| [p[0], p[1], zn - p[2]]);
        out.z_north = zn;
        out
    }

    /// Mesh JSON `{norm, n_t, n_tau, L, points, z_north}`.
    pub fn to_json(&self) -> Value {
        let flat: Vec<f64> = self.points.iter().flat_map(|p| p.iter().copied()).collect();
        json!({
            "norm": self.norm.descriptor(),
            "n_t": self.n_t,
            "n_tau": self.n_tau,
            "L": self.length,
            "points": flat,
            "z_north": self.z_north,
            "disk_area": self.disk_area,
            "z_tol": self.z_tol,
        })
    }

    pub fn from_json(v: &Value) -> Result<BubbleMesh, BubbleError> {
        let bad = |m: &str| BubbleError::InvalidData(m.to_string());
        let norm = Norm::from_descriptor(v.get("norm").ok_or_else(|| bad("missing norm"))?).map_err(|e| bad(&e.to_string()))?;
        let get_u = |k: &str| v.get(k).and_then(Value::as_u64).map(|x| x as usize).ok_or_else(|| bad(k));
        let get_f = |k: &str| v.get(k).and_then(Value::as_f64).ok_or_else(|| bad(k));
        let n_t = get_u("n_t")?;
        let n_tau = get_u("n_tau")?;
        let flat: Vec<f64> = serde_json::from_value(v.get("points").cloned().unwrap_or(Value::Null)).map_err(|e| bad(&e.to_string()))?;
        if flat.len() != 3 * (n_t + 1) * n_tau {
            return Err(bad("points length does not match n_t, n_tau"));
        }
        let points = flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let length = get_f("L")?;
        let disk_area = v.get("disk_area").and_then(Value::as_f64).unwrap_or_else(|| CircleParam::euclid(&norm, 4096).disk_area());
        Ok(BubbleMesh {
            norm,
            n_t,
            n_tau,
            length,
            points,
            d_t: Vec::new(),
            d_tau: Vec::new(),
            z_north: get_f("z_north")?,
            disk_area,
            z_tol: v.get("z_tol").and_then(Value::as_f64).unwrap_or(0.0),
        })
    }
}

fn tri_area_vector(a: V3, b: V3, c: V3) -> V3 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    [0.5 * (u[1] * v[2] - u[2] * v[1]), 0.5 * (u[2] * v[0] - u[0] * v[2]), 0.5 * (u[0] * v[1] - u[1] * v[0])]
}

fn dot3(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Enclosed volume of the triangulated surface from the flux of `(x, 0, 0)`.
///
/// The polyhedral value has an `O(h²)` error in the grid step, so when the
/// half-resolution sub-grid exists the two values are Richardson-combined.
/// Affine maps of the mesh act on both polyhedra exactly, so dilation and
/// translation identities are unaffected.
pub fn volume(mesh: &BubbleMesh) -> Result<f64, BubbleError> {
    let fine = polyhedral_volume(mesh, 1)?;
    if !mesh.can_coarsen() {
        return Ok(fine);
    }
    let coarse = polyhedral_volume(mesh, 2)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Volume of the polyhedron on the sub-grid with the given stride.
pub fn polyhedral_volume(mesh: &BubbleMesh, stride: usize) -> Result<f64, BubbleError> {
    let mut flux = 0.0;
    // Left translations and dilations are affine, so the node mean follows
    // the mesh and stays a star center.
    let inv = 1.0 / mesh.points.len() as f64;
    let center = mesh.points.iter().fold([0.0; 3], |c, p| [c[0] + p[0] * inv, c[1] + p[1] * inv, c[2] + p[2] * inv]);
    let mut radial_pos = 0.0;
    let mut radial_neg = 0.0;
    for tri in mesh.triangles_strided(stride) {
        let [a, b, c] = tri.map(|k| mesh.points[k]);
        let n = tri_area_vector(a, b, c);
        flux += (a[0] + b[0] + c[0]) / 3.0 * n[0];
        let g = [(a[0] + b[0] + c[0]) / 3.0 - center[0], (a[1] + b[1] + c[1]) / 3.0 - center[1], (a[2] + b[2] + c[2]) / 3.0 - center[2]];
        let r = dot3(g, n) / 3.0;
        if r >= 0.0 {
            radial_pos += r;
        } else {
            radial_neg -= r;
        }
    }
    let (big, small) = if radial_pos >= radial_neg { (radial_pos, radial_neg) } else { (radial_neg, radial_pos) };
    if small > 0.01 * (big - small) {
        return Err(BubbleError::DegenerateMesh(format!("inverted flux {small:.3e} against total {:.3e}", big - small)));
    }
    let v = flux.abs();
    if !(v > 0.0) {
        return Err(BubbleError::NonPositiveVolume(v));
    }
    Ok(v)
}

/// φ-perimeter `Σ φ*(⟨ν, X⟩, ⟨ν, Y⟩)·area` over the triangles, with the
/// frame taken at each centroid, Richardson-combined with the
/// half-resolution sum as for [`volume`].
pub fn perimeter(mesh: &BubbleMesh) -> PerimeterReport {
    let fine = perimeter_sum(mesh, 1);
    if !mesh.can_coarsen() {
        return fine;
    }
    let coarse = perimeter_sum(mesh, 2);
    PerimeterReport { perimeter: (4.0 * fine.perimeter - coarse.perimeter) / 3.0, ..fine }
}

/// Triangle sum on the sub-grid with the given stride.
pub fn perimeter_sum(mesh: &BubbleMesh, stride: usize) -> PerimeterReport {
    let dual = mesh.norm.dual().expect("dual of a valid norm");
    let kink_dirs: Vec<f64> = dual.gradient_kinks();
    let tris: Vec<[usize; 3]> = mesh.triangles_strided(stride).collect();
    let (sum, kink) = tris
        .par_iter()
        .map(|tri| {
            let [a, b, c] = tri.map(|k| mesh.points[k]);
            let n = tri_area_vector(a, b, c);
            let cen = HPoint::new((a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0, (a[2] + b[2] + c[2]) / 3.0);
            let (x, y) = horizontal_frame(cen);
            let ne = [dot3(n, x), dot3(n, y)];
            let v = dual.eval(ne);
            let on_kink = v > 0.0 && kink_dirs.iter().any(|&k| crate::vec2::angle_dist(angle(ne), k) < crate::norm::KINK_TOL);
            (v, if on_kink { v } else { 0.0 })
        })
        .reduce(|| (0.0, 0.0), |p, q| (p.0 + q.0, p.1 + q.1));
    let frac = if sum > 0.0 { kink / sum } else { 0.0 };
    PerimeterReport { perimeter: sum, kink_fraction: frac, kink_warning: frac > 1e-3 }
}

/// `P_φ / V^{3/4}`.
pub fn isop_quotient(mesh: &BubbleMesh) -> Result<f64, BubbleError> {
    let v = volume(mesh)?;
    Ok(perimeter(mesh).perimeter / v.powf(0.75))
}

/// Quotient of the best vertical cylinder `{φ(ξ) < r} × [0, H]` with flat caps.
///
/// The lateral part contributes `2·Area(D_φ)·r·H`, each cap
/// `½∫_{D_φ(r)} φ†`; the quotient depends only on `H/r²` and is minimized
/// at `H/r² = 1.5·C/A` with `C = ∫_{D_φ} φ†`, `A = Area(D_φ)`.
pub fn cylinder_quotient(norm: &Norm) -> f64 {
    let dagger = norm.dagger().expect("dagger of a valid norm");
    let rule = crate::quad::gl64();
    let mut a = 0.0;
    let mut c = 0.0;
    let pieces = 64;
    for k in 0..pieces {
        let lo = TAU * k as f64 / pieces as f64;
        let hi = TAU * (k + 1) as f64 / pieces as f64;
        a += rule.integrate(lo, hi, |th| 0.5 / norm.eval(unit(th)).powi(2));
        c += rule.integrate(lo, hi, |th| dagger.eval(unit(th)) / (3.0 * norm.eval(unit(th)).powi(3)));
    }
    let k = 1.5 * c / a;
    (2.0 * a * k + c) / (a * k).powf(0.75)
}

/// Which sheet of the bubble over `D_φ(2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sheet {
    Lower,
    Upper,
}

/// One hemisphere of the bubble as an exact z-graph over `D_φ(2)`.
///
/// For `ξ` in the disk, the decomposition `ξ = κ(t) + κ(τ)` is found by a
/// 1-D root solve for the polar angle of `κ(t)`; the height then follows
/// from the sector-area form of the lift,
/// `z = Area(sector from −κ(τ) to κ(t)) + ω(κ(τ), κ(t))`.
#[derive(Debug, Clone)]
pub struct HemisphereGraph {
    circle: CircleParam,
    pub sheet: Sheet,
}

/// Decomposition of a point of the hemisphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HemiPoint {
    pub t: f64,
    pub tau: f64,
    pub z: f64,
    pub grad: V2,
}

impl HemisphereGraph {
    pub fn new(norm: &Norm, sheet: Sheet) -> Result<HemisphereGraph, BubbleError> {
        if !norm.gradient_kinks().is_empty() {
            return Err(BubbleError::FoldOver);
        }
        Ok(HemisphereGraph { circle: CircleParam::euclid(norm, 4096), sheet })
    }

    pub fn circle(&self) -> &CircleParam {
        &self.circle
    }

    pub fn norm(&self) -> &Norm {
        self.circle.norm()
    }

    /// Solves `ξ = κ(t) + κ(τ)` on this sheet. `None` outside `D_φ(2)` and at
    /// the pole itself.
    pub fn solve(&self, xi: V2) -> Option<HemiPoint> {
        let norm = self.circle.norm();
        let r = norm.eval(xi);
        if !(r > 0.0 && r < 2.0) {
            return None;
        }
        let th_xi = angle(xi);
        let h = |th: f64| norm.eval(sub(xi, norm.unit_point(th))) - 1.0;
        let (lo, hi) = match self.sheet {
            Sheet::Lower => (th_xi - PI, th_xi),
            Sheet::Upper => (th_xi, th_xi + PI),
        };
        let th_a = brent_root(h, lo, hi, 1e-15)?;
        let a = norm.unit_point(th_a);
        let b = sub(xi, a);
        let th_b = angle(b);
        // θ_a − θ_b lies in (π, 2π) on the lower sheet and (2π, 3π) on the upper one.
        let mut th_a_u = th_a;
        while th_a_u < th_b + PI {
            th_a_u += TAU;
        }
        if self.sheet == Sheet::Upper {
            while th_a_u < th_b + TAU {
                th_a_u += TAU;
            }
        }
        let z = self.circle.sector_area(th_b + PI, th_a_u) + symplectic(b, a);
        let t_a = self.circle.param_at_theta(th_a);
        let t_b = self.circle.param_at_theta(th_b);
        let va = self.circle.velocity_at_theta(th_a);
        let vb = self.circle.velocity_at_theta(th_b);
        // F ⊥ κ̇(t) and ⟨F, κ̇(τ)⟩ = cross(κ̇(τ), ξ).
        let c = cross(vb, xi) / cross(va, vb);
        let f = [-c * va[1], c * va[0]];
        let grad = [f[0] - 0.5 * xi[1], f[1] + 0.5 * xi[0]];
        let len = self.circle.period();
        let mut t = t_a;
        while t < t_b + 0.5 * len {
            t += len;
        }
        if self.sheet == Sheet::Upper {
            while t < t_b + len {
                t += len;
            }
        }
        Some(HemiPoint { t, tau: t_b, z, grad })
    }

    /// Samples the sheet on a square grid of `n × n` nodes covering
    /// `D_φ(2)`; nodes with `φ(ξ) ≥ 2 − rim` are excluded.
    pub fn to_patch(&self, n: usize, rim: f64) -> GraphPatch {
        let norm = self.circle.norm();
        let extent = (0..720)
            .map(|k| {
                let p = norm.unit_point(TAU * k as f64 / 720.0);
                p[0].abs().max(p[1].abs())
            })
            .fold(0.0, f64::max)
            * 2.0;
        let h = 2.0 * extent / (n - 1) as f64;
        let x0 = -extent;
        let mut patch = GraphPatch::empty(n, n, x0, x0, h, h);
        let rows: Vec<Vec<Option<(f64, V2)>>> = (0..n)
            .into_par_iter()
            .map(|j| {
                (0..n)
                    .map(|i| {
                        let p = [x0 + i as f64 * h, x0 + j as f64 * h];
                        let r = norm.eval(p);
                        if r >= 2.0 - rim {
                            None
                        } else if r == 0.0 {
                            Some((0.0, [0.0, 0.0]))
                        } else {
                            self.solve(p).map(|s| (s.z, s.grad))
                        }
                    })
                    .collect()
            })
            .collect();
        let mut grads = vec![[0.0, 0.0]; n * n];
        for (j, row) in rows.into_iter().enumerate() {
            for (i, v) in row.into_iter().enumerate() {
                if let Some((z, g)) = v {
                    let k = patch.index(i, j);
                    patch.mask[k] = true;
                    patch.f[k] = match self.sheet {
                        Sheet::Lower => z,
                        Sheet::Upper if norm.eval(patch.node(i, j)) == 0.0 => self.z_north(),
                        Sheet::Upper => z,
                    };
                    grads[k] = g;
                }
            }
        }
        patch.grad = Some(grads);
        patch.orientation = self.orientation();
        patch.refresh();
        patch
    }

    pub fn z_north(&self) -> f64 {
        self.circle.disk_area()
    }
}

impl GraphSurface for HemisphereGraph {
    fn height(&self, xi: V2) -> Option<f64> {
        if xi == [0.0, 0.0] {
            return Some(match self.sheet {
                Sheet::Lower => 0.0,
                Sheet::Upper => self.z_north(),
            });
        }
        self.solve(xi).map(|s| s.z)
    }

    fn gradient(&self, xi: V2) -> Option<V2> {
        if xi == [0.0, 0.0] {
            return Some([0.0, 0.0]);
        }
        self.solve(xi).map(|s| s.grad)
    }

    /// The region lies above the lower sheet and below the upper one.
    fn orientation(&self) -> f64 {
        match self.sheet {
            Sheet::Lower => -1.0,
            Sheet::Upper => 1.0,
        }
    }

    fn proj_grad(&self, xi: V2) -> Option<V2> {
        self.gradient(xi).map(|g| proj_from_grad(g, xi))
    }
}

/// `lower_hemisphere_graph` on an `n × n` grid.
pub fn lower_hemisphere_graph(norm: &Norm, n: usize) -> Result<GraphPatch, BubbleError> {
    let g = HemisphereGraph::new(norm, Sheet::Lower)?;
    let h = 4.0 / (n - 1) as f64;
    Ok(g.to_patch(n, 0.5 * h))
}

/// Perimeter by parametric quadrature with the exact tangent fields:
/// `∫∫ φ*(⟨Φ_t × Φ_τ, X⟩, ⟨Φ_t × Φ_τ, Y⟩) dσ dτ` with Simpson in σ and the
/// trapezoid rule in the periodic τ direction.
pub fn perimeter_parametric(mesh: &BubbleMesh) -> f64 {
    assert!(!mesh.d_t.is_empty(), "tangent data required");
    let dual = mesh.norm.dual().expect("dual");
    let hs = mesh.length / mesh.n_t as f64;
    let ht = mesh.length / mesh.n_tau as f64;
    let mut total = 0.0;
    for i in 0..=mesh.n_t {
        let w = if i == 0 || i == mesh.n_t {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let mut row = 0.0;
        for j in 0..mesh.n_tau {
            let k = i * mesh.n_tau + j;
            let p = mesh.points[k];
            let (a, b) = (mesh.d_t[k], mesh.d_tau[k]);
            let n = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
            let (x, y) = horizontal_frame(HPoint::new(p[0], p[1], p[2]));
            row += dual.eval([dot3(n, x), dot3(n, y)]);
        }
        total += w * row;
    }
    total * hs / 3.0 * ht
}

/// Largest distance from points of `a` to the point set `b` (brute force).
pub fn directed_hausdorff(a: &[V3], b: &[V3]) -> f64 {
    a.par_iter()
        .map(|p| {
            b.iter()
                .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

pub fn hausdorff(a: &[V3], b: &[V3]) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}

/// Evenly strided subsample of the mesh points (about `count` of them).
pub fn sample_points(mesh: &BubbleMesh, count: usize) -> Vec<V3> {
    let stride = (mesh.points.len() / count.max(1)).max(1);
    mesh.points.iter().step_by(stride).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::gl64;
    use crate::vec2::{norm, scale};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn euclidean_poles_and_equator() {
        let m = build_bubble(&Norm::euclidean(), 256, 128);
        let r = pole_report(&m);
        assert!(r.south_max < 1e-10);
        assert!(r.north_spread < 1e-7 && r.north_offset < 1e-10);
        assert!((r.z_north - PI).abs() < 1e-7);
        assert!((r.half_area - FRAC_PI_2).abs() < 1e-9);
        assert!(r.equator_dev < 1e-7);
    }

    #[test]
    fn crystalline_poles() {
        let m = build_bubble(&Norm::linf(), 256, 64);
        let r = pole_report(&m);
        assert!(r.south_max < 1e-10 && r.north_spread < 1e-7 && r.equator_dev < 1e-7, "{r:?}");
        assert!((r.z_north - 4.0).abs() < 1e-7);
    }

    #[test]
    fn closed_form_height_matches_quadrature() {
        // z = A(t) − A(τ + L/2) + ω(κ(τ), κ(t)) with A the cumulative sector area.
        let n = Norm::ellp(3.0).unwrap();
        let m = build_bubble(&n, 128, 32);
        let c = CircleParam::euclid(&n, 4096);
        for j in (0..32).step_by(5) {
            let tau = m.length * j as f64 / 32.0;
            for i in (0..=128).step_by(9) {
                let t = tau + 0.5 * m.length + m.length * i as f64 / 128.0;
                let want = c.sector_area(c.theta_at(tau + 0.5 * m.length), c.theta_at(t)) + symplectic(c.point(tau), c.point(t));
                assert!((m.at(i, j)[2] - want).abs() < 1e-9);
            }
        }
    }

    fn euclid_volume_oracle() -> f64 {
        // Slices at height z are disks; on the lower sheet ρ = 2 sin(s/2),
        // z = (s − sin s)/2, and the upper sheet is the mirror image.
        2.0 * gl64().integrate(0.0, PI, |s| PI * 4.0 * (s / 2.0).sin().powi(2) * 0.5 * (1.0 - s.cos()))
    }

    #[test]
    fn volume_against_slice_oracle() {
        let m = build_bubble(&Norm::euclidean(), 512, 256);
        let v = volume(&m).unwrap();
        let oracle = euclid_volume_oracle();
        assert!((oracle - 3.0 * PI * PI).abs() < 1e-10);
        assert!((v - oracle).abs() < 1e-5 * oracle, "{v} vs {oracle}");
    }

    #[test]
    fn volume_transforms() {
        let m = build_bubble(&Norm::ellp(3.0).unwrap(), 128, 64);
        let v = volume(&m).unwrap();
        assert!((volume(&m.dilated(2.0)).unwrap() - 16.0 * v).abs() < 1e-9 * v);
        assert!((volume(&m.reflected()).unwrap() - v).abs() < 1e-9 * v);
        for q in [HPoint::new(0.3, -1.1, 2.0), HPoint::new(-1.9, 1.8, -2.0), HPoint::new(4.0, 3.0, 0.0)] {
            assert!((volume(&m.translated(q)).unwrap() - v).abs() < 1e-9 * v);
        }
    }

    #[test]
    fn perimeter_agrees_with_graph_integral() {
        let m = build_bubble(&Norm::euclidean(), 512, 256);
        let p = perimeter(&m).perimeter;
        // Oracle: ∫ φ*(F) over the disk, on both sheets, in polar coordinates.
        let mut oracle = 0.0;
        for sheet in [Sheet::Lower, Sheet::Upper] {
            let g = HemisphereGraph::new(&Norm::euclidean(), sheet).unwrap();
            let rule = gl64();
            let mut s = 0.0;
            // ρ = 2 − u² removes the inverse square-root growth of F at the rim.
            for k in 0..8 {
                let (a, b) = (2f64.sqrt() * k as f64 / 8.0, 2f64.sqrt() * (k + 1) as f64 / 8.0);
                s += rule.integrate(a, b, |u| {
                    let rho = 2.0 - u * u;
                    let f = g.proj_grad([rho, 0.0]).unwrap();
                    norm(f) * rho * TAU * 2.0 * u
                });
            }
            oracle += s;
        }
        assert!((oracle - 4.0 * PI * PI).abs() < 1e-6 * oracle, "{oracle}");
        assert!((p - oracle).abs() < 1e-4 * oracle, "{p} vs {oracle}");
        let pp = perimeter_parametric(&m);
        assert!((pp - oracle).abs() < 1e-6 * oracle, "{pp} vs {oracle}");
    }

    #[test]
    fn perimeter_scaling_and_translation() {
        let m = build_bubble(&Norm::ellipse(1.0, 0.5).unwrap(), 128, 64);
        let p = perimeter(&m).perimeter;
        assert!((perimeter(&m.dilated(1.7)).perimeter - 1.7f64.powi(3) * p).abs() < 1e-10 * p);
        let q = HPoint::new(-0.4, 0.9, 0.2);
        assert!((perimeter(&m.translated(q)).perimeter - p).abs() < 1e-10 * p);
    }

    #[test]
    fn bubble_beats_cylinder() {
        let m = build_bubble(&Norm::euclidean(), 256, 128);
        let q = isop_quotient(&m).unwrap();
        let cyl = cylinder_quotient(&Norm::euclidean());
        assert!((cyl - 8.0 / 3.0 * PI.powf(0.25)).abs() < 1e-10);
        assert!(q < cyl);
    }

    #[test]
    fn lower_graph_near_pole() {
        let g = HemisphereGraph::new(&Norm::euclidean(), Sheet::Lower).unwrap();
        for r in [1e-1, 1e-2, 1e-3] {
            let x = scale(r, unit(0.7));
            let s = g.solve(x).unwrap();
            assert!(s.z.abs() < r * r && norm(s.grad) < r * r, "{r} {s:?}");
        }
        // Oracle: closed form on the euclidean lower sheet, z = (s − sin s)/2 with ρ = 2 sin(s/2).
        for rho in [0.3, 1.0, 1.7] {
            let s = 2.0 * (rho / 2.0f64).asin();
            let want = 0.5 * (s - s.sin());
            assert!((g.solve([0.0, rho]).unwrap().z - want).abs() < 1e-12);
        }
        assert!(matches!(HemisphereGraph::new(&Norm::linf(), Sheet::Lower), Err(BubbleError::FoldOver)));
    }

    #[test]
    fn graph_matches_mesh_points() {
        let n = Norm::ellp(3.0).unwrap();
        let m = build_bubble(&n, 128, 64);
        let lo = HemisphereGraph::new(&n, Sheet::Lower).unwrap();
        let up = HemisphereGraph::new(&n, Sheet::Upper).unwrap();
        for j in (0..64).step_by(7) {
            for i in (3..126).step_by(11) {
                let p = m.at(i, j);
                let g = if i < 64 { &lo } else { &up };
                let z = g.height([p[0], p[1]]).unwrap();
                assert!((z - p[2]).abs() < 1e-9, "i={i} j={j}: {z} vs {}", p[2]);
            }
        }
    }

    #[test]
    fn graph_gradient_matches_differences() {
        let n = Norm::ellipse(1.0, 0.5).unwrap();
        let g = HemisphereGraph::new(&n, Sheet::Lower).unwrap();
        let h = 1e-6;
        for x in [[0.3, 0.2], [-0.9, 0.4], [0.1, -0.6]] {
            let gr = g.gradient(x).unwrap();
            let fx = (g.height([x[0] + h, x[1]]).unwrap() - g.height([x[0] - h, x[1]]).unwrap()) / (2.0 * h);
            let fy = (g.height([x[0], x[1] + h]).unwrap() - g.height([x[0], x[1] - h]).unwrap()) / (2.0 * h);
            assert!((gr[0] - fx).abs() < 1e-7 && (gr[1] - fy).abs() < 1e-7, "{gr:?} vs {fx} {fy}");
        }
    }

    #[test]
    fn patch_rim_and_pole() {
        let patch = lower_hemisphere_graph(&Norm::euclidean(), 129).unwrap();
        let h = patch.hx;
        let n = Norm::euclidean();
        for (i, j) in patch.nodes() {
            assert!(n.eval(patch.node(i, j)) < 2.0);
        }
        let rim = patch.nodes().filter(|&(i, j)| patch.depth(i, j, 2) == 0).map(|(i, j)| n.eval(patch.node(i, j)));
        for r in rim {
            assert!((r - 2.0).abs() < 2.0 * h);
        }
        let c = patch.index(64, 64);
        assert_eq!(patch.node(64, 64), [0.0, 0.0]);
        assert_eq!(patch.f[c], 0.0);
        assert_eq!(patch.proj_field()[c], [0.0, 0.0]);
        let comps = crate::heis::characteristic_points(&patch, 0.05);
        assert_eq!(comps.len(), 1);
        assert!(comps[0].isolated);
    }

    #[test]
    fn reflection_symmetry() {
        let n = Norm::ellp(3.0).unwrap();
        let m = build_bubble(&n, 128, 64);
        let image: Vec<V3> = m.points.iter().map(|p| [p[0], -p[1], m.z_north - p[2]]).collect();
        let cell = m.length / 64.0;
        assert!(hausdorff(&sample_points(&m, 4000), &image) < 2.0 * cell);
    }

    #[test]
    fn json_round_trip() {
        let m = build_bubble(&Norm::ellp(3.0).unwrap(), 32, 16);
        let back = BubbleMesh::from_json(&m.to_json()).unwrap();
        assert_eq!(back.points, m.points);
        assert!((volume(&back).unwrap() - volume(&m).unwrap()).abs() < 1e-14);
    }
}
