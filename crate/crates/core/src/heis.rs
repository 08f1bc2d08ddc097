//! Group law, symplectic form, dilations, horizontal lifts and z-graphs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::cumulative_simpson;
use crate::vec2::{norm, sub, V2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeisError {
    #[error("dilation factor must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("need at least 5 samples, got {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct HPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl HPoint {
    pub const ORIGIN: HPoint = HPoint { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        HPoint { x, y, z }
    }

    pub fn xi(&self) -> V2 {
        [self.x, self.y]
    }

    pub fn inverse(&self) -> HPoint {
        HPoint::new(-self.x, -self.y, -self.z)
    }
}

/// `ω(ξ, ξ') = ½(x y' − x' y)`.
#[inline]
pub fn symplectic(a: V2, b: V2) -> f64 {
    0.5 * (a[0] * b[1] - b[0] * a[1])
}

/// `(ξ, z) * (ξ', z') = (ξ + ξ', z + z' + ω(ξ, ξ'))`.
pub fn group_mul(p: HPoint, q: HPoint) -> HPoint {
    HPoint::new(p.x + q.x, p.y + q.y, p.z + q.z + symplectic(p.xi(), q.xi()))
}

/// `δ_λ(ξ, z) = (λξ, λ²z)`.
pub fn dilate(lambda: f64, p: HPoint) -> Result<HPoint, HeisError> {
    if !(lambda > 0.0) {
        return Err(HeisError::NonPositiveLambda(lambda));
    }
    Ok(HPoint::new(lambda * p.x, lambda * p.y, lambda * lambda * p.z))
}

/// Left-invariant horizontal frame `X = ∂x − (y/2)∂z`, `Y = ∂y + (x/2)∂z`
/// at `p`, as Euclidean vectors.
pub fn horizontal_frame(p: HPoint) -> ([f64; 3], [f64; 3]) {
    ([1.0, 0.0, -0.5 * p.y], [0.0, 1.0, 0.5 * p.x])
}

/// A sampled curve in the plane, optionally lifted with heights `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCurve {
    pub t: Vec<f64>,
    pub xy: Vec<V2>,
    pub dxy: Vec<V2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
}

impl ParamCurve {
    pub fn planar(t: Vec<f64>, xy: Vec<V2>, dxy: Vec<V2>) -> Self {
        ParamCurve { t, xy, dxy, z: None }
    }

    /// Samples `f` (position and velocity) on a uniform grid of `n` nodes
    /// over `[a, b]`, endpoints included.
    pub fn sample(a: f64, b: f64, n: usize, f: impl Fn(f64) -> (V2, V2)) -> Self {
        let nn = n.max(2);
        let t: Vec<f64> = (0..nn).map(|i| a + (b - a) * i as f64 / (nn - 1) as f64).collect();
        let (xy, dxy) = t.iter().map(|&s| f(s)).unzip();
        ParamCurve::planar(t, xy, dxy)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        match (self.xy.first(), self.xy.last()) {
            (Some(&a), Some(&b)) => norm(sub(a, b)) < 1e-12 * (1.0 + norm(a)),
            _ => false,
        }
    }

    /// CSV rows `t,x,y[,z]`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(if self.z.is_some() { "t,x,y,z\n" } else { "t,x,y\n" });
        for i in 0..self.len() {
            s.push_str(&format!("{:.16e},{:.16e},{:.16e}", self.t[i], self.xy[i][0], self.xy[i][1]));
            if let Some(z) = &self.z {
                s.push_str(&format!(",{:.16e}", z[i]));
            }
            s.push('\n');
        }
        s
    }
}

/// Horizontal lift `z(t) = z₀ + ∫ ω(ξ, ξ̇)` by cumulative Simpson on the
/// sample grid. For closed curves on a uniform grid the total gain over the
/// loop is taken from the periodic trapezoid rule instead.
pub fn horizontal_lift(curve: &ParamCurve, z0: f64) -> Result<ParamCurve, HeisError> {
    let n = curve.len();
    if n < 5 {
        return Err(HeisError::TooFewSamples(n));
    }
    let integrand: Vec<f64> = (0..n).map(|i| symplectic(curve.xy[i], curve.dxy[i])).collect();
    let mut z: Vec<f64> = cumulative_simpson(&curve.t, &integrand).into_iter().map(|v| z0 + v).collect();
    if curve.is_closed() && is_uniform(&curve.t) {
        let h = curve.t[1] - curve.t[0];
        let total: f64 = integrand[..n - 1].iter().sum::<f64>() * h;
        z[n - 1] = z0 + total;
    }
    Ok(ParamCurve { z: Some(z), ..curve.clone() })
}

fn is_uniform(t: &[f64]) -> bool {
    let h = t[1] - t[0];
    t.windows(2).all(|w| ((w[1] - w[0]) - h).abs() < 1e-12 * h.abs().max(1e-300))
}

/// Largest `|ż − ω(ξ, ξ̇)|` at interior nodes, with `ż` by central differences.
pub fn horizontality_residual(curve: &ParamCurve) -> f64 {
    let z = curve.z.as_ref().expect("lifted curve");
    let mut worst = 0.0f64;
    for i in 1..curve.len() - 1 {
        let dz = (z[i + 1] - z[i - 1]) / (curve.t[i + 1] - curve.t[i - 1]);
        worst = worst.max((dz - symplectic(curve.xy[i], curve.dxy[i])).abs());
    }
    worst
}

/// A surface given as a graph `z = f(ξ)` that can be queried off-grid.
pub trait GraphSurface: Sync {
    fn height(&self, xi: V2) -> Option<f64>;
    fn gradient(&self, xi: V2) -> Option<V2>;

    /// `+1` when the enclosed region lies below the graph (subgraph), `−1`
    /// when it lies above (epigraph).
    fn orientation(&self) -> f64 {
        1.0
    }

    /// Projected horizontal gradient `F(ξ) = ∇f(ξ) − ½ξ^⊥`.
    fn proj_grad(&self, xi: V2) -> Option<V2> {
        self.gradient(xi).map(|g| proj_from_grad(g, xi))
    }
}

#[inline]
pub fn proj_from_grad(grad: V2, xi: V2) -> V2 {
    [grad[0] + 0.5 * xi[1], grad[1] - 0.5 * xi[0]]
}

/// Heights of a z-graph on a uniform grid with an inclusion mask.
///
/// Node `(i, j)` sits at `(x0 + i·hx, y0 + j·hy)` and is stored at `j·nx + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphPatch {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub hx: f64,
    pub hy: f64,
    pub mask: Vec<bool>,
    pub f: Vec<f64>,
    /// Exact gradients at the nodes, when the patch comes from a closed form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad: Option<Vec<V2>>,
    /// `+1` for subgraphs, `−1` for epigraphs.
    #[serde(default = "one")]
    pub orientation: f64,
    #[serde(skip)]
    cached_f: Option<Vec<V2>>,
}

fn one() -> f64 {
    1.0
}

impl GraphPatch {
    /// Samples `f` (and optionally `∇f`) at nodes where `inside` holds.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fn(
        nx: usize,
        ny: usize,
        x0: f64,
        y0: f64,
        hx: f64,
        hy: f64,
        f: impl Fn(V2) -> f64,
        grad: Option<&dyn Fn(V2) -> V2>,
        inside: impl Fn(V2) -> bool,
    ) -> GraphPatch {
        let mut patch = GraphPatch::empty(nx, ny, x0, y0, hx, hy);
        let mut gvals = grad.map(|_| vec![[0.0, 0.0]; nx * ny]);
        for j in 0..ny {
            for i in 0..nx {
                let p = patch.node(i, j);
                let k = patch.index(i, j);
                if inside(p) {
                    patch.mask[k] = true;
                    patch.f[k] = f(p);
                    if let (Some(g), Some(gv)) = (grad, gvals.as_mut()) {
                        gv[k] = g(p);
                    }
                }
            }
        }
        patch.grad = gvals;
        patch.refresh();
        patch
    }

    pub fn empty(nx: usize, ny: usize, x0: f64, y0: f64, hx: f64, hy: f64) -> GraphPatch {
        assert!(hx > 0.0 && hy > 0.0 && nx >= 2 && ny >= 2, "grid spacing must be positive");
        GraphPatch {
            nx,
            ny,
            x0,
            y0,
            hx,
            hy,
            mask: vec![false; nx * ny],
            f: vec![0.0; nx * ny],
            grad: None,
            orientation: 1.0,
            cached_f: None,
        }
    }

    /// Recomputes the cached `F` field after `f`, `grad` or `mask` change.
    pub fn refresh(&mut self) {
        let field = self.compute_proj_grad();
        self.cached_f = Some(field);
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> V2 {
        [self.x0 + i as f64 * self.hx, self.y0 + j as f64 * self.hy]
    }

    #[inline]
    pub fn inside(&self, i: isize, j: isize) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.nx && (j as usize) < self.ny && self.mask[self.index(i as usize, j as usize)]
    }

    /// Nodes `(i, j)` in the mask.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| (i, j))).filter(|&(i, j)| self.mask[self.index(i, j)])
    }

    /// Distance in cells from `(i, j)` to the nearest node outside the mask
    /// (capped at `cap`).
    pub fn depth(&self, i: usize, j: usize, cap: usize) -> usize {
        let (i, j) = (i as isize, j as isize);
        for r in 0..=cap as isize {
            for d in -r..=r {
                if !self.inside(i + d, j - r) || !self.inside(i + d, j + r) || !self.inside(i - r, j + d) || !self.inside(i + r, j + d) {
                    return r as usize;
                }
            }
        }
        cap
    }

    /// Partial derivative of a node field along x (`axis = 0`) or y, using
    /// the widest centered stencil available in the mask, falling back to
    /// one-sided differences at the rim.
    pub fn diff(&self, values: &[f64], i: usize, j: usize, axis: usize) -> f64 {
        self.diff_with(i, j, axis, |a, b| values[self.index(a, b)])
    }

    /// Same as [`GraphPatch::diff`] for a field given by a node callback.
    pub fn diff_with(&self, i: usize, j: usize, axis: usize, value: impl Fn(usize, usize) -> f64) -> f64 {
        let (di, dj, h) = if axis == 0 { (1isize, 0isize, self.hx) } else { (0, 1, self.hy) };
        let at = |s: isize| -> Option<f64> {
            let (a, b) = (i as isize + s * di, j as isize + s * dj);
            self.inside(a, b).then(|| value(a as usize, b as usize))
        };
        let v0 = value(i, j);
        if let (Some(m2), Some(m1), Some(p1), Some(p2)) = (at(-2), at(-1), at(1), at(2)) {
            return (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
        }
        match (at(-2), at(-1), at(1), at(2)) {
            (_, Some(m1), Some(p1), _) => (p1 - m1) / (2.0 * h),
            (_, _, Some(p1), Some(p2)) => (-3.0 * v0 + 4.0 * p1 - p2) / (2.0 * h),
            (Some(m2), Some(m1), _, _) => (3.0 * v0 - 4.0 * m1 + m2) / (2.0 * h),
            (_, _, Some(p1), None) => (p1 - v0) / h,
            (_, Some(m1), None, _) => (v0 - m1) / h,
            _ => 0.0,
        }
    }

    /// `∇f` at a node: exact when available, differenced otherwise.
    pub fn node_grad(&self, i: usize, j: usize) -> V2 {
        match &self.grad {
            Some(g) => g[self.index(i, j)],
            None => [self.diff(&self.f, i, j, 0), self.diff(&self.f, i, j, 1)],
        }
    }

    fn compute_proj_grad(&self) -> Vec<V2> {
        let mut out = vec![[0.0, 0.0]; self.nx * self.ny];
        for (i, j) in self.nodes() {
            out[self.index(i, j)] = proj_from_grad(self.node_grad(i, j), self.node(i, j));
        }
        out
    }

    /// Cached `F` field (zero outside the mask).
    pub fn proj_field(&self) -> &[V2] {
        self.cached_f.as_deref().expect("GraphPatch::refresh not called")
    }

    /// Hessian of `f` at a node by differencing the gradient field.
    pub fn node_hessian(&self, i: usize, j: usize) -> [[f64; 2]; 2] {
        let gx = |a, b| self.node_grad(a, b)[0];
        let gy = |a, b| self.node_grad(a, b)[1];
        let fxx = self.diff_with(i, j, 0, gx);
        let fxy = 0.5 * (self.diff_with(i, j, 1, gx) + self.diff_with(i, j, 0, gy));
        let fyy = self.diff_with(i, j, 1, gy);
        [[fxx, fxy], [fxy, fyy]]
    }

    /// Default tolerance for characteristic detection: `2·h·median‖DF‖`
    /// over interior nodes. A node within one cell of a zero of `F` has
    /// `|F| ≤ h·‖DF‖/√2`; the median ignores the rim, where `∇f` may blow up.
    pub fn default_char_tol(&self) -> f64 {
        let h = self.hx.max(self.hy);
        let stride = ((self.nx * self.ny) / 4096).max(1);
        let mut samples: Vec<f64> = self
            .nodes()
            .enumerate()
            .filter(|(k, (i, j))| k % stride == 0 && self.depth(*i, *j, 3) >= 3)
            .map(|(_, (i, j))| {
                let hs = self.node_hessian(i, j);
                // DF = Hess f − ½J with J the rotation by π/2.
                let m = [[hs[0][0], hs[0][1] + 0.5], [hs[1][0] - 0.5, hs[1][1]]];
                (m[0][0].powi(2) + m[0][1].powi(2) + m[1][0].powi(2) + m[1][1].powi(2)).sqrt()
            })
            .filter(|v| v.is_finite())
            .collect();
        samples.sort_by(f64::total_cmp);
        let med = samples.get(samples.len() / 2).copied().unwrap_or(1.0);
        2.0 * h * med.max(0.5)
    }

    /// Cell containing `xi` and local coordinates, if all four corners are in the mask.
    fn locate(&self, xi: V2) -> Option<(usize, usize, f64, f64)> {
        let u = (xi[0] - self.x0) / self.hx;
        let v = (xi[1] - self.y0) / self.hy;
        if u < 0.0 || v < 0.0 {
            return None;
        }
        let (i, j) = (u.floor() as usize, v.floor() as usize);
        let (i, j) = (i.min(self.nx - 2), j.min(self.ny - 2));
        let (s, t) = (u - i as f64, v - j as f64);
        if s > 1.0 + 1e-12 || t > 1.0 + 1e-12 {
            return None;
        }
        let ok = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().all(|&(a, b)| self.mask[self.index(i + a, j + b)]);
        ok.then_some((i, j, s, t))
    }

    /// Bicubic Hermite interpolation using node values, gradients and a
    /// differenced cross derivative. Returns `(f, ∇f)`.
    pub fn interpolate(&self, xi: V2) -> Option<(f64, V2)> {
        let (i, j, s, t) = self.locate(xi)?;
        let corner = |a: usize, b: usize| -> [f64; 4] {
            let (ii, jj) = (i + a, j + b);
            let g = self.node_grad(ii, jj);
            let fxy = self.cross_derivative(ii, jj);
            [self.f[self.index(ii, jj)], g[0] * self.hx, g[1] * self.hy, fxy * self.hx * self.hy]
        };
        let c = [corner(0, 0), corner(1, 0), corner(0, 1), corner(1, 1)];
        let h = |x: f64| -> ([f64; 4], [f64; 4]) {
            let (x2, x3) = (x * x, x * x * x);
            (
                [2.0 * x3 - 3.0 * x2 + 1.0, x3 - 2.0 * x2 + x, -2.0 * x3 + 3.0 * x2, x3 - x2],
                [6.0 * x2 - 6.0 * x, 3.0 * x2 - 4.0 * x + 1.0, -6.0 * x2 + 6.0 * x, 3.0 * x2 - 2.0 * x],
            )
        };
        let (hs, dhs) = h(s);
        let (ht, dht) = h(t);
        // Basis slots: (value at node a, d/ds at node a) in s, same in t.
        let mut f = 0.0;
        let mut fs = 0.0;
        let mut ft = 0.0;
        for (b, row) in [(0usize, [0usize, 1]), (1, [2, 3])] {
            for (a, &k) in row.iter().enumerate() {
                let d = c[k];
                let (sv, sd) = (hs[2 * a], hs[2 * a + 1]);
                let (dsv, dsd) = (dhs[2 * a], dhs[2 * a + 1]);
                let (tv, td) = (ht[2 * b], ht[2 * b + 1]);
                let (dtv, dtd) = (dht[2 * b], dht[2 * b + 1]);
                f += d[0] * sv * tv + d[1] * sd * tv + d[2] * sv * td + d[3] * sd * td;
                fs += d[0] * dsv * tv + d[1] * dsd * tv + d[2] * dsv * td + d[3] * dsd * td;
                ft += d[0] * sv * dtv + d[1] * sd * dtv + d[2] * sv * dtd + d[3] * sd * dtd;
            }
        }
        Some((f, [fs / self.hx, ft / self.hy]))
    }

    fn cross_derivative(&self, i: usize, j: usize) -> f64 {
        self.node_hessian(i, j)[0][1]
    }
}

impl GraphSurface for GraphPatch {
    fn height(&self, xi: V2) -> Option<f64> {
        self.interpolate(xi).map(|v| v.0)
    }
    fn gradient(&self, xi: V2) -> Option<V2> {
        self.interpolate(xi).map(|v| v.1)
    }
    fn orientation(&self) -> f64 {
        self.orientation
    }
}

/// `F` on every node of the patch.
pub fn proj_horizontal_gradient(patch: &GraphPatch) -> Vec<V2> {
    patch.proj_field().to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharComponent {
    pub nodes: Vec<(usize, usize)>,
    /// Node of smallest `|F|` in the component.
    pub center: (usize, usize),
    pub diameter: f64,
    pub isolated: bool,
}

/// Nodes with `|F| < tol`, grouped into 8-connected components.
///
/// A component is labelled curve-like when its point cloud is elongated
/// (principal extent ratio above 4) and spans more than 6 cells.
pub fn characteristic_points(patch: &GraphPatch, tol: f64) -> Vec<CharComponent> {
    let field = patch.proj_field();
    let n = patch.nx * patch.ny;
    let hit: Vec<bool> = (0..n).map(|k| patch.mask[k] && norm(field[k]) < tol).collect();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if !hit[start] || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut nodes = Vec::new();
        while let Some(k) = stack.pop() {
            let (i, j) = ((k % patch.nx) as isize, (k / patch.nx) as isize);
            nodes.push((i as usize, j as usize));
            for dj in -1..=1 {
                for di in -1..=1 {
                    let (a, b) = (i + di, j + dj);
                    if a >= 0 && b >= 0 && (a as usize) < patch.nx && (b as usize) < patch.ny {
                        let q = patch.index(a as usize, b as usize);
                        if hit[q] && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
        }
        out.push(summarize_component(patch, field, nodes));
    }
    out
}

fn summarize_component(patch: &GraphPatch, field: &[V2], nodes: Vec<(usize, usize)>) -> CharComponent {
    let pts: Vec<V2> = nodes.iter().map(|&(i, j)| patch.node(i, j)).collect();
    let center = *nodes
        .iter()
        .min_by(|a, b| norm(field[patch.index(a.0, a.1)]).total_cmp(&norm(field[patch.index(b.0, b.1)])))
        .unwrap();
    let mut diameter = 0.0f64;
    // Diameter via the two farthest points from the centroid direction is
    // enough for labelling; exact pairwise max is used for small clusters.
    if pts.len() <= 2000 {
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                diameter = diameter.max(norm(sub(pts[a], pts[b])));
            }
        }
    } else {
        let c = pts[0];
        let far = pts.iter().copied().max_by(|p, q| norm(sub(*p, c)).total_cmp(&norm(sub(*q, c)))).unwrap();
        diameter = pts.iter().map(|&p| norm(sub(p, far))).fold(0.0, f64::max);
    }
    let m = pts.len() as f64;
    let mean = pts.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0] / m, acc[1] + p[1] / m]);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let d = sub(*p, mean);
        sxx += d[0] * d[0];
        sxy += d[0] * d[1];
        syy += d[1] * d[1];
    }
    let tr = sxx + syy;
    let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    let (lmax, lmin) = (0.5 * (tr + disc), 0.5 * (tr - disc));
    let cell = patch.hx.max(patch.hy);
    let elongated = lmax > 16.0 * lmin.max(cell * cell * m / 12.0);
    let isolated = !(elongated && diameter > 6.0 * cell);
    CharComponent { nodes, center, diameter, isolated }
}
