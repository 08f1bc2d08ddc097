//! Crystalline norms: vertex and dual-vertex data, the edge fields, and the
//! smooth approximations `φ_ε` with convergence diagnostics.
//!
//! Vertices `v_0 … v_{2N−1}` run anticlockwise with `v_{i+N} = −v_i`; the
//! edge `e_i = v_i − v_{i−1}` carries the dual vertex `v_i*`, the solution
//! of `⟨v_i*, v_{i−1}⟩ = ⟨v_i*, v_i⟩ = 1`.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bubble::{build_bubble, hausdorff, isop_quotient, sample_points, BubbleError, BubbleMesh, V3};
use crate::norm::{Norm, NormError};
use crate::quad::{gl16, gl64, golden_max};
use crate::vec2::{cross, dot, norm, sub, unit, V2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrystalError {
    #[error("need an even number >= 4 of vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertex {0} is not the antipode of its partner")]
    NotSymmetric(usize),
    #[error("vertices are not strictly convex and anticlockwise at {0}")]
    NotConvex(usize),
    #[error("the dual-vertex system for edge {0} is singular")]
    DegenerateEdge(usize),
    #[error("the norm is not crystalline")]
    NotCrystalline,
    #[error("mollifier quadrature is unreliable: {0}")]
    QuadratureUnstable(String),
    #[error("the ε ladder must be strictly decreasing and inside (0, 1)")]
    BadLadder,
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Bubble(#[from] BubbleError),
}

pub type Result<T> = std::result::Result<T, CrystalError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolygonData {
    pub vertices: Vec<V2>,
    /// `edges[i] = v_i − v_{i−1}`.
    pub edges: Vec<V2>,
    /// `dual_vertices[i]` belongs to `edges[i]`.
    pub dual_vertices: Vec<V2>,
}

/// Largest violations of the dual-vertex equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualResiduals {
    /// `max |⟨v_i*, e_i⟩|`.
    pub edge: f64,
    /// `max |⟨v_i*, v_i⟩ − 1|` and `max |⟨v_i*, v_{i−1}⟩ − 1|`.
    pub vertex: f64,
    pub previous: f64,
}

impl PolygonData {
    /// Validates the vertex list. The second half is replaced by the exact
    /// negatives of the first once they agree to 1e-12 relative.
    pub fn new(vertices: &[V2]) -> Result<PolygonData> {
        let n = vertices.len();
        if n < 4 || n % 2 != 0 {
            return Err(CrystalError::TooFewVertices(n));
        }
        let size = vertices.iter().map(|&v| norm(v)).fold(0.0, f64::max);
        if !(size > 0.0 && size.is_finite()) {
            return Err(CrystalError::TooFewVertices(n));
        }
        let half = n / 2;
        let mut verts = vertices.to_vec();
        for i in 0..half {
            let (a, b) = (verts[i], verts[i + half]);
            if norm([a[0] + b[0], a[1] + b[1]]) > 1e-12 * size {
                return Err(CrystalError::NotSymmetric(i + half));
            }
            verts[i + half] = [-a[0], -a[1]];
        }
        let mut edges = Vec::with_capacity(n);
        let mut duals = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = (verts[(i + n - 1) % n], verts[i]);
            let det = cross(a, b);
            if det.abs() <= 1e-14 * size * size {
                return Err(CrystalError::DegenerateEdge(i));
            }
            edges.push(sub(b, a));
            duals.push([(b[1] - a[1]) / det, (a[0] - b[0]) / det]);
        }
        for i in 0..n {
            if cross(edges[i], edges[(i + 1) % n]) <= 1e-14 * size * size {
                return Err(CrystalError::NotConvex(i));
            }
        }
        Ok(PolygonData { vertices: verts, edges, dual_vertices: duals })
    }

    /// Vertices of a crystalline norm's unit ball (after its normalization).
    pub fn from_norm(poly: &Norm) -> Result<PolygonData> {
        PolygonData::new(&poly.polygon_vertices().ok_or(CrystalError::NotCrystalline)?)
    }

    /// `N`, half the vertex count.
    pub fn half(&self) -> usize {
        self.vertices.len() / 2
    }

    pub fn to_norm(&self) -> Result<Norm> {
        Ok(Norm::polygon(&self.vertices)?)
    }

    pub fn residuals(&self) -> DualResiduals {
        let n = self.vertices.len();
        let mut r = DualResiduals { edge: 0.0, vertex: 0.0, previous: 0.0 };
        for i in 0..n {
            let w = self.dual_vertices[i];
            r.edge = r.edge.max(dot(w, self.edges[i]).abs());
            r.vertex = r.vertex.max((dot(w, self.vertices[i]) - 1.0).abs());
            r.previous = r.previous.max((dot(w, self.vertices[(i + n - 1) % n]) - 1.0).abs());
        }
        r
    }
}

/// The dual polygon, whose vertices are the dual vertices in edge order.
/// Taking the dual twice returns the original vertices shifted by one index.
pub fn polygon_dual(poly: &PolygonData) -> Result<PolygonData> {
    PolygonData::new(&poly.dual_vertices)
}

/// The edge vectors `e_i`, which are the coefficient vectors of the
/// horizontal fields `X_i = e_{i,1}X + e_{i,2}Y`.
pub fn edge_fields(poly: &PolygonData) -> Vec<V2> {
    let n = poly.half();
    for i in 0..n {
        let (a, b) = (poly.edges[i], poly.edges[i + n]);
        assert!(a[0] == -b[0] && a[1] == -b[1], "edge {i} is not antipodal");
    }
    poly.edges.clone()
}

// ---------------------------------------------------------------------------
// Smooth approximation

#[derive(Debug, Clone)]
pub struct Mollified {
    pub norm: Norm,
    /// `sup_θ |φ/φ_ε − 1|`.
    pub eta: f64,
    /// Smallest curvature of `C_{φ_ε}` over the table nodes.
    pub min_curvature: f64,
}

/// `φ_ε = √(ψ_ε² + ε|ξ|²)` with `ψ_ε` the rotational convolution of `base`
/// with a bump supported in `[−επ, επ]`.
pub fn mollify(base: &Norm, eps: f64) -> Result<Mollified> {
    let norm = Norm::mollified(base, eps)?;
    let width = eps * std::f64::consts::PI;
    let bump = |t: f64| {
        let s = t / width;
        if s.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - s * s)).exp()
        }
    };
    // The table uses one 64-node rule over the support; compare against a
    // composite rule so an under-resolved bump is caught. The two agree to
    // about 2e-12 for every width.
    let single = gl64().integrate(-width, width, bump);
    let panels = 32;
    let composite: f64 = (0..panels)
        .map(|k| {
            let a = -width + 2.0 * width * k as f64 / panels as f64;
            gl16().integrate(a, a + 2.0 * width / panels as f64, bump)
        })
        .sum();
    let gap = (single / composite - 1.0).abs();
    if !(gap < 1e-10) {
        return Err(CrystalError::QuadratureUnstable(format!("bump mass differs by {gap:.3e} between rules")));
    }
    let nodes = crate::norm::TABLE_SIZE;
    let min_curvature = (0..nodes).map(|k| norm.circle_curvature(TAU * k as f64 / nodes as f64)).fold(f64::INFINITY, f64::min);
    if !(min_curvature > 0.0) {
        return Err(CrystalError::QuadratureUnstable(format!("unit circle curvature {min_curvature:.3e} is not positive")));
    }
    let eta = sandwich_eta(base, &norm);
    Ok(Mollified { norm, eta, min_curvature })
}

/// `sup_θ |φ(u_θ)/φ_ε(u_θ) − 1|`: 4096 uniform angles plus the kinks of
/// `φ`, each local maximum refined by golden section.
pub fn sandwich_eta(base: &Norm, approx: &Norm) -> f64 {
    let dev = |th: f64| (base.eval(unit(th)) / approx.eval(unit(th)) - 1.0).abs();
    let n = 4096;
    let step = TAU / n as f64;
    let grid: Vec<f64> = (0..n).map(|k| dev(k as f64 * step)).collect();
    let mut best = grid.iter().copied().fold(0.0, f64::max);
    for k in 0..n {
        let (l, c, r) = (grid[(k + n - 1) % n], grid[k], grid[(k + 1) % n]);
        if c >= l && c >= r {
            let th = k as f64 * step;
            best = best.max(golden_max(dev, th - step, th + step, 1e-13).1);
        }
    }
    base.profile_breaks().into_iter().map(dev).fold(best, f64::max)
}

/// Smallest `φ − (1−η)φ_ε` and `(1+η)φ_ε − φ` over the given directions.
pub fn sandwich_residual(base: &Norm, approx: &Norm, eta: f64, directions: &[f64]) -> f64 {
    directions
        .iter()
        .map(|&th| {
            let (p, q) = (base.eval(unit(th)), approx.eval(unit(th)));
            (p - (1.0 - eta) * q).min((1.0 + eta) * q - p)
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy)]
pub struct StudyOptions {
    pub n_t: usize,
    pub n_tau: usize,
    /// Surface points sampled per mesh for the Hausdorff distance.
    pub samples: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions { n_t: 512, n_tau: 256, samples: 20_000 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderEntry {
    pub eps: f64,
    pub eta: f64,
    pub min_curvature: f64,
    /// Hausdorff distance between `E_{φ_ε}` and `E_φ` over the samples.
    pub hausdorff: f64,
    /// Upper bound on the distance from any mesh point to its sample set.
    pub sampling_bound: f64,
    /// `Isop_{φ_ε}(E_{φ_ε})`.
    pub quotient_smooth: f64,
    /// `Isop_φ(E_{φ_ε})`.
    pub quotient_base: f64,
    /// `|Isop_{φ_ε}(E_{φ_ε}) − Isop_φ(E_φ)|`.
    pub quotient_gap: f64,
    /// `Isop_φ(E_{φ_ε}) / ((1−η)/(1+η)·Isop_{φ_ε}(E_{φ_ε})) − 1`.
    pub sandwich_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub ladder: Vec<f64>,
    pub entries: Vec<LadderEntry>,
    /// `Isop_φ(E_φ)` of the crystalline bubble.
    pub base_quotient: f64,
    /// η nonincreasing along the ladder, up to 1e-3.
    pub eta_monotone: bool,
    pub hausdorff_decreasing: bool,
    /// Every sandwich residual is above −1e-4.
    pub sandwich_ok: bool,
    /// Optimality of the crystalline bubble is not concluded from this.
    pub conclusion: &'static str,
}

/// Builds `E_φ` and `E_{φ_ε}` for each `ε`, and compares distances,
/// quotients and the perimeter sandwich.
pub fn convergence_study(base: &Norm, ladder: &[f64], opts: StudyOptions) -> Result<ConvergenceReport> {
    if !base.is_polygon() {
        return Err(CrystalError::NotCrystalline);
    }
    if ladder.is_empty() || ladder.iter().any(|&e| !(e > 0.0 && e < 1.0)) || ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CrystalError::BadLadder);
    }
    let crystal = build_bubble(base, opts.n_t, opts.n_tau);
    let base_quotient = isop_quotient(&crystal)?;
    let (crystal_pts, crystal_bound) = sampled(&crystal, opts.samples);

    let entries = ladder
        .par_iter()
        .map(|&eps| -> Result<LadderEntry> {
            let m = mollify(base, eps)?;
            let mesh = build_bubble(&m.norm, opts.n_t, opts.n_tau);
            let (pts, bound) = sampled(&mesh, opts.samples);
            let quotient_smooth = isop_quotient(&mesh)?;
            let remeasured = BubbleMesh { norm: base.clone(), ..mesh };
            let quotient_base = isop_quotient(&remeasured)?;
            let floor = (1.0 - m.eta) / (1.0 + m.eta) * quotient_smooth;
            Ok(LadderEntry {
                eps,
                eta: m.eta,
                min_curvature: m.min_curvature,
                hausdorff: hausdorff(&pts, &crystal_pts),
                sampling_bound: bound.max(crystal_bound),
                quotient_smooth,
                quotient_base,
                quotient_gap: (quotient_smooth - base_quotient).abs(),
                sandwich_residual: quotient_base / floor - 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let eta_monotone = entries.windows(2).all(|w| w[1].eta <= w[0].eta + 1e-3);
    let hausdorff_decreasing = entries.windows(2).all(|w| w[1].hausdorff < w[0].hausdorff);
    let sandwich_ok = entries.iter().all(|e| e.sandwich_residual >= -1e-4);
    Ok(ConvergenceReport {
        ladder: ladder.to_vec(),
        entries,
        base_quotient,
        eta_monotone,
        hausdorff_decreasing,
        sandwich_ok,
        conclusion: "conditional",
    })
}

/// Strided samples of the mesh points and the largest distance from a mesh
/// point to the sample with the nearest index.
fn sampled(mesh: &BubbleMesh, count: usize) -> (Vec<V3>, f64) {
    let pts = sample_points(mesh, count);
    let stride = (mesh.points.len() / count.max(1)).max(1);
    let last = (pts.len() - 1) * stride;
    let bound = mesh
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let j = ((k + stride / 2) / stride * stride).min(last);
            let q = mesh.points[j];
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);
    (pts, bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foliation::{crystalline_face_foliation, ruled_face_patch};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> PolygonData {
        PolygonData::new(&[[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]).unwrap()
    }

    fn hexagon() -> PolygonData {
        let s = 3f64.sqrt() / 2.0;
        PolygonData::new(&[[1.0, 0.0], [0.5, s], [-0.5, s], [-1.0, 0.0], [-0.5, -s], [0.5, -s]]).unwrap()
    }

    fn cyclic_eq(a: &[V2], b: &[V2]) -> bool {
        a.len() == b.len() && (0..a.len()).any(|k| (0..a.len()).all(|i| a[i] == b[(i + k) % b.len()]))
    }

    #[test]
    fn square_dual_is_the_diamond() {
        let d = polygon_dual(&square()).unwrap();
        assert!(cyclic_eq(&d.vertices, &[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]), "{:?}", d.vertices);
        let dd = polygon_dual(&d).unwrap();
        assert!(cyclic_eq(&dd.vertices, &square().vertices), "{:?}", dd.vertices);
    }

    #[test]
    fn hexagon_dual_is_rotated_and_scaled() {
        let d = polygon_dual(&hexagon()).unwrap();
        let r = 2.0 / 3f64.sqrt();
        for (k, w) in d.vertices.iter().enumerate() {
            assert!((norm(*w) - r).abs() < 1e-14);
            let want = TAU * (k as f64) / 6.0 - TAU / 12.0;
            assert!(crate::vec2::angle_dist(crate::vec2::angle(*w), want) < 1e-14);
        }
    }

    #[test]
    fn edge_fields_of_the_square() {
        let e = edge_fields(&square());
        assert_eq!(e[1], [-2.0, 0.0]);
        for i in 0..2 {
            assert_eq!(e[i + 2], [-e[i][0], -e[i][1]]);
        }
    }

    #[test]
    fn invalid_polygons_are_refused() {
        assert_eq!(PolygonData::new(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]), Err(CrystalError::TooFewVertices(3)));
        assert_eq!(PolygonData::new(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.1], [0.0, -1.0]]), Err(CrystalError::NotSymmetric(2)));
        // Clockwise order.
        assert_eq!(PolygonData::new(&[[1.0, 0.0], [0.0, -1.0], [-1.0, 0.0], [0.0, 1.0]]), Err(CrystalError::NotConvex(0)));
        // An edge through the origin makes the dual-vertex system singular.
        let v = [[1.0, 0.0], [1.0, 1e-16], [-1.0, 0.0], [-1.0, -1e-16]];
        assert!(matches!(PolygonData::new(&v), Err(CrystalError::DegenerateEdge(_))));
    }

    /// `2·half` points of a random rotated ellipse, in angle order.
    fn random_polygon(rng: &mut ChaCha8Rng, half: usize) -> PolygonData {
        let gaps: Vec<f64> = (0..half).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = gaps.iter().sum();
        let (a, b, rot) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.0..TAU));
        let mut t = rng.gen_range(0.0..1.0);
        let mut v = Vec::new();
        for k in 0..2 * half {
            let th = std::f64::consts::PI * t / total;
            v.push(crate::vec2::rotate([a * th.cos(), b * th.sin()], rot));
            t += gaps[k % half];
        }
        PolygonData::new(&v).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]
        #[test]
        fn dual_vertex_equations_hold(seed in 0u64..10_000, half in 2usize..7) {
            let poly = random_polygon(&mut ChaCha8Rng::seed_from_u64(seed), half);
            let r = poly.residuals();
            prop_assert!(r.edge < 1e-12 && r.vertex < 1e-12 && r.previous < 1e-12, "{r:?}");
            for i in 0..poly.half() {
                prop_assert_eq!(poly.vertices[i + poly.half()], [-poly.vertices[i][0], -poly.vertices[i][1]]);
                prop_assert_eq!(poly.edges[i + poly.half()], [-poly.edges[i][0], -poly.edges[i][1]]);
            }
        }
    }

    #[test]
    fn dual_gradient_is_constant_on_cones() {
        for poly in [square(), hexagon(), random_polygon(&mut ChaCha8Rng::seed_from_u64(3), 4)] {
            let nm = poly.to_norm().unwrap();
            let dual = nm.dual().unwrap();
            let verts = nm.polygon_vertices().unwrap();
            let kinks: Vec<f64> = nm.polygon_dual_vertices().unwrap().iter().map(|&w| crate::vec2::angle(w)).collect();
            let mut checked = 0;
            for k in 0..1024 {
                let th = TAU * (k as f64 + 0.5) / 1024.0;
                if kinks.iter().any(|&a| crate::vec2::angle_dist(a, th) < 1e-4) {
                    continue;
                }
                let w = unit(th);
                let e = 1e-7;
                let fd = [
                    (dual.eval([w[0] + e, w[1]]) - dual.eval([w[0] - e, w[1]])) / (2.0 * e),
                    (dual.eval([w[0], w[1] + e]) - dual.eval([w[0], w[1] - e])) / (2.0 * e),
                ];
                let best = verts.iter().copied().max_by(|a, b| dot(*a, w).total_cmp(&dot(*b, w))).unwrap();
                assert!(norm(sub(fd, best)) < 1e-7, "{fd:?} vs {best:?}");
                checked += 1;
            }
            assert!(checked > 1000);
        }
    }

    #[test]
    fn ruled_faces_are_tangent_to_edge_fields() {
        for poly in [square(), hexagon()] {
            let nm = poly.to_norm().unwrap();
            for face in 0..poly.half() {
                let patch = ruled_face_patch(&nm, face, 41, 0.5).unwrap();
                let rep = crystalline_face_foliation(&nm, &patch, 1e-6).unwrap();
                assert_eq!(rep.face, Some(face));
                assert!(rep.ruled_residual < 1e-8, "{}", rep.ruled_residual);
            }
        }
    }

    #[test]
    fn euclidean_mollification_is_a_rescaling() {
        for eps in [0.2, 0.05] {
            let m = mollify(&Norm::euclidean(), eps).unwrap();
            for k in 0..64 {
                let u = unit(TAU * k as f64 / 64.0 + 0.01);
                assert!((m.norm.eval(u) - (1.0 + eps).sqrt()).abs() < 1e-12);
            }
            assert!((m.eta - (1.0 - 1.0 / (1.0 + eps).sqrt())).abs() < 1e-12, "{}", m.eta);
        }
    }

    #[test]
    fn mollified_square_is_strictly_convex_and_sandwiched() {
        let base = Norm::linf();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dirs: Vec<f64> = (0..512).map(|_| rng.gen_range(0.0..TAU)).collect();
        let mut etas = Vec::new();
        for eps in [0.2, 0.1, 0.05, 0.025] {
            let m = mollify(&base, eps).unwrap();
            assert!(m.min_curvature > 0.0);
            assert!(sandwich_residual(&base, &m.norm, m.eta, &dirs) >= -1e-12);
            etas.push(m.eta);
        }
        assert!(etas.windows(2).all(|w| w[1] < w[0]), "{etas:?}");
        assert!(mollify(&base, 1.5).is_err());
    }

    #[test]
    fn small_convergence_study() {
        let opts = StudyOptions { n_t: 96, n_tau: 48, samples: 2000 };
        let rep = convergence_study(&Norm::linf(), &[0.2, 0.1, 0.05], opts).unwrap();
        assert!(rep.eta_monotone && rep.hausdorff_decreasing && rep.sandwich_ok, "{rep:?}");
        assert!(rep.entries.windows(2).all(|w| w[1].quotient_gap < w[0].quotient_gap));
        assert_eq!(rep.conclusion, "conditional");
        assert!(matches!(convergence_study(&Norm::linf(), &[0.1, 0.2], opts), Err(CrystalError::BadLadder)));
        assert!(matches!(convergence_study(&Norm::euclidean(), &[0.1], opts), Err(CrystalError::NotCrystalline)));
    }
}
