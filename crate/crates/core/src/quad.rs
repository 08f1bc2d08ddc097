//! Quadrature, interpolation and scalar root/extremum search.
//!
//! Everything here works on plain `f64` slices and closures; nothing is
//! specific to norms or the Heisenberg group.

use std::sync::OnceLock;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, computed by Newton
/// iteration on the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

pub struct GaussRule {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        GaussRule { x, w }
    }

    /// ∫_a^b f.
    #[inline]
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut s = 0.0;
        for (xi, wi) in self.x.iter().zip(&self.w) {
            s += wi * f(c + h * xi);
        }
        s * h
    }
}

pub fn gl16() -> &'static GaussRule {
    static R: OnceLock<GaussRule> = OnceLock::new();
    R.get_or_init(|| GaussRule::new(16))
}

pub fn gl64() -> &'static GaussRule {
    static R: OnceLock<GaussRule> = OnceLock::new();
    R.get_or_init(|| GaussRule::new(64))
}

/// Composite Simpson weights for `m` (even) uniform panels of width `h`.
pub fn simpson_uniform(h: f64, y: &[f64]) -> f64 {
    let n = y.len();
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd number of samples");
    let mut s = y[0] + y[n - 1];
    for (i, v) in y.iter().enumerate().take(n - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

/// Integral over `[x0, x1]` of the quadratic through three samples, with
/// `x0 < x1 < x2` arbitrary.
fn quad_partial(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64) -> f64 {
    let h0 = x1 - x0;
    let h1 = x2 - x1;
    let w0 = h0 * (2.0 * h0 + 3.0 * h1) / (6.0 * (h0 + h1));
    let w1 = h0 * (h0 + 3.0 * h1) / (6.0 * h1);
    let w2 = -h0 * h0 * h0 / (6.0 * h1 * (h0 + h1));
    w0 * y0 + w1 * y1 + w2 * y2
}

/// Cumulative integral of samples `y` on a (possibly non-uniform) grid `x`
/// by piecewise-quadratic (Simpson) interpolation. Entry `k` is ∫_{x_0}^{x_k}.
/// Even entries are composite Simpson sums.
pub fn cumulative_simpson(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n, y.len());
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * (x[1] - x[0]) * (y[0] + y[1]);
        return out;
    }
    let mut k = 0;
    while k + 2 < n {
        let (a, b, c) = (x[k], x[k + 1], x[k + 2]);
        out[k + 1] = out[k] + quad_partial(a, b, c, y[k], y[k + 1], y[k + 2]);
        out[k + 2] = out[k] + simpson_pair(a, b, c, y[k], y[k + 1], y[k + 2]);
        k += 2;
    }
    if k + 1 < n {
        out[k + 1] = out[k] + quad_partial_rev(x[k - 1], x[k], x[k + 1], y[k - 1], y[k], y[k + 1]);
    }
    out
}

/// Integral over `[x1, x2]` of the quadratic through three samples.
fn quad_partial_rev(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64) -> f64 {
    // mirror: integrate over [x1,x2] == partial over the reversed triple
    quad_partial(-x2, -x1, -x0, y2, y1, y0)
}

/// Simpson's rule on two adjacent, possibly unequal, intervals.
fn simpson_pair(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64) -> f64 {
    quad_partial(x0, x1, x2, y0, y1, y2) + quad_partial_rev(x0, x1, x2, y0, y1, y2)
}

/// Total integral by composite Simpson on a non-uniform grid.
pub fn simpson(x: &[f64], y: &[f64]) -> f64 {
    *cumulative_simpson(x, y).last().unwrap_or(&0.0)
}

/// Trapezoid sum of one period of samples (last sample excluded), i.e. the
/// spectrally accurate rule for smooth periodic integrands.
pub fn periodic_trapezoid(period: f64, y: &[f64]) -> f64 {
    let n = y.len();
    y.iter().sum::<f64>() * period / n as f64
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2 && n == y.len());
        let mut delta = vec![0.0; n - 1];
        for i in 0..n - 1 {
            delta[i] = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
        }
        let mut d = vec![0.0; n];
        d[0] = delta[0];
        d[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                d[i] = 0.0;
            } else {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        MonotoneCubic { x, y, d }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

/// Periodic cubic spline on a uniform grid of `n` samples over one period.
#[derive(Debug, Clone)]
pub struct PeriodicSpline {
    period: f64,
    h: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl PeriodicSpline {
    pub fn new(period: f64, y: Vec<f64>) -> Self {
        let n = y.len();
        assert!(n >= 4);
        let h = period / n as f64;
        // Second derivatives from the cyclic tridiagonal system
        //   m_{i-1} + 4 m_i + m_{i+1} = 6 (y_{i+1} - 2 y_i + y_{i-1}) / h^2.
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                let yp = y[(i + 1) % n];
                let ym = y[(i + n - 1) % n];
                6.0 * (yp - 2.0 * y[i] + ym) / (h * h)
            })
            .collect();
        let m = solve_cyclic(1.0, 4.0, 1.0, &rhs);
        PeriodicSpline { period, h, y, m }
    }

    pub fn samples(&self) -> &[f64] {
        &self.y
    }

    /// Value, first and second derivative at `t`.
    pub fn eval3(&self, t: f64) -> (f64, f64, f64) {
        let n = self.y.len();
        let u = t.rem_euclid(self.period) / self.h;
        let mut i = u.floor() as usize;
        if i >= n {
            i = n - 1;
        }
        let s = u - i as f64;
        let j = (i + 1) % n;
        let (y0, y1, m0, m1) = (self.y[i], self.y[j], self.m[i], self.m[j]);
        let h = self.h;
        let a = 1.0 - s;
        let b = s;
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let d2 = a * m0 + b * m1;
        (v, d1, d2)
    }
}

/// Solve a cyclic tridiagonal system with constant bands by Sherman–Morrison.
fn solve_cyclic(lo: f64, di: f64, up: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let gamma = -di;
    let mut diag = vec![di; n];
    diag[0] = di - gamma;
    diag[n - 1] = di - lo * up / gamma;
    let x = solve_tridiag(lo, &diag, up, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = lo;
    let z = solve_tridiag(lo, &diag, up, &u);
    let fact = (x[0] + up * x[n - 1] / gamma) / (1.0 + z[0] + up * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

fn solve_tridiag(lo: f64, diag: &[f64], up: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = up / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - lo * c[i - 1];
        c[i] = up / den;
        d[i] = (rhs[i] - lo * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Golden-section search for a maximum of a unimodal `f` on `[a, b]`.
pub fn golden_max(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Root of `f` in a sign-changing bracket `[a, b]` (Brent's method).
pub fn brent_root(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Option<f64> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa * fb > 0.0 {
        return None;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Some(b)
}
