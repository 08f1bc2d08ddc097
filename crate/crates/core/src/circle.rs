//! Parametrizations of the unit circle `C_φ = {φ = 1}`.
//!
//! Both parametrizations are built on top of the polar angle `θ` of the
//! point `p(θ) = u(θ)/g(θ)`. A table of breakpoints in `θ` stores the
//! cumulative parameter (Euclidean length or φ†-length) and the cumulative
//! sector area, each panel integrated with 16-point Gauss–Legendre.
//! Evaluation at a parameter value inverts the table by Newton's method.

use std::f64::consts::{PI, TAU};

use serde::Serialize;
use thiserror::Error;

use crate::heis::ParamCurve;
use crate::norm::{curvature_from_profile, tangent_from_profile, Norm, Profile};
use crate::quad::{gl16, MonotoneCubic};
use crate::vec2::{add, norm, perp, scale, unit, wrap_angle, V2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CircleError {
    #[error("the unit circle has a kink in direction {0:.9} rad")]
    KinkOnCircle(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CircleMode {
    /// Euclidean arclength `κ`, anticlockwise.
    EuclidArclength,
    /// φ†-arclength `μ`, clockwise.
    DaggerArclength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Orientation {
    Anticlockwise,
    Clockwise,
}

/// One sampled node: parameter, position, first and second derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircleSample {
    pub t: f64,
    pub pos: V2,
    pub vel: V2,
    pub acc: V2,
}

#[derive(Debug, Clone)]
pub struct CircleParam {
    norm: Norm,
    mode: CircleMode,
    period: f64,
    /// Breakpoints `θ_k`, increasing from `θ₀ = π` to `π + 2π`.
    theta: Vec<f64>,
    /// Cumulative parameter at the breakpoints (`cum[0] = 0`, last = period).
    cum: Vec<f64>,
    /// Cumulative sector area `∫ 1/(2g²) dθ` at the breakpoints.
    area: Vec<f64>,
    /// Monotone seed for the inverse map, parameter to `θ`.
    seed: MonotoneCubic,
    samples: Vec<CircleSample>,
}

const THETA0: f64 = PI;

impl CircleParam {
    /// Euclidean arclength parametrization `κ` with `κ(0)` on the negative
    /// x-axis, anticlockwise, period `L`.
    pub fn euclid(norm: &Norm, n: usize) -> CircleParam {
        CircleParam::build(norm, CircleMode::EuclidArclength, n)
    }

    /// φ†-arclength parametrization `μ` with `μ(0) = κ(0)`, clockwise,
    /// period `M = 2·Area(D_φ)`. Requires a differentiable dual.
    pub fn dagger(norm: &Norm, n: usize) -> Result<CircleParam, CircleError> {
        if let Some(&k) = norm.gradient_kinks().first() {
            return Err(CircleError::KinkOnCircle(k));
        }
        Ok(CircleParam::build(norm, CircleMode::DaggerArclength, n))
    }

    fn build(norm: &Norm, mode: CircleMode, n: usize) -> CircleParam {
        let n = n.max(16);
        let table = 4096usize.max(n);
        let mut theta: Vec<f64> = (0..=table).map(|k| THETA0 + TAU * k as f64 / table as f64).collect();
        for b in norm.profile_breaks() {
            let mut t = wrap_angle(b - THETA0) + THETA0;
            if t >= THETA0 + TAU {
                t -= TAU;
            }
            theta.push(t);
        }
        theta.sort_by(f64::total_cmp);
        theta.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        let rule = gl16();
        let mut cum = vec![0.0; theta.len()];
        let mut area = vec![0.0; theta.len()];
        for k in 1..theta.len() {
            let (a, b) = (theta[k - 1], theta[k]);
            cum[k] = cum[k - 1] + rule.integrate(a, b, |th| density(norm, mode, th));
            area[k] = area[k - 1] + rule.integrate(a, b, |th| 0.5 / norm.profile(th).g.powi(2));
        }
        let period = *cum.last().unwrap();
        let seed = MonotoneCubic::new(cum.clone(), theta.clone());
        let mut param = CircleParam { norm: norm.clone(), mode, period, theta, cum, area, seed, samples: Vec::new() };
        param.samples = (0..n)
            .map(|i| {
                let t = period * i as f64 / n as f64;
                let (pos, vel, acc) = param.eval(t);
                CircleSample { t, pos, vel, acc }
            })
            .collect();
        param
    }

    pub fn norm(&self) -> &Norm {
        &self.norm
    }

    pub fn mode(&self) -> CircleMode {
        self.mode
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn orientation(&self) -> Orientation {
        match self.mode {
            CircleMode::EuclidArclength => Orientation::Anticlockwise,
            CircleMode::DaggerArclength => Orientation::Clockwise,
        }
    }

    pub fn basepoint(&self) -> V2 {
        self.norm.unit_point(THETA0)
    }

    pub fn samples(&self) -> &[CircleSample] {
        &self.samples
    }

    /// Total area of the unit φ-disk.
    pub fn disk_area(&self) -> f64 {
        *self.area.last().unwrap()
    }

    /// Polar angle of the point at parameter `t` (any real `t`; one period
    /// advances `θ` by `±2π`).
    pub fn theta_at(&self, t: f64) -> f64 {
        let wraps = (t / self.period).floor();
        let r = t - wraps * self.period;
        let th = self.theta_in_period(r);
        match self.mode {
            CircleMode::EuclidArclength => th + wraps * TAU,
            // Clockwise: θ runs backwards from θ₀.
            CircleMode::DaggerArclength => 2.0 * THETA0 - th - wraps * TAU,
        }
    }

    /// Parameter in `[0, period)` of the point with polar angle `θ`.
    pub fn param_at_theta(&self, theta: f64) -> f64 {
        let th = match self.mode {
            CircleMode::EuclidArclength => theta,
            CircleMode::DaggerArclength => 2.0 * THETA0 - theta,
        };
        let th = wrap_angle(th - THETA0) + THETA0;
        let k = self.panel_of_theta(th);
        let t = self.cum[k] + gl16().integrate(self.theta[k], th, |x| density(&self.norm, self.mode, x));
        if t >= self.period {
            t - self.period
        } else {
            t
        }
    }

    /// Cumulative parameter from `θ₀` to `θ ∈ [θ₀, θ₀ + 2π]` in the
    /// anticlockwise table.
    fn theta_in_period(&self, r: f64) -> f64 {
        let k = match self.cum.partition_point(|&c| c <= r) {
            0 => 0,
            i if i >= self.cum.len() => self.cum.len() - 2,
            i => i - 1,
        };
        let (a, b) = (self.theta[k], self.theta[k + 1]);
        let target = r - self.cum[k];
        let mut th = self.seed.eval(r).clamp(a, b);
        let rule = gl16();
        for _ in 0..30 {
            let f = rule.integrate(a, th, |x| density(&self.norm, self.mode, x)) - target;
            let d = density(&self.norm, self.mode, th);
            let next = (th - f / d).clamp(a, b);
            let done = (next - th).abs() < 1e-15 * (1.0 + th.abs());
            th = next;
            if done {
                break;
            }
        }
        th
    }

    fn panel_of_theta(&self, th: f64) -> usize {
        match self.theta.partition_point(|&c| c <= th) {
            0 => 0,
            i if i >= self.theta.len() => self.theta.len() - 2,
            i => i - 1,
        }
    }

    /// Position, first and second derivative at parameter `t`.
    pub fn eval(&self, t: f64) -> (V2, V2, V2) {
        let th = self.theta_at(t);
        let pr = self.norm.profile(th);
        self.derivs_at_theta(th, pr)
    }

    fn derivs_at_theta(&self, th: f64, pr: Profile) -> (V2, V2, V2) {
        let u = unit(th);
        let pos = scale(1.0 / pr.g, u);
        let dp = tangent_from_profile(th, pr);
        match self.mode {
            CircleMode::EuclidArclength => {
                let vel = scale(1.0 / norm(dp), dp);
                let lam = curvature_from_profile(pr);
                (pos, vel, scale(lam, perp(vel)))
            }
            CircleMode::DaggerArclength => {
                // dθ/dτ = −g²; μ̇ = −g² p', μ̈ = g² d/dθ(g² p').
                let g2 = pr.g * pr.g;
                let vel = scale(-g2, dp);
                let ddp = second_tangent(th, pr);
                let acc = scale(g2, add(scale(2.0 * pr.g * pr.dg, dp), scale(g2, ddp)));
                (pos, vel, acc)
            }
        }
    }

    pub fn point(&self, t: f64) -> V2 {
        let th = self.theta_at(t);
        self.norm.unit_point(th)
    }

    pub fn velocity(&self, t: f64) -> V2 {
        self.eval(t).1
    }

    /// Velocity at the point with polar angle `θ`, without inverting `t ↦ θ`.
    pub fn velocity_at_theta(&self, theta: f64) -> V2 {
        self.derivs_at_theta(theta, self.norm.profile(theta)).1
    }

    /// Signed sector area swept anticlockwise from polar angle `a` to `b`
    /// (`b ≥ a`, any number of turns).
    pub fn sector_area(&self, a: f64, b: f64) -> f64 {
        self.area_from_theta0(b) - self.area_from_theta0(a)
    }

    fn area_from_theta0(&self, th: f64) -> f64 {
        let turns = ((th - THETA0) / TAU).floor();
        let r = th - turns * TAU;
        let k = self.panel_of_theta(r);
        let part = gl16().integrate(self.theta[k], r, |x| 0.5 / self.norm.profile(x).g.powi(2));
        turns * self.disk_area() + self.area[k] + part
    }

    /// Curvature `λ(t) = ⟨κ̈, κ̇^⊥⟩` of the unit circle at parameter `t`.
    pub fn curvature(&self, t: f64) -> f64 {
        self.norm.circle_curvature(self.theta_at(t))
    }

    /// `λ̇(t)`, by central differences of the curvature in the polar angle.
    pub fn curvature_rate(&self, t: f64) -> f64 {
        let th = self.theta_at(t);
        let h = 1e-4;
        let dk = (self.norm.circle_curvature(th + h) - self.norm.circle_curvature(th - h)) / (2.0 * h);
        let speed = density(&self.norm, self.mode, th);
        match self.mode {
            CircleMode::EuclidArclength => dk / speed,
            CircleMode::DaggerArclength => -dk / speed,
        }
    }

    /// The samples as a planar curve with one repeated endpoint (closed).
    pub fn to_curve(&self) -> ParamCurve {
        let mut t: Vec<f64> = self.samples.iter().map(|s| s.t).collect();
        let mut xy: Vec<V2> = self.samples.iter().map(|s| s.pos).collect();
        let mut dxy: Vec<V2> = self.samples.iter().map(|s| s.vel).collect();
        t.push(self.period);
        xy.push(xy[0]);
        dxy.push(dxy[0]);
        ParamCurve::planar(t, xy, dxy)
    }
}

/// Parameter density in `θ`: Euclidean speed `|p'(θ)|` or φ†-speed `1/g²`.
fn density(norm: &Norm, mode: CircleMode, th: f64) -> f64 {
    let pr = norm.profile(th);
    match mode {
        CircleMode::EuclidArclength => (pr.g * pr.g + pr.dg * pr.dg).sqrt() / (pr.g * pr.g),
        CircleMode::DaggerArclength => 1.0 / (pr.g * pr.g),
    }
}

/// `p''(θ)` for `p = u/g`.
fn second_tangent(th: f64, pr: Profile) -> V2 {
    let u = unit(th);
    let up = perp(u);
    let (g, g1, g2) = (pr.g, pr.dg, pr.d2g);
    let cu = -1.0 / g - g2 / (g * g) + 2.0 * g1 * g1 / (g * g * g);
    let cp = -2.0 * g1 / (g * g);
    [cu * u[0] + cp * up[0], cu * u[1] + cp * up[1]]
}

/// Samples `{φ(ξ − center) = r}` at `n` uniform polar angles (plus polygon
/// vertex directions), as a closed curve parametrized by the angle.
pub fn phi_circle(norm: &Norm, center: V2, r: f64, n: usize) -> ParamCurve {
    let mut th: Vec<f64> = (0..n).map(|k| TAU * k as f64 / n as f64).collect();
    th.extend(norm.gradient_kinks());
    th.sort_by(f64::total_cmp);
    th.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    th.push(TAU);
    let xy = th.iter().map(|&t| add(center, scale(r, norm.unit_point(t)))).collect();
    let dxy = th.iter().map(|&t| scale(r, norm.unit_tangent(t))).collect();
    ParamCurve::planar(th, xy, dxy)
}

/// `λ` at the sample nodes of a Euclidean parametrization.
pub fn circle_curvature(param: &CircleParam) -> Result<Vec<f64>, CircleError> {
    let kinks = param.norm.profile_breaks();
    if let Some(&k) = kinks.first() {
        return Err(CircleError::KinkOnCircle(k));
    }
    Ok(param.samples.iter().map(|s| param.curvature(s.t)).collect())
}
