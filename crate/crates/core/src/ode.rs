//! Adaptive classical Runge–Kutta with step doubling and event bisection.

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    /// Local error target, relative to `max(1, |y|∞)`.
    pub tol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { tol: 1e-9, h_init: 1e-2, h_max: 0.1, h_min: 1e-12, max_steps: 2_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stop {
    /// Reached the last requested time.
    Finished,
    /// Event function `i` changed sign; the state is recorded at the root.
    Event(usize),
    /// The right-hand side refused the state (e.g. left its domain).
    RhsFailed,
    /// Step size fell below `h_min` or the step budget ran out.
    StepFailure,
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub stop: Stop,
    pub steps: usize,
}

impl OdeSolution {
    pub fn last(&self) -> (&f64, &Vec<f64>) {
        (self.t.last().unwrap(), self.y.last().unwrap())
    }
}

pub struct Problem<'a> {
    /// Writes `dy/dt` and returns `false` when the state is outside its domain.
    pub rhs: &'a mut dyn FnMut(f64, &[f64], &mut [f64]) -> bool,
    /// Scalar event functions; integration stops at the first sign change.
    pub events: Vec<&'a dyn Fn(f64, &[f64]) -> f64>,
    /// Applied to every accepted state (e.g. projection onto a constraint).
    pub project: Option<&'a dyn Fn(&mut [f64])>,
}

fn rk4_step(rhs: &mut dyn FnMut(f64, &[f64], &mut [f64]) -> bool, t: f64, y: &[f64], h: f64, out: &mut [f64]) -> bool {
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    if !rhs(t, y, &mut k1) {
        return false;
    }
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    if !rhs(t + 0.5 * h, &tmp, &mut k2) {
        return false;
    }
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    if !rhs(t + 0.5 * h, &tmp, &mut k3) {
        return false;
    }
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    if !rhs(t + h, &tmp, &mut k4) {
        return false;
    }
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out.iter().all(|v| v.is_finite())
}

/// One step-doubled step from `(t, y)` of size `h`. Returns the extrapolated
/// state and the error estimate, or `None` if the right-hand side failed.
fn doubled_step(rhs: &mut dyn FnMut(f64, &[f64], &mut [f64]) -> bool, t: f64, y: &[f64], h: f64) -> Option<(Vec<f64>, f64)> {
    let n = y.len();
    let mut full = vec![0.0; n];
    let mut half = vec![0.0; n];
    let mut two = vec![0.0; n];
    if !rk4_step(rhs, t, y, h, &mut full) || !rk4_step(rhs, t, y, 0.5 * h, &mut half) || !rk4_step(rhs, t + 0.5 * h, &half, 0.5 * h, &mut two) {
        return None;
    }
    let mut err = 0.0f64;
    let mut out = vec![0.0; n];
    for i in 0..n {
        let d = (two[i] - full[i]) / 15.0;
        err = err.max(d.abs());
        out[i] = two[i] + d;
    }
    Some((out, err))
}

/// Integrates from `t0` through each of the increasing `times`, recording
/// the state at every requested time (and at every accepted step when
/// `record_steps` is set).
pub fn solve(problem: &mut Problem<'_>, t0: f64, y0: &[f64], times: &[f64], opts: OdeOptions, record_steps: bool) -> OdeSolution {
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut sol = OdeSolution { t: vec![t0], y: vec![y.clone()], stop: Stop::Finished, steps: 0 };
    let dir = match times.last() {
        Some(&last) if last < t0 => -1.0,
        _ => 1.0,
    };
    let mut h = opts.h_init.min(opts.h_max);
    let mut ev_prev: Vec<f64> = problem.events.iter().map(|e| e(t, &y)).collect();
    for &target in times {
        while dir * (target - t) > 1e-14 * (1.0 + t.abs()) {
            if sol.steps >= opts.max_steps {
                return finish(sol, t, y, Stop::StepFailure);
            }
            let step = h.min(dir * (target - t));
            let Some((mut next, err)) = doubled_step(problem.rhs, t, &y, dir * step) else {
                if step <= opts.h_min {
                    return finish(sol, t, y, Stop::RhsFailed);
                }
                h = 0.25 * step;
                continue;
            };
            let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let tol = opts.tol * scale;
            if err > tol && step > opts.h_min {
                h = (step * (0.9 * (tol / err).powf(0.2)).max(0.1)).max(opts.h_min);
                continue;
            }
            if let Some(p) = problem.project {
                p(&mut next);
            }
            let t_next = t + dir * step;
            // Event check on the accepted step.
            let ev_next: Vec<f64> = problem.events.iter().map(|e| e(t_next, &next)).collect();
            if let Some(i) = (0..ev_next.len()).find(|&i| ev_prev[i] * ev_next[i] < 0.0 || (ev_next[i] == 0.0 && ev_prev[i] != 0.0)) {
                let (te, ye) = bisect_event(problem, i, t, &y, dir * step, ev_prev[i]);
                sol.t.push(te);
                sol.y.push(ye);
                sol.stop = Stop::Event(i);
                return sol;
            }
            ev_prev = ev_next;
            t = t_next;
            y = next;
            sol.steps += 1;
            if record_steps && dir * (target - t) > 1e-14 * (1.0 + t.abs()) {
                sol.t.push(t);
                sol.y.push(y.clone());
            }
            let grow = if err > 0.0 { (0.9 * (tol / err).powf(0.2)).min(4.0) } else { 4.0 };
            h = (step * grow).clamp(opts.h_min, opts.h_max);
        }
        t = target;
        sol.t.push(t);
        sol.y.push(y.clone());
    }
    sol
}

fn finish(mut sol: OdeSolution, t: f64, y: Vec<f64>, stop: Stop) -> OdeSolution {
    if *sol.t.last().unwrap() != t {
        sol.t.push(t);
        sol.y.push(y);
    }
    sol.stop = stop;
    sol
}

/// Locates the sign change of event `i` inside a step by bisection on the
/// step length, re-integrating with a single RK4 step each time.
fn bisect_event(problem: &mut Problem<'_>, i: usize, t: f64, y: &[f64], h: f64, g0: f64) -> (f64, Vec<f64>) {
    let (mut lo, mut hi) = (0.0f64, h);
    let mut best = (t + h, y.to_vec());
    let mut buf = vec![0.0; y.len()];
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if !rk4_step(problem.rhs, t, y, mid, &mut buf) {
            hi = mid;
            continue;
        }
        if let Some(p) = problem.project {
            p(&mut buf);
        }
        let g = (problem.events[i])(t + mid, &buf);
        best = (t + mid, buf.clone());
        if g * g0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() < 1e-15 * (1.0 + t.abs()) {
            break;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_is_accurate() {
        let mut rhs = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = y[1];
            d[1] = -y[0];
            true
        };
        let mut p = Problem { rhs: &mut rhs, events: vec![], project: None };
        let tf = std::f64::consts::TAU * 3.0;
        let sol = solve(&mut p, 0.0, &[1.0, 0.0], &[tf], OdeOptions::default(), false);
        let (_, y) = sol.last();
        assert_eq!(sol.stop, Stop::Finished);
        assert!((y[0] - 1.0).abs() < 1e-8 && y[1].abs() < 1e-8, "{y:?}");
    }

    #[test]
    fn event_is_located() {
        let mut rhs = |_t: f64, _y: &[f64], d: &mut [f64]| {
            d[0] = 1.0;
            true
        };
        let ev = |_t: f64, y: &[f64]| y[0] - 0.7;
        let mut p = Problem { rhs: &mut rhs, events: vec![&ev], project: None };
        let sol = solve(&mut p, 0.0, &[0.0], &[5.0], OdeOptions::default(), true);
        assert_eq!(sol.stop, Stop::Event(0));
        assert!((sol.last().0 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn domain_exit_is_reported() {
        let mut rhs = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = 1.0;
            y[0] < 1.0
        };
        let mut p = Problem { rhs: &mut rhs, events: vec![], project: None };
        let sol = solve(&mut p, 0.0, &[0.0], &[5.0], OdeOptions::default(), false);
        assert_eq!(sol.stop, Stop::RhsFailed, "{:?}", sol.last());
        assert!(sol.last().1[0] < 1.0 && sol.last().1[0] > 0.99);
    }

    #[test]
    fn backwards_integration() {
        let mut rhs = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = y[0];
            true
        };
        let mut p = Problem { rhs: &mut rhs, events: vec![], project: None };
        let sol = solve(&mut p, 1.0, &[1.0], &[0.0], OdeOptions::default(), false);
        assert!((sol.last().1[0] - (-1f64).exp()).abs() < 1e-8, "{:?}", sol.last());
    }
}
