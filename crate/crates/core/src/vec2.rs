//! Small helpers for planar vectors stored as `[f64; 2]`.

pub type V2 = [f64; 2];

#[inline]
pub fn add(a: V2, b: V2) -> V2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: V2, b: V2) -> V2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(s: f64, a: V2) -> V2 {
    [s * a[0], s * a[1]]
}

#[inline]
pub fn dot(a: V2, b: V2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Determinant `a_x b_y - a_y b_x`.
#[inline]
pub fn cross(a: V2, b: V2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: V2) -> f64 {
    a[0].hypot(a[1])
}

/// Anticlockwise quarter turn: (x, y) -> (-y, x).
#[inline]
pub fn perp(a: V2) -> V2 {
    [-a[1], a[0]]
}

#[inline]
pub fn unit(theta: f64) -> V2 {
    let (s, c) = theta.sin_cos();
    [c, s]
}

#[inline]
pub fn angle(a: V2) -> f64 {
    a[1].atan2(a[0])
}

/// Rotation of `a` anticlockwise by `theta`.
#[inline]
pub fn rotate(a: V2, theta: f64) -> V2 {
    let (s, c) = theta.sin_cos();
    [c * a[0] - s * a[1], s * a[0] + c * a[1]]
}

/// Reduce an angle to `[0, 2π)`.
#[inline]
pub fn wrap_angle(t: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let r = t.rem_euclid(tau);
    if r >= tau {
        0.0
    } else {
        r
    }
}

/// Smallest unsigned angular distance between two directions (mod 2π).
#[inline]
pub fn angle_dist(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(std::f64::consts::TAU - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perp_is_anticlockwise() {
        assert_eq!(perp([1.0, 0.0]), [0.0, 1.0]);
        assert_eq!(perp(perp([2.0, 3.0])), [-2.0, -3.0]);
    }

    #[test]
    fn rotation_matches_unit() {
        let r = rotate([1.0, 0.0], 0.7);
        let u = unit(0.7);
        assert!((r[0] - u[0]).abs() < 1e-15 && (r[1] - u[1]).abs() < 1e-15);
    }

    #[test]
    fn angle_distance_wraps() {
        assert!((angle_dist(0.1, std::f64::consts::TAU - 0.1) - 0.2).abs() < 1e-14);
    }
}
