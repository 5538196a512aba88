//! Degree-valued angle helpers.

/// Wraps an angle in degrees into `(-180, 180]`.
///
/// `fmod` is exact, so two representations that differ by an exact multiple
/// of 360 map to the same value.
pub fn normalize_deg(a: f64) -> f64 {
    let mut r = libm::fmod(a, 360.0);
    if r < 0.0 {
        r += 360.0;
    }
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// `(sin a, cos a)` for `a` in degrees, exact at multiples of 90.
pub fn sin_cos_deg(a: f64) -> (f64, f64) {
    let mut r = libm::fmod(a, 360.0);
    if r < 0.0 {
        r += 360.0;
    }
    let quadrant = libm::round(r / 90.0);
    let rem = (r - 90.0 * quadrant).to_radians();
    let (s, c) = (libm::sin(rem), libm::cos(rem));
    match (quadrant as i64).rem_euclid(4) {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

pub fn sin_deg(a: f64) -> f64 {
    sin_cos_deg(a).0
}

pub fn cos_deg(a: f64) -> f64 {
    sin_cos_deg(a).1
}

pub fn tan_deg(a: f64) -> f64 {
    let (s, c) = sin_cos_deg(a);
    s / c
}

pub fn atan_deg(x: f64) -> f64 {
    libm::atan(x).to_degrees()
}

/// Compass bearing in degrees of the vector `(dx, dy)`, measured clockwise
/// from `+y`.
pub fn bearing_deg(dx: f64, dy: f64) -> f64 {
    libm::atan2(dx, dy).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_range() {
        assert_eq!(normalize_deg(180.0), 180.0);
        assert_eq!(normalize_deg(-180.0), 180.0);
        assert_eq!(normalize_deg(540.0), 180.0);
        assert_eq!(normalize_deg(-90.0), -90.0);
        assert_eq!(normalize_deg(270.0), -90.0);
        assert_eq!(normalize_deg(0.0), 0.0);
        assert_eq!(normalize_deg(-720.0), 0.0);
    }

    #[test]
    fn quadrant_exact() {
        assert_eq!(sin_cos_deg(0.0), (0.0, 1.0));
        assert_eq!(sin_cos_deg(90.0), (1.0, 0.0));
        assert_eq!(sin_cos_deg(180.0), (0.0, -1.0));
        assert_eq!(sin_cos_deg(-90.0), (-1.0, 0.0));
        assert_eq!(sin_cos_deg(450.0), (1.0, 0.0));
        assert!((tan_deg(45.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bearing_clockwise_from_y() {
        assert_eq!(bearing_deg(0.0, 1.0), 0.0);
        assert_eq!(bearing_deg(1.0, 0.0), 90.0);
        assert!((bearing_deg(1.0, 1.0) - 45.0).abs() < 1e-12);
        assert_eq!(bearing_deg(-1.0, 0.0), -90.0);
    }
}
