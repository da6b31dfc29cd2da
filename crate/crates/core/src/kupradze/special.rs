use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use super::KupradzeError;

pub const MAX_BESSEL_ORDER: usize = 10;

/// Power series `z^l / (2l+1)!! * sum_n (-z^2/2)^n / (n! prod_{m=1..n} (2l+2m+1))`.
fn bessel_series(l: usize, z: f64) -> f64 {
    let mut lead = 1.0;
    for m in 0..l {
        lead *= z / (2 * m + 3) as f64;
    }
    let q = -0.5 * z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..200 {
        term *= q / (n as f64 * (2 * l + 2 * n + 1) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    lead * sum
}

/// Spherical Bessel function of the first kind `j_l(z)`, `z >= 0`, `l <= 10`.
pub fn spherical_bessel(l: usize, z: f64) -> Result<f64, KupradzeError> {
    if l > MAX_BESSEL_ORDER {
        return Err(KupradzeError::BesselOrder(l));
    }
    let z = z.abs();
    // series on [0, max(1, l)]; upward recurrence from the closed forms is stable beyond
    if z < 1.0 || (l > 2 && z <= l as f64) {
        return Ok(bessel_series(l, z));
    }
    Ok(bessel_trig(l, z))
}

/// Closed forms for `l <= 1`, upward recurrence beyond.
fn bessel_trig(l: usize, z: f64) -> f64 {
    let (s, c) = z.sin_cos();
    let j0 = s / z;
    let j1 = s / (z * z) - c / z;
    if l == 0 {
        return j0;
    }
    let (mut prev, mut cur) = (j0, j1);
    for n in 1..l {
        let next = (2 * n + 1) as f64 / z * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Degree-one spherical harmonics with the Condon-Shortley phase,
/// orthonormal on the unit sphere. Orders outside `{-1, 0, 1}` give zero.
pub fn spherical_harmonic_deg1(m: i32, theta: f64, phi: f64) -> C64 {
    match m {
        0 => C64::new(0.5 * (3.0 / PI).sqrt() * theta.cos(), 0.0),
        1 => -C64::from_polar(0.5 * (1.5 / PI).sqrt() * theta.sin(), phi),
        -1 => C64::from_polar(0.5 * (1.5 / PI).sqrt() * theta.sin(), -phi),
        _ => C64::new(0.0, 0.0),
    }
}

/// `x_i / |x|`.
pub fn cartesian_ratio(i: usize, x: [f64; 3]) -> Result<f64, KupradzeError> {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if r == 0.0 {
        return Err(KupradzeError::Origin);
    }
    Ok(x[i] / r)
}
