//! Fundamental solutions of the time-harmonic Navier equation in 3D.
//!
//! The dynamic matrix is evaluated through its weakly singular form
//! `G_ij = delta_ij I1(r) / r + x_i x_j I2(r) / r^3`, where `I1` and `I2`
//! stay bounded as `r -> 0` and as `k -> 0`.

mod potentials;
mod special;

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::fe::MaterialParams;

pub use potentials::{
    box_inverse_distance, double_layer, layer_potentials, newton_potential, single_layer, BoundaryGrid,
    LayerPotentials, SourceGrid,
};
pub use special::{cartesian_ratio, spherical_bessel, spherical_harmonic_deg1, MAX_BESSEL_ORDER};

/// Below this `k_q r` the combination `(1 - i t) e^{i t} - 1` is summed as a series.
pub const SERIES_SWITCH: f64 = 1e-2;
const SERIES_TERMS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KupradzeError {
    #[error("fundamental solution evaluated at the source point")]
    Origin,
    #[error("target at distance {distance} from the boundary, at least {min} required")]
    TooClose { distance: f64, min: f64 },
    #[error("target {0:?} lies outside the domain")]
    Outside([f64; 3]),
    #[error("invalid quadrature grid: {0}")]
    Grid(String),
    #[error("spherical Bessel order {0} exceeds the supported maximum")]
    BesselOrder(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveNumbers {
    pub k: f64,
    /// Pressure wave number `k / sqrt(lambda + 2 mu)`.
    pub k1: f64,
    /// Shear wave number `k / sqrt(mu)`.
    pub k2: f64,
}

impl WaveNumbers {
    pub fn new(mat: &MaterialParams) -> Self {
        Self {
            k: mat.k,
            k1: mat.k / (mat.lambda + 2.0 * mat.mu).sqrt(),
            k2: mat.k / mat.mu.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KupradzeEval {
    pub material: MaterialParams,
    pub waves: WaveNumbers,
    /// `(1/mu + 1/(2mu + lambda)) / 2`
    pub a: f64,
    /// `(1/mu - 1/(2mu + lambda)) / 2`
    pub b: f64,
}

impl KupradzeEval {
    pub fn new(material: MaterialParams) -> Self {
        let inv_mu = 1.0 / material.mu;
        let inv_p = 1.0 / (2.0 * material.mu + material.lambda);
        Self {
            material,
            waves: WaveNumbers::new(&material),
            a: 0.5 * (inv_mu + inv_p),
            b: 0.5 * (inv_mu - inv_p),
        }
    }

    pub fn with_k(&self, k: f64) -> Self {
        Self::new(self.material.with_k(k))
    }

    /// `(I1, I2)` as `r -> 0`: `(A / 4 pi, B / 4 pi)` for every `k`.
    pub fn origin_limits(&self) -> (f64, f64) {
        (self.a / (4.0 * PI), self.b / (4.0 * PI))
    }
}

/// `((1 - i t) e^{i t} - 1) / t^2`; tends to `1/2` as `t -> 0`.
fn psi(t: f64) -> C64 {
    if t < SERIES_SWITCH {
        // sum_{n >= 2} (1 - n) (i t)^n / n! divided by t^2
        let mut sum = C64::new(0.0, 0.0);
        let mut power = C64::new(-1.0, 0.0); // i^2
        let mut fact = 2.0;
        let mut tp = 1.0;
        for n in 2..2 + SERIES_TERMS {
            if n > 2 {
                power *= C64::i();
                fact *= n as f64;
                tp *= t;
            }
            sum += power * ((1.0 - n as f64) * tp / fact);
        }
        sum
    } else {
        let e = C64::from_polar(1.0, t);
        (C64::new(1.0, -t) * e - 1.0) / (t * t)
    }
}

/// The bounded radial factors of the dynamic fundamental solution.
pub fn i1_i2(r: f64, eval: &KupradzeEval) -> (C64, C64) {
    let w = &eval.waves;
    let cp = 1.0 / (eval.material.lambda + 2.0 * eval.material.mu);
    let cs = 1.0 / eval.material.mu;
    let (t1, t2) = (w.k1 * r, w.k2 * r);
    let (p1, p2) = (psi(t1), psi(t2));
    let (e1, e2) = (C64::from_polar(1.0, t1), C64::from_polar(1.0, t2));
    let scale = 1.0 / (4.0 * PI);
    let i1 = (e2 * cs + p1 * cp - p2 * cs) * scale;
    let i2 = (p1 * (-3.0 * cp) + p2 * (3.0 * cs) + e1 * cp - e2 * cs) * scale;
    (i1, i2)
}

fn radius(x: [f64; 3]) -> Result<f64, KupradzeError> {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if r == 0.0 || !r.is_finite() {
        return Err(KupradzeError::Origin);
    }
    Ok(r)
}

pub fn green_dynamic(x: [f64; 3], eval: &KupradzeEval) -> Result<[[C64; 3]; 3], KupradzeError> {
    let r = radius(x)?;
    let (i1, i2) = i1_i2(r, eval);
    let diag = i1 / r;
    let off = i2 / (r * r * r);
    let mut g = [[C64::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let mut v = off * (x[i] * x[j]);
            if i == j {
                v += diag;
            }
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    Ok(g)
}

/// Kelvin matrix, the `k = 0` fundamental solution.
pub fn green_static(x: [f64; 3], eval: &KupradzeEval) -> Result<[[f64; 3]; 3], KupradzeError> {
    let r = radius(x)?;
    let (ca, cb) = eval.origin_limits();
    let mut g = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let mut v = cb * x[i] * x[j] / (r * r * r);
            if i == j {
                v += ca / r;
            }
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_eval(k: f64) -> KupradzeEval {
        KupradzeEval::new(MaterialParams::unit(k))
    }

    /// Second derivatives of `e^{i kappa r} / r`, differentiated by hand.
    fn hessian_outgoing(x: [f64; 3], kappa: f64) -> [[C64; 3]; 3] {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let e = C64::from_polar(1.0, kappa * r) / r;
        let ikr = C64::new(0.0, kappa * r);
        let mut h = [[C64::new(0.0, 0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let d = if i == j { 1.0 } else { 0.0 };
                let a = (ikr - 1.0) * d / (r * r);
                let b = ((C64::new(1.0, 0.0) - ikr) * 3.0 / (r * r) - kappa * kappa) * (x[i] * x[j] / (r * r));
                h[i][j] = e * (a + b);
            }
        }
        h
    }

    fn direct_green(x: [f64; 3], mat: &MaterialParams) -> [[C64; 3]; 3] {
        let k1 = mat.k / (mat.lambda + 2.0 * mat.mu).sqrt();
        let k2 = mat.k / mat.mu.sqrt();
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let (h1, h2) = (hessian_outgoing(x, k1), hessian_outgoing(x, k2));
        let mut g = [[C64::new(0.0, 0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut v = (h2[i][j] - h1[i][j]) / (k2 * k2);
                if i == j {
                    v += C64::from_polar(1.0, k2 * r) / r;
                }
                g[i][j] = v / (4.0 * PI * mat.mu);
            }
        }
        g
    }

    fn max_abs(g: &[[C64; 3]; 3]) -> f64 {
        g.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn reconstruction_matches_analytic_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mat = MaterialParams::new(rng.random_range(0.2..3.0), rng.random_range(0.3..2.0), rng.random_range(0.5..20.0))
                .unwrap();
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let g = green_dynamic(x, &KupradzeEval::new(mat)).unwrap();
            let d = direct_green(x, &mat);
            let mut diff = 0.0f64;
            for i in 0..3 {
                for j in 0..3 {
                    diff = diff.max((g[i][j] - d[i][j]).norm());
                }
            }
            assert!(diff <= 1e-10 * max_abs(&d), "{diff}");
        }
    }

    #[test]
    fn symmetric_and_rejects_origin() {
        let e = unit_eval(3.0);
        let g = green_dynamic([0.3, -0.2, 0.7], &e).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g[i][j], g[j][i]);
            }
        }
        assert_eq!(green_dynamic([0.0; 3], &e), Err(KupradzeError::Origin));
        assert_eq!(green_static([0.0; 3], &e), Err(KupradzeError::Origin));
    }

    #[test]
    fn static_constants() {
        let e = unit_eval(1.0);
        assert!((e.a - 2.0 / 3.0).abs() < 1e-15 && (e.b - 1.0 / 3.0).abs() < 1e-15);
        let g = green_static([1.0, 0.0, 0.0], &e).unwrap();
        let c = 1.0 / (4.0 * PI);
        assert!((g[0][0] - c).abs() < 1e-15);
        assert!((g[1][1] - 2.0 * c / 3.0).abs() < 1e-15);
        assert!((g[2][2] - 2.0 * c / 3.0).abs() < 1e-15);
        assert!(g[0][1] == 0.0 && g[1][2] == 0.0);
        for lambda in [-0.5, 0.0, 1.0, 10.0] {
            let e = KupradzeEval::new(MaterialParams::new(lambda, 1.0, 1.0).unwrap());
            assert!(e.a > e.b && e.b > 0.0);
        }
    }

    #[test]
    fn static_trace_and_homogeneity() {
        let e = KupradzeEval::new(MaterialParams::new(2.0, 0.7, 0.0).unwrap());
        let x = [0.4, -1.1, 0.3];
        let r = (0.16f64 + 1.21 + 0.09).sqrt();
        let g = green_static(x, &e).unwrap();
        let tr = g[0][0] + g[1][1] + g[2][2];
        assert!((tr - (3.0 * e.a + e.b) / (4.0 * PI * r)).abs() < 1e-14);
        let g2 = green_static([0.8, -2.2, 0.6], &e).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((g2[i][j] - 0.5 * g[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn radial_factors_have_static_limits() {
        let e = unit_eval(1e-7);
        let (i1, i2) = i1_i2(1.0, &e);
        let (a, b) = e.origin_limits();
        assert!((i1 - a).norm() < 1e-6 && (i2 - b).norm() < 1e-6);
        let e0 = unit_eval(0.0);
        let (i1, i2) = i1_i2(0.5, &e0);
        assert!((i1 - a).norm() < 1e-15 && (i2 - b).norm() < 1e-15);
    }

    #[test]
    fn series_branch_is_continuous() {
        let below = psi(SERIES_SWITCH * (1.0 - 1e-9));
        let above = psi(SERIES_SWITCH * (1.0 + 1e-9));
        assert!((below - above).norm() < 1e-10);
        assert!((psi(0.0) - 0.5).norm() < 1e-16);
    }

    #[test]
    fn static_limit_real_part_quadratic_and_linear_imaginary_shift() {
        // G_k - G_0 = i k c I + O(k^2) with c = (2 mu^{-3/2} + (lambda+2mu)^{-3/2}) / (12 pi)
        let x = [1.0, 0.0, 0.0];
        let mut real_over_k2 = Vec::new();
        for k in [1e-2, 1e-3, 1e-4] {
            let e = unit_eval(k);
            let g = green_dynamic(x, &e).unwrap();
            let g0 = green_static(x, &e).unwrap();
            let scale = g0.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut re = 0.0f64;
            for i in 0..3 {
                for j in 0..3 {
                    re = re.max((g[i][j].re - g0[i][j]).abs());
                }
            }
            real_over_k2.push(re / scale / (k * k));
            let c = (2.0 + 3f64.powf(-1.5)) / (12.0 * PI);
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { k * c } else { 0.0 };
                    assert!((g[i][j].im - expect).abs() < 1e-2 * k * c);
                }
            }
        }
        let lo = real_over_k2.iter().cloned().fold(f64::MAX, f64::min);
        let hi = real_over_k2.iter().cloned().fold(0.0, f64::max);
        assert!(hi / lo < 2.0, "{real_over_k2:?}");
        assert!(real_over_k2[2] * 1e-8 < 1e-6);
    }

    #[test]
    fn radial_factors_bounded() {
        let mut bound = 0.0f64;
        for k in [1.0, 10.0, 100.0] {
            let e = unit_eval(k);
            for s in 0..=700 {
                let r = 1e-6 * 10f64.powf(s as f64 / 100.0);
                let (i1, i2) = i1_i2(r, &e);
                bound = bound.max(i1.norm()).max(i2.norm());
            }
        }
        // |I_q| <= (|alpha| + 4 max(1/mu, 1/(lambda+2mu))) / 4 pi from |psi| <= 3/2
        assert!(bound <= 8.0 / (4.0 * PI), "{bound}");
    }

    #[test]
    fn scaled_kernel_bound_uniform_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 3]> =
            (0..10_000).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let maxima: Vec<f64> = [1.0, 10.0, 100.0]
            .iter()
            .map(|&k| {
                let e = unit_eval(k);
                pts.iter()
                    .map(|&x| {
                        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                        let g = green_dynamic(x, &e).unwrap();
                        r * g.iter().map(|row| row.iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max)
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let ratio = maxima.iter().cloned().fold(0.0, f64::max) / maxima.iter().cloned().fold(f64::MAX, f64::min);
        assert!(ratio <= 1.5, "{maxima:?}");
    }
}
