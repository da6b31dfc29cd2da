//! Numerical checks of the fundamental-solution identities, tabulated.

use elastolod::fe::MaterialParams;
use elastolod::kupradze::{
    double_layer, green_dynamic, green_static, single_layer, spherical_bessel, BoundaryGrid, KupradzeEval,
};
use elastolod::linalg::C64;

use crate::config::ExperimentConfig;
use crate::report::Table;

pub const HEADER: [&str; 6] = ["check", "k", "value", "threshold", "relation", "status"];

struct Check {
    name: String,
    k: Option<f64>,
    value: f64,
    /// `None` for informational rows.
    threshold: Option<f64>,
    /// `true` if the check passes for `value <= threshold`.
    at_most: bool,
}

impl Check {
    fn record(&self) -> Vec<String> {
        let status = match self.threshold {
            None => "info",
            Some(t) if (self.at_most && self.value <= t) || (!self.at_most && self.value >= t) => "pass",
            Some(_) => "fail",
        };
        vec![
            self.name.clone(),
            self.k.map_or_else(String::new, |k| k.to_string()),
            self.value.to_string(),
            self.threshold.map_or_else(String::new, |t| t.to_string()),
            if self.threshold.is_none() { "" } else if self.at_most { "<=" } else { ">=" }.into(),
            status.into(),
        ]
    }
}

/// Deterministic points on the unit sphere (Fibonacci lattice).
pub fn sphere_points(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [rho * phi.cos(), rho * phi.sin(), z]
        })
        .collect()
}

fn frobenius(m: &[[C64; 3]; 3]) -> f64 {
    m.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// `(complex, real part)` relative deviation of `G_k` from `G_0` at `x`.
pub fn static_deviation(eval0: &KupradzeEval, k: f64, x: [f64; 3]) -> (f64, f64) {
    let g0 = green_static(x, eval0).expect("nonzero point");
    let gk = green_dynamic(x, &eval0.with_k(k)).expect("nonzero point");
    let g0c = g0.map(|r| r.map(|v| C64::new(v, 0.0)));
    let mut diff = [[C64::default(); 3]; 3];
    let mut real = [[C64::default(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            diff[i][j] = gk[i][j] - g0c[i][j];
            real[i][j] = C64::new(diff[i][j].re, 0.0);
        }
    }
    let n0 = frobenius(&g0c);
    (frobenius(&diff) / n0, frobenius(&real) / n0)
}

/// `G_k(x)` from analytic second derivatives of `e^{ik_q r}/r`.
pub fn green_direct(x: [f64; 3], eval: &KupradzeEval) -> [[C64; 3]; 3] {
    let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
    let i = C64::i();
    // (f', f'') of e^{ikr}/r
    let radial = |k: f64| {
        let e = (i * k * r).exp();
        (e * (i * k / r - 1.0 / (r * r)), e * (-k * k / r - i * 2.0 * k / (r * r) + 2.0 / (r * r * r)))
    };
    let mu = eval.material.mu;
    let (k1, k2) = (eval.waves.k1, eval.waves.k2);
    let (d1, dd1) = radial(k1);
    let (d2, dd2) = radial(k2);
    let phi2 = (i * k2 * r).exp() / r;
    std::array::from_fn(|a| {
        std::array::from_fn(|b| {
            let delta = if a == b { 1.0 } else { 0.0 };
            let xx = x[a] * x[b] / (r * r);
            let hess = (dd2 - dd1) * xx + (d2 - d1) * (delta / r - xx / r);
            (phi2 * delta + hess / (k2 * k2)) / (4.0 * std::f64::consts::PI * mu)
        })
    })
}

/// Largest entrywise relative deviation of `green_dynamic` from [`green_direct`].
pub fn reconstruction_error(eval: &KupradzeEval, points: &[[f64; 3]]) -> f64 {
    points
        .iter()
        .map(|&x| {
            let g = green_dynamic(x, eval).expect("nonzero point");
            let d = green_direct(x, eval);
            let scale = frobenius(&d);
            let diff: [[C64; 3]; 3] = std::array::from_fn(|a| std::array::from_fn(|b| g[a][b] - d[a][b]));
            frobenius(&diff) / scale
        })
        .fold(0.0, f64::max)
}

/// `max_x |x| max_ij |G_k(x)_ij|` over shells of radii in `[1e-3, 10]`.
pub fn scaled_kernel_max(eval: &KupradzeEval, samples: usize) -> f64 {
    let dirs = sphere_points(100);
    let radii = samples.div_ceil(dirs.len()).max(1);
    let mut best = 0.0f64;
    for ri in 0..radii {
        let r = 1e-3 * 1e4f64.powf(ri as f64 / (radii.max(2) - 1) as f64);
        for d in &dirs {
            let x = [r * d[0], r * d[1], r * d[2]];
            let g = green_dynamic(x, eval).expect("nonzero point");
            let m = g.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max);
            best = best.max(r * m);
        }
    }
    best
}

/// `u = G_k(. - q) e_1` for a source `q` outside the unit cube.
pub struct PointSourceField {
    pub eval: KupradzeEval,
    pub source: [f64; 3],
}

impl PointSourceField {
    pub fn value(&self, y: [f64; 3]) -> [C64; 3] {
        let q = self.source;
        let g = green_dynamic([y[0] - q[0], y[1] - q[1], y[2] - q[2]], &self.eval).expect("source off the cube");
        [g[0][0], g[1][0], g[2][0]]
    }

    /// Traction with fourth-order central differences of step `1e-3`.
    pub fn traction(&self, y: [f64; 3], nu: [f64; 3]) -> [C64; 3] {
        let h = 1e-3;
        let mut grad = [[C64::default(); 3]; 3];
        for l in 0..3 {
            let at = |s: f64| {
                let mut p = y;
                p[l] += s * h;
                self.value(p)
            };
            let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
            for j in 0..3 {
                grad[j][l] = (-p2[j] + p1[j] * 8.0 - m1[j] * 8.0 + m2[j]) / (12.0 * h);
            }
        }
        let (lambda, mu) = (self.eval.material.lambda, self.eval.material.mu);
        let div = grad[0][0] + grad[1][1] + grad[2][2];
        std::array::from_fn(|j| {
            let mut t = div * lambda * nu[j];
            for l in 0..3 {
                t += (grad[j][l] + grad[l][j]) * mu * nu[l];
            }
            t
        })
    }
}

/// Largest `|V(sigma(u) nu) - K(u) - u|` over the targets on an `n x n`
/// panel grid per cube face.
pub fn somigliana_defect(field: &PointSourceField, panels: usize, targets: &[[f64; 3]]) -> f64 {
    let grid = BoundaryGrid::unit_cube(panels);
    let traction = |y: [f64; 3], nu: [f64; 3]| field.traction(y, nu);
    let trace = |y: [f64; 3], _: [f64; 3]| field.value(y);
    let v = single_layer(&traction, &field.eval, targets, &grid).expect("interior targets");
    let k = double_layer(&trace, &field.eval, targets, &grid).expect("interior targets");
    targets
        .iter()
        .enumerate()
        .map(|(t, &x)| {
            let u = field.value(x);
            (0..3).map(|i| (v[t][i] - k[t][i] - u[i]).norm_sqr()).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

pub fn verify_table(cfg: &ExperimentConfig) -> Table {
    let material = MaterialParams::new(cfg.lambda, cfg.mu, 0.0).expect("validated material");
    let eval0 = KupradzeEval::new(material);
    let mut checks = Vec::new();

    // radii spread over [0.05, 5] so that both small-argument branches and the closed form are hit
    let points: Vec<[f64; 3]> = sphere_points(100)
        .into_iter()
        .enumerate()
        .map(|(n, d)| {
            let r = 0.05 * 100f64.powf(n as f64 / 99.0);
            [r * d[0], r * d[1], r * d[2]]
        })
        .collect();
    for k in [1.0, 10.0] {
        let value = reconstruction_error(&eval0.with_k(k), &points);
        checks.push(Check { name: "reconstruction".into(), k: Some(k), value, threshold: Some(1e-10), at_most: true });
    }

    let x = [0.6, 0.0, 0.8];
    let ks = [1e-2, 1e-3, 1e-4];
    let mut per_k2 = (Vec::new(), Vec::new());
    for k in ks {
        let (complex, real) = static_deviation(&eval0, k, x);
        // the 1e-6 bound is stated at the smallest k only
        let threshold = (k == 1e-4).then_some(1e-6);
        checks.push(Check { name: "static_limit".into(), k: Some(k), value: complex, threshold, at_most: true });
        checks.push(Check { name: "static_limit_real_part".into(), k: Some(k), value: real, threshold, at_most: true });
        per_k2.0.push(complex / (k * k));
        per_k2.1.push(real / (k * k));
    }
    // error / k^2 constant within a factor 2
    let spread = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(Check { name: "static_rate_spread".into(), k: None, value: spread(&per_k2.0), threshold: Some(2.0), at_most: true });
    checks.push(Check {
        name: "static_rate_spread_real_part".into(),
        k: None,
        value: spread(&per_k2.1),
        threshold: Some(2.0),
        at_most: true,
    });

    let maxima: Vec<f64> = [1.0, 10.0, 100.0].iter().map(|&k| scaled_kernel_max(&eval0.with_k(k), 10_000)).collect();
    let ratio = maxima.iter().cloned().fold(0.0, f64::max) / maxima.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(Check { name: "scaled_kernel_ratio".into(), k: None, value: ratio, threshold: Some(1.5), at_most: true });

    for l in 0..=2 {
        let mut c = 0.0f64;
        for i in 0..=10_000 {
            let z = 100.0 * i as f64 / 10_000.0;
            let j = spherical_bessel(l, z).expect("supported order");
            c = c.max(j.abs() * (1.0 + z)).max((z * j).abs());
        }
        checks.push(Check { name: format!("bessel_bound_l{l}"), k: None, value: c, threshold: Some(2.0), at_most: true });
    }

    let s = [0.4, 0.5, 0.6];
    let targets: Vec<[f64; 3]> = (0..27).map(|n| [s[n % 3], s[(n / 3) % 3], s[n / 9]]).collect();
    for &k in &cfg.k {
        let field = PointSourceField { eval: eval0.with_k(k), source: [1.5, 0.5, 0.5] };
        let defects: Vec<f64> = [6, 12, 24].iter().map(|&n| somigliana_defect(&field, n, &targets)).collect();
        let order = defects.windows(2).map(|w| (w[0] / w[1]).log2()).fold(f64::INFINITY, f64::min);
        for (n, d) in [6, 12, 24].iter().zip(&defects) {
            checks.push(Check { name: format!("somigliana_defect_n{n}"), k: Some(k), value: *d, threshold: None, at_most: true });
        }
        checks.push(Check { name: "somigliana_order".into(), k: Some(k), value: order, threshold: Some(0.8), at_most: false });
    }

    let mut t = Table::new(&HEADER);
    t.rows = checks.iter().map(Check::record).collect();
    t
}
