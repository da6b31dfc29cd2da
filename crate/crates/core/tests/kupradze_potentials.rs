use elastolod::fe::MaterialParams;
use elastolod::kupradze::{
    double_layer, green_dynamic, newton_potential, single_layer, BoundaryGrid, KupradzeEval, SourceGrid,
};
use num_complex::Complex64 as C64;

const SOURCE: [f64; 3] = [1.5, 0.5, 0.5];

fn column(eval: &KupradzeEval, y: [f64; 3]) -> [C64; 3] {
    let g = green_dynamic([y[0] - SOURCE[0], y[1] - SOURCE[1], y[2] - SOURCE[2]], eval).unwrap();
    [g[0][0], g[1][0], g[2][0]]
}

/// Traction of `y -> G(y - q) e_1` with fourth-order central differences.
fn column_traction(eval: &KupradzeEval, y: [f64; 3], nu: [f64; 3]) -> [C64; 3] {
    let h = 1e-3;
    let mut grad = [[C64::new(0.0, 0.0); 3]; 3]; // grad[j][l] = d_l u_j
    for l in 0..3 {
        let shift = |s: f64| {
            let mut p = y;
            p[l] += s * h;
            column(eval, p)
        };
        let (p2, p1, m1, m2) = (shift(2.0), shift(1.0), shift(-1.0), shift(-2.0));
        for j in 0..3 {
            grad[j][l] = (-p2[j] + p1[j] * 8.0 - m1[j] * 8.0 + m2[j]) / (12.0 * h);
        }
    }
    let (lambda, mu) = (eval.material.lambda, eval.material.mu);
    let div = grad[0][0] + grad[1][1] + grad[2][2];
    std::array::from_fn(|j| {
        let mut t = div * lambda * nu[j];
        for l in 0..3 {
            t += (grad[j][l] + grad[l][j]) * mu * nu[l];
        }
        t
    })
}

fn somigliana_defect(eval: &KupradzeEval, panels: usize, targets: &[[f64; 3]]) -> f64 {
    let grid = BoundaryGrid::unit_cube(panels);
    let traction = |y: [f64; 3], nu: [f64; 3]| column_traction(eval, y, nu);
    let trace = |y: [f64; 3], _: [f64; 3]| column(eval, y);
    let v = single_layer(&traction, eval, targets, &grid).unwrap();
    let k = double_layer(&trace, eval, targets, &grid).unwrap();
    targets
        .iter()
        .enumerate()
        .map(|(t, &x)| {
            let u = column(eval, x);
            (0..3).map(|i| (v[t][i] - k[t][i] - u[i]).norm_sqr()).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

fn interior_targets() -> Vec<[f64; 3]> {
    let s = [0.4, 0.5, 0.6];
    let mut out = Vec::new();
    for &x in &s {
        for &y in &s {
            for &z in &s {
                out.push([x, y, z]);
            }
        }
    }
    out
}

#[test]
fn somigliana_identity_converges() {
    let eval = KupradzeEval::new(MaterialParams::unit(4.0));
    let targets = interior_targets();
    let defects: Vec<f64> = [6, 12, 24].iter().map(|&n| somigliana_defect(&eval, n, &targets)).collect();
    let scale = targets.iter().map(|&x| column(&eval, x).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let orders: Vec<f64> = defects.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    eprintln!("somigliana defects {defects:?} orders {orders:?}");
    assert!(orders.iter().all(|&p| p >= 0.8), "defects {defects:?} orders {orders:?}");
    assert!(defects[2] < 1e-2 * scale, "{defects:?} vs {scale}");
}

fn bump(x: [f64; 3]) -> f64 {
    let r2 = (0..3).map(|a| (x[a] - 0.5).powi(2)).sum::<f64>() / 0.09;
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

#[test]
fn newton_potential_scaled_norm_does_not_grow() {
    let grid = SourceGrid::unit_cube(24);
    // targets at every other source midpoint; weight (2h)^3
    let targets: Vec<[f64; 3]> = (0..grid.num_cells())
        .filter(|c| {
            let idx = [c % 24, (c / 24) % 24, c / 576];
            idx.iter().all(|i| i % 2 == 0)
        })
        .map(|c| grid.midpoint(c))
        .collect();
    let w = (2.0f64 / 24.0).powi(3);
    let f = |x: [f64; 3]| [C64::new(bump(x), 0.0), C64::new(0.0, 0.0), C64::new(0.5 * bump(x), 0.0)];
    let scaled: Vec<f64> = [4.0, 8.0, 16.0, 32.0]
        .iter()
        .map(|&k| {
            let eval = KupradzeEval::new(MaterialParams::unit(k));
            let n = newton_potential(&f, &eval, &targets, &grid);
            k * (w * n.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
        })
        .collect();
    eprintln!("scaled newton norms {scaled:?}");
    let peak = scaled.iter().cloned().fold(0.0, f64::max);
    assert!(peak <= 2.0 * scaled[0], "{scaled:?}");
}

#[test]
fn single_layer_bound_trend() {
    let grid = BoundaryGrid::unit_cube(24);
    let phi = |y: [f64; 3], nu: [f64; 3]| {
        [C64::new(nu[0] + y[1], 0.0), C64::new(y[2] * y[0], 0.0), C64::new(0.0, 1.0 - y[0])]
    };
    let n = 8;
    let targets: Vec<[f64; 3]> = (0..n * n * n)
        .map(|c| {
            let idx = [c % n, (c / n) % n, c / (n * n)];
            std::array::from_fn(|a| 0.1 + 0.8 * (idx[a] as f64 + 0.5) / n as f64)
        })
        .collect();
    let w = (0.8f64 / n as f64).powi(3);
    let phi_norm = grid.l2_norm(&phi);
    let ratios: Vec<f64> = [4.0, 8.0, 16.0]
        .iter()
        .map(|&k| {
            let eval = KupradzeEval::new(MaterialParams::unit(k));
            let v = single_layer(&phi, &eval, &targets, &grid).unwrap();
            (w * v.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>()).sqrt() / ((1.0 + k) * phi_norm)
        })
        .collect();
    eprintln!("single-layer ratios {ratios:?}");
    let peak = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(peak <= 2.0 * ratios[0], "{ratios:?}");
}
