//! Volume and boundary potentials of the dynamic fundamental solution by
//! composite midpoint quadrature on axis-aligned boxes.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use super::{green_dynamic, KupradzeError, KupradzeEval};
use crate::fe::{BoundaryField, VectorField};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Uniform cell grid over a box; midpoints are the quadrature nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceGrid {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub cells: usize,
}

impl SourceGrid {
    pub fn new(lo: [f64; 3], hi: [f64; 3], cells: usize) -> Result<Self, KupradzeError> {
        if cells == 0 || (0..3).any(|a| !(hi[a] > lo[a])) {
            return Err(KupradzeError::Grid(format!("box {lo:?}..{hi:?} with {cells} cells")));
        }
        Ok(Self { lo, hi, cells })
    }

    pub fn unit_cube(cells: usize) -> Self {
        Self { lo: [0.0; 3], hi: [1.0; 3], cells }
    }

    pub fn spacing(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.hi[a] - self.lo[a]) / self.cells as f64)
    }

    pub fn num_cells(&self) -> usize {
        self.cells.pow(3)
    }

    fn cell_bounds(&self, c: usize) -> ([f64; 3], [f64; 3]) {
        let h = self.spacing();
        let idx = [c % self.cells, (c / self.cells) % self.cells, c / (self.cells * self.cells)];
        let lo = std::array::from_fn(|a| self.lo[a] + idx[a] as f64 * h[a]);
        let hi = std::array::from_fn(|a| lo[a] + h[a]);
        (lo, hi)
    }

    pub fn midpoint(&self, c: usize) -> [f64; 3] {
        let (lo, hi) = self.cell_bounds(c);
        std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]))
    }

    /// Closed cells are half-open towards `hi`, except the last layer.
    pub fn locate(&self, x: [f64; 3]) -> Option<usize> {
        let h = self.spacing();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if x[a] < self.lo[a] || x[a] > self.hi[a] {
                return None;
            }
            idx[a] = (((x[a] - self.lo[a]) / h[a]) as usize).min(self.cells - 1);
        }
        Some(idx[0] + self.cells * (idx[1] + self.cells * idx[2]))
    }
}

/// `int_box 1 / |x - y| dy` in closed form, valid for `x` inside or outside the box.
pub fn box_inverse_distance(x: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> f64 {
    fn log_sum(u: f64, r: f64, rest2: f64) -> f64 {
        // ln(u + r) without cancellation for u < 0
        if u >= 0.0 {
            (u + r).ln()
        } else {
            (rest2 / (r - u)).ln()
        }
    }
    fn antiderivative(u: f64, v: f64, w: f64) -> f64 {
        let r = (u * u + v * v + w * w).sqrt();
        if r == 0.0 {
            return 0.0;
        }
        let mut f = 0.0;
        if v * w != 0.0 {
            f += v * w * log_sum(u, r, v * v + w * w);
        }
        if u * w != 0.0 {
            f += u * w * log_sum(v, r, u * u + w * w);
        }
        if u * v != 0.0 {
            f += u * v * log_sum(w, r, u * u + v * v);
        }
        if u != 0.0 {
            f -= 0.5 * u * u * (v * w / (u * r)).atan();
        }
        if v != 0.0 {
            f -= 0.5 * v * v * (u * w / (v * r)).atan();
        }
        if w != 0.0 {
            f -= 0.5 * w * w * (u * v / (w * r)).atan();
        }
        f
    }
    let mut total = 0.0;
    for corner in 0..8 {
        let mut c = [0.0; 3];
        let mut sign = 1.0;
        for a in 0..3 {
            if corner >> a & 1 == 1 {
                c[a] = hi[a] - x[a];
            } else {
                c[a] = lo[a] - x[a];
                sign = -sign;
            }
        }
        total += sign * antiderivative(c[0], c[1], c[2]);
    }
    total
}

fn mat_vec(g: &[[C64; 3]; 3], v: &[C64; 3]) -> [C64; 3] {
    std::array::from_fn(|i| g[i][0] * v[0] + g[i][1] * v[1] + g[i][2] * v[2])
}

/// `N_k f (x) = int G_k(x - y) f(y) dy` over the grid box.
///
/// The cell containing `x` is integrated with the `r -> 0` form of the
/// kernel, `(I1(0) + I2(0) / 3) int_cell 1 / |x - y| dy f(midpoint)`;
/// `I2(0) / 3` is the angular mean of `x_i x_j / r^2` over a cube.
pub fn newton_potential(
    f: VectorField<'_>,
    eval: &KupradzeEval,
    targets: &[[f64; 3]],
    grid: &SourceGrid,
) -> Vec<[C64; 3]> {
    let h = grid.spacing();
    let vol = h[0] * h[1] * h[2];
    let values: Vec<[C64; 3]> = (0..grid.num_cells()).into_par_iter().map(|c| f(grid.midpoint(c))).collect();
    let support: Vec<usize> = (0..values.len()).filter(|&c| values[c].iter().any(|v| *v != ZERO)).collect();
    let (c1, c2) = eval.origin_limits();
    let near = c1 + c2 / 3.0;
    targets
        .par_iter()
        .map(|&x| {
            let own = grid.locate(x);
            let mut acc = [ZERO; 3];
            for &c in &support {
                if Some(c) == own {
                    continue;
                }
                let y = grid.midpoint(c);
                let d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
                // targets are never cell midpoints other than their own
                let g = green_dynamic(d, eval).expect("distinct cell midpoint");
                let gv = mat_vec(&g, &values[c]);
                for i in 0..3 {
                    acc[i] += gv[i] * vol;
                }
            }
            if let Some(c) = own {
                let (lo, hi) = grid.cell_bounds(c);
                let w = near * box_inverse_distance(x, lo, hi);
                for i in 0..3 {
                    acc[i] += values[c][i] * w;
                }
            }
            acc
        })
        .collect()
}

/// Midpoint panels on the faces of a box, `panels x panels` per face.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryGrid {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub panels: usize,
    points: Vec<[f64; 3]>,
    normals: Vec<[f64; 3]>,
    areas: Vec<f64>,
}

impl BoundaryGrid {
    pub fn new(lo: [f64; 3], hi: [f64; 3], panels: usize) -> Result<Self, KupradzeError> {
        if panels == 0 || (0..3).any(|a| !(hi[a] > lo[a])) {
            return Err(KupradzeError::Grid(format!("box {lo:?}..{hi:?} with {panels} panels")));
        }
        let mut points = Vec::with_capacity(6 * panels * panels);
        let mut normals = Vec::with_capacity(6 * panels * panels);
        let mut areas = Vec::with_capacity(6 * panels * panels);
        for axis in 0..3 {
            let (p, q) = ((axis + 1) % 3, (axis + 2) % 3);
            let hp = (hi[p] - lo[p]) / panels as f64;
            let hq = (hi[q] - lo[q]) / panels as f64;
            for side in 0..2 {
                let mut nu = [0.0; 3];
                nu[axis] = if side == 0 { -1.0 } else { 1.0 };
                for j in 0..panels {
                    for i in 0..panels {
                        let mut y = [0.0; 3];
                        y[axis] = if side == 0 { lo[axis] } else { hi[axis] };
                        y[p] = lo[p] + (i as f64 + 0.5) * hp;
                        y[q] = lo[q] + (j as f64 + 0.5) * hq;
                        points.push(y);
                        normals.push(nu);
                        areas.push(hp * hq);
                    }
                }
            }
        }
        Ok(Self { lo, hi, panels, points, normals, areas })
    }

    pub fn unit_cube(panels: usize) -> Self {
        Self::new([0.0; 3], [1.0; 3], panels).expect("unit cube")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest panel edge.
    pub fn spacing(&self) -> f64 {
        (0..3).map(|a| (self.hi[a] - self.lo[a]) / self.panels as f64).fold(0.0, f64::max)
    }

    pub fn diameter(&self) -> f64 {
        (0..3).map(|a| (self.hi[a] - self.lo[a]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn panel(&self, p: usize) -> ([f64; 3], [f64; 3], f64) {
        (self.points[p], self.normals[p], self.areas[p])
    }

    /// `int |phi|^2 ds` by the same panel rule.
    pub fn l2_norm(&self, phi: BoundaryField<'_>) -> f64 {
        (0..self.len())
            .map(|p| {
                let v = phi(self.points[p], self.normals[p]);
                self.areas[p] * v.iter().map(|c| c.norm_sqr()).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    fn check_target(&self, x: [f64; 3]) -> Result<(), KupradzeError> {
        let mut distance = f64::INFINITY;
        for a in 0..3 {
            if !(x[a] > self.lo[a] && x[a] < self.hi[a]) {
                return Err(KupradzeError::Outside(x));
            }
            distance = distance.min(x[a] - self.lo[a]).min(self.hi[a] - x[a]);
        }
        let min = 2.0 * self.spacing();
        if distance < min * (1.0 - 1e-12) {
            return Err(KupradzeError::TooClose { distance, min });
        }
        Ok(())
    }
}

/// `T[i][j]`: component `j` of the traction at `y` (normal `nu`) of the field
/// `y -> G_k(x - y) e_i`, by central differences with step `delta`.
fn traction_kernel(x: [f64; 3], y: [f64; 3], nu: [f64; 3], eval: &KupradzeEval, delta: f64) -> [[C64; 3]; 3] {
    let lambda = eval.material.lambda;
    let mu = eval.material.mu;
    // grad[l][j][i] = d/dy_l of component j of column i
    let mut grad = [[[ZERO; 3]; 3]; 3];
    for (l, gl) in grad.iter_mut().enumerate() {
        let mut dp = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
        let mut dm = dp;
        dp[l] -= delta;
        dm[l] += delta;
        let gp = green_dynamic(dp, eval).expect("target off the boundary");
        let gm = green_dynamic(dm, eval).expect("target off the boundary");
        for j in 0..3 {
            for i in 0..3 {
                gl[j][i] = (gp[j][i] - gm[j][i]) / (2.0 * delta);
            }
        }
    }
    let mut t = [[ZERO; 3]; 3];
    for (i, ti) in t.iter_mut().enumerate() {
        let div = grad[0][0][i] + grad[1][1][i] + grad[2][2][i];
        for j in 0..3 {
            let mut s = div * lambda * nu[j];
            for l in 0..3 {
                s += (grad[l][j][i] + grad[j][l][i]) * mu * nu[l];
            }
            ti[j] = s;
        }
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerPotentials {
    pub single: [C64; 3],
    pub double: [C64; 3],
}

fn boundary_sum<F>(grid: &BoundaryGrid, targets: &[[f64; 3]], kernel: F) -> Result<Vec<[C64; 3]>, KupradzeError>
where
    F: Fn([f64; 3], usize) -> [C64; 3] + Sync,
{
    for &x in targets {
        grid.check_target(x)?;
    }
    Ok(targets
        .par_iter()
        .map(|&x| {
            let mut acc = [ZERO; 3];
            for p in 0..grid.len() {
                let v = kernel(x, p);
                for i in 0..3 {
                    acc[i] += v[i] * grid.areas[p];
                }
            }
            acc
        })
        .collect())
}

/// `V_k phi (x) = int_{boundary} G_k(x - y) phi(y) ds_y`.
pub fn single_layer(
    phi: BoundaryField<'_>,
    eval: &KupradzeEval,
    targets: &[[f64; 3]],
    grid: &BoundaryGrid,
) -> Result<Vec<[C64; 3]>, KupradzeError> {
    let dens: Vec<[C64; 3]> = (0..grid.len()).map(|p| phi(grid.points[p], grid.normals[p])).collect();
    boundary_sum(grid, targets, |x, p| {
        let y = grid.points[p];
        let g = green_dynamic([x[0] - y[0], x[1] - y[1], x[2] - y[2]], eval).expect("interior target");
        mat_vec(&g, &dens[p])
    })
}

/// `K_k phi (x) = int_{boundary} T_k(x, y) phi(y) ds_y` with the traction kernel
/// of the columns of `G_k(x - .)`.
pub fn double_layer(
    phi: BoundaryField<'_>,
    eval: &KupradzeEval,
    targets: &[[f64; 3]],
    grid: &BoundaryGrid,
) -> Result<Vec<[C64; 3]>, KupradzeError> {
    let dens: Vec<[C64; 3]> = (0..grid.len()).map(|p| phi(grid.points[p], grid.normals[p])).collect();
    let delta = 1e-6 * grid.diameter();
    boundary_sum(grid, targets, |x, p| {
        let t = traction_kernel(x, grid.points[p], grid.normals[p], eval, delta);
        mat_vec(&t, &dens[p])
    })
}

pub fn layer_potentials(
    phi: BoundaryField<'_>,
    eval: &KupradzeEval,
    targets: &[[f64; 3]],
    grid: &BoundaryGrid,
) -> Result<Vec<LayerPotentials>, KupradzeError> {
    let single = single_layer(phi, eval, targets, grid)?;
    let double = double_layer(phi, eval, targets, grid)?;
    Ok(single.into_iter().zip(double).map(|(single, double)| LayerPotentials { single, double }).collect())
}
