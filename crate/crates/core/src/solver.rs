//! Drivers: the standard Q1 FEM, the multiscale Petrov-Galerkin method,
//! manufactured data and error evaluation.

use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::correctors::{default_chunk, CorrectorError, CorrectorSetup};
use crate::fe::{
    assemble_global_form, assemble_load, assemble_norm_matrix, compute_norms, element_sum, shape_eval, DofMap,
    GaussRule, MaterialParams,
};
use crate::interpolation::{InterpolationError, InterpolationOperator};
use crate::linalg::{factorize, factorize_symmetric, norm2, CsrMatrix, LinalgError, SparseComplexMatrix, C64};
use crate::mesh::{BoundaryKind, DomainSpec, MeshError, StructuredMesh};

pub type SourceFn = Arc<dyn Fn([f64; 3]) -> [C64; 3] + Send + Sync>;
/// Robin data at a boundary point with outward unit normal.
pub type RobinFn = Arc<dyn Fn([f64; 3], [f64; 3]) -> [C64; 3] + Send + Sync>;

/// A closed-form solution with its Jacobian `grad[i][j] = d_j u_i`.
pub trait ExactSolution: Send + Sync {
    fn value(&self, x: [f64; 3]) -> [C64; 3];
    fn gradient(&self, x: [f64; 3]) -> [[C64; 3]; 3];
}

#[derive(Clone)]
pub struct ProblemData {
    pub domain: DomainSpec,
    pub material: MaterialParams,
    pub source: SourceFn,
    pub robin: RobinFn,
    pub exact: Option<Arc<dyn ExactSolution>>,
}

impl std::fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemData")
            .field("domain", &self.domain)
            .field("material", &self.material)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Interpolation(#[from] InterpolationError),
    #[error(transparent)]
    Corrector(#[from] CorrectorError),
    #[error("fine system is singular: {0}")]
    FineSystem(LinalgError),
    #[error("coarse msPG system is singular (k={k}, H={h}, m={m}): {source}")]
    CoarseSystem {
        k: f64,
        h: f64,
        m: usize,
        #[source]
        source: LinalgError,
    },
    #[error("resolution condition violated: kH={kh:.3} exceeds the bound {bound}")]
    Resolution { kh: f64, bound: f64 },
    #[error("oversampling order m must be at least 1")]
    Oversampling,
}

/// Fine (or single-level) Galerkin system on the free dofs of a mesh.
pub struct FemSystem {
    pub dofs: DofMap,
    pub matrix: SparseComplexMatrix,
    pub load: Vec<C64>,
}

pub fn assemble_system(mesh: &StructuredMesh, data: &ProblemData) -> FemSystem {
    let dofs = DofMap::free(mesh);
    let matrix = assemble_global_form(mesh, &data.material, &dofs);
    let f = data.source.as_ref();
    let g = data.robin.as_ref();
    let load = assemble_load(mesh, &dofs, &f, &g);
    FemSystem { dofs, matrix, load }
}

#[derive(Clone, Debug)]
pub struct FemSolution {
    pub dofs: DofMap,
    pub u: Vec<C64>,
    /// `|A u - b| / |b|`.
    pub residual: f64,
    pub time_assembly_s: f64,
    pub time_solve_s: f64,
}

/// Standard Q1 FEM on `mesh`; Dirichlet dofs are eliminated.
pub fn solve_standard_fem(mesh: &StructuredMesh, data: &ProblemData) -> Result<FemSolution, SolveError> {
    let t0 = Instant::now();
    let sys = assemble_system(mesh, data);
    let t1 = Instant::now();
    let u = solve_system(&sys)?;
    let time_solve_s = t1.elapsed().as_secs_f64();
    let res: Vec<C64> = sys.matrix.mul_vec(&u).iter().zip(&sys.load).map(|(a, b)| a - b).collect();
    let bn = norm2(&sys.load);
    let residual = if bn > 0.0 { norm2(&res) / bn } else { norm2(&res) };
    Ok(FemSolution { dofs: sys.dofs, u, residual, time_assembly_s: (t1 - t0).as_secs_f64(), time_solve_s })
}

fn solve_system(sys: &FemSystem) -> Result<Vec<C64>, SolveError> {
    if sys.load.iter().all(|v| *v == C64::default()) {
        return Ok(vec![C64::default(); sys.load.len()]);
    }
    let fact = factorize_symmetric(&sys.matrix, 0).map_err(SolveError::FineSystem)?;
    fact.solve(&sys.load).map_err(SolveError::FineSystem)
}

#[derive(Clone, Debug)]
pub struct MspgOptions {
    pub m: usize,
    /// Upper bound enforced on `kH`.
    pub max_kh: f64,
    /// Element chunk of the corrector sweep.
    pub chunk: usize,
}

pub const DEFAULT_OVERSAMPLING: usize = 2;
pub const DEFAULT_MAX_KH: f64 = 4.0;

impl Default for MspgOptions {
    fn default() -> Self {
        Self { m: DEFAULT_OVERSAMPLING, max_kh: DEFAULT_MAX_KH, chunk: default_chunk() }
    }
}

#[derive(Clone, Debug)]
pub struct MspgSolution {
    pub coarse_dofs: DofMap,
    pub fine_dofs: DofMap,
    pub u_coarse: Vec<C64>,
    /// `P u_H` on the fine dofs.
    pub u_fine: Vec<C64>,
    /// `max_z |a(u_h - P u_H, test_z)| / (|u_h|_V |test_z|_V)`, if a fine
    /// reference was supplied.
    pub galerkin_residual: Option<f64>,
    pub time_assembly_s: f64,
    pub time_correctors_s: f64,
    pub time_solve_s: f64,
}

/// Coarse/fine mesh pair with the operators shared by every msPG solve on it.
#[derive(Clone, Debug)]
pub struct TwoLevel {
    pub coarse: StructuredMesh,
    pub fine: StructuredMesh,
    pub parent: Vec<usize>,
    pub interp: InterpolationOperator,
}

impl TwoLevel {
    pub fn new(domain: &DomainSpec, coarse_h: f64, levels: usize) -> Result<Self, SolveError> {
        let coarse = StructuredMesh::build(domain, coarse_h)?;
        let (fine, parent) = coarse.refine_uniform(levels);
        let interp = InterpolationOperator::new(&coarse, &fine, &parent)?;
        Ok(Self { coarse, fine, parent, interp })
    }
}

/// Multiscale Petrov-Galerkin solve on `levels.coarse` with test functions
/// corrected on `levels.fine`. `fine` is the assembled fine system; if
/// `reference` holds the fine FEM solution the Galerkin residual is reported.
pub fn solve_mspg_on(
    levels: &TwoLevel,
    data: &ProblemData,
    fine: &FemSystem,
    reference: Option<&[C64]>,
    opts: &MspgOptions,
) -> Result<MspgSolution, SolveError> {
    if opts.m == 0 {
        return Err(SolveError::Oversampling);
    }
    let kh = data.material.k * levels.coarse.h();
    if kh > opts.max_kh * (1.0 + 1e-12) {
        return Err(SolveError::Resolution { kh, bound: opts.max_kh });
    }
    if kh > 1.0 {
        log::warn!("kH={kh:.3} exceeds 1; corrector problems may be poorly conditioned");
    }
    let t0 = Instant::now();
    let interp = &levels.interp;
    let nc = interp.coarse_dofs.num_dofs();
    let nf = interp.fine_dofs.num_dofs();
    assert_eq!(fine.dofs, interp.fine_dofs, "fine system built on different dofs");
    let b_mat = fine.matrix.matmul(&interp.prolongation);
    let norm = reference.map(|_| assemble_norm_matrix(&levels.fine, data.material.k, &interp.fine_dofs));
    let r_h = reference.map(|u| fine.matrix.mul_vec(u));
    let time_assembly_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let setup = CorrectorSetup::new(&levels.coarse, &levels.fine, &levels.parent, interp, &fine.matrix, data.material);
    struct Row {
        cols: Vec<usize>,
        vals: Vec<C64>,
        rhs: C64,
        test_norm: f64,
        g: C64,
    }
    let mut rows: Vec<Option<Row>> = (0..nc).map(|_| None).collect();
    setup.stream_test_space(opts.m, opts.chunk, |batch| {
        let done: Vec<(usize, Row)> = batch
            .into_par_iter()
            .map_init(
                || (vec![C64::default(); nc], Vec::<usize>::new(), vec![C64::default(); nf]),
                |(acc, touched, scratch), (i, col)| {
                    for (&w, &lw) in col.indices.iter().zip(&col.values) {
                        let (bc, bv) = b_mat.row(w);
                        for (&c, &v) in bc.iter().zip(bv) {
                            if acc[c] == C64::default() {
                                touched.push(c);
                            }
                            acc[c] += lw.conj() * v;
                        }
                    }
                    touched.sort_unstable();
                    touched.dedup();
                    let cols: Vec<usize> = touched.clone();
                    let vals: Vec<C64> = cols.iter().map(|&c| acc[c]).collect();
                    for &c in touched.iter() {
                        acc[c] = C64::default();
                    }
                    touched.clear();
                    let rhs = col.dot_dense(&fine.load);
                    let test_norm = norm.as_ref().map_or(0.0, |n| col.quadratic_form(n, scratch).re.max(0.0).sqrt());
                    let g = r_h.as_ref().map_or(C64::default(), |r| col.dot_dense(r));
                    (i, Row { cols, vals, rhs, test_norm, g })
                },
            )
            .collect();
        for (i, row) in done {
            rows[i] = Some(row);
        }
    })?;
    let rows: Vec<Row> = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or(CorrectorError::Missing(i)))
        .collect::<Result<_, _>>()?;
    let time_correctors_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let mut row_ptr = vec![0usize];
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    for r in &rows {
        // accumulation may cancel to exact zeros; they stay in the pattern
        col_idx.extend_from_slice(&r.cols);
        values.extend_from_slice(&r.vals);
        row_ptr.push(col_idx.len());
    }
    let k_mat = CsrMatrix::from_parts(nc, nc, row_ptr, col_idx, values);
    let f: Vec<C64> = rows.iter().map(|r| r.rhs).collect();
    let coarse_err =
        |source| SolveError::CoarseSystem { k: data.material.k, h: levels.coarse.h(), m: opts.m, source };
    let u_coarse = if nc == 0 || f.iter().all(|v| *v == C64::default()) {
        vec![C64::default(); nc]
    } else {
        factorize(&k_mat).map_err(coarse_err)?.solve(&f).map_err(coarse_err)?
    };
    let u_fine = interp.prolong(&u_coarse)?;
    let time_solve_s = t2.elapsed().as_secs_f64();

    let galerkin_residual = reference.map(|u_h| {
        let (_, uh_v) = compute_norms(&levels.fine, &interp.fine_dofs, u_h, data.material.k);
        let ku = k_mat.mul_vec(&u_coarse);
        rows.iter()
            .zip(&ku)
            .map(|(r, kv)| {
                let denom = uh_v * r.test_norm;
                let num = (r.g - kv).norm();
                if denom > 0.0 {
                    num / denom
                } else {
                    num
                }
            })
            .fold(0.0, f64::max)
    });
    Ok(MspgSolution {
        coarse_dofs: interp.coarse_dofs.clone(),
        fine_dofs: interp.fine_dofs.clone(),
        u_coarse,
        u_fine,
        galerkin_residual,
        time_assembly_s,
        time_correctors_s,
        time_solve_s,
    })
}

/// Convenience wrapper building the mesh pair and fine system.
pub fn solve_mspg(
    coarse_h: f64,
    levels: usize,
    data: &ProblemData,
    opts: &MspgOptions,
) -> Result<(TwoLevel, MspgSolution), SolveError> {
    let t0 = Instant::now();
    let two = TwoLevel::new(&data.domain, coarse_h, levels)?;
    let fine = assemble_system(&two.fine, data);
    let pre = t0.elapsed().as_secs_f64();
    let mut sol = solve_mspg_on(&two, data, &fine, None, opts)?;
    sol.time_assembly_s += pre;
    Ok((two, sol))
}

/// `|u_h - P u_H|_V / |(1 - P I_H) u_h|_V`.
pub fn quasi_optimality_ratio(levels: &TwoLevel, u_h: &[C64], u_ms: &[C64], k: f64) -> f64 {
    let ih = levels.interp.apply(u_h).expect("fine vector");
    let pih = levels.interp.prolong(&ih).expect("coarse vector");
    let best: Vec<C64> = u_h.iter().zip(&pih).map(|(a, b)| a - b).collect();
    let err: Vec<C64> = u_h.iter().zip(u_ms).map(|(a, b)| a - b).collect();
    let (_, num) = compute_norms(&levels.fine, &levels.interp.fine_dofs, &err, k);
    let (_, den) = compute_norms(&levels.fine, &levels.interp.fine_dofs, &best, k);
    num / den
}

/// Comparison target for [`compute_error`].
pub enum Reference<'a> {
    Exact(&'a dyn ExactSolution),
    Discrete(&'a [C64]),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorReport {
    pub abs_l2: f64,
    pub abs_v: f64,
    pub ref_l2: f64,
    pub ref_v: f64,
    pub rel_l2: f64,
    pub rel_v: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else if a == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub const ERROR_QUADRATURE: usize = 4;

/// Errors of a fine-dof vector against a reference, in `L2` and `V` norm.
pub fn compute_error(
    mesh: &StructuredMesh,
    dofs: &DofMap,
    u: &[C64],
    reference: Reference<'_>,
    k: f64,
) -> ErrorReport {
    let (abs_l2, abs_v, ref_l2, ref_v) = match reference {
        Reference::Discrete(r) => {
            let e: Vec<C64> = u.iter().zip(r).map(|(a, b)| a - b).collect();
            let (el, ev) = compute_norms(mesh, dofs, &e, k);
            let (rl, rv) = compute_norms(mesh, dofs, r, k);
            (el, ev, rl, rv)
        }
        Reference::Exact(ex) => {
            let d = mesh.dim();
            let nv = mesh.vertices_per_element();
            let h = mesh.h();
            let rule: Vec<_> = GaussRule::new(ERROR_QUADRATURE)
                .tensor(d)
                .into_iter()
                .map(|(xi, w)| {
                    let (v, g) = shape_eval(d, xi);
                    (xi, w * h.powi(d as i32), v, g)
                })
                .collect();
            let terms = |e: usize| -> [f64; 4] {
                let o = mesh.element_origin(e);
                let verts = mesh.element_vertices(e);
                let mut acc = [0.0; 4];
                for (xi, w, phi, grad) in &rule {
                    let mut x = [0.0; 3];
                    for a in 0..d {
                        x[a] = o[a] + h * xi[a];
                    }
                    let uv = ex.value(x);
                    let ug = ex.gradient(x);
                    for c in 0..d {
                        let mut val = C64::default();
                        let mut gr = [C64::default(); 3];
                        for l in 0..nv {
                            let coef = dofs.first_dof(verts[l]).map_or(C64::default(), |f| u[f + c]);
                            val += coef * phi[l];
                            for a in 0..d {
                                gr[a] += coef * (grad[l][a] / h);
                            }
                        }
                        acc[0] += w * (val - uv[c]).norm_sqr();
                        acc[2] += w * uv[c].norm_sqr();
                        for a in 0..d {
                            acc[1] += w * (gr[a] - ug[c][a]).norm_sqr();
                            acc[3] += w * ug[c][a].norm_sqr();
                        }
                    }
                }
                acc
            };
            let sums: Vec<f64> = (0..4).map(|i| element_sum(mesh.num_elements(), |e| terms(e)[i])).collect();
            let v = |l2: f64, h1: f64| (k * k * l2 + h1).sqrt();
            (sums[0].sqrt(), v(sums[0], sums[1]), sums[2].sqrt(), v(sums[2], sums[3]))
        }
    };
    ErrorReport { abs_l2, abs_v, ref_l2, ref_v, rel_l2: ratio(abs_l2, ref_l2), rel_v: ratio(abs_v, ref_v) }
}

/// Nodal interpolant of a closed-form field on the dofs of `mesh`.
pub fn interpolate(mesh: &StructuredMesh, dofs: &DofMap, u: &dyn ExactSolution) -> Vec<C64> {
    let d = mesh.dim();
    let mut out = vec![C64::default(); dofs.num_dofs()];
    for (n, &v) in dofs.vertices().iter().enumerate() {
        let val = u.value(mesh.vertex_coords(v));
        out[n * d..(n + 1) * d].copy_from_slice(&val[..d]);
    }
    out
}

/// `u = (phi_+, phi_-, phi_+)(|x + q|)`, `phi_s(r) = (e^{s i k r} - 1) / (k^2 r)`,
/// `q = (1, 1, 1)`, on the unit cube with Robin boundary.
#[derive(Clone, Copy, Debug)]
pub struct Manufactured3d {
    pub k: f64,
    pub lambda: f64,
    pub mu: f64,
}

const SHIFT: [f64; 3] = [1.0, 1.0, 1.0];
const SIGNS: [f64; 3] = [1.0, -1.0, 1.0];

impl Manufactured3d {
    fn radial(&self, x: [f64; 3]) -> (f64, [f64; 3]) {
        let y = [x[0] + SHIFT[0], x[1] + SHIFT[1], x[2] + SHIFT[2]];
        let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
        (r, [y[0] / r, y[1] / r, y[2] / r])
    }

    /// `(phi, phi', phi'')` for component `i`.
    fn profile(&self, i: usize, r: f64) -> (C64, C64, C64) {
        let k2 = self.k * self.k;
        let kappa = SIGNS[i] * self.k;
        let e = Complex64::new(0.0, kappa * r).exp();
        let one = C64::new(1.0, 0.0);
        let n = C64::new(0.0, kappa * r) * e - e + one;
        let phi = (e - one) / (k2 * r);
        let d1 = n / (k2 * r * r);
        let d2 = -e * (kappa * kappa / (k2 * r)) - n * (2.0 / (k2 * r * r * r));
        (phi, d1, d2)
    }

    pub fn source(&self, x: [f64; 3]) -> [C64; 3] {
        let (r, n) = self.radial(x);
        let p: Vec<_> = (0..3).map(|i| self.profile(i, r)).collect();
        let mut f = [C64::default(); 3];
        for i in 0..3 {
            let (phi, d1, d2) = p[i];
            let mut grad_div = C64::default();
            for c in 0..3 {
                let (_, c1, c2) = p[c];
                grad_div += (c2 - c1 / r) * (n[i] * n[c]);
                if c == i {
                    grad_div += c1 / r;
                }
            }
            f[i] = -(d2 + d1 * (2.0 / r)) * self.mu - grad_div * (self.lambda + self.mu) - phi * (self.k * self.k);
        }
        f
    }

    pub fn stress(&self, x: [f64; 3]) -> [[C64; 3]; 3] {
        let g = self.gradient(x);
        let div = g[0][0] + g[1][1] + g[2][2];
        let mut s = [[C64::default(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] = (g[i][j] + g[j][i]) * self.mu;
                if i == j {
                    s[i][j] += div * self.lambda;
                }
            }
        }
        s
    }

    pub fn traction(&self, x: [f64; 3], normal: [f64; 3]) -> [C64; 3] {
        let s = self.stress(x);
        let u = self.value(x);
        let mut g = [C64::default(); 3];
        for i in 0..3 {
            for j in 0..3 {
                g[i] += s[i][j] * normal[j];
            }
            g[i] += C64::new(0.0, self.k) * u[i];
        }
        g
    }
}

impl ExactSolution for Manufactured3d {
    fn value(&self, x: [f64; 3]) -> [C64; 3] {
        let (r, _) = self.radial(x);
        [self.profile(0, r).0, self.profile(1, r).0, self.profile(2, r).0]
    }

    fn gradient(&self, x: [f64; 3]) -> [[C64; 3]; 3] {
        let (r, n) = self.radial(x);
        let mut g = [[C64::default(); 3]; 3];
        for (i, gi) in g.iter_mut().enumerate() {
            let (_, d1, _) = self.profile(i, r);
            for j in 0..3 {
                gi[j] = d1 * n[j];
            }
        }
        g
    }
}

/// Unit cube, pure Robin, with the manufactured solution above.
pub fn manufactured_solution_3d(k: f64, lambda: f64, mu: f64) -> ProblemData {
    assert!(k > 0.0, "manufactured solution needs k > 0");
    let ex = Manufactured3d { k, lambda, mu };
    ProblemData {
        domain: DomainSpec::unit(3, BoundaryKind::Robin),
        material: MaterialParams::new(lambda, mu, k).expect("valid material"),
        source: Arc::new(move |x| ex.source(x)),
        robin: Arc::new(move |x, n| ex.traction(x, n)),
        exact: Some(Arc::new(ex)),
    }
}

/// Radius of the bump source.
pub const POINT_SOURCE_RADIUS: f64 = 1.0 / 20.0;

/// `exp(-1 / (1 - (|x| / rho)^2))` for `|x| < rho`, else 0.
pub fn bump(x: [f64; 3]) -> f64 {
    let s = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() / POINT_SOURCE_RADIUS;
    if s < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// Square with hole, Robin outside with `g = 0`, Dirichlet on the hole, bump
/// source in both components.
pub fn point_source_2d(k: f64) -> ProblemData {
    ProblemData {
        domain: DomainSpec::square_with_hole(),
        material: MaterialParams::unit(k),
        source: Arc::new(|x| {
            let b = C64::new(bump([x[0], x[1], 0.0]), 0.0);
            [b, b, C64::default()]
        }),
        robin: Arc::new(|_, _| [C64::default(); 3]),
        exact: None,
    }
}
