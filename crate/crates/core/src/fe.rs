//! Vector-valued Q1 finite elements on structured meshes: shape functions,
//! tensor Gauss rules, and assembly of the elastic Helmholtz form
//!
//! `a(u, v) = (C eps(u), eps(v)) - k^2 (u, v) + i k (u, v)_{Gamma_R}`,
//! `C M = 2 mu M + lambda tr(M) I`, conjugate-linear in `v`.
//!
//! Matrix convention: `A[r, c] = a(phi_c, phi_r)`, so `a(u, v) = v^H A u`.
//! All elements of a mesh are congruent, hence a single reference element
//! matrix serves every element.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{CsrMatrix, SparseComplexMatrix, C64};
use crate::mesh::{face_local_vertices, BoundaryKind, Facet, StructuredMesh, NONE};

#[derive(Debug, Error, PartialEq)]
pub enum MaterialError {
    #[error("shear modulus mu={0} must be positive")]
    Mu(f64),
    #[error("lambda={lambda} must exceed -2mu/3={bound}")]
    Lambda { lambda: f64, bound: f64 },
    #[error("wavenumber k={0} must be finite and non-negative")]
    Wavenumber(f64),
    #[error("wavenumber k={k} is below the configured minimum k0={k0}")]
    BelowK0 { k: f64, k0: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams {
    pub lambda: f64,
    pub mu: f64,
    pub k: f64,
}

impl MaterialParams {
    pub fn new(lambda: f64, mu: f64, k: f64) -> Result<Self, MaterialError> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(MaterialError::Mu(mu));
        }
        let bound = -2.0 * mu / 3.0;
        if !(lambda > bound && lambda.is_finite()) {
            return Err(MaterialError::Lambda { lambda, bound });
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(MaterialError::Wavenumber(k));
        }
        Ok(Self { lambda, mu, k })
    }

    /// `lambda = mu = 1`.
    pub fn unit(k: f64) -> Self {
        Self::new(1.0, 1.0, k).expect("unit material")
    }

    pub fn check_k0(&self, k0: f64) -> Result<(), MaterialError> {
        if self.k < k0 {
            return Err(MaterialError::BelowK0 { k: self.k, k0 });
        }
        Ok(())
    }

    pub fn with_k(self, k: f64) -> Self {
        Self { k, ..self }
    }
}

/// Vertex to degree-of-freedom map; vertex `v` owns dofs
/// `first(v) .. first(v) + d`, increasing with `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    dim: usize,
    vertex_node: Vec<usize>,
    node_vertex: Vec<usize>,
}

impl DofMap {
    /// Sorted, duplicate-free vertex list.
    pub fn from_vertices(mesh: &StructuredMesh, vertices: &[usize]) -> Self {
        let mut vertex_node = vec![NONE; mesh.num_vertices()];
        for (i, &v) in vertices.iter().enumerate() {
            assert!(i == 0 || vertices[i - 1] < v, "vertex list must be sorted and unique");
            vertex_node[v] = i;
        }
        Self { dim: mesh.dim(), vertex_node, node_vertex: vertices.to_vec() }
    }

    /// Dofs of all vertices off the Dirichlet boundary.
    pub fn free(mesh: &StructuredMesh) -> Self {
        Self::from_vertices(mesh, &mesh.free_vertices())
    }

    pub fn all(mesh: &StructuredMesh) -> Self {
        Self::from_vertices(mesh, &(0..mesh.num_vertices()).collect::<Vec<_>>())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn num_nodes(&self) -> usize {
        self.node_vertex.len()
    }
    pub fn num_dofs(&self) -> usize {
        self.node_vertex.len() * self.dim
    }
    pub fn vertices(&self) -> &[usize] {
        &self.node_vertex
    }

    /// First dof of `v`, if `v` carries unknowns.
    pub fn first_dof(&self, v: usize) -> Option<usize> {
        let n = self.vertex_node[v];
        (n != NONE).then(|| n * self.dim)
    }

    pub fn dof(&self, v: usize, component: usize) -> Option<usize> {
        self.first_dof(v).map(|f| f + component)
    }

    pub fn dof_vertex(&self, dof: usize) -> (usize, usize) {
        (self.node_vertex[dof / self.dim], dof % self.dim)
    }

    pub fn node(&self, v: usize) -> Option<usize> {
        let n = self.vertex_node[v];
        (n != NONE).then_some(n)
    }
}

/// Gauss-Legendre rule on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            points[i] = 0.5 * (1.0 - x);
            points[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Self { points, weights }
    }

    /// Tensor rule on `[0,1]^dim`: points with zero-padded unused axes.
    pub fn tensor(&self, dim: usize) -> Vec<([f64; 3], f64)> {
        let n = self.points.len();
        let total = n.pow(dim as u32);
        (0..total)
            .map(|mut idx| {
                let mut p = [0.0; 3];
                let mut w = 1.0;
                for slot in p.iter_mut().take(dim) {
                    let i = idx % n;
                    idx /= n;
                    *slot = self.points[i];
                    w *= self.weights[i];
                }
                (p, w)
            })
            .collect()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for j in 2..=n {
        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = if n == 0 { 0.0 } else { n as f64 * (x * p1 - p0) / (x * x - 1.0) };
    (p, d)
}

/// Q1 shape values and reference gradients at `xi` in `[0,1]^dim`.
pub fn shape_eval(dim: usize, xi: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let nv = 1 << dim;
    let mut vals = vec![1.0; nv];
    let mut grads = vec![[0.0; 3]; nv];
    for l in 0..nv {
        // 1D factor and derivative along each axis
        let mut f = [1.0; 3];
        let mut df = [0.0; 3];
        for a in 0..dim {
            (f[a], df[a]) = if (l >> a) & 1 == 1 { (xi[a], 1.0) } else { (1.0 - xi[a], -1.0) };
        }
        vals[l] = f[..dim].iter().product();
        for b in 0..dim {
            grads[l][b] = (0..dim).map(|a| if a == b { df[a] } else { f[a] }).product();
        }
    }
    (vals, grads)
}

/// Reference integrals for one element of edge length `h`.
#[derive(Clone, Debug)]
pub struct ElementIntegrals {
    pub dim: usize,
    /// `int d_p phi_a d_q phi_b`, index `((a * nv + b) * dim + p) * dim + q`.
    pub grad_pairs: Vec<f64>,
    /// `int grad phi_a . grad phi_b`.
    pub grad_gram: Vec<f64>,
    /// `int phi_a phi_b`.
    pub mass: Vec<f64>,
    /// Facet mass matrices per local face.
    pub face_mass: Vec<Vec<f64>>,
}

impl ElementIntegrals {
    pub fn new(dim: usize, h: f64) -> Self {
        let nv = 1usize << dim;
        let rule = GaussRule::new(2);
        let mut grad_pairs = vec![0.0; nv * nv * dim * dim];
        let mut mass = vec![0.0; nv * nv];
        let vol = h.powi(dim as i32);
        for (xi, w) in rule.tensor(dim) {
            let (v, g) = shape_eval(dim, xi);
            for a in 0..nv {
                for b in 0..nv {
                    mass[a * nv + b] += w * vol * v[a] * v[b];
                    for p in 0..dim {
                        for q in 0..dim {
                            grad_pairs[((a * nv + b) * dim + p) * dim + q] += w * vol * g[a][p] * g[b][q] / (h * h);
                        }
                    }
                }
            }
        }
        let grad_gram = (0..nv * nv)
            .map(|ab| (0..dim).map(|p| grad_pairs[(ab * dim + p) * dim + p]).sum())
            .collect();
        let area = h.powi(dim as i32 - 1);
        let face_rule = rule.tensor(dim - 1);
        let face_mass = (0..2 * dim)
            .map(|face| {
                let (axis, side) = (face / 2, face % 2);
                let mut m = vec![0.0; nv * nv];
                for (t, w) in &face_rule {
                    let xi = embed_face(dim, axis, side, *t);
                    let (v, _) = shape_eval(dim, xi);
                    for a in 0..nv {
                        for b in 0..nv {
                            m[a * nv + b] += w * area * v[a] * v[b];
                        }
                    }
                }
                m
            })
            .collect();
        Self { dim, grad_pairs, grad_gram, mass, face_mass }
    }

    pub fn nv(&self) -> usize {
        1 << self.dim
    }

    /// Local `(C eps(u), eps(v))` matrix, local dof `l * dim + c`.
    pub fn elastic(&self, mat: &MaterialParams) -> Vec<f64> {
        let (d, nv) = (self.dim, self.nv());
        let nd = nv * d;
        let mut k = vec![0.0; nd * nd];
        for b in 0..nv {
            for e in 0..d {
                for a in 0..nv {
                    for c in 0..d {
                        let g = |p: usize, q: usize| self.grad_pairs[((a * nv + b) * d + p) * d + q];
                        let mut val = mat.mu * g(e, c) + mat.lambda * g(c, e);
                        if c == e {
                            val += mat.mu * self.grad_gram[a * nv + b];
                        }
                        k[(b * d + e) * nd + a * d + c] = val;
                    }
                }
            }
        }
        k
    }

    /// Expands a scalar `nv x nv` matrix to the vector dof layout.
    pub fn expand(&self, scalar: &[f64]) -> Vec<f64> {
        let (d, nv) = (self.dim, self.nv());
        let nd = nv * d;
        let mut out = vec![0.0; nd * nd];
        for a in 0..nv {
            for b in 0..nv {
                for c in 0..d {
                    out[(a * d + c) * nd + b * d + c] = scalar[a * nv + b];
                }
            }
        }
        out
    }
}

/// Reference point on local face `(axis, side)` for face parameter `t`.
pub fn embed_face(dim: usize, axis: usize, side: usize, t: [f64; 3]) -> [f64; 3] {
    let mut xi = [0.0; 3];
    let mut k = 0;
    for (a, slot) in xi.iter_mut().enumerate().take(dim) {
        if a == axis {
            *slot = side as f64;
        } else {
            *slot = t[k];
            k += 1;
        }
    }
    xi
}

/// Local element and facet matrices of one congruent element.
#[derive(Clone, Debug)]
pub struct LocalMatrices {
    pub volume: Vec<C64>,
    pub faces: Vec<Vec<C64>>,
}

impl LocalMatrices {
    /// `a(., .)` restricted to one element; facet matrices carry `i k` mass.
    pub fn form(ints: &ElementIntegrals, mat: &MaterialParams) -> Self {
        let k2 = mat.k * mat.k;
        let m = ints.expand(&ints.mass);
        let volume = ints.elastic(mat).iter().zip(&m).map(|(s, m)| C64::new(s - k2 * m, 0.0)).collect();
        let faces = ints
            .face_mass
            .iter()
            .map(|fm| ints.expand(fm).into_iter().map(|v| C64::new(0.0, mat.k * v)).collect())
            .collect();
        Self { volume, faces }
    }

    /// Gramian of `k^2 (u, v) + (grad u, grad v)`.
    pub fn norm(ints: &ElementIntegrals, k: f64) -> Self {
        let g = ints.expand(&ints.grad_gram);
        let m = ints.expand(&ints.mass);
        let volume = g.iter().zip(&m).map(|(g, m)| C64::new(g + k * k * m, 0.0)).collect();
        Self { volume, faces: vec![] }
    }

    pub fn mass(ints: &ElementIntegrals) -> Self {
        Self { volume: ints.expand(&ints.mass).into_iter().map(|v| C64::new(v, 0.0)).collect(), faces: vec![] }
    }

    pub fn gradient(ints: &ElementIntegrals) -> Self {
        Self { volume: ints.expand(&ints.grad_gram).into_iter().map(|v| C64::new(v, 0.0)).collect(), faces: vec![] }
    }
}

/// Assembles the local matrices over `elements` and `facets` into a matrix on
/// `dofs`. Rows are built independently, each summing its element
/// contributions in ascending element order, so the result does not depend
/// on the thread count.
pub fn assemble_local(
    mesh: &StructuredMesh,
    local: &LocalMatrices,
    elements: &[usize],
    facets: &[Facet],
    dofs: &DofMap,
) -> SparseComplexMatrix {
    let d = mesh.dim();
    let nv = mesh.vertices_per_element();
    let nd = nv * d;
    let nnodes = dofs.num_nodes();
    // node -> (element, local vertex) incidences in ascending element order
    let mut inc_ptr = vec![0usize; nnodes + 1];
    let mut sorted_elems = elements.to_vec();
    sorted_elems.sort_unstable();
    sorted_elems.dedup();
    for &e in &sorted_elems {
        for &v in mesh.element_vertices(e) {
            if let Some(n) = dofs.node(v) {
                inc_ptr[n + 1] += 1;
            }
        }
    }
    for n in 0..nnodes {
        inc_ptr[n + 1] += inc_ptr[n];
    }
    let mut next = inc_ptr.clone();
    let mut inc = vec![(0usize, 0usize); inc_ptr[nnodes]];
    for &e in &sorted_elems {
        for (l, &v) in mesh.element_vertices(e).iter().enumerate() {
            if let Some(n) = dofs.node(v) {
                inc[next[n]] = (e, l);
                next[n] += 1;
            }
        }
    }
    // facets grouped by element
    let mut sorted_facets = facets.to_vec();
    sorted_facets.sort_by_key(|f| (f.element, f.local_face));
    let facets_of = |e: usize| {
        let s = sorted_facets.partition_point(|f| f.element < e);
        let t = sorted_facets.partition_point(|f| f.element <= e);
        &sorted_facets[s..t]
    };

    let rows: Vec<(Vec<usize>, Vec<C64>)> = (0..nnodes)
        .into_par_iter()
        .map(|n| {
            let my = &inc[inc_ptr[n]..inc_ptr[n + 1]];
            let mut nbr: Vec<usize> = Vec::with_capacity(my.len() * nv);
            for &(e, _) in my {
                for &v in mesh.element_vertices(e) {
                    if let Some(m) = dofs.node(v) {
                        nbr.push(m);
                    }
                }
            }
            nbr.sort_unstable();
            nbr.dedup();
            let w = nbr.len() * d;
            let mut vals = vec![C64::default(); d * w];
            for &(e, lr) in my {
                let mut add = |mat: &[C64]| {
                    for (lc, &v) in mesh.element_vertices(e).iter().enumerate() {
                        let Some(m) = dofs.node(v) else { continue };
                        let pos = nbr.binary_search(&m).expect("neighbour in pattern");
                        for cr in 0..d {
                            for cc in 0..d {
                                vals[cr * w + pos * d + cc] += mat[(lr * d + cr) * nd + lc * d + cc];
                            }
                        }
                    }
                };
                add(&local.volume);
                for f in facets_of(e) {
                    if let Some(fm) = local.faces.get(f.local_face) {
                        add(fm);
                    }
                }
            }
            let cols: Vec<usize> = nbr.iter().flat_map(|&m| (0..d).map(move |c| m * d + c)).collect();
            (cols, vals)
        })
        .collect();

    let ndofs = dofs.num_dofs();
    let mut row_ptr = Vec::with_capacity(ndofs + 1);
    row_ptr.push(0);
    let total: usize = rows.iter().map(|(c, _)| c.len() * d).sum();
    let mut col_idx = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);
    for (cols, vals) in &rows {
        let w = cols.len();
        for cr in 0..d {
            col_idx.extend_from_slice(cols);
            values.extend_from_slice(&vals[cr * w..(cr + 1) * w]);
            row_ptr.push(col_idx.len());
        }
    }
    CsrMatrix::from_parts(ndofs, ndofs, row_ptr, col_idx, values)
}

/// Matrix of the elastic Helmholtz form over `elements` with the Robin term on
/// `robin_facets`.
pub fn assemble_form(
    mesh: &StructuredMesh,
    mat: &MaterialParams,
    elements: &[usize],
    robin_facets: &[Facet],
    dofs: &DofMap,
) -> SparseComplexMatrix {
    let ints = ElementIntegrals::new(mesh.dim(), mesh.h());
    assemble_local(mesh, &LocalMatrices::form(&ints, mat), elements, robin_facets, dofs)
}

/// The form on the whole mesh with its Robin facets.
pub fn assemble_global_form(mesh: &StructuredMesh, mat: &MaterialParams, dofs: &DofMap) -> SparseComplexMatrix {
    let all: Vec<usize> = (0..mesh.num_elements()).collect();
    assemble_form(mesh, mat, &all, &mesh.facets_with_tag(BoundaryKind::Robin), dofs)
}

/// Gramian of the V inner product `k^2 (u, v) + (grad u, grad v)`.
pub fn assemble_norm_matrix(mesh: &StructuredMesh, k: f64, dofs: &DofMap) -> SparseComplexMatrix {
    let ints = ElementIntegrals::new(mesh.dim(), mesh.h());
    let all: Vec<usize> = (0..mesh.num_elements()).collect();
    assemble_local(mesh, &LocalMatrices::norm(&ints, k), &all, &[], dofs)
}

pub fn assemble_mass(mesh: &StructuredMesh, dofs: &DofMap) -> SparseComplexMatrix {
    let ints = ElementIntegrals::new(mesh.dim(), mesh.h());
    let all: Vec<usize> = (0..mesh.num_elements()).collect();
    assemble_local(mesh, &LocalMatrices::mass(&ints), &all, &[], dofs)
}

pub type VectorField<'a> = &'a (dyn Fn([f64; 3]) -> [C64; 3] + Sync);
/// Boundary data evaluated at a point with the outward unit normal.
pub type BoundaryField<'a> = &'a (dyn Fn([f64; 3], [f64; 3]) -> [C64; 3] + Sync);

pub const LOAD_QUADRATURE: usize = 4;

/// `b[w] = (f, phi_w) + (g, phi_w)_{Gamma_R}` with a tensor Gauss rule of
/// `points` per axis.
pub fn assemble_load_with(
    mesh: &StructuredMesh,
    dofs: &DofMap,
    f: VectorField<'_>,
    g: BoundaryField<'_>,
    points: usize,
) -> Vec<C64> {
    let d = mesh.dim();
    let nv = mesh.vertices_per_element();
    let h = mesh.h();
    let rule = GaussRule::new(points);
    let vol_rule: Vec<_> = rule
        .tensor(d)
        .into_iter()
        .map(|(xi, w)| (xi, w * h.powi(d as i32), shape_eval(d, xi).0))
        .collect();
    let face_rule = rule.tensor(d - 1);
    let area = h.powi(d as i32 - 1);
    let locals: Vec<Vec<C64>> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let o = mesh.element_origin(e);
            let mut loc = vec![C64::default(); nv * d];
            let at = |xi: [f64; 3]| {
                let mut x = [0.0; 3];
                for a in 0..d {
                    x[a] = o[a] + h * xi[a];
                }
                x
            };
            for (xi, w, phi) in &vol_rule {
                let fx = f(at(*xi));
                for l in 0..nv {
                    for c in 0..d {
                        loc[l * d + c] += fx[c] * (w * phi[l]);
                    }
                }
            }
            for fa in mesh.element_facets(e) {
                if fa.tag != BoundaryKind::Robin {
                    continue;
                }
                let normal = fa.normal();
                for (t, w) in &face_rule {
                    let xi = embed_face(d, fa.axis(), fa.side(), *t);
                    let (phi, _) = shape_eval(d, xi);
                    let gx = g(at(xi), normal);
                    for l in face_local_vertices(d, fa.local_face) {
                        for c in 0..d {
                            loc[l * d + c] += gx[c] * (w * area * phi[l]);
                        }
                    }
                }
            }
            loc
        })
        .collect();
    let mut b = vec![C64::default(); dofs.num_dofs()];
    for (e, loc) in locals.iter().enumerate() {
        for (l, &v) in mesh.element_vertices(e).iter().enumerate() {
            if let Some(first) = dofs.first_dof(v) {
                for c in 0..d {
                    b[first + c] += loc[l * d + c];
                }
            }
        }
    }
    b
}

pub fn assemble_load(mesh: &StructuredMesh, dofs: &DofMap, f: VectorField<'_>, g: BoundaryField<'_>) -> Vec<C64> {
    assemble_load_with(mesh, dofs, f, g, LOAD_QUADRATURE)
}

/// Fixed chunk length for reductions; sums are formed per chunk and then
/// added in chunk order.
pub const REDUCTION_CHUNK: usize = 1024;

/// Deterministic parallel sum of `term(e)` over all elements.
pub fn element_sum<F: Fn(usize) -> f64 + Sync>(n: usize, term: F) -> f64 {
    let chunks: Vec<f64> = (0..n.div_ceil(REDUCTION_CHUNK))
        .into_par_iter()
        .map(|c| (c * REDUCTION_CHUNK..((c + 1) * REDUCTION_CHUNK).min(n)).map(&term).sum())
        .collect();
    chunks.iter().sum()
}

/// `(||u||_{L2}, ||u||_V)` with `||u||_V^2 = k^2 ||u||^2 + ||grad u||^2`.
/// `u` is a dof vector on `dofs`; vertices without dofs carry zero.
pub fn compute_norms(mesh: &StructuredMesh, dofs: &DofMap, u: &[C64], k: f64) -> (f64, f64) {
    assert_eq!(u.len(), dofs.num_dofs(), "dof vector length mismatch");
    let ints = ElementIntegrals::new(mesh.dim(), mesh.h());
    let d = mesh.dim();
    let nv = mesh.vertices_per_element();
    let quad = |e: usize, m: &[f64]| -> f64 {
        let verts = mesh.element_vertices(e);
        let mut acc = 0.0;
        for c in 0..d {
            let val = |l: usize| dofs.first_dof(verts[l]).map_or(C64::default(), |f| u[f + c]);
            for a in 0..nv {
                let ua = val(a);
                for b in 0..nv {
                    acc += m[a * nv + b] * (ua.conj() * val(b)).re;
                }
            }
        }
        acc
    };
    let l2 = element_sum(mesh.num_elements(), |e| quad(e, &ints.mass));
    let h1 = element_sum(mesh.num_elements(), |e| quad(e, &ints.grad_gram));
    let l2 = l2.max(0.0);
    (l2.sqrt(), (k * k * l2 + h1.max(0.0)).sqrt())
}
