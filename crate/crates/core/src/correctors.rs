//! Patch-localized subscale correctors and the multiscale test space.
//!
//! For a coarse element `T`, a free vertex `z` of `T` and a component `j`, the
//! corrector `lambda` lives in the fine functions supported in `omega^m(T)`
//! with `I_H lambda = 0` and solves
//!
//! `a_{omega}(w, lambda) = a_T(w, Lambda_z e_j)` for all such `w`.
//!
//! The unknown sits in the conjugated slot, so the patch system is the
//! adjoint `A_p^H lambda = A_T^H p`. The constraint is imposed with Lagrange
//! multipliers: `[[A_p, C^T], [C, 0]]` is complex symmetric and factorized
//! once per patch, then solved adjointly for all right-hand sides of `T`.
//!
//! Test functions are `Lambda_z e_j - sum_T lambda_{z,T}`; they are produced
//! by streaming over coarse elements in lexicographic order so that only a
//! sweep front of partial sums is ever held in memory.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::fe::{shape_eval, DofMap, ElementIntegrals, LocalMatrices, MaterialParams};
use crate::interpolation::InterpolationOperator;
use crate::linalg::{factorize_symmetric, CsrMatrix, LinalgError, SparseComplexMatrix, SparseVector, C64};
use crate::mesh::{BoundaryKind, StructuredMesh};

#[derive(Debug, Error)]
pub enum CorrectorError {
    #[error("corrector problem on patch of element {element} is singular (kH={kh:.3}): {source}")]
    Singular {
        element: usize,
        kh: f64,
        #[source]
        source: LinalgError,
    },
    #[error("missing corrector for element {0}")]
    Missing(usize),
}

/// Shared data for all corrector problems of one coarse/fine mesh pair.
pub struct CorrectorSetup<'a> {
    pub coarse: &'a StructuredMesh,
    pub fine: &'a StructuredMesh,
    pub interp: &'a InterpolationOperator,
    /// Global fine form on `interp.fine_dofs`.
    pub a_h: &'a SparseComplexMatrix,
    pub material: MaterialParams,
    children: Vec<Vec<usize>>,
    local: LocalMatrices,
}

/// Correctors of one coarse element: `lambda[i][j]` for the `i`-th free
/// vertex of the element (in local vertex order) and component `j`, as sparse
/// vectors over the fine dofs.
#[derive(Clone, Debug)]
pub struct ElementCorrectors {
    pub element: usize,
    pub vertices: Vec<usize>,
    pub lambda: Vec<Vec<SparseVector>>,
    pub patch_dofs: usize,
    pub constraints: usize,
}

/// Fine-dof columns `Lambda_z e_j - lambda_z^{(j)}`, one per coarse dof.
#[derive(Clone, Debug)]
pub struct MultiscaleTestSpace {
    pub columns: Vec<SparseVector>,
}

impl MultiscaleTestSpace {
    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }
}

struct PatchSystem {
    dofs: Vec<usize>,
    a_p: SparseComplexMatrix,
    constraint_rows: Vec<(Vec<usize>, Vec<f64>)>,
}

impl<'a> CorrectorSetup<'a> {
    pub fn new(
        coarse: &'a StructuredMesh,
        fine: &'a StructuredMesh,
        parent: &[usize],
        interp: &'a InterpolationOperator,
        a_h: &'a SparseComplexMatrix,
        material: MaterialParams,
    ) -> Self {
        assert_eq!(a_h.nrows(), interp.fine_dofs.num_dofs());
        let mut children = vec![Vec::new(); coarse.num_elements()];
        for (e, &p) in parent.iter().enumerate() {
            children[p].push(e);
        }
        let local = LocalMatrices::form(&ElementIntegrals::new(fine.dim(), fine.h()), &material);
        Self { coarse, fine, interp, a_h, material, children, local }
    }

    pub fn levels(&self) -> usize {
        self.interp.levels
    }

    pub fn fine_dofs(&self) -> &DofMap {
        &self.interp.fine_dofs
    }

    pub fn coarse_dofs(&self) -> &DofMap {
        &self.interp.coarse_dofs
    }

    pub fn kh(&self) -> f64 {
        self.material.k * self.coarse.h()
    }

    /// Fine lattice point -> fine vertex, for local point `p` of coarse `t`.
    fn fine_vertex(&self, t: usize, p: [usize; 3]) -> usize {
        let c = self.coarse.element_lattice(t);
        let l = self.levels();
        self.fine.vertex_at([(c[0] << l) + p[0], (c[1] << l) + p[1], (c[2] << l) + p[2]]).unwrap()
    }

    /// Free fine dofs whose vertices have all incident fine cells inside the
    /// coarse element set `patch` (sorted).
    fn patch_dofs(&self, patch: &[usize]) -> Vec<usize> {
        let d = self.fine.dim();
        let np = (1usize << self.levels()) + 1;
        let npts = np.pow(d as u32);
        let mut verts = Vec::with_capacity(patch.len() * npts);
        for &t in patch {
            for i in 0..npts {
                verts.push(self.fine_vertex(t, [i % np, (i / np) % np, i / (np * np)]));
            }
        }
        verts.sort_unstable();
        verts.dedup();
        let fd = self.fine_dofs();
        let mut dofs = Vec::with_capacity(verts.len() * d);
        let parent_in_patch = |e: usize| {
            let c = self.fine.element_lattice(e);
            let l = self.levels();
            let pe = self.coarse.element_at([(c[0] >> l) as isize, (c[1] >> l) as isize, (c[2] >> l) as isize]);
            pe.is_some_and(|p| patch.binary_search(&p).is_ok())
        };
        for v in verts {
            let Some(first) = fd.first_dof(v) else { continue };
            if self.fine.vertex_elements(v).into_iter().all(parent_in_patch) {
                dofs.extend(first..first + d);
            }
        }
        dofs
    }

    fn patch_system(&self, patch: &[usize]) -> PatchSystem {
        let dofs = self.patch_dofs(patch);
        let a_p = self.a_h.submatrix(&dofs, &dofs);
        let mut coarse_verts: Vec<usize> =
            patch.iter().flat_map(|&t| self.coarse.element_vertices(t).iter().copied()).collect();
        coarse_verts.sort_unstable();
        coarse_verts.dedup();
        let cd = self.coarse_dofs();
        let ih = &self.interp.matrix;
        let d = self.coarse.dim();
        let mut constraint_rows = Vec::new();
        for z in coarse_verts {
            let Some(first) = cd.first_dof(z) else { continue };
            for r in first..first + d {
                let (cols, vals) = ih.row(r);
                let mut rc = Vec::new();
                let mut rv = Vec::new();
                for (&c, &v) in cols.iter().zip(vals) {
                    if let Ok(p) = dofs.binary_search(&c) {
                        if v != 0.0 {
                            rc.push(p);
                            rv.push(v);
                        }
                    }
                }
                if !rc.is_empty() {
                    constraint_rows.push((rc, rv));
                }
            }
        }
        PatchSystem { dofs, a_p, constraint_rows }
    }

    /// `A_T p` for `p = P e_{zj}`, `z` the local vertex `a` of `t`, as
    /// (fine dof, value) pairs in ascending dof order.
    fn element_load(&self, t: usize, a: usize, j: usize) -> Vec<(usize, C64)> {
        let d = self.fine.dim();
        let nv = 1usize << d;
        let nd = nv * d;
        let s = 1usize << self.levels();
        let mut out: BTreeMap<usize, C64> = BTreeMap::new();
        for &k in &self.children[t] {
            let ck = self.fine.element_lattice(k);
            let ct = self.coarse.element_lattice(t);
            let mut pk = vec![0.0; nd];
            for l in 0..nv {
                let mut xi = [0.0; 3];
                for ax in 0..d {
                    let off = ck[ax] - (ct[ax] << self.levels()) + ((l >> ax) & 1);
                    xi[ax] = off as f64 / s as f64;
                }
                pk[l * d + j] = shape_eval(d, xi).0[a];
            }
            let mut y = vec![C64::default(); nd];
            let mut apply = |m: &[C64]| {
                for r in 0..nd {
                    for c in 0..nd {
                        y[r] += m[r * nd + c] * pk[c];
                    }
                }
            };
            apply(&self.local.volume);
            for f in self.fine.element_facets(k) {
                if f.tag == BoundaryKind::Robin {
                    apply(&self.local.faces[f.local_face]);
                }
            }
            for (l, &v) in self.fine.element_vertices(k).iter().enumerate() {
                if let Some(first) = self.fine_dofs().first_dof(v) {
                    for c in 0..d {
                        *out.entry(first + c).or_default() += y[l * d + c];
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    /// Factorizes the saddle system of `patch` and solves adjointly for the
    /// given right-hand sides (each `A_x^H p` as sparse fine-dof entries).
    fn solve_patch(
        &self,
        element: usize,
        patch: &[usize],
        rhs: &[Vec<(usize, C64)>],
    ) -> Result<(Vec<SparseVector>, usize, usize), CorrectorError> {
        let sys = self.patch_system(patch);
        let np = sys.dofs.len();
        let nc = sys.constraint_rows.len();
        let n = np + nc;
        let mut trip: Vec<(usize, usize, C64)> = Vec::with_capacity(sys.a_p.nnz() + 2 * nc * 64);
        for r in 0..np {
            let (cols, vals) = sys.a_p.row(r);
            trip.extend(cols.iter().zip(vals).map(|(&c, &v)| (r, c, v)));
        }
        for (i, (cols, vals)) in sys.constraint_rows.iter().enumerate() {
            for (&c, &v) in cols.iter().zip(vals) {
                trip.push((np + i, c, C64::new(v, 0.0)));
                trip.push((c, np + i, C64::new(v, 0.0)));
            }
        }
        let saddle = CsrMatrix::from_triplets(n, n, &trip);
        drop(trip);
        let kh = self.kh();
        let fact = factorize_symmetric(&saddle, nc).map_err(|source| CorrectorError::Singular { element, kh, source })?;
        let mut b = vec![C64::default(); n * rhs.len()];
        for (col, entries) in rhs.iter().enumerate() {
            for &(dof, v) in entries {
                if let Ok(p) = sys.dofs.binary_search(&dof) {
                    b[col * n + p] = v;
                }
            }
        }
        let x = fact
            .solve_adjoint_many(&b, rhs.len())
            .map_err(|source| CorrectorError::Singular { element, kh, source })?;
        let out = (0..rhs.len())
            .map(|col| SparseVector::new(sys.dofs.clone(), x[col * n..col * n + np].to_vec()))
            .collect();
        Ok((out, np, nc))
    }

    /// Correctors `lambda_{z,T}^{(j)}` for all free vertices `z` of `t`.
    pub fn solve_corrector(&self, t: usize, m: usize) -> Result<ElementCorrectors, CorrectorError> {
        let d = self.coarse.dim();
        let verts: Vec<(usize, usize)> = self
            .coarse
            .element_vertices(t)
            .iter()
            .enumerate()
            .filter(|(_, &z)| self.coarse_dofs().first_dof(z).is_some())
            .map(|(a, &z)| (a, z))
            .collect();
        let vertices: Vec<usize> = verts.iter().map(|&(_, z)| z).collect();
        if self.levels() == 0 || verts.is_empty() {
            let lambda = verts.iter().map(|_| vec![SparseVector::default(); d]).collect();
            return Ok(ElementCorrectors { element: t, vertices, lambda, patch_dofs: 0, constraints: 0 });
        }
        let patch = self.coarse.element_patch(t, m.max(1)).elements;
        let mut rhs = Vec::with_capacity(verts.len() * d);
        for &(a, _) in &verts {
            for j in 0..d {
                // A_T^H p = conj(A_T p) for real p.
                rhs.push(self.element_load(t, a, j).into_iter().map(|(i, v)| (i, v.conj())).collect());
            }
        }
        let (sols, np, nc) = self.solve_patch(t, &patch, &rhs)?;
        let mut it = sols.into_iter();
        let lambda = verts.iter().map(|_| (0..d).map(|_| it.next().unwrap()).collect()).collect();
        Ok(ElementCorrectors { element: t, vertices, lambda, patch_dofs: np, constraints: nc })
    }

    /// Untruncated corrector of coarse dof `(z, j)`: `a(w, lambda) =
    /// a(w, Lambda_z e_j)` over all of the fine kernel of `I_H`. Returned as a
    /// dense fine-dof vector.
    pub fn solve_global_corrector(&self, z: usize, j: usize) -> Result<Vec<C64>, CorrectorError> {
        let nfine = self.fine_dofs().num_dofs();
        let col = self.coarse_dofs().dof(z, j).expect("free coarse vertex");
        if self.levels() == 0 {
            return Ok(vec![C64::default(); nfine]);
        }
        let p = self.interp.prolongation.to_complex().transpose();
        let (pc, pv) = p.row(col);
        let pcol = SparseVector::new(pc.to_vec(), pv.to_vec());
        // A^H p for complex symmetric A and real p
        let ap = self.a_h.mul_vec(&pcol.to_dense(nfine));
        let rhs: Vec<(usize, C64)> =
            ap.iter().enumerate().filter(|(_, v)| v.norm() > 0.0).map(|(i, v)| (i, v.conj())).collect();
        let all: Vec<usize> = (0..self.coarse.num_elements()).collect();
        let (sols, _, _) = self.solve_patch(usize::MAX, &all, &[rhs])?;
        Ok(sols[0].to_dense(nfine))
    }

    /// Streams the test-space columns to `sink(coarse_dof, column)`.
    ///
    /// Elements are processed in lexicographic chunks of `chunk` elements,
    /// solved in parallel within a chunk, and summed into the per-vertex
    /// partial sums in ascending element order. A vertex's columns are
    /// emitted as soon as all its elements are done; emitted batches are
    /// handed to `sink` in ascending coarse-dof order.
    pub fn stream_test_space<F>(&self, m: usize, chunk: usize, mut sink: F) -> Result<(), CorrectorError>
    where
        F: FnMut(Vec<(usize, SparseVector)>),
    {
        let d = self.coarse.dim();
        let cd = self.coarse_dofs();
        let ne = self.coarse.num_elements();
        let mut remaining: Vec<usize> = (0..self.coarse.num_vertices())
            .map(|z| if cd.first_dof(z).is_some() { self.coarse.vertex_elements(z).len() } else { 0 })
            .collect();
        let mut partial: BTreeMap<usize, Vec<SparseVector>> = BTreeMap::new();
        let p = self.interp.prolongation.to_complex().transpose();
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < ne {
            let end = (start + chunk).min(ne);
            let results: Vec<Result<ElementCorrectors, CorrectorError>> =
                (start..end).into_par_iter().map(|t| self.solve_corrector(t, m)).collect();
            let mut ready = Vec::new();
            for (off, res) in results.into_iter().enumerate() {
                let t = start + off;
                let ec = res?;
                if ec.element != t {
                    return Err(CorrectorError::Missing(t));
                }
                for (z, lams) in ec.vertices.iter().zip(ec.lambda) {
                    let acc = partial.entry(*z).or_insert_with(|| vec![SparseVector::default(); d]);
                    for (slot, lam) in acc.iter_mut().zip(&lams) {
                        *slot = slot.add_scaled(C64::new(-1.0, 0.0), lam);
                    }
                    remaining[*z] -= 1;
                    if remaining[*z] == 0 {
                        ready.push(*z);
                    }
                }
            }
            ready.sort_unstable();
            let mut batch = Vec::with_capacity(ready.len() * d);
            for z in ready {
                let acc = partial.remove(&z).unwrap();
                let first = cd.first_dof(z).unwrap();
                for (j, lam) in acc.into_iter().enumerate() {
                    let (pc, pv) = p.row(first + j);
                    let pcol = SparseVector::new(pc.to_vec(), pv.to_vec());
                    batch.push((first + j, lam.add_scaled(C64::new(1.0, 0.0), &pcol)));
                }
            }
            if !batch.is_empty() {
                sink(batch);
            }
            start = end;
        }
        if let Some((&z, _)) = partial.iter().next() {
            let t = self.coarse.vertex_elements(z)[0];
            return Err(CorrectorError::Missing(t));
        }
        Ok(())
    }

    /// All test-space columns, indexed by coarse dof.
    pub fn assemble_test_space(&self, m: usize) -> Result<MultiscaleTestSpace, CorrectorError> {
        let n = self.coarse_dofs().num_dofs();
        let mut columns: Vec<Option<SparseVector>> = vec![None; n];
        self.stream_test_space(m, default_chunk(), |batch| {
            for (i, col) in batch {
                columns[i] = Some(col);
            }
        })?;
        let columns = columns
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or(CorrectorError::Missing(i)))
            .collect::<Result<_, _>>()?;
        Ok(MultiscaleTestSpace { columns })
    }
}

/// Chunk length for the element sweep.
pub fn default_chunk() -> usize {
    (4 * rayon::current_num_threads()).max(8)
}

/// `||grad lambda||_{L2(Omega \ omega^r(z))} / ||grad lambda||_{L2(Omega)}`
/// for a fine-dof vector `lambda` and the coarse vertex patch `omega^r({z})`.
pub fn measure_decay(
    lambda: &[C64],
    coarse: &StructuredMesh,
    fine: &StructuredMesh,
    parent: &[usize],
    fine_dofs: &DofMap,
    z: usize,
    r: usize,
) -> f64 {
    let patch = coarse.vertex_patch(z, r);
    let ints = ElementIntegrals::new(fine.dim(), fine.h());
    let d = fine.dim();
    let nv = fine.vertices_per_element();
    let energy = |e: usize| {
        let verts = fine.element_vertices(e);
        let mut acc = 0.0;
        for c in 0..d {
            let val = |l: usize| fine_dofs.first_dof(verts[l]).map_or(C64::default(), |f| lambda[f + c]);
            for a in 0..nv {
                for b in 0..nv {
                    acc += ints.grad_gram[a * nv + b] * (val(a).conj() * val(b)).re;
                }
            }
        }
        acc
    };
    let total = crate::fe::element_sum(fine.num_elements(), energy);
    let outside = crate::fe::element_sum(fine.num_elements(), |e| {
        if patch.binary_search(&parent[e]).is_ok() {
            0.0
        } else {
            energy(e)
        }
    });
    if total <= 0.0 {
        return 0.0;
    }
    (outside.max(0.0) / total).sqrt()
}
