//! Quasi-interpolation `I_H = E_H o Pi_H` from the fine Q1 space onto the
//! coarse one, and the prolongation `P` embedding coarse Q1 functions into the
//! fine space.
//!
//! `Pi_H` is the element-wise L2 projection onto Q1; `E_H` takes at every free
//! coarse vertex the arithmetic mean of the element-wise values and maps
//! Dirichlet vertices to zero. Coarse dofs are those of the free coarse
//! vertices, fine dofs those of the free fine vertices.

use rayon::prelude::*;
use thiserror::Error;

use crate::fe::{shape_eval, DofMap, ElementIntegrals};
use crate::linalg::{CsrMatrix, C64};
use crate::mesh::StructuredMesh;

#[derive(Debug, Error, PartialEq)]
pub enum InterpolationError {
    #[error("fine mesh (h={fine}) is not a dyadic refinement of the coarse mesh (H={coarse})")]
    NotRefinement { coarse: f64, fine: f64 },
    #[error("parent map has {got} entries, fine mesh has {expected} elements")]
    ParentMap { expected: usize, got: usize },
    #[error("vector length {got} does not match {expected} dofs")]
    Shape { expected: usize, got: usize },
}

/// Number of dyadic levels between the meshes.
pub fn refinement_levels(coarse: &StructuredMesh, fine: &StructuredMesh) -> Result<usize, InterpolationError> {
    let err = InterpolationError::NotRefinement { coarse: coarse.h(), fine: fine.h() };
    if coarse.dim() != fine.dim() || coarse.spec() != fine.spec() {
        return Err(err);
    }
    let ratio = coarse.h() / fine.h();
    let levels = ratio.log2().round();
    if levels < 0.0 || (ratio - 2f64.powi(levels as i32)).abs() > 1e-9 * ratio {
        return Err(err);
    }
    Ok(levels as usize)
}

/// `M_T^{-1} R` on one coarse element: row `a` maps the values at the
/// `(2^L + 1)^d` fine lattice points of the element (x fastest) to the
/// coefficient of local coarse basis `a`.
pub fn local_projection(dim: usize, coarse_h: f64, levels: usize) -> Vec<Vec<f64>> {
    let nv = 1usize << dim;
    let s = 1usize << levels;
    let np = s + 1;
    let nfl = np.pow(dim as u32);
    let h = coarse_h / s as f64;
    let fine = ElementIntegrals::new(dim, h);
    let lattice = |idx: usize| [idx % np, (idx / np) % np, idx / (np * np)];
    let flat = |p: [usize; 3]| p[0] + np * (p[1] + np * p[2]);
    // coarse basis values at fine lattice points
    let basis: Vec<Vec<f64>> = (0..nfl)
        .map(|i| {
            let p = lattice(i);
            let xi = [p[0] as f64 / s as f64, p[1] as f64 / s as f64, p[2] as f64 / s as f64];
            shape_eval(dim, xi).0
        })
        .collect();
    let mut r = vec![vec![0.0; nfl]; nv];
    for child in 0..s.pow(dim as u32) {
        let o = [child % s, (child / s) % s, child / (s * s)];
        let pts: Vec<usize> = (0..nv)
            .map(|l| {
                let mut p = o;
                for (a, slot) in p.iter_mut().enumerate().take(dim) {
                    *slot += (l >> a) & 1;
                }
                flat(p)
            })
            .collect();
        for (lp, &ip) in pts.iter().enumerate() {
            for (lq, &iq) in pts.iter().enumerate() {
                let m = fine.mass[lp * nv + lq];
                for (a, ra) in r.iter_mut().enumerate() {
                    ra[iq] += basis[ip][a] * m;
                }
            }
        }
    }
    let coarse = ElementIntegrals::new(dim, coarse_h);
    let minv = dense_inverse(&coarse.mass, nv);
    (0..nv)
        .map(|a| (0..nfl).map(|j| (0..nv).map(|b| minv[a * nv + b] * r[b][j]).sum()).collect())
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting of a small dense matrix.
fn dense_inverse(m: &[f64], n: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    let mut inv: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap();
        for j in 0..n {
            a.swap(col * n + j, piv * n + j);
            inv.swap(col * n + j, piv * n + j);
        }
        let p = a[col * n + col];
        assert!(p != 0.0, "singular local mass matrix");
        for j in 0..n {
            a[col * n + j] /= p;
            inv[col * n + j] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = a[i * n + col];
                if f != 0.0 {
                    for j in 0..n {
                        a[i * n + j] -= f * a[col * n + j];
                        inv[i * n + j] -= f * inv[col * n + j];
                    }
                }
            }
        }
    }
    inv
}

/// Fine vertex at fine-local lattice point `p` of coarse element `t`.
fn fine_vertex(coarse: &StructuredMesh, fine: &StructuredMesh, levels: usize, t: usize, p: [usize; 3]) -> usize {
    let c = coarse.element_lattice(t);
    let mut g = [0usize; 3];
    for a in 0..3 {
        g[a] = (c[a] << levels) + p[a];
    }
    fine.vertex_at(g).expect("fine vertex of active coarse element")
}

/// Per-element L2 projection: row `(T * 2^d + a) * d + c` holds the
/// coefficient of local basis `a`, component `c`, on coarse element `T`.
pub fn build_pi_h(
    coarse: &StructuredMesh,
    fine: &StructuredMesh,
    parent: &[usize],
    fine_dofs: &DofMap,
) -> Result<CsrMatrix<f64>, InterpolationError> {
    let levels = check(coarse, fine, parent)?;
    let d = coarse.dim();
    let nv = 1usize << d;
    let q = local_projection(d, coarse.h(), levels);
    let np = (1usize << levels) + 1;
    let mut trip = Vec::new();
    for t in 0..coarse.num_elements() {
        for (j, _) in q[0].iter().enumerate() {
            let p = [j % np, (j / np) % np, j / (np * np)];
            let w = fine_vertex(coarse, fine, levels, t, p);
            let Some(first) = fine_dofs.first_dof(w) else { continue };
            for (a, qa) in q.iter().enumerate() {
                if qa[j] != 0.0 {
                    for c in 0..d {
                        trip.push(((t * nv + a) * d + c, first + c, qa[j]));
                    }
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(coarse.num_elements() * nv * d, fine_dofs.num_dofs(), &trip))
}

/// Averaging of element-wise coefficients onto free coarse vertices.
pub fn build_e_h(coarse: &StructuredMesh, coarse_dofs: &DofMap) -> CsrMatrix<f64> {
    let d = coarse.dim();
    let nv = 1usize << d;
    let mut trip = Vec::new();
    for &z in coarse_dofs.vertices() {
        let first = coarse_dofs.first_dof(z).unwrap();
        let elems = coarse.vertex_elements(z);
        let w = 1.0 / elems.len() as f64;
        for &t in &elems {
            let a = coarse.element_vertices(t).iter().position(|&v| v == z).unwrap();
            for c in 0..d {
                trip.push((first + c, (t * nv + a) * d + c, w));
            }
        }
    }
    CsrMatrix::from_triplets(coarse_dofs.num_dofs(), coarse.num_elements() * nv * d, &trip)
}

fn check(coarse: &StructuredMesh, fine: &StructuredMesh, parent: &[usize]) -> Result<usize, InterpolationError> {
    let levels = refinement_levels(coarse, fine)?;
    if parent.len() != fine.num_elements() {
        return Err(InterpolationError::ParentMap { expected: fine.num_elements(), got: parent.len() });
    }
    Ok(levels)
}

/// `I_H` as an explicit sparse matrix together with the prolongation.
#[derive(Clone, Debug)]
pub struct InterpolationOperator {
    pub levels: usize,
    pub coarse_dofs: DofMap,
    pub fine_dofs: DofMap,
    /// Coarse dofs x fine dofs.
    pub matrix: CsrMatrix<f64>,
    /// Fine dofs x coarse dofs.
    pub prolongation: CsrMatrix<f64>,
}

impl InterpolationOperator {
    pub fn new(
        coarse: &StructuredMesh,
        fine: &StructuredMesh,
        parent: &[usize],
    ) -> Result<Self, InterpolationError> {
        let levels = check(coarse, fine, parent)?;
        let coarse_dofs = DofMap::free(coarse);
        let fine_dofs = DofMap::free(fine);
        let d = coarse.dim();
        let q = local_projection(d, coarse.h(), levels);
        let np = (1usize << levels) + 1;
        let nfl = q[0].len();

        // Rows of E_H o Pi_H, merged per free coarse vertex in element order.
        let rows: Vec<(Vec<usize>, Vec<f64>)> = coarse_dofs
            .vertices()
            .par_iter()
            .map(|&z| {
                let elems = coarse.vertex_elements(z);
                let w = 1.0 / elems.len() as f64;
                let mut entries: Vec<(usize, f64)> = Vec::with_capacity(elems.len() * nfl);
                for &t in &elems {
                    let a = coarse.element_vertices(t).iter().position(|&v| v == z).unwrap();
                    for (j, &qv) in q[a].iter().enumerate() {
                        if qv == 0.0 {
                            continue;
                        }
                        let p = [j % np, (j / np) % np, j / (np * np)];
                        let fv = fine_vertex(coarse, fine, levels, t, p);
                        if let Some(node) = fine_dofs.node(fv) {
                            entries.push((node, w * qv));
                        }
                    }
                }
                entries.sort_by_key(|e| e.0);
                let mut nodes = Vec::with_capacity(entries.len());
                let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
                for (n, v) in entries {
                    if nodes.last() == Some(&n) {
                        *vals.last_mut().unwrap() += v;
                    } else {
                        nodes.push(n);
                        vals.push(v);
                    }
                }
                (nodes, vals)
            })
            .collect();
        let mut row_ptr = vec![0usize];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for (nodes, vals) in &rows {
            for c in 0..d {
                col_idx.extend(nodes.iter().map(|n| n * d + c));
                values.extend_from_slice(vals);
                row_ptr.push(col_idx.len());
            }
        }
        let matrix =
            CsrMatrix::from_parts(coarse_dofs.num_dofs(), fine_dofs.num_dofs(), row_ptr, col_idx, values);

        let prolongation = build_prolongation(coarse, fine, levels, &coarse_dofs, &fine_dofs);
        Ok(Self { levels, coarse_dofs, fine_dofs, matrix, prolongation })
    }

    /// `I_H u`.
    pub fn apply(&self, u_fine: &[C64]) -> Result<Vec<C64>, InterpolationError> {
        if u_fine.len() != self.fine_dofs.num_dofs() {
            return Err(InterpolationError::Shape { expected: self.fine_dofs.num_dofs(), got: u_fine.len() });
        }
        Ok(self.matrix.mul_vec(u_fine))
    }

    /// `P v_H`.
    pub fn prolong(&self, v_coarse: &[C64]) -> Result<Vec<C64>, InterpolationError> {
        if v_coarse.len() != self.coarse_dofs.num_dofs() {
            return Err(InterpolationError::Shape { expected: self.coarse_dofs.num_dofs(), got: v_coarse.len() });
        }
        Ok(self.prolongation.mul_vec(v_coarse))
    }
}

fn build_prolongation(
    coarse: &StructuredMesh,
    fine: &StructuredMesh,
    levels: usize,
    coarse_dofs: &DofMap,
    fine_dofs: &DofMap,
) -> CsrMatrix<f64> {
    let d = coarse.dim();
    let s = 1usize << levels;
    let mut trip = Vec::new();
    for &w in fine_dofs.vertices() {
        let p = fine.vertex_lattice(w);
        // any active coarse element containing the fine vertex
        let mut found = None;
        for l in 0..(1usize << d) {
            let mut c = [0isize; 3];
            let mut xi = [0.0; 3];
            for a in 0..d {
                let base = (p[a] / s) as isize - ((l >> a) & 1) as isize;
                c[a] = base;
                xi[a] = (p[a] as f64 - base as f64 * s as f64) / s as f64;
            }
            if xi[..d].iter().all(|&x| (0.0..=1.0).contains(&x)) {
                if let Some(t) = coarse.element_at(c) {
                    found = Some((t, xi));
                    break;
                }
            }
        }
        let (t, xi) = found.expect("fine vertex lies in a coarse element");
        let (phi, _) = shape_eval(d, xi);
        let fw = fine_dofs.first_dof(w).unwrap();
        for (a, &z) in coarse.element_vertices(t).iter().enumerate() {
            if phi[a] == 0.0 {
                continue;
            }
            if let Some(fz) = coarse_dofs.first_dof(z) {
                for c in 0..d {
                    trip.push((fw + c, fz + c, phi[a]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(fine_dofs.num_dofs(), coarse_dofs.num_dofs(), &trip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundaryKind, DomainSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(spec: &DomainSpec, h: f64, levels: usize) -> (StructuredMesh, StructuredMesh, Vec<usize>) {
        let c = StructuredMesh::build(spec, h).unwrap();
        let (f, p) = c.refine_uniform(levels);
        (c, f, p)
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn local_projection_reproduces_constants() {
        for dim in [2, 3] {
            let q = local_projection(dim, 0.25, 2);
            for row in &q {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn factors_compose_to_operator() {
        let (c, f, p) = pair(&DomainSpec::square_with_hole(), 0.125, 2);
        let op = InterpolationOperator::new(&c, &f, &p).unwrap();
        let pi = build_pi_h(&c, &f, &p, &op.fine_dofs).unwrap();
        let e = build_e_h(&c, &op.coarse_dofs);
        let prod = e.matmul(&pi);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_vec(op.fine_dofs.num_dofs(), &mut rng);
        let a = prod.mul_vec(&u);
        let b = op.apply(&u).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-13);
        }
    }

    #[test]
    fn averaging_of_cell_values() {
        let c = StructuredMesh::build(&DomainSpec::unit(2, BoundaryKind::Robin), 0.5).unwrap();
        let dofs = DofMap::free(&c);
        let e = build_e_h(&c, &dofs);
        // centre vertex 4 shared by all four cells; value 4 on the last cell only
        let mut coeffs = vec![0.0; 4 * 4 * 2];
        let a = c.element_vertices(3).iter().position(|&v| v == 4).unwrap();
        coeffs[(3 * 4 + a) * 2] = 4.0;
        let out = e.mul_vec(&coeffs);
        assert!((out[8] - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn dirichlet_vertices_have_no_rows() {
        let (c, f, p) = pair(&DomainSpec::unit(2, BoundaryKind::Dirichlet), 0.25, 1);
        let op = InterpolationOperator::new(&c, &f, &p).unwrap();
        assert_eq!(op.coarse_dofs.num_dofs(), 9 * 2);
    }

    #[test]
    fn projectivity_on_random_coarse_vectors() {
        for (spec, h, levels) in [
            (DomainSpec::unit(2, BoundaryKind::Robin), 0.25, 2),
            (DomainSpec::square_with_hole(), 0.125, 1),
            (DomainSpec::unit(3, BoundaryKind::Robin), 0.5, 1),
        ] {
            let (c, f, p) = pair(&spec, h, levels);
            let op = InterpolationOperator::new(&c, &f, &p).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..100 {
                let v = random_vec(op.coarse_dofs.num_dofs(), &mut rng);
                let back = op.apply(&op.prolong(&v).unwrap()).unwrap();
                let err = back.iter().zip(&v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                assert!(err <= 1e-12, "{err}");
            }
        }
    }

    #[test]
    fn constants_map_to_constants() {
        let (c, f, p) = pair(&DomainSpec::unit(2, BoundaryKind::Robin), 0.25, 2);
        let op = InterpolationOperator::new(&c, &f, &p).unwrap();
        let u = vec![C64::new(2.5, -1.0); op.fine_dofs.num_dofs()];
        for v in op.apply(&u).unwrap() {
            assert!((v - C64::new(2.5, -1.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn shape_errors() {
        let (c, f, p) = pair(&DomainSpec::unit(2, BoundaryKind::Robin), 0.5, 1);
        let op = InterpolationOperator::new(&c, &f, &p).unwrap();
        assert!(matches!(op.apply(&[C64::default()]), Err(InterpolationError::Shape { .. })));
        let other = StructuredMesh::build(&DomainSpec::unit(2, BoundaryKind::Robin), 0.3333333333333333).unwrap();
        assert!(InterpolationOperator::new(&c, &other, &vec![0; other.num_elements()]).is_err());
        let fine3 = StructuredMesh::build(&DomainSpec::unit(2, BoundaryKind::Robin), 0.25).unwrap();
        assert!(matches!(
            InterpolationOperator::new(&c, &fine3, &[0]),
            Err(InterpolationError::ParentMap { .. })
        ));
    }
}
