//! Structured quadrilateral / hexahedral meshes of an axis-aligned box with an
//! optional axis-aligned hole.
//!
//! Cells live on the integer lattice of the outer box; cells inside the hole
//! are inactive. Elements and vertices are numbered lexicographically with
//! the x index running fastest. Local vertex `l` of an element sits at lattice
//! offset `(l & 1, (l >> 1) & 1, (l >> 2) & 1)`; local face `2a + s` is the
//! face normal to axis `a` on side `s` (0 = low, 1 = high).

use std::collections::VecDeque;
use std::io::Write;

use thiserror::Error;

pub const NONE: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Robin,
    Dirichlet,
    Neumann,
}

impl std::str::FromStr for BoundaryKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "robin" | "r" => Ok(Self::Robin),
            "dirichlet" | "d" => Ok(Self::Dirichlet),
            "neumann" | "n" => Ok(Self::Neumann),
            other => Err(format!("unknown boundary kind `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl AxisBox {
    pub fn unit() -> Self {
        Self { lo: [0.0; 3], hi: [1.0; 3] }
    }

    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self { lo, hi }
    }

    /// Square / cube `[lo, hi]^d`, unused axes set to `[0, 1]`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        let mut b = Self::unit();
        for a in 0..dim {
            b.lo[a] = lo;
            b.hi[a] = hi;
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub dim: usize,
    pub outer: AxisBox,
    pub hole: Option<AxisBox>,
    /// Tag of the outer face normal to axis `a` on side `s`, at index `2a + s`.
    pub outer_tags: [BoundaryKind; 6],
    pub hole_tag: BoundaryKind,
}

impl DomainSpec {
    /// Unit square / cube with a single tag on the whole boundary.
    pub fn unit(dim: usize, tag: BoundaryKind) -> Self {
        Self { dim, outer: AxisBox::unit(), hole: None, outer_tags: [tag; 6], hole_tag: tag }
    }

    pub fn with_hole(mut self, hole: AxisBox, tag: BoundaryKind) -> Self {
        self.hole = Some(hole);
        self.hole_tag = tag;
        self
    }

    /// Unit square minus `[0.375, 0.625]^2`, Robin outside, Dirichlet on the hole.
    pub fn square_with_hole() -> Self {
        Self::unit(2, BoundaryKind::Robin).with_hole(AxisBox::cube(2, 0.375, 0.625), BoundaryKind::Dirichlet)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("dimension must be 2 or 3, got {0}")]
    Dimension(usize),
    #[error("mesh size H={0} must be positive and finite")]
    BadSize(f64),
    #[error("outer box extent {extent} along axis {axis} is not an integer multiple of H={h}")]
    NonIntegerCells { axis: usize, extent: f64, h: f64 },
    #[error("hole is not strictly inside the outer box along axis {0}")]
    HoleOutside(usize),
    #[error("hole coordinate {coord} along axis {axis} does not lie on a mesh line at H={h}")]
    HoleNotAligned { axis: usize, coord: f64, h: f64 },
}

/// A boundary facet, identified by its element and local face.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Facet {
    pub element: usize,
    pub local_face: usize,
    pub tag: BoundaryKind,
}

impl Facet {
    pub fn axis(&self) -> usize {
        self.local_face / 2
    }
    pub fn side(&self) -> usize {
        self.local_face % 2
    }
    /// Outward unit normal.
    pub fn normal(&self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.axis()] = if self.side() == 1 { 1.0 } else { -1.0 };
        n
    }
}

/// Element set `ω^m(T)`, sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub seed: usize,
    pub order: usize,
    pub elements: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct StructuredMesh {
    spec: DomainSpec,
    dim: usize,
    size: f64,
    cells: [usize; 3],
    points: [usize; 3],
    cell_to_elem: Vec<usize>,
    elem_to_cell: Vec<usize>,
    point_to_vertex: Vec<usize>,
    vertex_to_point: Vec<usize>,
    elem_vertices: Vec<usize>,
    facets: Vec<Facet>,
    facet_offsets: Vec<usize>,
    vertex_dirichlet: Vec<bool>,
}

fn lattice_count(extent: f64, h: f64) -> Option<usize> {
    let q = extent / h;
    let r = q.round();
    if r >= 1.0 && (q - r).abs() <= 1e-9 * r.max(1.0) {
        Some(r as usize)
    } else {
        None
    }
}

impl StructuredMesh {
    pub fn build(spec: &DomainSpec, size: f64) -> Result<Self, MeshError> {
        let dim = spec.dim;
        if dim != 2 && dim != 3 {
            return Err(MeshError::Dimension(dim));
        }
        if !(size > 0.0 && size.is_finite()) {
            return Err(MeshError::BadSize(size));
        }
        let mut cells = [1usize; 3];
        let mut points = [1usize; 3];
        for a in 0..dim {
            let extent = spec.outer.hi[a] - spec.outer.lo[a];
            cells[a] = lattice_count(extent, size).ok_or(MeshError::NonIntegerCells { axis: a, extent, h: size })?;
            points[a] = cells[a] + 1;
        }
        // Hole as a half-open lattice cell range per axis.
        let mut hole_range = None;
        if let Some(hole) = &spec.hole {
            let mut lo = [0usize; 3];
            let mut hi = [1usize; 3];
            for a in 0..dim {
                if !(hole.lo[a] > spec.outer.lo[a] && hole.hi[a] < spec.outer.hi[a] && hole.lo[a] < hole.hi[a]) {
                    return Err(MeshError::HoleOutside(a));
                }
                for (coord, slot) in [(hole.lo[a], &mut lo[a]), (hole.hi[a], &mut hi[a])] {
                    *slot = lattice_count(coord - spec.outer.lo[a], size)
                        .ok_or(MeshError::HoleNotAligned { axis: a, coord, h: size })?;
                }
            }
            hole_range = Some((lo, hi));
        }
        let ncell = cells[0] * cells[1] * cells[2];
        let in_hole = |c: [usize; 3]| match hole_range {
            Some((lo, hi)) => (0..dim).all(|a| c[a] >= lo[a] && c[a] < hi[a]),
            None => false,
        };
        let mut cell_to_elem = vec![NONE; ncell];
        let mut elem_to_cell = Vec::with_capacity(ncell);
        for (lin, slot) in cell_to_elem.iter_mut().enumerate() {
            let c = unravel(lin, &cells);
            if !in_hole(c) {
                *slot = elem_to_cell.len();
                elem_to_cell.push(lin);
            }
        }
        let nv = 1usize << dim;
        let npoint = points[0] * points[1] * points[2];
        let mut used = vec![false; npoint];
        for &lin in &elem_to_cell {
            let c = unravel(lin, &cells);
            for l in 0..nv {
                used[ravel(corner(c, l), &points)] = true;
            }
        }
        let mut point_to_vertex = vec![NONE; npoint];
        let mut vertex_to_point = Vec::new();
        for (p, &u) in used.iter().enumerate() {
            if u {
                point_to_vertex[p] = vertex_to_point.len();
                vertex_to_point.push(p);
            }
        }
        let mut elem_vertices = Vec::with_capacity(elem_to_cell.len() * nv);
        for &lin in &elem_to_cell {
            let c = unravel(lin, &cells);
            for l in 0..nv {
                elem_vertices.push(point_to_vertex[ravel(corner(c, l), &points)]);
            }
        }
        let mut facets = Vec::new();
        let mut facet_offsets = Vec::with_capacity(elem_to_cell.len() + 1);
        for (e, &lin) in elem_to_cell.iter().enumerate() {
            facet_offsets.push(facets.len());
            let c = unravel(lin, &cells);
            for a in 0..dim {
                for s in 0..2 {
                    let outside = if s == 0 { c[a] == 0 } else { c[a] + 1 == cells[a] };
                    let tag = if outside {
                        Some(spec.outer_tags[2 * a + s])
                    } else {
                        let mut nb = c;
                        if s == 0 {
                            nb[a] -= 1;
                        } else {
                            nb[a] += 1;
                        }
                        if in_hole(nb) {
                            Some(spec.hole_tag)
                        } else {
                            None
                        }
                    };
                    if let Some(tag) = tag {
                        facets.push(Facet { element: e, local_face: 2 * a + s, tag });
                    }
                }
            }
        }
        facet_offsets.push(facets.len());
        let mut vertex_dirichlet = vec![false; vertex_to_point.len()];
        for f in &facets {
            if f.tag == BoundaryKind::Dirichlet {
                for l in face_local_vertices(dim, f.local_face) {
                    vertex_dirichlet[elem_vertices[f.element * nv + l]] = true;
                }
            }
        }
        Ok(Self {
            spec: spec.clone(),
            dim,
            size,
            cells,
            points,
            cell_to_elem,
            elem_to_cell,
            point_to_vertex,
            vertex_to_point,
            elem_vertices,
            facets,
            facet_offsets,
            vertex_dirichlet,
        })
    }

    /// Uniform refinement by `2^levels` per axis together with the map from
    /// fine element to coarse parent element.
    pub fn refine_uniform(&self, levels: usize) -> (StructuredMesh, Vec<usize>) {
        let fine = StructuredMesh::build(&self.spec, self.size / (1u64 << levels) as f64)
            .expect("refinement of a valid mesh is valid");
        let parent = (0..fine.num_elements())
            .map(|e| {
                let c = fine.element_lattice(e);
                let mut pc = [0usize; 3];
                for a in 0..3 {
                    pc[a] = c[a] >> levels;
                }
                let p = self.cell_to_elem[ravel(pc, &self.cells)];
                debug_assert_ne!(p, NONE);
                p
            })
            .collect();
        (fine, parent)
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    /// Element edge length.
    pub fn h(&self) -> f64 {
        self.size
    }
    pub fn cells_per_axis(&self) -> [usize; 3] {
        self.cells
    }
    pub fn vertices_per_element(&self) -> usize {
        1 << self.dim
    }
    pub fn num_elements(&self) -> usize {
        self.elem_to_cell.len()
    }
    pub fn num_vertices(&self) -> usize {
        self.vertex_to_point.len()
    }
    pub fn element_volume(&self) -> f64 {
        self.size.powi(self.dim as i32)
    }

    pub fn element_vertices(&self, e: usize) -> &[usize] {
        let nv = self.vertices_per_element();
        &self.elem_vertices[e * nv..(e + 1) * nv]
    }

    pub fn element_lattice(&self, e: usize) -> [usize; 3] {
        unravel(self.elem_to_cell[e], &self.cells)
    }

    /// Element id at a lattice cell, if the cell is active.
    pub fn element_at(&self, c: [isize; 3]) -> Option<usize> {
        let mut u = [0usize; 3];
        for a in 0..3 {
            if c[a] < 0 || c[a] as usize >= self.cells[a] {
                return None;
            }
            u[a] = c[a] as usize;
        }
        let e = self.cell_to_elem[ravel(u, &self.cells)];
        (e != NONE).then_some(e)
    }

    pub fn element_origin(&self, e: usize) -> [f64; 3] {
        let c = self.element_lattice(e);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.spec.outer.lo[a] + c[a] as f64 * self.size;
        }
        x
    }

    pub fn vertex_lattice(&self, v: usize) -> [usize; 3] {
        unravel(self.vertex_to_point[v], &self.points)
    }

    pub fn vertex_at(&self, p: [usize; 3]) -> Option<usize> {
        if (0..3).any(|a| p[a] >= self.points[a]) {
            return None;
        }
        let v = self.point_to_vertex[ravel(p, &self.points)];
        (v != NONE).then_some(v)
    }

    pub fn vertex_coords(&self, v: usize) -> [f64; 3] {
        let p = self.vertex_lattice(v);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.spec.outer.lo[a] + p[a] as f64 * self.size;
        }
        x
    }

    /// Active elements containing vertex `v`, ascending.
    pub fn vertex_elements(&self, v: usize) -> Vec<usize> {
        let p = self.vertex_lattice(v);
        let mut out = Vec::with_capacity(self.vertices_per_element());
        for l in (0..self.vertices_per_element()).rev() {
            let mut c = [0isize; 3];
            for a in 0..3 {
                c[a] = p[a] as isize - if a < self.dim { ((l >> a) & 1) as isize } else { 0 };
            }
            if let Some(e) = self.element_at(c) {
                out.push(e);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn element_facets(&self, e: usize) -> &[Facet] {
        &self.facets[self.facet_offsets[e]..self.facet_offsets[e + 1]]
    }

    pub fn facets_with_tag(&self, tag: BoundaryKind) -> Vec<Facet> {
        self.facets.iter().copied().filter(|f| f.tag == tag).collect()
    }

    pub fn is_dirichlet_vertex(&self, v: usize) -> bool {
        self.vertex_dirichlet[v]
    }

    /// Vertices not on any Dirichlet facet, ascending.
    pub fn free_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices()).filter(|&v| !self.vertex_dirichlet[v]).collect()
    }

    /// `ω^m({T})`.
    pub fn element_patch(&self, seed: usize, m: usize) -> Patch {
        assert!(m >= 1, "patch order must be at least 1");
        let elements = self.dilate(&[seed], m);
        Patch { seed, order: m, elements }
    }

    /// `ω^r({z})`: the elements containing `z`, dilated `r - 1` more times.
    pub fn vertex_patch(&self, v: usize, r: usize) -> Vec<usize> {
        if r == 0 {
            return Vec::new();
        }
        self.dilate(&self.vertex_elements(v), r - 1)
    }

    /// Grows an element set by `steps` layers of vertex-sharing neighbours.
    pub fn dilate(&self, seeds: &[usize], steps: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_elements()];
        let mut queue = VecDeque::new();
        for &s in seeds {
            if dist[s] == usize::MAX {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        let offsets = self.neighbour_offsets();
        while let Some(e) = queue.pop_front() {
            if dist[e] == steps {
                continue;
            }
            let c = self.element_lattice(e);
            for off in &offsets {
                let nb = [c[0] as isize + off[0], c[1] as isize + off[1], c[2] as isize + off[2]];
                if let Some(n) = self.element_at(nb) {
                    if dist[n] == usize::MAX {
                        dist[n] = dist[e] + 1;
                        queue.push_back(n);
                    }
                }
            }
        }
        (0..self.num_elements()).filter(|&e| dist[e] != usize::MAX).collect()
    }

    fn neighbour_offsets(&self) -> Vec<[isize; 3]> {
        let r = |a: usize| if a < self.dim { -1..=1isize } else { 0..=0isize };
        let mut out = Vec::new();
        for z in r(2) {
            for y in r(1) {
                for x in r(0) {
                    if (x, y, z) != (0, 0, 0) {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        out
    }

    /// Plain-text structured-grid export: a header line followed by one
    /// line of vertex coordinates per vertex.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "structured-grid dim={} H={:e} cells={} {} {} vertices={} elements={}",
            self.dim,
            self.size,
            self.cells[0],
            self.cells[1],
            self.cells[2],
            self.num_vertices(),
            self.num_elements()
        )?;
        for v in 0..self.num_vertices() {
            let x = self.vertex_coords(v);
            let coords: Vec<String> = x[..self.dim].iter().map(|c| format!("{c:.17e}")).collect();
            writeln!(w, "{}", coords.join(" "))?;
        }
        Ok(())
    }
}

/// Local vertex indices on local face `2a + s`.
pub fn face_local_vertices(dim: usize, local_face: usize) -> Vec<usize> {
    let (a, s) = (local_face / 2, local_face % 2);
    (0..1usize << dim).filter(|l| (l >> a) & 1 == s).collect()
}

fn corner(c: [usize; 3], l: usize) -> [usize; 3] {
    [c[0] + (l & 1), c[1] + ((l >> 1) & 1), c[2] + ((l >> 2) & 1)]
}

fn ravel(c: [usize; 3], dims: &[usize; 3]) -> usize {
    c[0] + dims[0] * (c[1] + dims[1] * c[2])
}

fn unravel(lin: usize, dims: &[usize; 3]) -> [usize; 3] {
    [lin % dims[0], (lin / dims[0]) % dims[1], lin / (dims[0] * dims[1])]
}
