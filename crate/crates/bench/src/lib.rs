//! Fixtures shared by the benchmarks.

use elastolod::fe::{assemble_global_form, MaterialParams};
use elastolod::linalg::SparseComplexMatrix;
use elastolod::mesh::{BoundaryKind, DomainSpec};
use elastolod::solver::{point_source_2d, ProblemData, TwoLevel};

/// Hole-domain point-source problem on a two-level hierarchy.
pub struct CorrectorFixture {
    pub data: ProblemData,
    pub two: TwoLevel,
    pub a_h: SparseComplexMatrix,
}

impl CorrectorFixture {
    pub fn new(k: f64, coarse_h: f64, levels: usize) -> Self {
        let data = point_source_2d(k);
        let two = TwoLevel::new(&data.domain, coarse_h, levels).expect("dyadic mesh sizes");
        let a_h = assemble_global_form(&two.fine, &data.material, &two.interp.fine_dofs);
        Self { data, two, a_h }
    }
}

pub fn unit_robin(dim: usize) -> DomainSpec {
    DomainSpec::unit(dim, BoundaryKind::Robin)
}

pub fn unit_material(k: f64) -> MaterialParams {
    MaterialParams::unit(k)
}

/// Deterministic off-origin sample points in `[-1, 1]^3`.
pub fn sample_points(n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|i| {
            let t = i as f64 + 0.5;
            [(0.7548776662 * t).fract() * 2.0 - 1.0, (0.5698402910 * t).fract() * 2.0 - 1.0, 0.1 + (0.3 * t).fract()]
        })
        .collect()
}
