use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use elastolod::correctors::CorrectorSetup;
use elastolod::fe::{assemble_global_form, DofMap};
use elastolod::kupradze::{green_dynamic, single_layer, BoundaryGrid, KupradzeEval};
use elastolod::linalg::{factorize_symmetric, C64};
use elastolod::mesh::StructuredMesh;
use elastolod_bench::{sample_points, unit_material, unit_robin, CorrectorFixture};

fn assembly(c: &mut Criterion) {
    let mesh = StructuredMesh::build(&unit_robin(2), 1.0 / 128.0).unwrap();
    let dofs = DofMap::all(&mesh);
    let mat = unit_material(32.0);
    c.bench_function("assemble_form_2d_h128", |b| b.iter(|| assemble_global_form(black_box(&mesh), &mat, &dofs)));

    let mesh3 = StructuredMesh::build(&unit_robin(3), 1.0 / 16.0).unwrap();
    let dofs3 = DofMap::all(&mesh3);
    c.bench_function("assemble_form_3d_h16", |b| b.iter(|| assemble_global_form(black_box(&mesh3), &mat, &dofs3)));
}

fn direct_solve(c: &mut Criterion) {
    let mesh = StructuredMesh::build(&unit_robin(2), 1.0 / 64.0).unwrap();
    let dofs = DofMap::all(&mesh);
    let a = assemble_global_form(&mesh, &unit_material(16.0), &dofs);
    let rhs = vec![C64::new(1.0, 0.0); dofs.num_dofs()];
    c.bench_function("factorize_solve_2d_h64", |b| {
        b.iter(|| factorize_symmetric(black_box(&a), 0).unwrap().solve(&rhs).unwrap())
    });
}

fn correctors(c: &mut Criterion) {
    let fx = CorrectorFixture::new(16.0, 1.0 / 16.0, 3);
    let setup = CorrectorSetup::new(&fx.two.coarse, &fx.two.fine, &fx.two.parent, &fx.two.interp, &fx.a_h, fx.data.material);
    // element 34 = (2, 2): interior and clear of the hole
    let mut group = c.benchmark_group("corrector");
    group.sample_size(20);
    for m in [1, 2] {
        group.bench_function(format!("element_patch_m{m}_H16_h128"), |b| b.iter(|| setup.solve_corrector(black_box(34), m).unwrap()));
    }
    group.finish();
}

fn kupradze(c: &mut Criterion) {
    let eval = KupradzeEval::new(unit_material(10.0));
    let points = sample_points(1000);
    c.bench_function("green_dynamic_1000", |b| {
        b.iter(|| points.iter().map(|&x| green_dynamic(black_box(x), &eval).unwrap()[0][0]).sum::<C64>())
    });
    let grid = BoundaryGrid::unit_cube(12);
    let targets = [[0.5, 0.5, 0.5], [0.4, 0.6, 0.5]];
    let phi = |_: [f64; 3], nu: [f64; 3]| nu.map(|v| C64::new(v, 0.0));
    c.bench_function("single_layer_12_panels", |b| b.iter(|| single_layer(&phi, &eval, black_box(&targets), &grid).unwrap()));
}

criterion_group!(benches, assembly, direct_solve, correctors, kupradze);
criterion_main!(benches);
