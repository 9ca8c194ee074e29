//! Benchmarks of the data-parallel kernels against their single-threaded
//! execution.
//!
//! With the default `parallel` feature each group contains a `rayon` entry
//! (default thread pool) and a `single_thread` entry (the same code pinned
//! to a one-thread pool). Building the bench with
//! `--no-default-features` instead measures the true sequential fallback,
//! comparable through criterion's saved baselines.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use homfem::assembly::{assemble_stiffness, sample_cell_values};
use homfem::cell::CellCoefficient;
use homfem::contact::{fixed_point_solve, CoefficientSource, ContactProblemSpec, FixedPointConfig};
use homfem::mesh::{build_domain_mesh, BoundaryPartition, StructuredMesh};
use homfem::metrics::h1_seminorm;
use homfem::{MicrostructureSpec, SparseSymMatrix};

struct Fixture {
    mesh: StructuredMesh,
    matrix: SparseSymMatrix,
    vector: Vec<f64>,
}

fn fixture() -> Fixture {
    let mesh = build_domain_mesh(8, 32, BoundaryPartition::contact()).unwrap();
    let spec = MicrostructureSpec::new(1.0, 2.0, 0.25).unwrap();
    let field = sample_cell_values(&mesh, 8, |y| spec.value_at(y)).unwrap();
    let matrix = assemble_stiffness(&mesh, &field).unwrap();
    let vector: Vec<f64> = mesh
        .node_coords
        .iter()
        .map(|c| (3.0 * c[0]).sin() * (2.0 * c[1]).cos())
        .collect();
    Fixture {
        mesh,
        matrix,
        vector,
    }
}

fn run_in_modes<F: Fn() + Sync>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    #[cfg(feature = "parallel")]
    {
        g.bench_function("rayon", |b| b.iter(&f));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        g.bench_function("single_thread", |b| b.iter(|| pool.install(&f)));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function("sequential", |b| b.iter(&f));
    g.finish();
}

fn bench_assembly(c: &mut Criterion) {
    let fx = fixture();
    let spec = MicrostructureSpec::new(1.0, 2.0, 0.25).unwrap();
    let field = sample_cell_values(&fx.mesh, 8, |y| spec.value_at(y)).unwrap();
    run_in_modes(c, "assemble_stiffness_256x256", || {
        black_box(assemble_stiffness(&fx.mesh, &field).unwrap());
    });
}

fn bench_matvec(c: &mut Criterion) {
    let fx = fixture();
    let mut out = vec![0.0; fx.matrix.n()];
    let out_cell = std::sync::Mutex::new(&mut out);
    run_in_modes(c, "sparse_matvec_256x256", || {
        let mut guard = out_cell.lock().unwrap();
        fx.matrix.matvec_into(black_box(&fx.vector), &mut guard);
    });
}

fn bench_norms(c: &mut Criterion) {
    let fx = fixture();
    run_in_modes(c, "h1_seminorm_256x256", || {
        black_box(h1_seminorm(&fx.mesh, &fx.vector));
    });
}

fn bench_contact_solve(c: &mut Criterion) {
    let mesh = build_domain_mesh(4, 8, BoundaryPartition::contact()).unwrap();
    let spec = ContactProblemSpec {
        f: 1.0,
        g: 1.0,
        alpha: 0.5,
        coefficient: CoefficientSource::Fine {
            coefficient: CellCoefficient::Inclusion(
                MicrostructureSpec::new(1.0, 2.0, 0.25).unwrap(),
            ),
            n_cells: 4,
        },
    };
    let cfg = FixedPointConfig::default();
    run_in_modes(c, "contact_fixed_point_32x32", || {
        black_box(fixed_point_solve(&spec, &mesh, &cfg).unwrap());
    });
}

criterion_group!(
    benches,
    bench_assembly,
    bench_matvec,
    bench_norms,
    bench_contact_solve
);
criterion_main!(benches);
