use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use sgflow_core::directions::{compute_direction, SobolevMetric};
use sgflow_core::ginzburg_landau::{gl_initialize, gl_system};
use sgflow_core::grid::assemble_sobolev_metric;
use sgflow_core::residual::evaluate_residual_and_jacobian;
use sgflow_core::sparse::{cg_solve, pcg_solve, SparseCholesky};
use sgflow_core::{run_flow, CgOptions, DirectionRequest, FlowConfig, GLConfig, Grid2D};
use std::hint::black_box;

fn grid(n: usize) -> Grid2D {
    Grid2D::new(n, n, 4.0, 4.0).unwrap()
}

fn linear_algebra(c: &mut Criterion) {
    let g = grid(48);
    let metric = assemble_sobolev_metric(&g, 1);
    let b: Vec<f64> = (0..g.node_count())
        .map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5)
        .collect();
    let mut y = vec![0.0; b.len()];
    c.bench_function("spmv metric 48x48", |bench| {
        bench.iter(|| metric.spmv_into(black_box(&b), &mut y))
    });
    let opts = CgOptions::with_tol(1e-10);
    c.bench_function("cg jacobi metric 48x48", |bench| {
        bench.iter(|| cg_solve(&metric, black_box(&b), &opts).unwrap())
    });
    let chol = SparseCholesky::factor(&metric).unwrap();
    c.bench_function("pcg cholesky metric 48x48", |bench| {
        bench.iter(|| pcg_solve(&metric, black_box(&b), &chol, &opts).unwrap())
    });
    c.bench_function("cholesky factor metric 48x48", |bench| {
        bench.iter(|| SparseCholesky::factor(black_box(&metric)))
    });
}

fn gl_kernels(c: &mut Criterion) {
    let g = grid(48);
    let cfg = GLConfig {
        h0: 6.0,
        ..GLConfig::default()
    };
    let sys = gl_system(&cfg).unwrap();
    let u = gl_initialize(&cfg, &g).unwrap().into_field();
    c.bench_function("gl linearize 48x48", |bench| {
        bench.iter(|| evaluate_residual_and_jacobian(&sys, &g, black_box(&u)).unwrap())
    });
    let lin = evaluate_residual_and_jacobian(&sys, &g, &u).unwrap();
    let metric = SobolevMetric::new(&g, 4);
    let req = DirectionRequest::lm(1e-2).with_solver(CgOptions::truncated(1e-8, 20));
    c.bench_function("gl lm direction 48x48", |bench| {
        bench.iter(|| compute_direction(&req, &metric, &lin, &g, 4).unwrap())
    });

    let small = grid(16);
    let flow_cfg = FlowConfig {
        max_iterations: 20,
        solver: CgOptions::truncated(1e-8, 20),
        ..FlowConfig::default()
    };
    c.bench_function("gl flow 20 steps 16x16", |bench| {
        bench.iter_batched(
            || gl_initialize(&cfg, &small).unwrap().into_field(),
            |u0| run_flow(&sys, &small, u0, &flow_cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = linear_algebra, gl_kernels
}
criterion_main!(benches);
