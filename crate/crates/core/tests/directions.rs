use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgflow_core::directions::{
    compute_direction, direction, gauss_newton_direction, SobolevMetric,
};
use sgflow_core::ginzburg_landau::GinzburgLandau;
use sgflow_core::grid::assemble_sobolev_metric;
use sgflow_core::residual::{
    evaluate_energy, evaluate_residual_and_jacobian, model_problem_linear_poisson,
};
use sgflow_core::sparse::dense_solve;
use sgflow_core::{
    CgOptions, DirectionError, DirectionKind, DirectionRequest, Grid2D, Linearization, NodalField,
};

const TIGHT: CgOptions = CgOptions {
    tol: 1e-14,
    max_iter: Some(2000),
    accept_truncated: false,
};

fn gl() -> GinzburgLandau {
    GinzburgLandau {
        kappa: 4.0,
        h0: 4.0,
    }
}

fn random_state(grid: &Grid2D, fc: usize, seed: u64) -> NodalField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..grid.node_count() * fc)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    NodalField::from_values(grid, fc, v).unwrap()
}

fn normal_matrix(lin: &Linearization) -> DMatrix<f64> {
    let j = lin.jacobian.to_dense();
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(&lin.weights));
    j.transpose() * w * &j
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn grid4() -> Grid2D {
    Grid2D::new(4, 4, 4.0, 4.0).unwrap()
}

#[test]
fn sobolev_gradient_matches_dense_solve() {
    let grid = Grid2D::new(5, 5, 4.0, 4.0).unwrap();
    let u = random_state(&grid, 4, 1);
    let lin = evaluate_residual_and_jacobian(&gl(), &grid, &u).unwrap();
    let g = lin.gradient();
    let oracle = dense_solve(&assemble_sobolev_metric(&grid, 4).to_dense(), &g).unwrap();
    let d = direction(
        &gl(),
        &grid,
        &u,
        &DirectionRequest::new(DirectionKind::Sobolev),
    )
    .unwrap();
    assert!(rel_diff(&d.direction, &oracle) < 1e-10);
    let norm_sq: f64 = g.iter().zip(&oracle).map(|(a, b)| a * b).sum();
    assert!((d.metric_norm_sq - norm_sq).abs() < 1e-10 * norm_sq);
}

#[test]
fn lm_primal_matches_dense_solve() {
    let grid = grid4();
    let u = random_state(&grid, 4, 2);
    let lin = evaluate_residual_and_jacobian(&gl(), &grid, &u).unwrap();
    let g = lin.gradient();
    let gm = assemble_sobolev_metric(&grid, 4).to_dense();
    let n = normal_matrix(&lin);
    for lambda in [0.1, 1.0, 10.0] {
        let rhs: Vec<f64> = g.iter().map(|v| lambda * v).collect();
        let oracle = dense_solve(&(&gm * lambda + &n), &rhs).unwrap();
        let d = direction(
            &gl(),
            &grid,
            &u,
            &DirectionRequest::lm(lambda).with_solver(TIGHT),
        )
        .unwrap();
        assert!(rel_diff(&d.direction, &oracle) < 1e-9, "λ = {lambda}");
    }
}

#[test]
fn primal_and_dual_forms_agree() {
    let grid = grid4();
    for seed in 0..3 {
        let u = random_state(&grid, 4, 10 + seed);
        for lambda in [0.1, 1.0, 10.0] {
            let p = direction(
                &gl(),
                &grid,
                &u,
                &DirectionRequest::lm(lambda).with_solver(TIGHT),
            )
            .unwrap();
            let d = direction(
                &gl(),
                &grid,
                &u,
                &DirectionRequest::lm_dual(lambda).with_solver(TIGHT),
            )
            .unwrap();
            let rel = rel_diff(&d.direction, &p.direction);
            assert!(rel < 1e-8, "λ = {lambda}: {rel:e}");
        }
    }
}

#[test]
fn large_damping_recovers_sobolev_gradient() {
    let grid = grid4();
    let u = random_state(&grid, 4, 3);
    let s = direction(
        &gl(),
        &grid,
        &u,
        &DirectionRequest::new(DirectionKind::Sobolev),
    )
    .unwrap();
    let lm = direction(
        &gl(),
        &grid,
        &u,
        &DirectionRequest::lm(1e8).with_solver(TIGHT),
    )
    .unwrap();
    assert!(rel_diff(&lm.direction, &s.direction) < 1e-4);
    let coarse = direction(
        &gl(),
        &grid,
        &u,
        &DirectionRequest::lm(1.0).with_solver(TIGHT),
    )
    .unwrap();
    assert!(rel_diff(&coarse.direction, &s.direction) > 1e-2);
}

#[test]
fn gauss_newton_solves_quadratic_in_one_step() {
    let grid = Grid2D::new(6, 6, 1.0, 1.0).unwrap();
    let sys = model_problem_linear_poisson(1.0, 0.5);
    let u0 = random_state(&grid, 1, 4);
    let e0 = evaluate_energy(&sys, &grid, &u0).unwrap().value;
    let d = direction(
        &sys,
        &grid,
        &u0,
        &DirectionRequest::gauss_newton(0.0).with_solver(TIGHT),
    )
    .unwrap();
    let mut u1 = u0.clone();
    for (v, dv) in u1.values_mut().iter_mut().zip(&d.direction) {
        *v -= dv;
    }
    let e1 = evaluate_energy(&sys, &grid, &u1).unwrap().value;
    assert!(e1 < 1e-14 * e0, "{e0:e} -> {e1:e}");
}

#[test]
fn gauss_newton_without_regularization_is_singular_on_gl() {
    let grid = grid4();
    let u = random_state(&grid, 4, 5);
    let err = gauss_newton_direction(&gl(), &grid, &u, 0.0).unwrap_err();
    assert!(matches!(err, DirectionError::Singular(_)), "{err:?}");
    let lin = evaluate_residual_and_jacobian(&gl(), &grid, &u).unwrap();
    let n = normal_matrix(&lin);
    let sv = n.clone().singular_values();
    let rank = sv.iter().filter(|&&s| s > 1e-10 * sv.max()).count();
    assert!(rank < n.nrows(), "rank {rank} of {}", n.nrows());
    assert!(gauss_newton_direction(&gl(), &grid, &u, 1e-3).is_ok());
}

#[test]
fn sobolev_gradient_represents_the_derivative() {
    let grid = Grid2D::new(5, 4, 4.0, 3.0).unwrap();
    let u = random_state(&grid, 4, 6);
    let lin = evaluate_residual_and_jacobian(&gl(), &grid, &u).unwrap();
    let metric = SobolevMetric::new(&grid, 4);
    let s = compute_direction(
        &DirectionRequest::new(DirectionKind::Sobolev),
        &metric,
        &lin,
        &grid,
        4,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for _ in 0..5 {
        let h: Vec<f64> = (0..s.direction.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let gh = metric.operator().spmv(&h).unwrap();
        let inner: f64 = s.direction.iter().zip(&gh).map(|(a, b)| a * b).sum();
        let eps = 1e-6;
        let shifted = |t: f64| {
            let mut v = u.clone();
            for (x, hi) in v.values_mut().iter_mut().zip(&h) {
                *x += t * hi;
            }
            evaluate_energy(&gl(), &grid, &v).unwrap().value
        };
        let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
        assert!(
            (inner - fd).abs() < 1e-6 * (1.0 + fd.abs()),
            "{inner} vs {fd}"
        );
        assert!((inner - lin.directional_derivative(&h)).abs() < 1e-9 * (1.0 + fd.abs()));
    }
}

#[test]
fn every_direction_is_a_descent_direction() {
    let grid = grid4();
    let u = random_state(&grid, 4, 7);
    let e0 = evaluate_energy(&gl(), &grid, &u).unwrap().value;
    let lin = evaluate_residual_and_jacobian(&gl(), &grid, &u).unwrap();
    let g = lin.gradient();
    for req in [
        DirectionRequest::new(DirectionKind::Euclidean),
        DirectionRequest::new(DirectionKind::Sobolev),
        DirectionRequest::lm(0.5),
        DirectionRequest::lm_dual(0.5),
        DirectionRequest::lm(1e-6).with_solver(CgOptions::truncated(1e-8, 3)),
        DirectionRequest::gauss_newton(1e-2),
    ] {
        let d = direction(&gl(), &grid, &u, &req).unwrap();
        let slope: f64 = g.iter().zip(&d.direction).map(|(a, b)| a * b).sum();
        assert!(slope > 0.0, "{:?}", req.kind);
        let mut v = u.clone();
        let eps = 1e-4 / d.direction.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (x, dx) in v.values_mut().iter_mut().zip(&d.direction) {
            *x -= eps * dx;
        }
        assert!(
            evaluate_energy(&gl(), &grid, &v).unwrap().value < e0,
            "{:?}",
            req.kind
        );
    }
}
