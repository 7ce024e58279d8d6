use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgflow_core::grid::{
    apply_jet, apply_jet_adjoint, assemble_gram, assemble_sobolev_metric,
    assemble_stabilized_metric, jet_matrix,
};
use sgflow_core::sparse::{cg_solve, dense_solve, pcg_solve, Jacobi, SparseCholesky};
use sgflow_core::{CgOptions, Grid2D, JetField, NodalField, SparseOperator};

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn grids() -> Vec<Grid2D> {
    vec![
        Grid2D::line(9, 1.0).unwrap(),
        Grid2D::new(5, 4, 1.0, 0.7).unwrap(),
        Grid2D::new(7, 7, 4.0, 4.0).unwrap(),
    ]
}

#[test]
fn jet_adjoint_identity_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for grid in grids() {
        for fc in [1, 2, 4] {
            for _ in 0..20 {
                let u = NodalField::from_values(
                    &grid,
                    fc,
                    random_vec(&mut rng, grid.node_count() * fc),
                )
                .unwrap();
                let n_jet = grid.cell_count() * fc * grid.jet_size();
                let j = JetField::from_values(&grid, fc, random_vec(&mut rng, n_jet)).unwrap();
                let du = apply_jet(&grid, &u).unwrap();
                let lhs = grid.cell_weight() * dot(du.values(), j.values());
                let rhs = dot(u.values(), apply_jet_adjoint(&grid, &j).unwrap().values());
                assert!(
                    (lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()),
                    "{lhs} vs {rhs}"
                );
            }
        }
    }
}

#[test]
fn gram_matches_dense_product() {
    for grid in grids() {
        let d = jet_matrix(&grid, 2, false).to_dense();
        let dense = d.transpose() * &d * grid.cell_weight();
        let gram = assemble_gram(&grid, 2).to_dense();
        assert!((gram - &dense).amax() <= 1e-12 * dense.amax());
    }
}

#[test]
fn gram_equals_composition_of_jet_and_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = Grid2D::new(6, 5, 2.0, 1.0).unwrap();
    let gram = assemble_gram(&grid, 1);
    for _ in 0..10 {
        let x = random_vec(&mut rng, grid.node_count());
        let u = NodalField::from_values(&grid, 1, x.clone()).unwrap();
        let composed = apply_jet_adjoint(&grid, &apply_jet(&grid, &u).unwrap()).unwrap();
        let direct = gram.spmv(&x).unwrap();
        for (a, b) in composed.values().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn metric_is_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for grid in grids() {
        let g = assemble_sobolev_metric(&grid, 1);
        assert!(g.symmetric());
        let mut probes = vec![grid.checkerboard(), vec![1.0; grid.node_count()]];
        probes.extend((0..20).map(|_| random_vec(&mut rng, grid.node_count())));
        for x in probes {
            assert!(dot(&x, &g.spmv(&x).unwrap()) > 0.0);
        }
        let eig = g.to_dense().symmetric_eigenvalues();
        assert!(eig.min() > 0.0, "smallest eigenvalue {}", eig.min());
    }
}

#[test]
fn hourglass_term_vanishes_on_affine_fields() {
    let grid = Grid2D::new(6, 6, 1.0, 1.0).unwrap();
    let u: Vec<f64> = (0..grid.node_count())
        .map(|n| {
            let (x, y) = grid.node_position(n);
            1.0 + 2.0 * x - y
        })
        .collect();
    let plain = assemble_stabilized_metric(&grid, 1, 0.0);
    let heavy = assemble_stabilized_metric(&grid, 1, 1e6);
    let (a, b) = (
        dot(&u, &plain.spmv(&u).unwrap()),
        dot(&u, &heavy.spmv(&u).unwrap()),
    );
    assert!((a - b).abs() < 1e-9 * a);
}

#[test]
fn cholesky_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = Grid2D::new(6, 5, 1.0, 1.0).unwrap();
    let g = assemble_sobolev_metric(&grid, 1);
    let chol = SparseCholesky::factor(&g).unwrap();
    assert_eq!(chol.dim(), grid.node_count());
    let b = random_vec(&mut rng, grid.node_count());
    let x = chol.solve(&b);
    let oracle = dense_solve(&g.to_dense(), &b).unwrap();
    for (a, o) in x.iter().zip(&oracle) {
        assert!((a - o).abs() < 1e-10 * (1.0 + o.abs()));
    }
}

#[test]
fn interleaved_solve_matches_separate_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = Grid2D::new(5, 5, 1.0, 1.0).unwrap();
    let chol = SparseCholesky::factor(&assemble_sobolev_metric(&grid, 1)).unwrap();
    let n = chol.dim();
    let rhs: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, n)).collect();
    let mut packed = vec![0.0; 4 * n];
    for (k, b) in rhs.iter().enumerate() {
        for i in 0..n {
            packed[i * 4 + k] = b[i];
        }
    }
    chol.solve_interleaved::<4>(&mut packed);
    for (k, b) in rhs.iter().enumerate() {
        let x = chol.solve(b);
        for i in 0..n {
            assert_eq!(packed[i * 4 + k], x[i]);
        }
    }
}

#[test]
fn cholesky_rejects_indefinite_and_unsymmetric() {
    let indefinite =
        SparseOperator::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]))
            .into_symmetric()
            .unwrap();
    assert!(SparseCholesky::factor(&indefinite).is_err());
    let unsym = SparseOperator::from_dense(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]));
    assert!(SparseCholesky::factor(&unsym).is_err());
}

#[test]
fn preconditioned_cg_agrees_with_plain_cg() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = Grid2D::new(9, 9, 1.0, 1.0).unwrap();
    let g = assemble_sobolev_metric(&grid, 1);
    let b = random_vec(&mut rng, grid.node_count());
    let opts = CgOptions::with_tol(1e-12);
    let (x1, r1) = cg_solve(&g, &b, &opts).unwrap();
    let chol = SparseCholesky::factor(&g).unwrap();
    let (x2, r2) = pcg_solve(&g, &b, &chol, &opts).unwrap();
    let (x3, _) = pcg_solve(&g, &b, &Jacobi::of(&g), &opts).unwrap();
    assert!(r1.converged && r2.converged);
    assert!(
        r2.iterations <= 2,
        "exact preconditioner took {} iterations",
        r2.iterations
    );
    let scale = DVector::from_column_slice(&x1).amax();
    for i in 0..b.len() {
        assert!((x1[i] - x2[i]).abs() < 1e-9 * scale);
        assert!((x1[i] - x3[i]).abs() < 1e-9 * scale);
    }
}
