//! Self-verification battery behind `sgflow check`.
//!
//! Each `measure_*` function returns the raw discrepancy so callers can pin
//! their own tolerances; [`run_checks`] applies the default ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgflow_core::directions::{direction, euclidean_gradient};
use sgflow_core::ginzburg_landau::free_energy;
use sgflow_core::grid::{
    apply_jet, apply_jet_adjoint, assemble_gram, assemble_sobolev_metric, jet_matrix,
};
use sgflow_core::residual::{
    evaluate_energy, fd_jacobian_check, model_problem_exponential, model_problem_linear_poisson,
    CorruptedJacobian,
};
use sgflow_core::sparse::{cg_solve, dense_solve};
use sgflow_core::{
    lojasiewicz_monitor, CgOptions, DirectionKind, DirectionRequest, GLState, GinzburgLandau,
    Grid2D, JetField, NodalField,
};
use std::time::Instant;

const TIGHT: CgOptions = CgOptions {
    tol: 1e-14,
    max_iter: Some(4000),
    accept_truncated: false,
};

fn gl() -> GinzburgLandau {
    GinzburgLandau {
        kappa: 4.0,
        h0: 4.0,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-amp..amp)).collect()
}

fn random_gl_state(grid: &Grid2D, rng: &mut ChaCha8Rng) -> NodalField {
    NodalField::from_values(grid, 4, random_vec(rng, grid.node_count() * 4, 1.5))
        .expect("sized to grid")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (num / dot(b, b)).sqrt()
}

/// Worst relative mismatch of `⟨Du, j⟩_W = ⟨u, DᵀWj⟩` over 20 random pairs
/// on 1D and 2D grids.
pub fn measure_adjoint() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grids = [
        Grid2D::line(9, 1.0).unwrap(),
        Grid2D::new(6, 5, 4.0, 3.0).unwrap(),
    ];
    let mut worst = 0.0f64;
    for grid in &grids {
        for _ in 0..20 {
            let u =
                NodalField::from_values(grid, 2, random_vec(&mut rng, grid.node_count() * 2, 1.0))
                    .unwrap();
            let nj = grid.cell_count() * 2 * grid.jet_size();
            let j = JetField::from_values(grid, 2, random_vec(&mut rng, nj, 1.0)).unwrap();
            let lhs = grid.cell_weight() * dot(apply_jet(grid, &u).unwrap().values(), j.values());
            let rhs = dot(u.values(), apply_jet_adjoint(grid, &j).unwrap().values());
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1e-300));
        }
    }
    worst
}

/// Max entrywise gap between the assembled Gram operator and dense `DᵀWD`.
pub fn measure_gram() -> f64 {
    let grid = Grid2D::new(5, 5, 1.0, 1.0).unwrap();
    let d = jet_matrix(&grid, 1, false).to_dense();
    let dense = d.transpose() * &d * grid.cell_weight();
    (assemble_gram(&grid, 1).to_dense() - &dense).amax() / dense.amax()
}

/// Relative gap between CG and a dense solve on the Sobolev metric.
pub fn measure_cg_vs_dense() -> f64 {
    let grid = Grid2D::new(7, 6, 1.0, 1.0).unwrap();
    let g = assemble_sobolev_metric(&grid, 1);
    let b = random_vec(&mut ChaCha8Rng::seed_from_u64(2), grid.node_count(), 1.0);
    let (x, report) = cg_solve(&g, &b, &CgOptions::with_tol(1e-13)).expect("metric is SPD");
    if !report.converged {
        return f64::INFINITY;
    }
    rel_diff(&x, &dense_solve(&g.to_dense(), &b).expect("nonsingular"))
}

/// Worst [`fd_jacobian_check`] over GL (6×6, random state) and both model
/// problems, 10 probes each. With `inject_fault`, the GL Jacobian carries a
/// deliberate error.
pub fn measure_fd_jacobian(inject_fault: bool) -> Vec<(&'static str, f64)> {
    let grid = Grid2D::new(6, 6, 4.0, 4.0).unwrap();
    let u = random_gl_state(&grid, &mut ChaCha8Rng::seed_from_u64(3));
    let gl_err = if inject_fault {
        let bad = CorruptedJacobian {
            inner: gl(),
            row: 5,
            col: 0,
            offset: 0.5,
        };
        fd_jacobian_check(&bad, &grid, &u, 10, 7)
    } else {
        fd_jacobian_check(&gl(), &grid, &u, 10, 7)
    };
    let line = Grid2D::line(17, 1.0).unwrap();
    let ue = NodalField::from_fn(&line, 1, |_, x, _| x.exp() + 0.1 * (9.0 * x).sin());
    let sq = Grid2D::new(6, 6, 1.0, 1.0).unwrap();
    let up = NodalField::from_fn(&sq, 1, |_, x, y| (x * y).cos());
    vec![
        ("gl", gl_err.unwrap_or(f64::INFINITY)),
        (
            "exp1d",
            fd_jacobian_check(&model_problem_exponential(), &line, &ue, 10, 7)
                .unwrap_or(f64::INFINITY),
        ),
        (
            "poisson2d",
            fd_jacobian_check(&model_problem_linear_poisson(1.0, 0.5), &sq, &up, 10, 7)
                .unwrap_or(f64::INFINITY),
        ),
    ]
}

/// Worst componentwise relative error of the Euclidean gradient against
/// central differences of the energy, on 6×6 GL. Components are compared
/// relative to `max(|gᵢ|, 10⁻³‖g‖∞)`.
pub fn measure_euclidean_gradient(seed: u64) -> f64 {
    let grid = Grid2D::new(6, 6, 4.0, 4.0).unwrap();
    let sys = gl();
    let u = random_gl_state(&grid, &mut ChaCha8Rng::seed_from_u64(seed));
    let g = euclidean_gradient(&sys, &grid, &u).expect("valid state");
    let gmax = g.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let energy = |v: &NodalField| evaluate_energy(&sys, &grid, v).expect("finite").value;
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..g.values().len() {
        let mut plus = u.clone();
        let mut minus = u.clone();
        plus.values_mut()[i] += eps;
        minus.values_mut()[i] -= eps;
        let fd = (energy(&plus) - energy(&minus)) / (2.0 * eps);
        let gi = g.values()[i];
        worst = worst.max((fd - gi).abs() / gi.abs().max(1e-3 * gmax));
    }
    worst
}

/// Relative gap between the primal and dual LM directions on 4×4 GL for
/// each `λ`.
pub fn measure_primal_dual(lambdas: &[f64]) -> Vec<(f64, f64)> {
    let grid = Grid2D::new(4, 4, 4.0, 4.0).unwrap();
    let u = random_gl_state(&grid, &mut ChaCha8Rng::seed_from_u64(4));
    lambdas
        .iter()
        .map(|&lambda| {
            let p = direction(
                &gl(),
                &grid,
                &u,
                &DirectionRequest::lm(lambda).with_solver(TIGHT),
            );
            let d = direction(
                &gl(),
                &grid,
                &u,
                &DirectionRequest::lm_dual(lambda).with_solver(TIGHT),
            );
            let gap = match (p, d) {
                (Ok(p), Ok(d)) => rel_diff(&d.direction, &p.direction),
                _ => f64::INFINITY,
            };
            (lambda, gap)
        })
        .collect()
}

/// Relative gap between the LM direction at `lambda` and the Sobolev
/// gradient on 4×4 GL.
pub fn measure_sobolev_limit(lambda: f64) -> f64 {
    let grid = Grid2D::new(4, 4, 4.0, 4.0).unwrap();
    let u = random_gl_state(&grid, &mut ChaCha8Rng::seed_from_u64(5));
    let s = direction(
        &gl(),
        &grid,
        &u,
        &DirectionRequest::new(DirectionKind::Sobolev),
    );
    let lm = direction(
        &gl(),
        &grid,
        &u,
        &DirectionRequest::lm(lambda).with_solver(TIGHT),
    );
    match (s, lm) {
        (Ok(s), Ok(lm)) => rel_diff(&lm.direction, &s.direction),
        _ => f64::INFINITY,
    }
}

/// Worst relative gap between `½‖F‖²` and the free-energy functional over
/// `states` random GL states and parameters.
pub fn measure_energy_form(states: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for k in 0..states {
        let grid = Grid2D::new(3 + k % 5, 3 + (k / 5) % 4, 4.0, 3.0).unwrap();
        let sys = GinzburgLandau {
            kappa: rng.random_range(0.5..5.0),
            h0: rng.random_range(-2.0..8.0),
        };
        let u = random_gl_state(&grid, &mut rng);
        let e = evaluate_energy(&sys, &grid, &u).expect("finite").value;
        let f = free_energy(
            sys.kappa,
            sys.h0,
            &grid,
            &GLState::new(u).expect("4 fields"),
        )
        .expect("2D grid");
        worst = worst.max((e - f).abs() / e.abs());
    }
    worst
}

/// Worst error in `(θ, m)` recovered from exact power-law data.
pub fn measure_synthetic_monitor() -> f64 {
    let mut worst = 0.0f64;
    for (theta, m) in [(0.5, 1.0), (0.7, 3.0), (0.35, 0.2)] {
        let window: Vec<(f64, f64)> = (0..20)
            .map(|k| {
                let e = 0.8f64.powi(k);
                (e, m * e.powf(theta))
            })
            .collect();
        let est = lojasiewicz_monitor(&window, None);
        if !est.valid {
            return f64::INFINITY;
        }
        worst = worst
            .max((est.theta - theta).abs())
            .max((est.m - m).abs() / m);
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = (&'static str, fn(bool) -> (bool, String));

fn checks() -> Vec<Check> {
    vec![
        ("adjoint", |_| {
            let e = measure_adjoint();
            (e < 1e-12, format!("max rel err {e:.2e} (< 1e-12)"))
        }),
        ("gram_dense", |_| {
            let e = measure_gram();
            (e < 1e-12, format!("max rel gap {e:.2e} (< 1e-12)"))
        }),
        ("cg_dense", |_| {
            let e = measure_cg_vs_dense();
            (e < 1e-10, format!("rel gap {e:.2e} (< 1e-10)"))
        }),
        ("fd_jacobian_check", |fault| {
            let errs = measure_fd_jacobian(fault);
            let ok = errs.iter().all(|(_, e)| *e < 1e-6);
            let detail = errs
                .iter()
                .map(|(n, e)| format!("{n} {e:.2e}"))
                .collect::<Vec<_>>()
                .join(", ");
            (ok, format!("{detail} (< 1e-6)"))
        }),
        ("euclidean_gradient", |_| {
            let e = measure_euclidean_gradient(0);
            (e < 1e-6, format!("max rel err {e:.2e} (< 1e-6)"))
        }),
        ("lm_primal_dual", |_| {
            let gaps = measure_primal_dual(&[0.1, 1.0, 10.0]);
            let ok = gaps.iter().all(|(_, g)| *g < 1e-8);
            let detail = gaps
                .iter()
                .map(|(l, g)| format!("λ={l} {g:.2e}"))
                .collect::<Vec<_>>()
                .join(", ");
            (ok, format!("{detail} (< 1e-8)"))
        }),
        ("sobolev_limit", |_| {
            let e = measure_sobolev_limit(1e8);
            (e < 1e-4, format!("rel gap at λ=1e8 {e:.2e} (< 1e-4)"))
        }),
        ("energy_form", |_| {
            let e = measure_energy_form(50);
            (
                e < 1e-12,
                format!("max rel gap {e:.2e} over 50 states (< 1e-12)"),
            )
        }),
        ("lojasiewicz_synthetic", |_| {
            let e = measure_synthetic_monitor();
            (e < 1e-10, format!("max err {e:.2e} (< 1e-10)"))
        }),
    ]
}

pub fn check_names() -> Vec<&'static str> {
    checks().into_iter().map(|(n, _)| n).collect()
}

/// Runs every check whose name contains `filter`.
pub fn run_checks(filter: Option<&str>, inject_fault: bool) -> Vec<CheckResult> {
    checks()
        .into_iter()
        .filter(|(name, _)| filter.is_none_or(|f| name.contains(f)))
        .map(|(name, check)| {
            let start = Instant::now();
            let (passed, detail) = check(inject_fault);
            CheckResult {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    results
        .iter()
        .map(|r| {
            let status = if r.passed { "PASS" } else { "FAIL" };
            format!(
                "{status}  {:width$}  {:7.3}s  {}\n",
                r.name, r.seconds, r.detail
            )
        })
        .collect()
}
