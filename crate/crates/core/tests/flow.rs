use sgflow_core::ginzburg_landau::{gl_initialize, gl_system};
use sgflow_core::residual::{model_problem_exponential, model_problem_linear_poisson};
use sgflow_core::{
    run_flow, AcceptanceRule, DirectionKind, FlowConfig, GLConfig, Grid2D, NodalField,
    TerminationReason,
};

fn exp_error(nx: usize) -> f64 {
    let grid = Grid2D::line(nx, 1.0).unwrap();
    let u0 = NodalField::from_fn(&grid, 1, |_, _, _| 1.0);
    let trace = run_flow(
        &model_problem_exponential(),
        &grid,
        u0,
        &FlowConfig::default(),
    )
    .unwrap();
    assert_eq!(trace.termination, TerminationReason::GradientTolerance);
    assert!(trace.is_monotone());
    let u = trace.final_state.field(0);
    (0..nx)
        .map(|i| (u[i] - grid.node_position(i).0.exp()).abs())
        .fold(0.0, f64::max)
}

#[test]
fn exponential_problem_converges_at_second_order() {
    let errs: Vec<f64> = [17, 33, 65].iter().map(|&n| exp_error(n)).collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.0..=5.0).contains(&ratio), "errors {errs:?}");
    }
    assert!(errs[2] < 5e-3);
}

#[test]
fn poisson_reaches_zero_energy_with_square_root_exponent() {
    let grid = Grid2D::new(9, 9, 1.0, 1.0).unwrap();
    let sys = model_problem_linear_poisson(1.0, 0.5);
    let trace = run_flow(
        &sys,
        &grid,
        NodalField::zeros(&grid, 1),
        &FlowConfig::default(),
    )
    .unwrap();
    assert_eq!(trace.termination, TerminationReason::GradientTolerance);
    assert!(trace.final_energy < 1e-12);
    assert!(trace.is_monotone());
    let est = trace.lojasiewicz(20, None);
    assert!(est.valid, "{est:?}");
    assert!((0.4..=0.6).contains(&est.theta), "{est:?}");
}

#[test]
fn every_direction_kind_decreases_poisson_energy() {
    let grid = Grid2D::new(7, 7, 1.0, 1.0).unwrap();
    let sys = model_problem_linear_poisson(1.0, -0.5);
    for (kind, regularization) in [
        (DirectionKind::Sobolev, 0.0),
        (DirectionKind::LmPrimal, 0.0),
        (DirectionKind::LmDual, 0.0),
        (DirectionKind::GaussNewton, 1e-6),
        (DirectionKind::Euclidean, 0.0),
    ] {
        let cfg = FlowConfig {
            direction: kind,
            regularization,
            max_iterations: 200,
            ..FlowConfig::default()
        };
        let trace = run_flow(&sys, &grid, NodalField::zeros(&grid, 1), &cfg).unwrap();
        assert!(trace.is_monotone(), "{kind:?}");
        assert!(
            trace.final_energy < trace.records[0].energy_before,
            "{kind:?}"
        );
        for r in &trace.records {
            assert!(r.lambda >= cfg.lambda_floor && r.lambda <= cfg.lambda_ceiling);
        }
    }
}

#[test]
fn ratio_acceptance_is_monotone() {
    let grid = Grid2D::new(7, 7, 1.0, 1.0).unwrap();
    let sys = model_problem_linear_poisson(1.0, 0.5);
    let cfg = FlowConfig {
        acceptance: AcceptanceRule::Ratio { eta: 0.25 },
        ..FlowConfig::default()
    };
    let trace = run_flow(&sys, &grid, NodalField::zeros(&grid, 1), &cfg).unwrap();
    assert!(trace.is_monotone());
    assert!(trace.final_energy < 1e-12);
}

#[test]
fn small_gl_flow_is_monotone_and_deterministic() {
    let grid = Grid2D::new(12, 12, 4.0, 4.0).unwrap();
    let gl_cfg = GLConfig {
        h0: 6.0,
        seed: 3,
        ..GLConfig::default()
    };
    let sys = gl_system(&gl_cfg).unwrap();
    let flow_cfg = FlowConfig {
        max_iterations: 60,
        ..FlowConfig::default()
    };
    let run = || {
        let u0 = gl_initialize(&gl_cfg, &grid).unwrap().into_field();
        run_flow(&sys, &grid, u0, &flow_cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.is_monotone());
    assert!(a.accepted_count() > 0);
    assert_eq!(a.records, b.records);
    let bits = |t: &sgflow_core::FlowTrace| {
        t.final_state
            .values()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
}
