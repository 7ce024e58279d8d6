//! Discrete descent flow with accept/reject damping control.
//!
//! Each step moves along the direction `δ_λ` of [`crate::directions`] with
//! the forward Euler time step `τ = 1/λ`:
//!
//! `u⁺ = u − δ_λ / λ = u − (λ G + N)⁻¹ g`
//!
//! which is the Levenberg-Marquardt update with the Sobolev metric as damping
//! matrix. An accepted step multiplies `λ` by `decrease` (longer, more
//! Gauss-Newton-like steps); a rejected one multiplies it by `increase`
//! (shorter, more Sobolev-like steps). Directions without `λ` use
//! `τ = min(1, 1/λ)`. `λ` always stays in `[lambda_floor, lambda_ceiling]`.
//!
//! Stopping and the gradient-inequality monitor use the Sobolev norm of the
//! gradient, `‖∇E‖ = (gᵀ G⁻¹ g)^½`, which does not depend on `λ`.

use crate::directions::{
    compute_direction, DirectionError, DirectionKind, DirectionRequest, DirectionResult,
    SobolevMetric, DEFAULT_LAMBDA_FLOOR,
};
use crate::grid::{Grid2D, NodalField};
use crate::residual::{
    evaluate_energy, evaluate_residual_and_jacobian, Linearization, ResidualError, ResidualSystem,
};
use crate::sparse::CgOptions;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("invalid flow configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error(transparent)]
    Direction(#[from] DirectionError),
    #[error("stagnated: step rejected at the damping ceiling λ = {lambda:e}")]
    Stagnation { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcceptanceRule {
    /// Accept whenever the energy strictly decreases.
    Decrease,
    /// Additionally require `actual / predicted ≥ eta`, with the prediction
    /// taken from the local Gauss-Newton model.
    Ratio { eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub direction: DirectionKind,
    pub lambda0: f64,
    /// Factor applied to `λ` after a rejected step (> 1).
    pub increase: f64,
    /// Factor applied to `λ` after an accepted step (in (0, 1)).
    pub decrease: f64,
    pub lambda_floor: f64,
    pub lambda_ceiling: f64,
    pub max_iterations: usize,
    /// Stop when the Sobolev gradient norm falls below this fraction of its
    /// initial value.
    pub grad_tol: f64,
    /// Absolute floor for the same test.
    pub grad_abs_tol: f64,
    /// Stop when the energy decreased by at most `stall_tol·E` over the last
    /// `stall_window` iterations.
    pub stall_tol: f64,
    pub stall_window: usize,
    /// Accepted iterates used for the gradient-inequality fit.
    pub monitor_window: usize,
    /// Reference energy subtracted before the fit (local-minimum variant).
    pub monitor_offset: Option<f64>,
    pub acceptance: AcceptanceRule,
    /// `ρ` for Gauss-Newton directions.
    pub regularization: f64,
    pub solver: CgOptions,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            direction: DirectionKind::LmPrimal,
            lambda0: 1.0,
            increase: 2.0,
            decrease: 0.5,
            lambda_floor: DEFAULT_LAMBDA_FLOOR,
            lambda_ceiling: 1e10,
            max_iterations: 5000,
            grad_tol: 1e-8,
            grad_abs_tol: 1e-12,
            stall_tol: 1e-12,
            stall_window: 20,
            monitor_window: 20,
            monitor_offset: None,
            acceptance: AcceptanceRule::Decrease,
            regularization: 0.0,
            solver: CgOptions::truncated(1e-8, 100),
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::Config(m.into()));
        if !(self.decrease > 0.0 && self.decrease < 1.0) {
            return bad("decrease factor must lie in (0, 1)");
        }
        if !(self.increase > 1.0 && self.increase.is_finite()) {
            return bad("increase factor must exceed 1");
        }
        if !(self.lambda_floor > 0.0
            && self.lambda_floor <= self.lambda_ceiling
            && self.lambda_ceiling.is_finite())
        {
            return bad("need 0 < lambda_floor ≤ lambda_ceiling < ∞");
        }
        if !(self.lambda0 >= self.lambda_floor && self.lambda0 <= self.lambda_ceiling) {
            return bad("lambda0 must lie in [lambda_floor, lambda_ceiling]");
        }
        if !(self.grad_tol >= 0.0 && self.grad_abs_tol >= 0.0 && self.stall_tol >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        if self.stall_window == 0 {
            return bad("stall window must be positive");
        }
        if self.solver.tol.is_nan() || self.solver.tol <= 0.0 {
            return bad("linear solver tolerance must be positive");
        }
        if let AcceptanceRule::Ratio { eta } = self.acceptance {
            if !(0.0..1.0).contains(&eta) {
                return bad("ratio threshold must lie in [0, 1)");
            }
        }
        Ok(())
    }
}

/// Current iterate plus the cached linearization at it.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub u: NodalField,
    pub lambda: f64,
    pub energy: f64,
    pub iteration: usize,
    cache: Option<Cached>,
}

#[derive(Debug, Clone)]
struct Cached {
    lin: Linearization,
    gradient: Vec<f64>,
    euclid_norm: f64,
    metric_norm: f64,
}

impl FlowState {
    fn invalidate(&mut self) {
        self.cache = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    /// Energy of the iterate the direction was computed at.
    pub energy_before: f64,
    /// Energy after the accept/reject decision.
    pub energy: f64,
    /// Energy of the trial point; `+∞` if it diverged.
    pub trial_energy: f64,
    /// Euclidean norm of the coefficient gradient.
    pub grad_norm: f64,
    /// Sobolev norm of the gradient, `(gᵀ G⁻¹ g)^½`.
    pub metric_norm: f64,
    /// `(gᵀ δ)^½`, the norm of `δ` in the metric that produced it.
    pub direction_norm: f64,
    /// Damping used for this step.
    pub lambda: f64,
    pub time_step: f64,
    pub accepted: bool,
    pub cg_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TerminationReason {
    GradientTolerance,
    EnergyStall,
    MaxIterations,
    Stagnation,
    /// A numerical error stopped the run.
    Failed(String),
}

impl TerminationReason {
    pub fn label(&self) -> &'static str {
        match self {
            Self::GradientTolerance => "gradient-tolerance",
            Self::EnergyStall => "energy-stall",
            Self::MaxIterations => "max-iterations",
            Self::Stagnation => "stagnation",
            Self::Failed(_) => "failed",
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Self::Failed(_))
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Failed(msg) => write!(f, "failed: {msg}"),
            other => f.write_str(other.label()),
        }
    }
}

/// Empirical gradient-inequality fit `‖∇E‖ ≈ m·E^θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LojasiewiczEstimate {
    pub theta: f64,
    pub m: f64,
    pub points: usize,
    pub valid: bool,
}

impl LojasiewiczEstimate {
    fn invalid(points: usize) -> Self {
        Self {
            theta: 0.0,
            m: 0.0,
            points,
            valid: false,
        }
    }
}

/// Energies at or below this level are treated as rounding noise by the
/// monitor.
pub const MONITOR_ENERGY_FLOOR: f64 = 1e-14;

/// Least-squares fit of `log ‖∇E‖ = log m + θ log(E − offset)` over a window
/// of `(E, ‖∇E‖)` pairs. Points with `E − offset ≤ 1e-14` or a vanishing
/// gradient are dropped; fewer than five remaining points, or no spread in
/// energy, yield an invalid estimate.
pub fn lojasiewicz_monitor(window: &[(f64, f64)], offset: Option<f64>) -> LojasiewiczEstimate {
    let off = offset.unwrap_or(0.0);
    let pts: Vec<(f64, f64)> = window
        .iter()
        .filter_map(|&(e, g)| {
            let e = e - off;
            (e > MONITOR_ENERGY_FLOOR && g > 0.0 && e.is_finite() && g.is_finite())
                .then(|| (e.ln(), g.ln()))
        })
        .collect();
    let n = pts.len();
    if n < 5 {
        return LojasiewiczEstimate::invalid(n);
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 1e-20 * nf {
        return LojasiewiczEstimate::invalid(n);
    }
    let theta = sxy / sxx;
    let m = (my - theta * mx).exp();
    if !(theta.is_finite() && m.is_finite()) {
        return LojasiewiczEstimate::invalid(n);
    }
    LojasiewiczEstimate {
        theta,
        m,
        points: n,
        valid: true,
    }
}

#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub records: Vec<StepRecord>,
    pub final_state: NodalField,
    pub final_energy: f64,
    pub final_lambda: f64,
    pub initial_metric_norm: f64,
    pub final_metric_norm: f64,
    pub termination: TerminationReason,
    pub monitor: LojasiewiczEstimate,
}

impl FlowTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| r.accepted)
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted().count()
    }

    /// True when every accepted step strictly lowered the energy.
    pub fn is_monotone(&self) -> bool {
        let mut prev = f64::INFINITY;
        for r in self.accepted() {
            if !(r.energy < r.energy_before && r.energy < prev) {
                return false;
            }
            prev = r.energy;
        }
        true
    }

    /// Gradient-inequality fit over the trailing `window` accepted iterates.
    pub fn lojasiewicz(&self, window: usize, offset: Option<f64>) -> LojasiewiczEstimate {
        let pairs: Vec<(f64, f64)> = self
            .accepted()
            .map(|r| (r.energy_before, r.metric_norm))
            .filter(|&(e, _)| e - offset.unwrap_or(0.0) > MONITOR_ENERGY_FLOOR)
            .collect();
        let start = pairs.len().saturating_sub(window);
        lojasiewicz_monitor(&pairs[start..], offset)
    }
}

/// A descent flow bound to one system, grid and configuration. The Sobolev
/// metric is assembled and factored once at construction.
pub struct Flow<'a, S: ResidualSystem + ?Sized> {
    sys: &'a S,
    grid: Grid2D,
    metric: SobolevMetric,
    config: FlowConfig,
}

impl<'a, S: ResidualSystem + ?Sized> Flow<'a, S> {
    pub fn new(sys: &'a S, grid: &Grid2D, config: FlowConfig) -> Result<Self, FlowError> {
        config.validate()?;
        sys.check_grid(grid)?;
        let metric = SobolevMetric::new(grid, sys.field_count());
        Ok(Self {
            sys,
            grid: *grid,
            metric,
            config,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn metric(&self) -> &SobolevMetric {
        &self.metric
    }

    pub fn initial_state(&self, u0: NodalField) -> Result<FlowState, FlowError> {
        let energy = evaluate_energy(self.sys, &self.grid, &u0)?.value;
        Ok(FlowState {
            u: u0,
            lambda: self.config.lambda0,
            energy,
            iteration: 0,
            cache: None,
        })
    }

    fn ensure_linearization<'s>(&self, state: &'s mut FlowState) -> Result<&'s Cached, FlowError> {
        if state.cache.is_none() {
            let lin = evaluate_residual_and_jacobian(self.sys, &self.grid, &state.u)?;
            let gradient = lin.gradient();
            let euclid_norm = gradient.iter().map(|v| v * v).sum::<f64>().sqrt();
            let sg = self.metric.solve(&gradient);
            let metric_norm = gradient
                .iter()
                .zip(&sg)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .max(0.0)
                .sqrt();
            state.cache = Some(Cached {
                lin,
                gradient,
                euclid_norm,
                metric_norm,
            });
        }
        Ok(state.cache.as_ref().expect("just filled"))
    }

    /// Sobolev norm of the gradient at the current iterate.
    pub fn gradient_norm(&self, state: &mut FlowState) -> Result<f64, FlowError> {
        Ok(self.ensure_linearization(state)?.metric_norm)
    }

    fn request(&self, lambda: f64) -> DirectionRequest {
        DirectionRequest {
            kind: self.config.direction,
            lambda,
            lambda_floor: self.config.lambda_floor,
            regularization: self.config.regularization,
            solver: self.config.solver,
        }
    }

    /// Forward Euler time step used with damping `lambda`.
    pub fn time_step(&self, lambda: f64) -> f64 {
        if self.config.direction.uses_lambda() {
            1.0 / lambda
        } else {
            (1.0 / lambda).min(1.0)
        }
    }

    /// Direction at the current iterate and damping.
    pub fn direction(&self, state: &mut FlowState) -> Result<DirectionResult, FlowError> {
        let req = self.request(state.lambda);
        let cached = self.ensure_linearization(state)?;
        Ok(compute_direction(
            &req,
            &self.metric,
            &cached.lin,
            &self.grid,
            self.sys.field_count(),
        )?)
    }

    /// Trial step `u − τ δ` with accept/reject and damping update.
    pub fn advance(
        &self,
        state: &mut FlowState,
        dir: &DirectionResult,
    ) -> Result<StepRecord, FlowError> {
        let lambda = state.lambda;
        let tau = self.time_step(lambda);
        let cached = self.ensure_linearization(state)?;
        let (grad_norm, metric_norm) = (cached.euclid_norm, cached.metric_norm);
        let predicted = match self.config.acceptance {
            AcceptanceRule::Decrease => 0.0,
            AcceptanceRule::Ratio { .. } => {
                let gd: f64 = cached
                    .gradient
                    .iter()
                    .zip(&dir.direction)
                    .map(|(a, b)| a * b)
                    .sum();
                tau * gd - 0.5 * tau * tau * cached.lin.normal_form(&dir.direction)
            }
        };

        let mut trial = state.u.clone();
        for (t, d) in trial.values_mut().iter_mut().zip(&dir.direction) {
            *t -= tau * d;
        }
        let trial_energy = match evaluate_energy(self.sys, &self.grid, &trial) {
            Ok(e) => e.value,
            Err(ResidualError::Diverged { .. } | ResidualError::DivergedPenalty { .. }) => {
                f64::INFINITY
            }
            Err(e) => return Err(e.into()),
        };
        let energy_before = state.energy;
        let decreased = trial_energy < energy_before;
        let accepted = match self.config.acceptance {
            AcceptanceRule::Decrease => decreased,
            AcceptanceRule::Ratio { eta } => {
                decreased && predicted > 0.0 && (energy_before - trial_energy) / predicted >= eta
            }
        };

        state.iteration += 1;
        if accepted {
            state.u = trial;
            state.energy = trial_energy;
            state.invalidate();
            state.lambda = (lambda * self.config.decrease).max(self.config.lambda_floor);
        } else {
            if lambda >= self.config.lambda_ceiling {
                return Err(FlowError::Stagnation { lambda });
            }
            state.lambda = (lambda * self.config.increase).min(self.config.lambda_ceiling);
        }
        Ok(StepRecord {
            iteration: state.iteration,
            energy_before,
            energy: state.energy,
            trial_energy,
            grad_norm,
            metric_norm,
            direction_norm: dir.metric_norm(),
            lambda,
            time_step: tau,
            accepted,
            cg_iterations: dir.report.iterations,
        })
    }

    pub fn step(&self, state: &mut FlowState) -> Result<StepRecord, FlowError> {
        let dir = self.direction(state)?;
        self.advance(state, &dir)
    }

    /// Like [`Flow::step`], but lets the caller alter the direction first.
    pub fn step_with(
        &self,
        state: &mut FlowState,
        tweak: impl FnOnce(&mut DirectionResult),
    ) -> Result<StepRecord, FlowError> {
        let mut dir = self.direction(state)?;
        tweak(&mut dir);
        self.advance(state, &dir)
    }

    /// Iterates until the metric gradient norm, an energy stall, the
    /// iteration budget or stagnation ends the run. Errors after the initial
    /// energy evaluation end the run with [`TerminationReason::Failed`].
    pub fn run(&self, u0: NodalField) -> Result<FlowTrace, FlowError> {
        let mut state = self.initial_state(u0)?;
        let cfg = &self.config;
        let mut records: Vec<StepRecord> = Vec::new();
        let mut initial_norm: Option<f64> = None;
        let mut last_norm = f64::NAN;

        let termination = loop {
            if records.len() >= cfg.max_iterations {
                break TerminationReason::MaxIterations;
            }
            let norm = match self.gradient_norm(&mut state) {
                Ok(n) => n,
                Err(e) => break TerminationReason::Failed(e.to_string()),
            };
            last_norm = norm;
            let reference = *initial_norm.get_or_insert(norm);
            if norm <= cfg.grad_tol * reference || norm <= cfg.grad_abs_tol {
                break TerminationReason::GradientTolerance;
            }
            let dir = match self.direction(&mut state) {
                Ok(d) => d,
                Err(e) => break TerminationReason::Failed(e.to_string()),
            };
            match self.advance(&mut state, &dir) {
                Ok(rec) => records.push(rec),
                Err(FlowError::Stagnation { .. }) => break TerminationReason::Stagnation,
                Err(e) => break TerminationReason::Failed(e.to_string()),
            }
            if records.len() >= cfg.stall_window {
                let old = records[records.len() - cfg.stall_window].energy_before;
                let now = state.energy;
                if old - now <= cfg.stall_tol * now.abs() {
                    break TerminationReason::EnergyStall;
                }
            }
        };

        let mut trace = FlowTrace {
            records,
            final_energy: state.energy,
            final_lambda: state.lambda,
            final_state: state.u,
            initial_metric_norm: initial_norm.unwrap_or(f64::NAN),
            final_metric_norm: last_norm,
            termination,
            monitor: LojasiewiczEstimate::invalid(0),
        };
        trace.monitor = trace.lojasiewicz(cfg.monitor_window, cfg.monitor_offset);
        Ok(trace)
    }
}

pub fn run_flow<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u0: NodalField,
    config: &FlowConfig,
) -> Result<FlowTrace, FlowError> {
    Flow::new(sys, grid, *config)?.run(u0)
}
