//! Descent directions for the least-squares energy.
//!
//! All directions follow the descent convention: the update is `u − δ`.
//!
//! With `g = Jᵀ W r` the coefficient gradient, `G` the Sobolev metric and
//! `N = Jᵀ W J` the Gauss-Newton matrix (penalty rows included):
//!
//! | kind          | δ                                   |
//! |---------------|-------------------------------------|
//! | Euclidean     | `g`                                 |
//! | Sobolev       | `G⁻¹ g`                             |
//! | LM (primal)   | `λ (λ G + N)⁻¹ g`                   |
//! | LM (dual)     | `G⁻¹ Jᵀ (W⁻¹ + λ⁻¹ J G⁻¹ Jᵀ)⁻¹ r`  |
//! | Gauss-Newton  | `(N + ρ G)⁻¹ g`                     |
//!
//! The LM direction is the gradient of `E` in the variable metric
//! `⟨v, w⟩_u = vᵀ G w + λ⁻¹ (J v)ᵀ W (J w)`, so one step of `u − δ` is a
//! forward Euler step of length 1 of that gradient flow.
//!
//! Convention note: here `λ` multiplies the metric term *and* the result.
//! The classical damped form `(N + μ G)⁻¹ g` is recovered with `μ = λ` and
//! `δ_classical = δ / λ`. Consequently a larger `λ` gives a *longer* step:
//! `λ → ∞` tends to the Sobolev gradient and `λ → 0` shrinks the step to zero.

use crate::grid::{assemble_sobolev_metric, Grid2D, NodalField};
use crate::residual::{
    evaluate_residual_and_jacobian, Linearization, ResidualError, ResidualSystem,
};
use crate::sparse::{
    cg_solve, pcg_solve, CgOptions, LinalgError, LinearOperator, Preconditioner, SolveReport,
    SparseCholesky, SparseOperator,
};
use thiserror::Error;

/// Positive lower bound on the damping parameter.
pub const DEFAULT_LAMBDA_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DirectionError {
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("damping λ = {lambda:e} is below the floor {floor:e}")]
    LambdaBelowFloor { lambda: f64, floor: f64 },
    #[error("regularization must be non-negative and finite, got {0}")]
    BadRegularization(f64),
    #[error("linear solve did not converge (relative residual {:e} after {} iterations)", .0.residual_norm, .0.iterations)]
    NotConverged(SolveReport),
    #[error(
        "Gauss-Newton matrix is singular ({0}); use a positive regularization or the LM direction"
    )]
    Singular(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DirectionKind {
    Euclidean,
    Sobolev,
    LmPrimal,
    LmDual,
    GaussNewton,
}

impl DirectionKind {
    pub fn uses_lambda(self) -> bool {
        matches!(self, Self::LmPrimal | Self::LmDual)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionRequest {
    pub kind: DirectionKind,
    pub lambda: f64,
    pub lambda_floor: f64,
    /// `ρ` for the Gauss-Newton kind.
    pub regularization: f64,
    pub solver: CgOptions,
}

impl DirectionRequest {
    pub fn new(kind: DirectionKind) -> Self {
        Self {
            kind,
            lambda: 1.0,
            lambda_floor: DEFAULT_LAMBDA_FLOOR,
            regularization: 0.0,
            solver: CgOptions::default(),
        }
    }

    pub fn lm(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::new(DirectionKind::LmPrimal)
        }
    }

    pub fn lm_dual(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::new(DirectionKind::LmDual)
        }
    }

    pub fn gauss_newton(regularization: f64) -> Self {
        Self {
            regularization,
            ..Self::new(DirectionKind::GaussNewton)
        }
    }

    pub fn with_solver(mut self, solver: CgOptions) -> Self {
        self.solver = solver;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionResult {
    pub direction: Vec<f64>,
    /// `gᵀ δ`, which equals `⟨δ, δ⟩` in the metric that produced `δ`.
    pub metric_norm_sq: f64,
    pub report: SolveReport,
}

impl DirectionResult {
    fn zero(n: usize) -> Self {
        Self {
            direction: vec![0.0; n],
            metric_norm_sq: 0.0,
            report: SolveReport::trivial(),
        }
    }

    pub fn metric_norm(&self) -> f64 {
        self.metric_norm_sq.max(0.0).sqrt()
    }
}

/// The Sobolev metric `G` together with its sparse Cholesky factor. `G` is
/// constant along a flow, so it is factored once and every `G⁻¹` application
/// is a pair of triangular solves. For the grid metric only the scalar block
/// is factored; all fields are solved together.
#[derive(Debug)]
pub struct SobolevMetric {
    op: SparseOperator,
    factor: SparseCholesky,
    blocks: usize,
}

impl SobolevMetric {
    pub fn new(grid: &Grid2D, field_count: usize) -> Self {
        let scalar = assemble_sobolev_metric(grid, 1);
        let factor = SparseCholesky::factor(&scalar).expect("Sobolev metric is SPD");
        Self {
            op: assemble_sobolev_metric(grid, field_count),
            factor,
            blocks: field_count,
        }
    }

    /// Metric from an arbitrary SPD operator (factored as a whole).
    pub fn from_operator(op: SparseOperator) -> Result<Self, LinalgError> {
        let factor = SparseCholesky::factor(&op)?;
        Ok(Self {
            op,
            factor,
            blocks: 1,
        })
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.op
    }

    pub fn factor(&self) -> &SparseCholesky {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.op.nrows()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.dim(), "right-hand side length");
        let nb = self.factor.dim();
        match self.blocks {
            1 => self.factor.solve_in_place(x),
            2 => solve_blocks::<2>(&self.factor, x, nb),
            4 => solve_blocks::<4>(&self.factor, x, nb),
            _ => {
                for chunk in x.chunks_mut(nb) {
                    self.factor.solve_in_place(chunk);
                }
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

fn solve_blocks<const R: usize>(factor: &SparseCholesky, x: &mut [f64], nb: usize) {
    let mut buf = vec![0.0; nb * R];
    for (k, chunk) in x.chunks(nb).enumerate() {
        for (i, v) in chunk.iter().enumerate() {
            buf[i * R + k] = *v;
        }
    }
    factor.solve_interleaved::<R>(&mut buf);
    for (k, chunk) in x.chunks_mut(nb).enumerate() {
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = buf[i * R + k];
        }
    }
}

/// `G⁻¹` as a preconditioner for `λG + N` and `N + ρG`.
struct MetricPreconditioner<'a>(&'a SobolevMetric);

impl Preconditioner for MetricPreconditioner<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        self.0.solve_in_place(z);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn solve<A: LinearOperator + ?Sized>(
    op: &A,
    metric: &SobolevMetric,
    rhs: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveReport), DirectionError> {
    let (x, report) = pcg_solve(op, rhs, &MetricPreconditioner(metric), opts)?;
    if !report.converged && !opts.accept_truncated {
        return Err(DirectionError::NotConverged(report));
    }
    Ok((x, report))
}

/// `metric_scale · G + Jᵀ W J`, applied matrix-free.
pub struct NormalOperator<'a> {
    metric: &'a SparseOperator,
    lin: &'a Linearization,
    metric_scale: f64,
}

impl<'a> NormalOperator<'a> {
    pub fn new(metric: &'a SparseOperator, lin: &'a Linearization, metric_scale: f64) -> Self {
        Self {
            metric,
            lin,
            metric_scale,
        }
    }
}

impl LinearOperator for NormalOperator<'_> {
    fn dim(&self) -> usize {
        self.metric.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let jac = &self.lin.jacobian;
        let mut jx = vec![0.0; jac.nrows()];
        jac.spmv_into(x, &mut jx);
        for (v, w) in jx.iter_mut().zip(&self.lin.weights) {
            *v *= w;
        }
        jac.spmv_transpose_into(&jx, y);
        if self.metric_scale != 0.0 {
            let mut gx = vec![0.0; x.len()];
            self.metric.spmv_into(x, &mut gx);
            for (yi, gi) in y.iter_mut().zip(&gx) {
                *yi += self.metric_scale * gi;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = self.lin.jacobian.weighted_column_norms(&self.lin.weights);
        for (di, gi) in d.iter_mut().zip(self.metric.diagonal()) {
            *di += self.metric_scale * gi;
        }
        d
    }
}

/// Capacitance operator `W⁻¹ + λ⁻¹ J G⁻¹ Jᵀ` on residual space. Each
/// application performs one `G` solve.
struct CapacitanceOperator<'a> {
    metric: &'a SobolevMetric,
    lin: &'a Linearization,
    inv_lambda: f64,
}

impl LinearOperator for CapacitanceOperator<'_> {
    fn dim(&self) -> usize {
        self.lin.jacobian.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let jac = &self.lin.jacobian;
        let mut jtx = vec![0.0; jac.ncols()];
        jac.spmv_transpose_into(x, &mut jtx);
        self.metric.solve_in_place(&mut jtx);
        jac.spmv_into(&jtx, y);
        for ((yi, xi), w) in y.iter_mut().zip(x).zip(&self.lin.weights) {
            *yi = xi / w + self.inv_lambda * *yi;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.lin.weights.iter().map(|w| 1.0 / w).collect()
    }
}

/// Sobolev gradient `G⁻¹ g`, by direct solve with the factored metric.
pub fn sobolev_direction(
    metric: &SobolevMetric,
    gradient: &[f64],
) -> Result<DirectionResult, DirectionError> {
    if gradient.len() != metric.dim() {
        return Err(LinalgError::Dimension {
            expected: metric.dim(),
            actual: gradient.len(),
        }
        .into());
    }
    let direction = metric.solve(gradient);
    let metric_norm_sq = dot(gradient, &direction);
    Ok(DirectionResult {
        direction,
        metric_norm_sq,
        report: SolveReport::trivial(),
    })
}

fn check_lambda(lambda: f64, floor: f64) -> Result<(), DirectionError> {
    if !(lambda.is_finite() && lambda >= floor) {
        return Err(DirectionError::LambdaBelowFloor { lambda, floor });
    }
    Ok(())
}

/// Generalized Levenberg-Marquardt step `λ (λ G + N)⁻¹ g`, by CG
/// preconditioned with `G⁻¹`. Since `N ≤ ‖∂F‖² G`, the iteration count does
/// not grow under grid refinement.
pub fn lm_primal(
    metric: &SobolevMetric,
    lin: &Linearization,
    gradient: &[f64],
    lambda: f64,
    opts: &CgOptions,
) -> Result<DirectionResult, DirectionError> {
    if gradient.iter().all(|&v| v == 0.0) {
        return Ok(DirectionResult::zero(gradient.len()));
    }
    let op = NormalOperator::new(metric.operator(), lin, lambda);
    let rhs: Vec<f64> = gradient.iter().map(|g| lambda * g).collect();
    let (direction, report) = solve(&op, metric, &rhs, opts)?;
    let metric_norm_sq = dot(gradient, &direction);
    Ok(DirectionResult {
        direction,
        metric_norm_sq,
        report,
    })
}

/// The same step through the residual-space (projection) form
/// `G⁻¹ Jᵀ (W⁻¹ + λ⁻¹ J G⁻¹ Jᵀ)⁻¹ r`. The capacitance system is solved by
/// Jacobi CG; each of its applications uses the factored metric.
pub fn lm_dual(
    metric: &SobolevMetric,
    lin: &Linearization,
    lambda: f64,
    opts: &CgOptions,
) -> Result<DirectionResult, DirectionError> {
    let n = lin.jacobian.ncols();
    if lin.residual.iter().all(|&v| v == 0.0) {
        return Ok(DirectionResult::zero(n));
    }
    let cap = CapacitanceOperator {
        metric,
        lin,
        inv_lambda: 1.0 / lambda,
    };
    let (y, report) = cg_solve(&cap, &lin.residual, opts)?;
    if !report.converged && !opts.accept_truncated {
        return Err(DirectionError::NotConverged(report));
    }
    let mut jty = vec![0.0; n];
    lin.jacobian.spmv_transpose_into(&y, &mut jty);
    let direction = metric.solve(&jty);
    let metric_norm_sq = dot(&lin.gradient(), &direction);
    Ok(DirectionResult {
        direction,
        metric_norm_sq,
        report,
    })
}

/// Upper bound on `rank(J)`: cell rows cannot see the checkerboard kernel of
/// the 2D jet operator, penalty rows add at most one rank each.
fn jacobian_rank_bound(lin: &Linearization, grid: &Grid2D, field_count: usize) -> usize {
    let n = lin.jacobian.ncols();
    let kernel = if grid.is_1d() { 0 } else { field_count };
    let penalty_rows = lin.jacobian.nrows() - lin.cell_rows;
    (lin.cell_rows.min(n - kernel) + penalty_rows).min(n)
}

/// Gauss-Newton direction `(N + ρ G)⁻¹ g`. With `ρ = 0` the matrix must be
/// nonsingular; structural rank deficiency, indefinite curvature or a
/// stalled solve are reported as [`DirectionError::Singular`].
pub fn gauss_newton(
    metric: &SobolevMetric,
    lin: &Linearization,
    grid: &Grid2D,
    field_count: usize,
    gradient: &[f64],
    regularization: f64,
    opts: &CgOptions,
) -> Result<DirectionResult, DirectionError> {
    if !(regularization.is_finite() && regularization >= 0.0) {
        return Err(DirectionError::BadRegularization(regularization));
    }
    if gradient.iter().all(|&v| v == 0.0) {
        return Ok(DirectionResult::zero(gradient.len()));
    }
    if regularization == 0.0 {
        let n = gradient.len();
        let bound = jacobian_rank_bound(lin, grid, field_count);
        if bound < n {
            return Err(DirectionError::Singular(format!(
                "rank(JᵀWJ) ≤ {bound} < {n} unknowns"
            )));
        }
    }
    let op = NormalOperator::new(metric.operator(), lin, regularization);
    match solve(&op, metric, gradient, opts) {
        Ok((direction, report)) => {
            let metric_norm_sq = dot(gradient, &direction);
            Ok(DirectionResult {
                direction,
                metric_norm_sq,
                report,
            })
        }
        Err(
            DirectionError::Linalg(LinalgError::NotPositiveDefinite { .. })
            | DirectionError::NotConverged(_),
        ) if regularization == 0.0 => Err(DirectionError::Singular(
            "conjugate gradients broke down".into(),
        )),
        Err(e) => Err(e),
    }
}

/// Dispatches on `req.kind` given a precomputed linearization and metric.
pub fn compute_direction(
    req: &DirectionRequest,
    metric: &SobolevMetric,
    lin: &Linearization,
    grid: &Grid2D,
    field_count: usize,
) -> Result<DirectionResult, DirectionError> {
    if req.kind.uses_lambda() {
        check_lambda(req.lambda, req.lambda_floor)?;
    }
    match req.kind {
        DirectionKind::Euclidean => {
            let g = lin.gradient();
            let metric_norm_sq = dot(&g, &g);
            Ok(DirectionResult {
                direction: g,
                metric_norm_sq,
                report: SolveReport::trivial(),
            })
        }
        DirectionKind::Sobolev => sobolev_direction(metric, &lin.gradient()),
        DirectionKind::LmPrimal => lm_primal(metric, lin, &lin.gradient(), req.lambda, &req.solver),
        DirectionKind::LmDual => lm_dual(metric, lin, req.lambda, &req.solver),
        DirectionKind::GaussNewton => gauss_newton(
            metric,
            lin,
            grid,
            field_count,
            &lin.gradient(),
            req.regularization,
            &req.solver,
        ),
    }
}

/// Assembles everything needed for one direction and computes it.
pub fn direction<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
    req: &DirectionRequest,
) -> Result<DirectionResult, DirectionError> {
    sys.check_grid(grid)?;
    let lin = evaluate_residual_and_jacobian(sys, grid, u)?;
    let metric = SobolevMetric::new(grid, sys.field_count());
    compute_direction(req, &metric, &lin, grid, sys.field_count())
}

/// Coefficient gradient `∂E/∂u = Jᵀ W r` as a nodal field.
pub fn euclidean_gradient<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
) -> Result<NodalField, DirectionError> {
    let lin = evaluate_residual_and_jacobian(sys, grid, u)?;
    Ok(
        NodalField::from_values(grid, sys.field_count(), lin.gradient())
            .map_err(ResidualError::from)?,
    )
}

pub fn sobolev_gradient<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
) -> Result<DirectionResult, DirectionError> {
    direction(sys, grid, u, &DirectionRequest::new(DirectionKind::Sobolev))
}

pub fn lm_direction_primal<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
    lambda: f64,
) -> Result<DirectionResult, DirectionError> {
    direction(sys, grid, u, &DirectionRequest::lm(lambda))
}

pub fn lm_direction_dual<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
    lambda: f64,
) -> Result<DirectionResult, DirectionError> {
    direction(sys, grid, u, &DirectionRequest::lm_dual(lambda))
}

pub fn gauss_newton_direction<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
    regularization: f64,
) -> Result<DirectionResult, DirectionError> {
    direction(
        sys,
        grid,
        u,
        &DirectionRequest::gauss_newton(regularization),
    )
}
