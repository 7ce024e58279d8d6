//! Pointwise (Nemytskii-type) residual systems acting on cell jets, the
//! discrete least-squares energy, and Jacobian assembly.
//!
//! A system supplies `F(jet) ∈ ℝᵐ` and its partials with respect to every
//! jet entry of one cell. The discrete energy is
//!
//! ```text
//! E(u) = ½ Σ_cells w ‖F((Du)_cell)‖² + ½ Σ_penalties ω (u_node − target)²
//! ```
//!
//! and the assembled Jacobian is `J = blockdiag(F') · D`, with penalty rows
//! appended after the cell rows.

use crate::grid::{Grid2D, GridError, NodalField};
use crate::sparse::SparseOperator;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResidualError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("non-finite residual at cell {cell}")]
    Diverged { cell: usize },
    #[error("non-finite boundary penalty at node {node} of field {field}")]
    DivergedPenalty { field: usize, node: usize },
    #[error("field count mismatch: system expects {expected}, state has {actual}")]
    FieldCount { expected: usize, actual: usize },
    #[error("system `{system}` does not support this grid: {reason}")]
    UnsupportedGrid { system: String, reason: String },
}

/// Jet component selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JetComponent {
    Value = 0,
    Dx = 1,
    Dy = 2,
}

/// Read-only view of one cell's jets for all fields.
#[derive(Debug, Clone, Copy)]
pub struct CellJet<'a> {
    data: &'a [f64],
    jet_size: usize,
}

impl<'a> CellJet<'a> {
    pub fn new(data: &'a [f64], jet_size: usize) -> Self {
        Self { data, jet_size }
    }

    #[inline]
    pub fn value(&self, field: usize) -> f64 {
        self.data[field * self.jet_size]
    }

    #[inline]
    pub fn dx(&self, field: usize) -> f64 {
        self.data[field * self.jet_size + 1]
    }

    /// `∂y` of `field`; zero on 1D grids.
    #[inline]
    pub fn dy(&self, field: usize) -> f64 {
        if self.jet_size > 2 {
            self.data[field * self.jet_size + 2]
        } else {
            0.0
        }
    }

    pub fn raw(&self) -> &[f64] {
        self.data
    }

    pub fn jet_size(&self) -> usize {
        self.jet_size
    }
}

/// Row-major `m × (field_count·jet_size)` block of pointwise partials.
#[derive(Debug)]
pub struct JacobianBlock<'a> {
    data: &'a mut [f64],
    cols: usize,
    jet_size: usize,
}

impl<'a> JacobianBlock<'a> {
    pub fn new(data: &'a mut [f64], cols: usize, jet_size: usize) -> Self {
        Self {
            data,
            cols,
            jet_size,
        }
    }

    #[inline]
    pub fn set(&mut self, row: usize, field: usize, comp: JetComponent, value: f64) {
        let k = comp as usize;
        debug_assert!(k < self.jet_size, "component not present on this grid");
        self.data[row * self.cols + field * self.jet_size + k] = value;
    }

    pub fn raw(&self) -> &[f64] {
        self.data
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        self.data
    }
}

/// Weighted least-squares pin `½ ω (u[field][node] − target)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    pub field: usize,
    pub node: usize,
    pub target: f64,
    pub weight: f64,
}

/// Residual `F` acting pointwise on jets.
///
/// `jacobian` receives a zeroed block and only has to fill nonzero partials.
pub trait ResidualSystem: Sync {
    fn name(&self) -> &str;

    fn field_count(&self) -> usize;

    /// Number of residual components `m` per cell.
    fn residual_dim(&self) -> usize;

    fn residual(&self, jet: &CellJet, out: &mut [f64]);

    fn jacobian(&self, jet: &CellJet, out: &mut JacobianBlock);

    fn penalties(&self, _grid: &Grid2D) -> Vec<Penalty> {
        Vec::new()
    }

    /// Rejects grids the system cannot be posed on.
    fn check_grid(&self, _grid: &Grid2D) -> Result<(), ResidualError> {
        Ok(())
    }
}

impl<S: ResidualSystem + ?Sized> ResidualSystem for &S {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn field_count(&self) -> usize {
        (**self).field_count()
    }
    fn residual_dim(&self) -> usize {
        (**self).residual_dim()
    }
    fn residual(&self, jet: &CellJet, out: &mut [f64]) {
        (**self).residual(jet, out)
    }
    fn jacobian(&self, jet: &CellJet, out: &mut JacobianBlock) {
        (**self).jacobian(jet, out)
    }
    fn penalties(&self, grid: &Grid2D) -> Vec<Penalty> {
        (**self).penalties(grid)
    }
    fn check_grid(&self, grid: &Grid2D) -> Result<(), ResidualError> {
        (**self).check_grid(grid)
    }
}

fn check_inputs<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
) -> Result<(), ResidualError> {
    sys.check_grid(grid)?;
    u.check_grid(grid)?;
    if u.field_count() != sys.field_count() {
        return Err(ResidualError::FieldCount {
            expected: sys.field_count(),
            actual: u.field_count(),
        });
    }
    Ok(())
}

/// Fills `jets` with the jets of all fields on `cell`.
#[inline]
pub(crate) fn cell_jets(
    grid: &Grid2D,
    u: &NodalField,
    cell: usize,
    jets: &mut [f64],
) -> [usize; 4] {
    let stencil = grid.stencil();
    let corners = grid.cell_corners(cell);
    let js = stencil.jet_size;
    for field in 0..u.field_count() {
        let cv = u.corner_values(field, &corners, stencil.corners);
        stencil.apply(&cv, &mut jets[field * js..(field + 1) * js]);
    }
    corners
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyValue {
    pub value: f64,
    /// Per-cell `‖F‖`, when requested.
    pub cell_breakdown: Option<Vec<f64>>,
}

fn energy_impl<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
    breakdown: bool,
) -> Result<EnergyValue, ResidualError> {
    check_inputs(sys, grid, u)?;
    let m = sys.residual_dim();
    let js = grid.jet_size();
    let w = grid.cell_weight();
    let mut jets = vec![0.0; sys.field_count() * js];
    let mut f = vec![0.0; m];
    let mut cells = breakdown.then(|| Vec::with_capacity(grid.cell_count()));
    let mut sum = 0.0;
    for cell in 0..grid.cell_count() {
        cell_jets(grid, u, cell, &mut jets);
        sys.residual(&CellJet::new(&jets, js), &mut f);
        let sq: f64 = f.iter().map(|v| v * v).sum();
        if !sq.is_finite() {
            return Err(ResidualError::Diverged { cell });
        }
        if let Some(c) = cells.as_mut() {
            c.push(sq.sqrt());
        }
        sum += w * sq;
    }
    for p in sys.penalties(grid) {
        let d = u.field(p.field)[p.node] - p.target;
        let t = p.weight * d * d;
        if !t.is_finite() {
            return Err(ResidualError::DivergedPenalty {
                field: p.field,
                node: p.node,
            });
        }
        sum += t;
    }
    Ok(EnergyValue {
        value: 0.5 * sum,
        cell_breakdown: cells,
    })
}

pub fn evaluate_energy<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
) -> Result<EnergyValue, ResidualError> {
    energy_impl(sys, grid, u, false)
}

pub fn evaluate_energy_with_breakdown<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
) -> Result<EnergyValue, ResidualError> {
    energy_impl(sys, grid, u, true)
}

/// Stacked unweighted residual: cell rows (`cell·m + k`) then penalty rows.
pub fn evaluate_residual<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
) -> Result<Vec<f64>, ResidualError> {
    check_inputs(sys, grid, u)?;
    let m = sys.residual_dim();
    let js = grid.jet_size();
    let penalties = sys.penalties(grid);
    let mut jets = vec![0.0; sys.field_count() * js];
    let mut out = vec![0.0; grid.cell_count() * m + penalties.len()];
    for cell in 0..grid.cell_count() {
        cell_jets(grid, u, cell, &mut jets);
        let slot = &mut out[cell * m..(cell + 1) * m];
        sys.residual(&CellJet::new(&jets, js), slot);
        if slot.iter().any(|v| !v.is_finite()) {
            return Err(ResidualError::Diverged { cell });
        }
    }
    let base = grid.cell_count() * m;
    for (k, p) in penalties.iter().enumerate() {
        out[base + k] = u.field(p.field)[p.node] - p.target;
    }
    Ok(out)
}

/// Residual, weights and Jacobian at one state: the local least-squares
/// model `½ (r + J h)ᵀ W (r + J h)`.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub residual: Vec<f64>,
    pub weights: Vec<f64>,
    pub jacobian: SparseOperator,
    pub energy: f64,
    pub cell_rows: usize,
}

impl Linearization {
    /// Coefficient gradient `Jᵀ W r`.
    pub fn gradient(&self) -> Vec<f64> {
        let wr: Vec<f64> = self
            .residual
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| r * w)
            .collect();
        let mut g = vec![0.0; self.jacobian.ncols()];
        self.jacobian.spmv_transpose_into(&wr, &mut g);
        g
    }

    /// `(J h)ᵀ W (J h)`.
    pub fn normal_form(&self, h: &[f64]) -> f64 {
        let jh = self.jacobian.spmv(h).expect("dimension checked by caller");
        jh.iter().zip(&self.weights).map(|(v, w)| w * v * v).sum()
    }

    /// `⟨J h, r⟩_W`: the directional derivative `E'(u) h`.
    pub fn directional_derivative(&self, h: &[f64]) -> f64 {
        let jh = self.jacobian.spmv(h).expect("dimension checked by caller");
        jh.iter()
            .zip(&self.residual)
            .zip(&self.weights)
            .map(|((a, b), w)| w * a * b)
            .sum()
    }
}

/// Assembles the stacked residual `r` and sparse Jacobian `J` so that
/// `E'(u) h = ⟨J h, r⟩_W` for every nodal perturbation `h`.
pub fn evaluate_residual_and_jacobian<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
) -> Result<Linearization, ResidualError> {
    check_inputs(sys, grid, u)?;
    let stencil = grid.stencil();
    let fc = sys.field_count();
    let m = sys.residual_dim();
    let js = stencil.jet_size;
    let nc = stencil.corners;
    let n = grid.node_count();
    let w = grid.cell_weight();
    let penalties = sys.penalties(grid);
    let cell_rows = grid.cell_count() * m;
    let nrows = cell_rows + penalties.len();
    let row_nnz = fc * nc;

    let mut residual = vec![0.0; nrows];
    let mut offsets = Vec::with_capacity(nrows + 1);
    let mut cols = Vec::with_capacity(cell_rows * row_nnz + penalties.len());
    let mut vals = Vec::with_capacity(cell_rows * row_nnz + penalties.len());
    offsets.push(0);

    let mut jets = vec![0.0; fc * js];
    let mut local = vec![0.0; m * fc * js];
    let mut energy = 0.0;
    for cell in 0..grid.cell_count() {
        let corners = cell_jets(grid, u, cell, &mut jets);
        let jet = CellJet::new(&jets, js);
        let slot = &mut residual[cell * m..(cell + 1) * m];
        sys.residual(&jet, slot);
        let sq: f64 = slot.iter().map(|v| v * v).sum();
        if !sq.is_finite() {
            return Err(ResidualError::Diverged { cell });
        }
        energy += w * sq;
        local.iter_mut().for_each(|v| *v = 0.0);
        sys.jacobian(&jet, &mut JacobianBlock::new(&mut local, fc * js, js));
        for row in 0..m {
            let prow = &local[row * fc * js..(row + 1) * fc * js];
            for field in 0..fc {
                for (q, &corner) in corners.iter().enumerate().take(nc) {
                    let acc: f64 = prow[field * js..(field + 1) * js]
                        .iter()
                        .zip(&stencil.rows)
                        .map(|(p, row)| p * row[q])
                        .sum();
                    cols.push(field * n + corner);
                    vals.push(acc);
                }
            }
            offsets.push(cols.len());
        }
    }
    let mut weights = vec![w; nrows];
    for (k, p) in penalties.iter().enumerate() {
        let d = u.field(p.field)[p.node] - p.target;
        if !(p.weight * d * d).is_finite() {
            return Err(ResidualError::DivergedPenalty {
                field: p.field,
                node: p.node,
            });
        }
        residual[cell_rows + k] = d;
        weights[cell_rows + k] = p.weight;
        energy += p.weight * d * d;
        cols.push(p.field * n + p.node);
        vals.push(1.0);
        offsets.push(cols.len());
    }
    let jacobian = SparseOperator::from_csr(nrows, n * fc, offsets, cols, vals).map_err(|e| {
        ResidualError::UnsupportedGrid {
            system: sys.name().into(),
            reason: e.to_string(),
        }
    })?;
    Ok(Linearization {
        residual,
        weights,
        jacobian,
        energy: 0.5 * energy,
        cell_rows,
    })
}

/// Largest relative mismatch between the assembled Jacobian and central
/// differences of the residual along `probes` seeded random directions:
/// `max ‖(F(u+εh) − F(u−εh))/2ε − J h‖ / ‖J h‖`.
pub fn fd_jacobian_check<S: ResidualSystem + ?Sized>(
    sys: &S,
    grid: &Grid2D,
    u: &NodalField,
    probes: usize,
    seed: u64,
) -> Result<f64, ResidualError> {
    let lin = evaluate_residual_and_jacobian(sys, grid, u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = u.values().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let eps = 1e-5 * scale;
    let mut worst = 0.0f64;
    for _ in 0..probes.max(1) {
        let h: Vec<f64> = (0..u.values().len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let jh = lin.jacobian.spmv(&h).expect("shape checked");
        let mut plus = u.clone();
        let mut minus = u.clone();
        for (i, hi) in h.iter().enumerate() {
            plus.values_mut()[i] += eps * hi;
            minus.values_mut()[i] -= eps * hi;
        }
        let fp = evaluate_residual(sys, grid, &plus)?;
        let fm = evaluate_residual(sys, grid, &minus)?;
        let mut diff = 0.0;
        let mut base = 0.0;
        for i in 0..jh.len() {
            let fd = (fp[i] - fm[i]) / (2.0 * eps);
            diff += (fd - jh[i]).powi(2);
            base += jh[i] * jh[i];
        }
        let rel = diff.sqrt() / base.sqrt().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Wraps a system and adds a fixed offset to one pointwise Jacobian entry.
/// Used to confirm that [`fd_jacobian_check`] can fail.
#[derive(Debug, Clone)]
pub struct CorruptedJacobian<S> {
    pub inner: S,
    pub row: usize,
    pub col: usize,
    pub offset: f64,
}

impl<S> CorruptedJacobian<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            row: 0,
            col: 0,
            offset: 0.1,
        }
    }
}

impl<S: ResidualSystem> ResidualSystem for CorruptedJacobian<S> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn field_count(&self) -> usize {
        self.inner.field_count()
    }
    fn residual_dim(&self) -> usize {
        self.inner.residual_dim()
    }
    fn residual(&self, jet: &CellJet, out: &mut [f64]) {
        self.inner.residual(jet, out)
    }
    fn jacobian(&self, jet: &CellJet, out: &mut JacobianBlock) {
        self.inner.jacobian(jet, out);
        let cols = self.field_count() * jet.jet_size();
        out.raw_mut()[self.row * cols + self.col] += self.offset;
    }
    fn penalties(&self, grid: &Grid2D) -> Vec<Penalty> {
        self.inner.penalties(grid)
    }
    fn check_grid(&self, grid: &Grid2D) -> Result<(), ResidualError> {
        self.inner.check_grid(grid)
    }
}

/// Default weight of boundary pins.
pub const DEFAULT_PENALTY_WEIGHT: f64 = 1e3;

/// `u_x − u = 0` on a 1D grid with the pin `u(0) = 1`; continuum solution `eˣ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialProblem {
    pub penalty_weight: f64,
}

impl Default for ExponentialProblem {
    fn default() -> Self {
        Self {
            penalty_weight: DEFAULT_PENALTY_WEIGHT,
        }
    }
}

pub fn model_problem_exponential() -> ExponentialProblem {
    ExponentialProblem::default()
}

impl ResidualSystem for ExponentialProblem {
    fn name(&self) -> &str {
        "exp1d"
    }
    fn field_count(&self) -> usize {
        1
    }
    fn residual_dim(&self) -> usize {
        1
    }
    fn residual(&self, jet: &CellJet, out: &mut [f64]) {
        out[0] = jet.dx(0) - jet.value(0);
    }
    fn jacobian(&self, _jet: &CellJet, out: &mut JacobianBlock) {
        out.set(0, 0, JetComponent::Dx, 1.0);
        out.set(0, 0, JetComponent::Value, -1.0);
    }
    fn penalties(&self, _grid: &Grid2D) -> Vec<Penalty> {
        vec![Penalty {
            field: 0,
            node: 0,
            target: 1.0,
            weight: self.penalty_weight,
        }]
    }
    fn check_grid(&self, grid: &Grid2D) -> Result<(), ResidualError> {
        if grid.is_1d() {
            Ok(())
        } else {
            Err(ResidualError::UnsupportedGrid {
                system: "exp1d".into(),
                reason: "requires ny = 1".into(),
            })
        }
    }
}

/// `(u_x − f, u_y − g) = 0` on a 2D grid with node 0 pinned to zero. The
/// affine field `f·x + g·y` is a minimizer; it is unique only up to the
/// checkerboard mode that the 2D jet operator does not see.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPoissonProblem {
    pub f: f64,
    pub g: f64,
    pub penalty_weight: f64,
}

impl LinearPoissonProblem {
    pub fn new(f: f64, g: f64) -> Self {
        Self {
            f,
            g,
            penalty_weight: DEFAULT_PENALTY_WEIGHT,
        }
    }
}

pub fn model_problem_linear_poisson(f: f64, g: f64) -> LinearPoissonProblem {
    LinearPoissonProblem::new(f, g)
}

impl ResidualSystem for LinearPoissonProblem {
    fn name(&self) -> &str {
        "poisson2d"
    }
    fn field_count(&self) -> usize {
        1
    }
    fn residual_dim(&self) -> usize {
        2
    }
    fn residual(&self, jet: &CellJet, out: &mut [f64]) {
        out[0] = jet.dx(0) - self.f;
        out[1] = jet.dy(0) - self.g;
    }
    fn jacobian(&self, _jet: &CellJet, out: &mut JacobianBlock) {
        out.set(0, 0, JetComponent::Dx, 1.0);
        out.set(1, 0, JetComponent::Dy, 1.0);
    }
    fn penalties(&self, _grid: &Grid2D) -> Vec<Penalty> {
        vec![Penalty {
            field: 0,
            node: 0,
            target: 0.0,
            weight: self.penalty_weight,
        }]
    }
    fn check_grid(&self, grid: &Grid2D) -> Result<(), ResidualError> {
        if grid.is_1d() {
            Err(ResidualError::UnsupportedGrid {
                system: "poisson2d".into(),
                reason: "requires ny ≥ 2".into(),
            })
        } else {
            Ok(())
        }
    }
}

/// `F(Du) = u0`: selects the cell value of a single field.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ValueExtraction;

impl ResidualSystem for ValueExtraction {
    fn name(&self) -> &str {
        "value"
    }
    fn field_count(&self) -> usize {
        1
    }
    fn residual_dim(&self) -> usize {
        1
    }
    fn residual(&self, jet: &CellJet, out: &mut [f64]) {
        out[0] = jet.value(0);
    }
    fn jacobian(&self, _jet: &CellJet, out: &mut JacobianBlock) {
        out.set(0, 0, JetComponent::Value, 1.0);
    }
}
