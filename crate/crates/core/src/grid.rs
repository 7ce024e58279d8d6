//! Rectangular node grids and the discrete first-order jet operator.
//!
//! Unknowns live on the nodes of a uniform `nx × ny` grid. The jet operator
//! `D` maps a nodal field to one first-order jet per cell:
//!
//! * value: mean of the cell's corner values,
//! * `∂x`: difference of the right-edge and left-edge corner means over `hx`,
//! * `∂y`: the same along `y` (absent when `ny == 1`).
//!
//! `D` reproduces affine fields exactly at cell centers. Cell quadrature is
//! the midpoint rule with the uniform weight `hx·hy` (`hx` in 1D), and
//! adjoints are taken with respect to that weighted inner product.
//!
//! Node ordering is row-major (`j·nx + i`), and stacked fields are stored
//! field-major: all nodes of field 0, then field 1, and so on.

use crate::sparse::SparseOperator;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    Shape { expected: usize, actual: usize },
}

/// Uniform rectangular node grid. `ny == 1` selects a 1D grid along `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    hx: f64,
    hy: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self, GridError> {
        if nx < 2 {
            return Err(GridError::Invalid(format!(
                "nx must be at least 2, got {nx}"
            )));
        }
        if ny == 0 {
            return Err(GridError::Invalid("ny must be 1 (1D) or at least 2".into()));
        }
        if !(lx.is_finite() && lx > 0.0) {
            return Err(GridError::Invalid(format!("lx must be positive, got {lx}")));
        }
        if ny >= 2 && !(ly.is_finite() && ly > 0.0) {
            return Err(GridError::Invalid(format!("ly must be positive, got {ly}")));
        }
        let hx = lx / (nx - 1) as f64;
        let (ly, hy) = if ny == 1 {
            (0.0, 0.0)
        } else {
            (ly, ly / (ny - 1) as f64)
        };
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            hx,
            hy,
        })
    }

    /// 1D grid of `nx` nodes on `[0, lx]`.
    pub fn line(nx: usize, lx: f64) -> Result<Self, GridError> {
        Self::new(nx, 1, lx, 0.0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn is_1d(&self) -> bool {
        self.ny == 1
    }

    /// Number of jet components per field: `(u0, ux)` in 1D, `(u0, ux, uy)` in 2D.
    pub fn jet_size(&self) -> usize {
        if self.is_1d() {
            2
        } else {
            3
        }
    }

    /// Number of corner nodes per cell.
    pub fn corners_per_cell(&self) -> usize {
        if self.is_1d() {
            2
        } else {
            4
        }
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cells_x(&self) -> usize {
        self.nx - 1
    }

    pub fn cells_y(&self) -> usize {
        if self.is_1d() {
            1
        } else {
            self.ny - 1
        }
    }

    pub fn cell_count(&self) -> usize {
        self.cells_x() * self.cells_y()
    }

    pub fn cell_weight(&self) -> f64 {
        if self.is_1d() {
            self.hx
        } else {
            self.hx * self.hy
        }
    }

    /// Measure of the domain: `lx·ly`, or `lx` in 1D.
    pub fn measure(&self) -> f64 {
        if self.is_1d() {
            self.lx
        } else {
            self.lx * self.ly
        }
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn node_position(&self, node: usize) -> (f64, f64) {
        let (i, j) = (node % self.nx, node / self.nx);
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (ci, cj) = (cell % self.cells_x(), cell / self.cells_x());
        let y = if self.is_1d() {
            0.0
        } else {
            (cj as f64 + 0.5) * self.hy
        };
        ((ci as f64 + 0.5) * self.hx, y)
    }

    /// Corner node indices of a cell in ascending order: `[n00, n10, n01, n11]`
    /// in 2D, `[n0, n1]` in 1D (only the first `corners_per_cell` are used).
    pub fn cell_corners(&self, cell: usize) -> [usize; 4] {
        let (ci, cj) = (cell % self.cells_x(), cell / self.cells_x());
        let n00 = cj * self.nx + ci;
        if self.is_1d() {
            [n00, n00 + 1, 0, 0]
        } else {
            [n00, n00 + 1, n00 + self.nx, n00 + self.nx + 1]
        }
    }

    pub fn stencil(&self) -> JetStencil {
        JetStencil::for_grid(self)
    }

    /// Checkerboard pattern `(-1)^(i+j)`. It lies in the kernel of the 2D jet
    /// operator.
    pub fn checkerboard(&self) -> Vec<f64> {
        (0..self.node_count())
            .map(|n| {
                let (i, j) = (n % self.nx, n / self.nx);
                if (i + j) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect()
    }
}

/// Cell-local coefficients of the jet operator, identical for every cell of a
/// uniform grid. Row `k` maps the corner values to jet component `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetStencil {
    pub jet_size: usize,
    pub corners: usize,
    pub rows: [[f64; 4]; 3],
    /// Hourglass (bilinear `xy`) mode of the cell, normalized like the value
    /// row. All zero in 1D.
    pub hourglass: [f64; 4],
}

impl JetStencil {
    fn for_grid(grid: &Grid2D) -> Self {
        if grid.is_1d() {
            let h = grid.hx();
            Self {
                jet_size: 2,
                corners: 2,
                rows: [
                    [0.5, 0.5, 0.0, 0.0],
                    [-1.0 / h, 1.0 / h, 0.0, 0.0],
                    [0.0; 4],
                ],
                hourglass: [0.0; 4],
            }
        } else {
            let (sx, sy) = (0.5 / grid.hx(), 0.5 / grid.hy());
            Self {
                jet_size: 3,
                corners: 4,
                rows: [[0.25; 4], [-sx, sx, -sx, sx], [-sy, -sy, sy, sy]],
                hourglass: [0.25, -0.25, -0.25, 0.25],
            }
        }
    }

    #[inline]
    pub fn apply(&self, corner_values: &[f64; 4], out: &mut [f64]) {
        for (k, row) in self.rows[..self.jet_size].iter().enumerate() {
            let mut acc = 0.0;
            for q in 0..self.corners {
                acc += row[q] * corner_values[q];
            }
            out[k] = acc;
        }
    }
}

/// Stacked nodal unknowns, field-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    values: Vec<f64>,
    field_count: usize,
    node_count: usize,
}

impl NodalField {
    pub fn zeros(grid: &Grid2D, field_count: usize) -> Self {
        Self {
            values: vec![0.0; grid.node_count() * field_count],
            field_count,
            node_count: grid.node_count(),
        }
    }

    pub fn from_values(
        grid: &Grid2D,
        field_count: usize,
        values: Vec<f64>,
    ) -> Result<Self, GridError> {
        let expected = grid.node_count() * field_count;
        if values.len() != expected || field_count == 0 {
            return Err(GridError::Shape {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self {
            values,
            field_count,
            node_count: grid.node_count(),
        })
    }

    /// Samples `f(field, x, y)` at every node.
    pub fn from_fn(grid: &Grid2D, field_count: usize, f: impl Fn(usize, f64, f64) -> f64) -> Self {
        let n = grid.node_count();
        let mut values = Vec::with_capacity(n * field_count);
        for field in 0..field_count {
            for node in 0..n {
                let (x, y) = grid.node_position(node);
                values.push(f(field, x, y));
            }
        }
        Self {
            values,
            field_count,
            node_count: n,
        }
    }

    pub fn field_count(&self) -> usize {
        self.field_count
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn field(&self, field: usize) -> &[f64] {
        &self.values[field * self.node_count..(field + 1) * self.node_count]
    }

    pub fn field_mut(&mut self, field: usize) -> &mut [f64] {
        &mut self.values[field * self.node_count..(field + 1) * self.node_count]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_grid(&self, grid: &Grid2D) -> Result<(), GridError> {
        if self.node_count != grid.node_count() {
            return Err(GridError::Shape {
                expected: grid.node_count() * self.field_count,
                actual: self.values.len(),
            });
        }
        Ok(())
    }

    /// Corner values of `field` on `cell`.
    #[inline]
    pub fn corner_values(&self, field: usize, corners: &[usize; 4], count: usize) -> [f64; 4] {
        let base = field * self.node_count;
        let mut out = [0.0; 4];
        for q in 0..count {
            out[q] = self.values[base + corners[q]];
        }
        out
    }
}

/// One first-order jet per cell and field. Layout: cell-major, then field,
/// then jet component.
#[derive(Debug, Clone, PartialEq)]
pub struct JetField {
    values: Vec<f64>,
    field_count: usize,
    jet_size: usize,
    cell_count: usize,
}

impl JetField {
    pub fn zeros(grid: &Grid2D, field_count: usize) -> Self {
        let js = grid.jet_size();
        Self {
            values: vec![0.0; grid.cell_count() * field_count * js],
            field_count,
            jet_size: js,
            cell_count: grid.cell_count(),
        }
    }

    pub fn from_values(
        grid: &Grid2D,
        field_count: usize,
        values: Vec<f64>,
    ) -> Result<Self, GridError> {
        let expected = grid.cell_count() * field_count * grid.jet_size();
        if values.len() != expected || field_count == 0 {
            return Err(GridError::Shape {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self {
            values,
            field_count,
            jet_size: grid.jet_size(),
            cell_count: grid.cell_count(),
        })
    }

    pub fn field_count(&self) -> usize {
        self.field_count
    }

    pub fn jet_size(&self) -> usize {
        self.jet_size
    }

    pub fn cell_count(&self) -> usize {
        self.cell_count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// All jets of one cell: `field_count × jet_size` values.
    pub fn cell(&self, cell: usize) -> &[f64] {
        let stride = self.field_count * self.jet_size;
        &self.values[cell * stride..(cell + 1) * stride]
    }

    pub fn jet(&self, cell: usize, field: usize) -> &[f64] {
        let start = (cell * self.field_count + field) * self.jet_size;
        &self.values[start..start + self.jet_size]
    }
}

/// `D u`: cell jets of every field.
pub fn apply_jet(grid: &Grid2D, u: &NodalField) -> Result<JetField, GridError> {
    u.check_grid(grid)?;
    let stencil = grid.stencil();
    let fc = u.field_count();
    let js = stencil.jet_size;
    let mut out = JetField::zeros(grid, fc);
    for cell in 0..grid.cell_count() {
        let corners = grid.cell_corners(cell);
        for field in 0..fc {
            let cv = u.corner_values(field, &corners, stencil.corners);
            let start = (cell * fc + field) * js;
            stencil.apply(&cv, &mut out.values[start..start + js]);
        }
    }
    Ok(out)
}

/// `Dᵀ W j`: adjoint of [`apply_jet`] with respect to the nodal Euclidean and
/// the cell-weighted jet inner products.
pub fn apply_jet_adjoint(grid: &Grid2D, jets: &JetField) -> Result<NodalField, GridError> {
    let expected = grid.cell_count() * jets.field_count() * grid.jet_size();
    if jets.cell_count() != grid.cell_count() || jets.jet_size() != grid.jet_size() {
        return Err(GridError::Shape {
            expected,
            actual: jets.values().len(),
        });
    }
    let stencil = grid.stencil();
    let w = grid.cell_weight();
    let fc = jets.field_count();
    let n = grid.node_count();
    let mut out = NodalField::zeros(grid, fc);
    for cell in 0..grid.cell_count() {
        let corners = grid.cell_corners(cell);
        for field in 0..fc {
            let jet = jets.jet(cell, field);
            for (q, &corner) in corners.iter().enumerate().take(stencil.corners) {
                let acc: f64 = stencil.rows[..stencil.jet_size]
                    .iter()
                    .zip(jet)
                    .map(|(row, j)| row[q] * j)
                    .sum();
                out.values[field * n + corner] += w * acc;
            }
        }
    }
    Ok(out)
}

/// Sparse matrix of `D` for `field_count` stacked fields. Row order matches
/// [`JetField`]; when `with_hourglass` is set, each (cell, field) block gets
/// an extra trailing row holding the cell's hourglass mode.
pub fn jet_matrix(grid: &Grid2D, field_count: usize, with_hourglass: bool) -> SparseOperator {
    let stencil = grid.stencil();
    let n = grid.node_count();
    let extra = usize::from(with_hourglass && !grid.is_1d());
    let rows_per_block = stencil.jet_size + extra;
    let nrows = grid.cell_count() * field_count * rows_per_block;
    let mut offsets = Vec::with_capacity(nrows + 1);
    let mut cols = Vec::with_capacity(nrows * stencil.corners);
    let mut vals = Vec::with_capacity(nrows * stencil.corners);
    offsets.push(0);
    for cell in 0..grid.cell_count() {
        let corners = grid.cell_corners(cell);
        for field in 0..field_count {
            for k in 0..rows_per_block {
                let coeffs = if k < stencil.jet_size {
                    &stencil.rows[k]
                } else {
                    &stencil.hourglass
                };
                for q in 0..stencil.corners {
                    cols.push(field * n + corners[q]);
                    vals.push(coeffs[q]);
                }
                offsets.push(cols.len());
            }
        }
    }
    SparseOperator::from_csr(nrows, n * field_count, offsets, cols, vals)
        .expect("jet stencil produces a valid CSR pattern")
}

/// Gram operator `DᵀWD` on `field_count` stacked fields.
///
/// In 2D this operator is only positive semi-definite: the checkerboard mode
/// of each field is annihilated by `D`. Use [`assemble_sobolev_metric`] where
/// an invertible metric is required.
pub fn assemble_gram(grid: &Grid2D, field_count: usize) -> SparseOperator {
    let d = jet_matrix(grid, field_count, false);
    let w = vec![grid.cell_weight(); d.nrows()];
    d.weighted_normal(&w)
}

/// Sobolev metric `DᵀWD + σ HᵀWH` with the default hourglass weight
/// [`hourglass_weight`]. Symmetric positive definite in 1D and 2D; in 1D it
/// coincides with [`assemble_gram`].
pub fn assemble_sobolev_metric(grid: &Grid2D, field_count: usize) -> SparseOperator {
    assemble_stabilized_metric(grid, field_count, hourglass_weight(grid))
}

/// `σ = 1/hx² + 1/hy²`: the hourglass mode is then charged like a gradient
/// of one cell's wavelength, which the jet derivatives cannot see.
pub fn hourglass_weight(grid: &Grid2D) -> f64 {
    1.0 / (grid.hx() * grid.hx()) + 1.0 / (grid.hy() * grid.hy())
}

/// `DᵀWD + σ HᵀWH`, where `H` extracts the per-cell hourglass mode
/// `(u₀₀ − u₁₀ − u₀₁ + u₁₁)/4`. For `σ > 0` this removes the checkerboard
/// kernel of `D`; the added term is `O(h²)` on smooth fields.
pub fn assemble_stabilized_metric(grid: &Grid2D, field_count: usize, sigma: f64) -> SparseOperator {
    let d = jet_matrix(grid, field_count, true);
    let block = grid.stencil().jet_size + usize::from(!grid.is_1d());
    let w: Vec<f64> = (0..d.nrows())
        .map(|r| {
            let hourglass = !grid.is_1d() && r % block == block - 1;
            grid.cell_weight() * if hourglass { sigma } else { 1.0 }
        })
        .collect();
    d.weighted_normal(&w)
}
