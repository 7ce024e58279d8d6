//! Ginzburg-Landau superconductivity in least-squares form.
//!
//! Unknowns are four nodal fields `(r, s, a, b)`: the order parameter
//! `u = r + i s` and the vector potential `A = (a, b)`. The nondimensional
//! free energy
//!
//! ```text
//! E(u, A) = ∫ ½|∇u − iAu|² + ½|∇×A − H₀|² + κ²/4 (|u|² − 1)²
//! ```
//!
//! is `½‖F‖²` for the six-component residual
//!
//! ```text
//! F = ( r_x + a s,  s_x − a r,  r_y + b s,  s_y − b r,  b_x − a_y − H₀,  κ/√2 (r² + s² − 1) ).
//! ```

use crate::grid::{apply_jet, Grid2D, NodalField};
use crate::residual::{CellJet, JacobianBlock, JetComponent, ResidualError, ResidualSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

pub const R: usize = 0;
pub const S: usize = 1;
pub const A: usize = 2;
pub const B: usize = 3;

/// Corner `|u|` below which a winding cell counts as a vortex.
pub const DEFAULT_MIN_MODULUS: f64 = 0.7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GLError {
    #[error("invalid Ginzburg-Landau configuration: {0}")]
    Config(String),
    #[error("Ginzburg-Landau requires a 2D grid")]
    NotTwoDimensional,
    #[error("state has {0} fields, expected 4")]
    FieldCount(usize),
    #[error("state contains non-finite values")]
    NonFinite,
}

impl From<GLError> for ResidualError {
    fn from(e: GLError) -> Self {
        ResidualError::UnsupportedGrid {
            system: "gl".into(),
            reason: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GLInit {
    /// `(1, 0, 0, 0)`.
    Uniform,
    /// `u = 1` with the symmetric gauge `A = H₀/2 (−(y − ly/2), x − lx/2)`.
    Gauged,
    /// Gauged plus smoothed seeded noise of peak amplitude `noise` on `r, s`.
    SeededNoise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GLConfig {
    pub kappa: f64,
    pub h0: f64,
    pub lx: f64,
    pub ly: f64,
    pub init: GLInit,
    pub seed: u64,
    pub noise: f64,
}

impl Default for GLConfig {
    fn default() -> Self {
        Self {
            kappa: 4.0,
            h0: 4.0,
            lx: 4.0,
            ly: 4.0,
            init: GLInit::SeededNoise,
            seed: 0,
            noise: 0.1,
        }
    }
}

impl GLConfig {
    pub fn validate(&self) -> Result<(), GLError> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(GLError::Config(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !self.h0.is_finite() {
            return Err(GLError::Config("h0 must be finite".into()));
        }
        if !(self.lx > 0.0 && self.ly > 0.0 && self.lx.is_finite() && self.ly.is_finite()) {
            return Err(GLError::Config("domain sides must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(GLError::Config(format!(
                "noise amplitude must lie in [0, 0.5], got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

/// The six-component residual above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GinzburgLandau {
    pub kappa: f64,
    pub h0: f64,
}

pub fn gl_system(config: &GLConfig) -> Result<GinzburgLandau, GLError> {
    config.validate()?;
    Ok(GinzburgLandau {
        kappa: config.kappa,
        h0: config.h0,
    })
}

impl ResidualSystem for GinzburgLandau {
    fn name(&self) -> &str {
        "gl"
    }

    fn field_count(&self) -> usize {
        4
    }

    fn residual_dim(&self) -> usize {
        6
    }

    fn residual(&self, jet: &CellJet, out: &mut [f64]) {
        let (r, s, a, b) = (jet.value(R), jet.value(S), jet.value(A), jet.value(B));
        out[0] = jet.dx(R) + a * s;
        out[1] = jet.dx(S) - a * r;
        out[2] = jet.dy(R) + b * s;
        out[3] = jet.dy(S) - b * r;
        out[4] = jet.dx(B) - jet.dy(A) - self.h0;
        out[5] = self.kappa / SQRT_2 * (r * r + s * s - 1.0);
    }

    fn jacobian(&self, jet: &CellJet, out: &mut JacobianBlock) {
        use JetComponent::{Dx, Dy, Value};
        let (r, s, a, b) = (jet.value(R), jet.value(S), jet.value(A), jet.value(B));
        out.set(0, R, Dx, 1.0);
        out.set(0, A, Value, s);
        out.set(0, S, Value, a);

        out.set(1, S, Dx, 1.0);
        out.set(1, A, Value, -r);
        out.set(1, R, Value, -a);

        out.set(2, R, Dy, 1.0);
        out.set(2, B, Value, s);
        out.set(2, S, Value, b);

        out.set(3, S, Dy, 1.0);
        out.set(3, B, Value, -r);
        out.set(3, R, Value, -b);

        out.set(4, B, Dx, 1.0);
        out.set(4, A, Dy, -1.0);

        out.set(5, R, Value, SQRT_2 * self.kappa * r);
        out.set(5, S, Value, SQRT_2 * self.kappa * s);
    }

    fn check_grid(&self, grid: &Grid2D) -> Result<(), ResidualError> {
        if grid.is_1d() {
            Err(GLError::NotTwoDimensional.into())
        } else {
            Ok(())
        }
    }
}

/// Nodal `(r, s, a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GLState {
    field: NodalField,
}

impl GLState {
    pub fn new(field: NodalField) -> Result<Self, GLError> {
        if field.field_count() != 4 {
            return Err(GLError::FieldCount(field.field_count()));
        }
        if !field.is_finite() {
            return Err(GLError::NonFinite);
        }
        Ok(Self { field })
    }

    pub fn field(&self) -> &NodalField {
        &self.field
    }

    pub fn into_field(self) -> NodalField {
        self.field
    }

    pub fn r(&self) -> &[f64] {
        self.field.field(R)
    }

    pub fn s(&self) -> &[f64] {
        self.field.field(S)
    }

    pub fn a(&self) -> &[f64] {
        self.field.field(A)
    }

    pub fn b(&self) -> &[f64] {
        self.field.field(B)
    }

    /// `|u|² = r² + s²` per node.
    pub fn density(&self) -> Vec<f64> {
        self.r()
            .iter()
            .zip(self.s())
            .map(|(r, s)| r * r + s * s)
            .collect()
    }

    /// `|u|` per node.
    pub fn modulus(&self) -> Vec<f64> {
        self.r()
            .iter()
            .zip(self.s())
            .map(|(r, s)| r.hypot(*s))
            .collect()
    }
}

pub fn gl_initialize(config: &GLConfig, grid: &Grid2D) -> Result<GLState, GLError> {
    config.validate()?;
    if grid.is_1d() {
        return Err(GLError::NotTwoDimensional);
    }
    let (lx, ly, h0) = (config.lx, config.ly, config.h0);
    let gauged = !matches!(config.init, GLInit::Uniform);
    let mut field = NodalField::from_fn(grid, 4, |f, x, y| match f {
        R => 1.0,
        A if gauged => -0.5 * h0 * (y - 0.5 * ly),
        B if gauged => 0.5 * h0 * (x - 0.5 * lx),
        _ => 0.0,
    });
    if config.init == GLInit::SeededNoise && config.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for f in [R, S] {
            let raw: Vec<f64> = (0..grid.node_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let smooth = binomial_smooth(grid, &raw);
            let peak = smooth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak > 0.0 {
                for (v, n) in field.field_mut(f).iter_mut().zip(&smooth) {
                    *v += config.noise * n / peak;
                }
            }
        }
    }
    GLState::new(field)
}

/// One pass of the `[1 2 1] ⊗ [1 2 1] / 16` filter with mirrored edges.
fn binomial_smooth(grid: &Grid2D, v: &[f64]) -> Vec<f64> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let at = |i: isize, j: isize| {
        let mirror = |k: isize, n: usize| -> usize {
            let n = n as isize;
            let k = if k < 0 {
                -k
            } else if k >= n {
                2 * (n - 1) - k
            } else {
                k
            };
            k.clamp(0, n - 1) as usize
        };
        v[grid.node_index(mirror(i, nx), mirror(j, ny))]
    };
    let mut out = vec![0.0; v.len()];
    for j in 0..ny as isize {
        for i in 0..nx as isize {
            let mut acc = 0.0;
            for (dj, wj) in [(-1, 1.0), (0, 2.0), (1, 1.0)] {
                for (di, wi) in [(-1, 1.0), (0, 2.0), (1, 1.0)] {
                    acc += wi * wj * at(i + di, j + dj);
                }
            }
            out[grid.node_index(i as usize, j as usize)] = acc / 16.0;
        }
    }
    out
}

/// Midpoint quadrature of the free energy written directly in terms of the
/// covariant gradient, induced field and quartic potential.
pub fn free_energy(kappa: f64, h0: f64, grid: &Grid2D, state: &GLState) -> Result<f64, GLError> {
    if grid.is_1d() {
        return Err(GLError::NotTwoDimensional);
    }
    let jets = apply_jet(grid, state.field())
        .map_err(|_| GLError::FieldCount(state.field().field_count()))?;
    let mut total = 0.0;
    for cell in 0..grid.cell_count() {
        let (r, s, a, b) = (
            jets.jet(cell, R),
            jets.jet(cell, S),
            jets.jet(cell, A),
            jets.jet(cell, B),
        );
        // ∇u − iAu for u = r + is, per axis: (∂r + A s) + i(∂s − A r)
        let (re_x, im_x) = (r[1] + a[0] * s[0], s[1] - a[0] * r[0]);
        let (re_y, im_y) = (r[2] + b[0] * s[0], s[2] - b[0] * r[0]);
        let kinetic = 0.5 * (re_x * re_x + im_x * im_x + re_y * re_y + im_y * im_y);
        let curl = b[1] - a[2];
        let magnetic = 0.5 * (curl - h0).powi(2);
        let m2 = r[0] * r[0] + s[0] * s[0];
        let potential = 0.25 * kappa * kappa * (m2 - 1.0).powi(2);
        total += grid.cell_weight() * (kinetic + magnetic + potential);
    }
    Ok(total)
}

/// Applies the gauge transformation `u → u·e^{iχ}`, `A → A + ∇χ` for the
/// linear gauge `χ = αx + βy`, sampled at the nodes.
pub fn linear_gauge_transform(grid: &Grid2D, state: &GLState, alpha: f64, beta: f64) -> GLState {
    let mut field = state.field().clone();
    for node in 0..grid.node_count() {
        let (x, y) = grid.node_position(node);
        let (sin, cos) = (alpha * x + beta * y).sin_cos();
        let (r, s) = (state.r()[node], state.s()[node]);
        field.field_mut(R)[node] = r * cos - s * sin;
        field.field_mut(S)[node] = r * sin + s * cos;
        field.field_mut(A)[node] += alpha;
        field.field_mut(B)[node] += beta;
    }
    GLState { field }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VortexCell {
    pub cell: usize,
    pub winding: i64,
    /// `|u|` of the corner average at the cell center.
    pub center_modulus: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VortexReport {
    /// Sum of the plaquette windings over all cells.
    pub total_winding: i64,
    pub vortices: Vec<VortexCell>,
    /// Cells with a corner where `u = 0` exactly.
    pub indeterminate: Vec<usize>,
    /// Cells whose winding has magnitude above one.
    pub under_resolved: Vec<usize>,
}

impl VortexReport {
    pub fn count(&self) -> usize {
        self.vortices.len()
    }
}

fn principal(mut d: f64) -> f64 {
    while d > PI {
        d -= 2.0 * PI;
    }
    while d <= -PI {
        d += 2.0 * PI;
    }
    d
}

/// Counts vortices by the phase winding of `u` around each cell, visiting
/// the corners counterclockwise.
pub fn count_vortices(
    grid: &Grid2D,
    state: &GLState,
    min_modulus: f64,
) -> Result<VortexReport, GLError> {
    if grid.is_1d() {
        return Err(GLError::NotTwoDimensional);
    }
    if state.field().node_count() != grid.node_count() {
        return Err(GLError::Config("state does not match grid".into()));
    }
    let (r, s) = (state.r(), state.s());
    let mut report = VortexReport::default();
    for cell in 0..grid.cell_count() {
        let [n00, n10, n01, n11] = grid.cell_corners(cell);
        let ring = [n00, n10, n11, n01];
        if ring.iter().any(|&n| r[n] == 0.0 && s[n] == 0.0) {
            report.indeterminate.push(cell);
            continue;
        }
        let mut turn = 0.0;
        for k in 0..4 {
            let (p, q) = (ring[k], ring[(k + 1) % 4]);
            turn += principal(s[q].atan2(r[q]) - s[p].atan2(r[p]));
        }
        let winding = (turn / (2.0 * PI)).round() as i64;
        if winding == 0 {
            continue;
        }
        report.total_winding += winding;
        if winding.abs() > 1 {
            report.under_resolved.push(cell);
        }
        let min_corner = ring
            .iter()
            .map(|&n| r[n].hypot(s[n]))
            .fold(f64::INFINITY, f64::min);
        if min_corner < min_modulus {
            let rc = ring.iter().map(|&n| r[n]).sum::<f64>() / 4.0;
            let sc = ring.iter().map(|&n| s[n]).sum::<f64>() / 4.0;
            report.vortices.push(VortexCell {
                cell,
                winding,
                center_modulus: rc.hypot(sc),
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residual::{evaluate_energy, evaluate_residual_and_jacobian};

    fn grid(n: usize) -> Grid2D {
        Grid2D::new(n, n, 4.0, 4.0).unwrap()
    }

    #[test]
    fn trivial_energies() {
        let g = grid(6);
        let area = 16.0;
        let uniform = |h0: f64| {
            let cfg = GLConfig {
                h0,
                init: GLInit::Uniform,
                ..GLConfig::default()
            };
            let st = gl_initialize(&cfg, &g).unwrap();
            evaluate_energy(&gl_system(&cfg).unwrap(), &g, st.field())
                .unwrap()
                .value
        };
        assert_eq!(uniform(0.0), 0.0);
        assert!((uniform(1.5) - 1.5 * 1.5 * area / 2.0).abs() < 1e-12);

        let cfg = GLConfig {
            h0: 0.0,
            ..GLConfig::default()
        };
        let zero = NodalField::zeros(&g, 4);
        let e = evaluate_energy(&gl_system(&cfg).unwrap(), &g, &zero)
            .unwrap()
            .value;
        assert!((e - 16.0 * area / 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_state_jacobian_blocks() {
        let g = grid(3);
        let sys = GinzburgLandau {
            kappa: 4.0,
            h0: 1.0,
        };
        let lin = evaluate_residual_and_jacobian(&sys, &g, &NodalField::zeros(&g, 4)).unwrap();
        let n = g.node_count();
        let hx = g.hx();
        // cell 0, component 0 = r_x: only the r-field x-difference survives
        let row: Vec<_> = lin.jacobian.row(0).filter(|(_, v)| *v != 0.0).collect();
        let expect = vec![(0, -0.5 / hx), (1, 0.5 / hx), (3, -0.5 / hx), (4, 0.5 / hx)];
        assert_eq!(row.len(), 4);
        for ((c, v), (ce, ve)) in row.iter().zip(expect) {
            assert_eq!(*c, ce);
            assert!((v - ve).abs() < 1e-15);
        }
        // component 5 has ∂/∂r = √2 κ r = 0 at the zero state
        assert!(lin.jacobian.row(5).all(|(_, v)| v == 0.0));
        // component 4 couples b_x and a_y only
        let row4: Vec<_> = lin
            .jacobian
            .row(4)
            .filter(|(_, v)| *v != 0.0)
            .map(|(c, _)| c / n)
            .collect();
        assert!(row4.iter().all(|&f| f == A || f == B));
    }

    #[test]
    fn gauged_init_cancels_field_component() {
        let g = grid(7);
        let cfg = GLConfig {
            h0: 6.0,
            init: GLInit::Gauged,
            ..GLConfig::default()
        };
        let st = gl_initialize(&cfg, &g).unwrap();
        let r =
            crate::residual::evaluate_residual(&gl_system(&cfg).unwrap(), &g, st.field()).unwrap();
        for cell in 0..g.cell_count() {
            assert!(r[cell * 6 + 4].abs() < 1e-13);
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let g = grid(9);
        let cfg = GLConfig {
            seed: 42,
            ..GLConfig::default()
        };
        let a = gl_initialize(&cfg, &g).unwrap();
        let b = gl_initialize(&cfg, &g).unwrap();
        assert_eq!(a, b);
        let c = gl_initialize(&GLConfig { seed: 43, ..cfg }, &g).unwrap();
        assert_ne!(a, c);
        assert!(a.r().iter().all(|v| (v - 1.0).abs() <= 0.1));
    }

    #[test]
    fn config_validation() {
        assert!(GLConfig {
            kappa: 0.0,
            ..GLConfig::default()
        }
        .validate()
        .is_err());
        assert!(GLConfig {
            noise: 0.6,
            ..GLConfig::default()
        }
        .validate()
        .is_err());
        assert!(gl_initialize(&GLConfig::default(), &Grid2D::line(5, 1.0).unwrap()).is_err());
    }

    fn synthetic_vortex(g: &Grid2D, cx: f64, cy: f64, conj: bool) -> GLState {
        let eps = 0.2;
        let field = NodalField::from_fn(g, 4, |f, x, y| {
            let (dx, dy) = (x - cx, y - cy);
            let m = dx.hypot(dy).max(eps);
            match f {
                R => dx / m,
                S if conj => -dy / m,
                S => dy / m,
                _ => 0.0,
            }
        });
        GLState::new(field).unwrap()
    }

    #[test]
    fn uniform_state_has_no_vortices() {
        let g = Grid2D::new(9, 9, 1.0, 1.0).unwrap();
        let st = gl_initialize(
            &GLConfig {
                init: GLInit::Uniform,
                lx: 1.0,
                ly: 1.0,
                ..GLConfig::default()
            },
            &g,
        )
        .unwrap();
        let rep = count_vortices(&g, &st, DEFAULT_MIN_MODULUS).unwrap();
        assert_eq!(rep.count(), 0);
        assert_eq!(rep.total_winding, 0);
    }

    #[test]
    fn single_vortex_and_antivortex() {
        let g = Grid2D::new(17, 17, 1.0, 1.0).unwrap();
        let (cx, cy) = (0.53, 0.47);
        let expected_cell =
            (cy / g.hy()).floor() as usize * g.cells_x() + (cx / g.hx()).floor() as usize;
        let rep = count_vortices(
            &g,
            &synthetic_vortex(&g, cx, cy, false),
            DEFAULT_MIN_MODULUS,
        )
        .unwrap();
        assert_eq!(rep.count(), 1);
        assert_eq!(rep.total_winding, 1);
        assert_eq!(rep.vortices[0].cell, expected_cell);
        assert_eq!(rep.vortices[0].winding, 1);

        let anti =
            count_vortices(&g, &synthetic_vortex(&g, cx, cy, true), DEFAULT_MIN_MODULUS).unwrap();
        assert_eq!(anti.count(), 1);
        assert_eq!(anti.vortices[0].winding, -1);
        assert_eq!(anti.total_winding, -1);
    }

    #[test]
    fn exact_zero_corner_is_indeterminate() {
        let g = Grid2D::new(3, 3, 1.0, 1.0).unwrap();
        let field = NodalField::from_fn(&g, 4, |f, x, y| {
            if f == R && x == 0.5 && y == 0.5 {
                0.0
            } else if f == R {
                1.0
            } else {
                0.0
            }
        });
        let rep = count_vortices(&g, &GLState::new(field).unwrap(), DEFAULT_MIN_MODULUS).unwrap();
        assert_eq!(rep.indeterminate, vec![0, 1, 2, 3]);
    }

    #[test]
    fn phase_wrap_is_principal() {
        assert!((principal(1.5 * PI) + 0.5 * PI).abs() < 1e-15);
        assert!((principal(-1.5 * PI) - 0.5 * PI).abs() < 1e-15);
        assert_eq!(principal(PI), PI);
    }
}
