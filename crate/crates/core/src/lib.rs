//! Least-squares descent flows for first-order PDE systems.
//!
//! A PDE `F(Du) = 0` is posed as the minimization of
//! `E(u) = ½‖F(Du)‖²` on a rectangular grid. This crate provides the jet
//! operator `D` ([`grid`]), sparse symmetric solvers ([`sparse`]), the
//! residual-system abstraction with Jacobian assembly and checking
//! ([`residual`]), Sobolev, Gauss-Newton and generalized Levenberg-Marquardt
//! directions ([`directions`]), the accept/reject descent driver with a
//! gradient-inequality monitor ([`flow`]), and the Ginzburg-Landau
//! application ([`ginzburg_landau`]).

pub mod directions;
pub mod flow;
pub mod ginzburg_landau;
pub mod grid;
pub mod residual;
pub mod sparse;

pub use directions::{DirectionError, DirectionKind, DirectionRequest, DirectionResult};
pub use flow::{
    lojasiewicz_monitor, run_flow, AcceptanceRule, Flow, FlowConfig, FlowError, FlowState,
    FlowTrace, LojasiewiczEstimate, StepRecord, TerminationReason,
};
pub use ginzburg_landau::{GLConfig, GLInit, GLState, GinzburgLandau, VortexReport};
pub use grid::{Grid2D, GridError, JetField, NodalField};
pub use residual::{
    EnergyValue, ExponentialProblem, LinearPoissonProblem, Linearization, Penalty, ResidualError,
    ResidualSystem,
};
pub use sparse::{CgOptions, LinalgError, SolveReport, SparseOperator};
