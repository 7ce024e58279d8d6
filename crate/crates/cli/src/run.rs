//! Single runs and H₀ sweeps.

use crate::config::{Problem, RunConfig};
use crate::output::{fmt_f64, iterations_csv, matrix_csv, ArtifactWriter, FileEntry};
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sgflow_core::ginzburg_landau::{count_vortices, gl_initialize, gl_system, GLState, A, B, R, S};
use sgflow_core::residual::{ExponentialProblem, LinearPoissonProblem};
use sgflow_core::{
    run_flow, FlowTrace, Grid2D, LojasiewiczEstimate, NodalField, ResidualSystem, TerminationReason,
};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    pub theta: f64,
    pub m: f64,
    pub points: usize,
    pub valid: bool,
}

impl From<LojasiewiczEstimate> for Monitor {
    fn from(e: LojasiewiczEstimate) -> Self {
        Self {
            theta: e.theta,
            m: e.m,
            points: e.points,
            valid: e.valid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VortexSummary {
    pub count: usize,
    pub total_winding: i64,
    /// Largest nodal `|u|`.
    pub max_modulus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDiagnostics {
    /// Max nodal deviation from the continuum solution.
    pub max_error: f64,
    /// Same, after removing the best multiple of the checkerboard null
    /// vector (2D only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_error_mod_kernel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub termination: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
    #[serde(deserialize_with = "nan_from_null")]
    pub initial_energy: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub final_energy: f64,
    pub iterations: usize,
    pub accepted: usize,
    pub monotone: bool,
    pub final_lambda: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub initial_grad_norm: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub final_grad_norm: f64,
    pub monitor: Monitor,
    /// The same fit against `E − E_final`.
    pub monitor_local: Monitor,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vortices: Option<VortexSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostics: Option<ModelDiagnostics>,
    pub wall_time_s: f64,
    pub files: Vec<FileEntry>,
}

/// JSON has no NaN; serde_json writes it as `null`.
fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Serialize)]
struct VortexDocument {
    min_modulus: f64,
    count: usize,
    total_winding: i64,
    vortices: Vec<VortexEntry>,
    indeterminate_cells: Vec<usize>,
    under_resolved_cells: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct VortexEntry {
    cell: usize,
    x: f64,
    y: f64,
    winding: i64,
    center_modulus: f64,
}

fn flow_problem(cfg: &RunConfig, grid: &Grid2D) -> Result<(Box<dyn ResidualSystem>, NodalField)> {
    Ok(match cfg.problem {
        Problem::Gl => {
            let gl = cfg.gl_config();
            (
                Box::new(gl_system(&gl)?),
                gl_initialize(&gl, grid)?.into_field(),
            )
        }
        Problem::Exp1d => (
            Box::new(ExponentialProblem::default()),
            NodalField::from_fn(grid, 1, |_, _, _| 1.0),
        ),
        Problem::Poisson2d => (
            Box::new(LinearPoissonProblem::new(cfg.poisson_f, cfg.poisson_g)),
            NodalField::zeros(grid, 1),
        ),
    })
}

/// Max deviation of `u` from `exact`, plain and with the best multiple of
/// `kernel` removed.
fn deviations(u: &[f64], exact: &[f64], kernel: Option<&[f64]>) -> (f64, Option<f64>) {
    let diff: Vec<f64> = u.iter().zip(exact).map(|(a, b)| a - b).collect();
    let max = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let plain = max(&diff);
    let projected = kernel.map(|k| {
        let kk: f64 = k.iter().map(|x| x * x).sum();
        let t = k.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>() / kk;
        let rest: Vec<f64> = diff.iter().zip(k).map(|(d, ki)| d - t * ki).collect();
        max(&rest)
    });
    (plain, projected)
}

fn model_diagnostics(cfg: &RunConfig, grid: &Grid2D, u: &NodalField) -> Option<ModelDiagnostics> {
    let positions = (0..grid.node_count()).map(|n| grid.node_position(n));
    match cfg.problem {
        Problem::Gl => None,
        Problem::Exp1d => {
            let exact: Vec<f64> = positions.map(|(x, _)| x.exp()).collect();
            let (max_error, _) = deviations(u.field(0), &exact, None);
            Some(ModelDiagnostics {
                max_error,
                max_error_mod_kernel: None,
            })
        }
        Problem::Poisson2d => {
            let exact: Vec<f64> = positions
                .map(|(x, y)| cfg.poisson_f * x + cfg.poisson_g * y)
                .collect();
            // null vector of the derivative rows that vanishes at the pinned node
            let kernel: Vec<f64> = grid.checkerboard().iter().map(|c| c - 1.0).collect();
            let (max_error, m) = deviations(u.field(0), &exact, Some(&kernel));
            Some(ModelDiagnostics {
                max_error,
                max_error_mod_kernel: m,
            })
        }
    }
}

fn write_gl_fields(
    w: &mut ArtifactWriter,
    cfg: &RunConfig,
    grid: &Grid2D,
    u: &NodalField,
) -> Result<VortexSummary> {
    for (name, f) in [("r.csv", R), ("s.csv", S), ("a.csv", A), ("b.csv", B)] {
        w.write(name, matrix_csv(grid, u.field(f)).as_bytes())?;
    }
    let state = GLState::new(u.clone())?;
    let modulus = state.modulus();
    w.write("density.csv", matrix_csv(grid, &modulus).as_bytes())?;
    let report = count_vortices(grid, &state, cfg.min_modulus)?;
    let doc = VortexDocument {
        min_modulus: cfg.min_modulus,
        count: report.count(),
        total_winding: report.total_winding,
        vortices: report
            .vortices
            .iter()
            .map(|v| {
                let (x, y) = grid.cell_center(v.cell);
                VortexEntry {
                    cell: v.cell,
                    x,
                    y,
                    winding: v.winding,
                    center_modulus: v.center_modulus,
                }
            })
            .collect(),
        indeterminate_cells: report.indeterminate.clone(),
        under_resolved_cells: report.under_resolved.clone(),
    };
    w.write_json("vortices.json", &doc)?;
    Ok(VortexSummary {
        count: report.count(),
        total_winding: report.total_winding,
        max_modulus: modulus.iter().fold(0.0f64, |m, v| m.max(*v)),
    })
}

/// Runs one flow and writes every artifact into `cfg.out`. A numerical
/// failure still produces a manifest; check [`RunManifest::failed`].
pub fn solve(cfg: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let grid = cfg.grid()?;
    let (sys, u0) = flow_problem(cfg, &grid)?;
    let mut w = ArtifactWriter::create(&cfg.out)?;
    let flow_cfg = cfg.flow_config();

    let trace: FlowTrace = match run_flow(sys.as_ref(), &grid, u0.clone(), &flow_cfg) {
        Ok(t) => t,
        Err(e) => {
            let manifest = failed_manifest(cfg, e.to_string(), start, w.files().to_vec());
            w.write_json("manifest.json", &manifest)?;
            return Ok(manifest);
        }
    };

    let u = &trace.final_state;
    w.write("iterations.csv", iterations_csv(&trace).as_bytes())?;
    let vortices = match cfg.problem {
        Problem::Gl => Some(write_gl_fields(&mut w, cfg, &grid, u)?),
        _ => {
            w.write("u.csv", matrix_csv(&grid, u.field(0)).as_bytes())?;
            None
        }
    };
    let failure = match &trace.termination {
        TerminationReason::Failed(msg) => Some(msg.clone()),
        _ => None,
    };
    let initial_energy = trace
        .records
        .first()
        .map_or(trace.final_energy, |r| r.energy_before);
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        termination: trace.termination.label().to_string(),
        failure,
        initial_energy,
        final_energy: trace.final_energy,
        iterations: trace.records.len(),
        accepted: trace.accepted_count(),
        monotone: trace.is_monotone(),
        final_lambda: trace.final_lambda,
        initial_grad_norm: trace.initial_metric_norm,
        final_grad_norm: trace.final_metric_norm,
        monitor: Monitor::from(trace.monitor),
        monitor_local: Monitor::from(
            trace.lojasiewicz(cfg.monitor_window, Some(trace.final_energy)),
        ),
        vortices,
        diagnostics: model_diagnostics(cfg, &grid, u),
        wall_time_s: start.elapsed().as_secs_f64(),
        files: w.files().to_vec(),
    };
    w.write_json("manifest.json", &manifest)?;
    Ok(manifest)
}

fn failed_manifest(
    cfg: &RunConfig,
    reason: String,
    start: Instant,
    files: Vec<FileEntry>,
) -> RunManifest {
    RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        termination: "failed".into(),
        failure: Some(reason),
        initial_energy: f64::NAN,
        final_energy: f64::NAN,
        iterations: 0,
        accepted: 0,
        monotone: true,
        final_lambda: cfg.lambda0,
        initial_grad_norm: f64::NAN,
        final_grad_norm: f64::NAN,
        monitor: Monitor::from(LojasiewiczEstimate {
            theta: 0.0,
            m: 0.0,
            points: 0,
            valid: false,
        }),
        monitor_local: Monitor::from(LojasiewiczEstimate {
            theta: 0.0,
            m: 0.0,
            points: 0,
            valid: false,
        }),
        vortices: None,
        diagnostics: None,
        wall_time_s: start.elapsed().as_secs_f64(),
        files,
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub h0: f64,
    pub dir: PathBuf,
    pub outcome: Result<RunManifest, String>,
}

impl SweepRun {
    pub fn succeeded(&self) -> bool {
        matches!(&self.outcome, Ok(m) if !m.failed())
    }
}

pub fn sweep_dir_name(h0: f64) -> String {
    format!("h0_{h0}")
}

/// Worker count from `SGFLOW_THREADS`, if set.
pub fn thread_limit() -> Result<Option<usize>> {
    match std::env::var("SGFLOW_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => bail!("SGFLOW_THREADS must be a positive integer, got {v:?}"),
        },
        Err(_) => Ok(None),
    }
}

/// One run per `h0` in `base.out/h0_<value>`, seeded `base.seed + index`,
/// then `summary.csv` in `base.out`.
pub fn sweep(base: &RunConfig, h0s: &[f64]) -> Result<Vec<SweepRun>> {
    if h0s.is_empty() {
        bail!("empty H0 list");
    }
    if base.problem != Problem::Gl {
        bail!("sweep requires --problem gl");
    }
    let configs: Vec<RunConfig> = h0s
        .iter()
        .enumerate()
        .map(|(i, &h0)| {
            let mut cfg = base.clone();
            cfg.h0 = h0;
            cfg.seed = base.seed.wrapping_add(i as u32);
            cfg.out = base.out.join(sweep_dir_name(h0));
            cfg
        })
        .collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    let run_all = || -> Vec<SweepRun> {
        configs
            .par_iter()
            .map(|cfg| SweepRun {
                h0: cfg.h0,
                dir: cfg.out.clone(),
                outcome: solve(cfg).map_err(|e| format!("{e:#}")),
            })
            .collect()
    };
    let runs = match thread_limit()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(run_all),
        None => run_all(),
    };
    std::fs::write(base.out.join("summary.csv"), summary_csv(&runs))
        .with_context(|| format!("writing summary in {}", base.out.display()))?;
    Ok(runs)
}

pub const SUMMARY_HEADER: &str =
    "h0,final_energy,iterations,vortex_count,total_winding,termination";

pub fn summary_csv(runs: &[SweepRun]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in runs {
        let line = match &r.outcome {
            Ok(m) => {
                let (count, winding) = m
                    .vortices
                    .as_ref()
                    .map_or((0, 0), |v| (v.count, v.total_winding));
                format!(
                    "{},{},{},{},{},{}",
                    fmt_f64(r.h0),
                    fmt_f64(m.final_energy),
                    m.iterations,
                    count,
                    winding,
                    m.termination
                )
            }
            Err(_) => format!("{},NaN,0,0,0,error", fmt_f64(r.h0)),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}
