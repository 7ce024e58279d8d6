//! Run configuration: a `key = value` file merged with command-line flags.

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sgflow_core::directions::DEFAULT_LAMBDA_FLOOR;
use sgflow_core::ginzburg_landau::GLInit;
use sgflow_core::{AcceptanceRule, CgOptions, DirectionKind, FlowConfig, GLConfig, Grid2D};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Inner CG cap per direction for GL runs.
pub const GL_CG_MAX_ITER: usize = 20;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config file {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Gl,
    Exp1d,
    Poisson2d,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gl => "gl",
            Self::Exp1d => "exp1d",
            Self::Poisson2d => "poisson2d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionName {
    Sobolev,
    Lm,
    LmDual,
    Gn,
    Euclidean,
}

impl DirectionName {
    pub fn kind(self) -> DirectionKind {
        match self {
            Self::Sobolev => DirectionKind::Sobolev,
            Self::Lm => DirectionKind::LmPrimal,
            Self::LmDual => DirectionKind::LmDual,
            Self::Gn => DirectionKind::GaussNewton,
            Self::Euclidean => DirectionKind::Euclidean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InitName {
    Uniform,
    Gauged,
    SeededNoise,
}

/// Every setting optional; the shape of both the config file and the flag
/// overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub problem: Option<Problem>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub lx: Option<f64>,
    pub ly: Option<f64>,
    pub kappa: Option<f64>,
    pub h0: Option<f64>,
    pub init: Option<InitName>,
    pub noise: Option<f64>,
    pub seed: Option<u32>,
    pub poisson_f: Option<f64>,
    pub poisson_g: Option<f64>,
    pub direction: Option<DirectionName>,
    pub lambda0: Option<f64>,
    pub lambda_decrease: Option<f64>,
    pub lambda_increase: Option<f64>,
    pub lambda_floor: Option<f64>,
    pub lambda_ceiling: Option<f64>,
    pub max_iter: Option<usize>,
    pub grad_tol: Option<f64>,
    pub grad_abs_tol: Option<f64>,
    pub stall_tol: Option<f64>,
    pub stall_window: Option<usize>,
    pub monitor_window: Option<usize>,
    pub acceptance_ratio: Option<f64>,
    pub regularization: Option<f64>,
    pub cg_tol: Option<f64>,
    pub cg_max_iter: Option<usize>,
    pub min_modulus: Option<f64>,
    pub out: Option<PathBuf>,
}

impl PartialConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    /// Values set in `over` win.
    pub fn merge(self, over: PartialConfig) -> PartialConfig {
        macro_rules! pick {
            ($($f:ident),*) => { PartialConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            problem,
            nx,
            ny,
            lx,
            ly,
            kappa,
            h0,
            init,
            noise,
            seed,
            poisson_f,
            poisson_g,
            direction,
            lambda0,
            lambda_decrease,
            lambda_increase,
            lambda_floor,
            lambda_ceiling,
            max_iter,
            grad_tol,
            grad_abs_tol,
            stall_tol,
            stall_window,
            monitor_window,
            acceptance_ratio,
            regularization,
            cg_tol,
            cg_max_iter,
            min_modulus,
            out
        )
    }
}

/// A complete, validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub kappa: f64,
    pub h0: f64,
    pub init: InitName,
    pub noise: f64,
    pub seed: u32,
    pub poisson_f: f64,
    pub poisson_g: f64,
    pub direction: DirectionName,
    pub lambda0: f64,
    pub lambda_decrease: f64,
    pub lambda_increase: f64,
    pub lambda_floor: f64,
    pub lambda_ceiling: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub grad_abs_tol: f64,
    pub stall_tol: f64,
    pub stall_window: usize,
    pub monitor_window: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acceptance_ratio: Option<f64>,
    pub regularization: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub min_modulus: f64,
    pub out: PathBuf,
}

impl RunConfig {
    /// Fills unset values with per-problem defaults and validates.
    pub fn resolve(p: PartialConfig) -> Result<Self, ConfigError> {
        let problem = p.problem.ok_or(ConfigError::Missing("problem"))?;
        let flow = FlowConfig::default();
        let gl = GLConfig::default();
        let (nx, ny, lx, ly) = match problem {
            Problem::Gl => (48, 48, gl.lx, gl.ly),
            Problem::Exp1d => (65, 1, 1.0, 1.0),
            Problem::Poisson2d => (9, 9, 1.0, 1.0),
        };
        let cfg = RunConfig {
            problem,
            nx: p.nx.unwrap_or(nx),
            ny: p.ny.unwrap_or(ny),
            lx: p.lx.unwrap_or(lx),
            ly: p.ly.unwrap_or(ly),
            kappa: p.kappa.unwrap_or(gl.kappa),
            h0: p.h0.unwrap_or(gl.h0),
            init: p.init.unwrap_or(InitName::SeededNoise),
            noise: p.noise.unwrap_or(gl.noise),
            seed: p.seed.unwrap_or(0),
            poisson_f: p.poisson_f.unwrap_or(1.0),
            poisson_g: p.poisson_g.unwrap_or(0.5),
            direction: p.direction.unwrap_or(DirectionName::Lm),
            lambda0: p.lambda0.unwrap_or(flow.lambda0),
            lambda_decrease: p.lambda_decrease.unwrap_or(flow.decrease),
            lambda_increase: p.lambda_increase.unwrap_or(flow.increase),
            lambda_floor: p.lambda_floor.unwrap_or(DEFAULT_LAMBDA_FLOOR),
            lambda_ceiling: p.lambda_ceiling.unwrap_or(flow.lambda_ceiling),
            max_iter: p.max_iter.unwrap_or(flow.max_iterations),
            grad_tol: p.grad_tol.unwrap_or(flow.grad_tol),
            grad_abs_tol: p.grad_abs_tol.unwrap_or(flow.grad_abs_tol),
            stall_tol: p.stall_tol.unwrap_or(flow.stall_tol),
            stall_window: p.stall_window.unwrap_or(flow.stall_window),
            monitor_window: p.monitor_window.unwrap_or(flow.monitor_window),
            acceptance_ratio: p.acceptance_ratio,
            regularization: p.regularization.unwrap_or(flow.regularization),
            cg_tol: p.cg_tol.unwrap_or(flow.solver.tol),
            cg_max_iter: p.cg_max_iter.unwrap_or(match problem {
                Problem::Gl => GL_CG_MAX_ITER,
                _ => flow.solver.max_iter.unwrap_or(100),
            }),
            min_modulus: p
                .min_modulus
                .unwrap_or(sgflow_core::ginzburg_landau::DEFAULT_MIN_MODULUS),
            out: p.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn partial(&self) -> PartialConfig {
        PartialConfig {
            problem: Some(self.problem),
            nx: Some(self.nx),
            ny: Some(self.ny),
            lx: Some(self.lx),
            ly: Some(self.ly),
            kappa: Some(self.kappa),
            h0: Some(self.h0),
            init: Some(self.init),
            noise: Some(self.noise),
            seed: Some(self.seed),
            poisson_f: Some(self.poisson_f),
            poisson_g: Some(self.poisson_g),
            direction: Some(self.direction),
            lambda0: Some(self.lambda0),
            lambda_decrease: Some(self.lambda_decrease),
            lambda_increase: Some(self.lambda_increase),
            lambda_floor: Some(self.lambda_floor),
            lambda_ceiling: Some(self.lambda_ceiling),
            max_iter: Some(self.max_iter),
            grad_tol: Some(self.grad_tol),
            grad_abs_tol: Some(self.grad_abs_tol),
            stall_tol: Some(self.stall_tol),
            stall_window: Some(self.stall_window),
            monitor_window: Some(self.monitor_window),
            acceptance_ratio: self.acceptance_ratio,
            regularization: Some(self.regularization),
            cg_tol: Some(self.cg_tol),
            cg_max_iter: Some(self.cg_max_iter),
            min_modulus: Some(self.min_modulus),
            out: Some(self.out.clone()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::resolve(PartialConfig::from_toml_str(text, Path::new("<string>"))?)
    }

    pub fn grid(&self) -> Result<Grid2D, ConfigError> {
        let g = if self.problem == Problem::Exp1d {
            Grid2D::line(self.nx, self.lx)
        } else {
            Grid2D::new(self.nx, self.ny, self.lx, self.ly)
        };
        g.map_err(|e| ConfigError::Invalid {
            key: "grid",
            reason: e.to_string(),
        })
    }

    pub fn gl_config(&self) -> GLConfig {
        GLConfig {
            kappa: self.kappa,
            h0: self.h0,
            lx: self.lx,
            ly: self.ly,
            init: match self.init {
                InitName::Uniform => GLInit::Uniform,
                InitName::Gauged => GLInit::Gauged,
                InitName::SeededNoise => GLInit::SeededNoise,
            },
            seed: u64::from(self.seed),
            noise: self.noise,
        }
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            direction: self.direction.kind(),
            lambda0: self.lambda0,
            increase: self.lambda_increase,
            decrease: self.lambda_decrease,
            lambda_floor: self.lambda_floor,
            lambda_ceiling: self.lambda_ceiling,
            max_iterations: self.max_iter,
            grad_tol: self.grad_tol,
            grad_abs_tol: self.grad_abs_tol,
            stall_tol: self.stall_tol,
            stall_window: self.stall_window,
            monitor_window: self.monitor_window,
            monitor_offset: None,
            acceptance: match self.acceptance_ratio {
                Some(eta) => AcceptanceRule::Ratio { eta },
                None => AcceptanceRule::Decrease,
            },
            regularization: self.regularization,
            solver: CgOptions::truncated(self.cg_tol, self.cg_max_iter),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &'static str, reason: String| Err(ConfigError::Invalid { key, reason });
        if self.problem == Problem::Exp1d && self.ny != 1 {
            return invalid("ny", "exp1d is one-dimensional; ny must be 1".into());
        }
        if self.problem != Problem::Exp1d && self.ny < 2 {
            return invalid("ny", format!("{} needs a 2D grid", self.problem.name()));
        }
        self.grid()?;
        if self.problem == Problem::Gl {
            self.gl_config()
                .validate()
                .map_err(|e| ConfigError::Invalid {
                    key: "gl",
                    reason: e.to_string(),
                })?;
        }
        if !(self.poisson_f.is_finite() && self.poisson_g.is_finite()) {
            return invalid("poisson_f", "must be finite".into());
        }
        if self.cg_max_iter == 0 {
            return invalid("cg_max_iter", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.min_modulus) {
            return invalid("min_modulus", "must lie in [0, 1]".into());
        }
        self.flow_config()
            .validate()
            .map_err(|e| ConfigError::Invalid {
                key: "flow",
                reason: e.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_problem() {
        assert!(matches!(
            RunConfig::resolve(PartialConfig::default()),
            Err(ConfigError::Missing("problem"))
        ));
    }

    #[test]
    fn flags_override_file() {
        let file = PartialConfig {
            problem: Some(Problem::Gl),
            nx: Some(10),
            h0: Some(3.0),
            ..Default::default()
        };
        let flags = PartialConfig {
            h0: Some(6.0),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(file.merge(flags)).unwrap();
        assert_eq!((cfg.nx, cfg.ny, cfg.h0), (10, 48, 6.0));
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::resolve(PartialConfig {
            problem: Some(Problem::Gl),
            ..Default::default()
        })
        .unwrap();
        cfg.lambda0 = 0.1 + 0.2;
        cfg.acceptance_ratio = Some(0.25);
        cfg.seed = u32::MAX;
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(
            PartialConfig::from_toml_str("problem = \"gl\"\nbogus = 1\n", Path::new("x")).is_err()
        );
    }

    #[test]
    fn exp1d_must_be_1d() {
        let p = PartialConfig {
            problem: Some(Problem::Exp1d),
            ny: Some(3),
            ..Default::default()
        };
        assert!(RunConfig::resolve(p).is_err());
    }
}
