//! Run configuration, read from TOML.
//!
//! ```toml
//! mode = "ioc"            # ioc | sysid | control
//! env = "pendulum"
//! seed = 7
//! trials = 5
//! lr = 1e-4
//! iters = 10000
//!
//! [theta0]
//! kind = "perturb"        # explicit | perturb | random | default
//! fraction = 0.2
//!
//! [data]
//! count = 5
//! horizon = [40, 50]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use pdp_core::envs::{EnvOverrides, ENV_NAMES};
use pdp_core::solvers::SolverOpts;
use serde::{Deserialize, Serialize};

/// Invalid configuration, naming the offending field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn bad(field: &str, message: impl fmt::Display) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Ioc,
    Sysid,
    Control,
}

impl ModeName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeName::Ioc => "ioc",
            ModeName::Sysid => "sysid",
            ModeName::Control => "control",
        }
    }
}

/// What `θ` parameterizes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Parameterization {
    /// Physical parameters: `[θ_dyn; θ_obj]` for IOC, `θ_dyn` for SysID.
    #[default]
    Physical,
    /// Lagrange-polynomial open-loop policy of the given degree (control).
    Lagrange { degree: usize },
    /// Network with these hidden widths: objective `V_θ(x)` (IOC, dynamics
    /// fixed), dynamics residual-free model (SysID) or feedback policy (control).
    Mlp { hidden: Vec<usize> },
}

impl Parameterization {
    pub fn label(&self) -> String {
        match self {
            Parameterization::Physical => "physical".into(),
            Parameterization::Lagrange { degree } => format!("lagrange(N={degree})"),
            Parameterization::Mlp { hidden } => format!("mlp(hidden={hidden:?})"),
        }
    }
}

/// Initial parameter guess.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Theta0Spec {
    Explicit {
        values: Vec<f64>,
    },
    /// `θ*_i (1 ± fraction)` with independent random signs.
    Perturb {
        fraction: f64,
    },
    /// Uniform in `[low, high]` per coordinate.
    Random {
        low: f64,
        high: f64,
    },
    /// Ground truth for physical parameters, seeded network initialization
    /// for networks and zeros for Lagrange pivots.
    #[default]
    Default,
}

/// Demonstrations (IOC) or recorded data (SysID).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub count: usize,
    /// Inclusive horizon range; defaults to `[40, 50]` for IOC and `[10, 20]` for SysID.
    pub horizon: Option<[usize; 2]>,
    /// SysID inputs are uniform in `±input_amplitude`.
    pub input_amplitude: f64,
    /// Load demos from a `gen-demos` manifest instead of generating them.
    pub file: Option<PathBuf>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            count: 5,
            horizon: None,
            input_amplitude: 2.0,
            file: None,
        }
    }
}

impl DataSpec {
    pub fn horizon_range(&self, mode: ModeName) -> [usize; 2] {
        self.horizon.unwrap_or(match mode {
            ModeName::Sysid => [10, 20],
            _ => [40, 50],
        })
    }
}

/// iLQR settings for forward solves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub shrink: f64,
    pub reg_floor: f64,
    pub exact_hessian_below: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOpts::default();
        Self {
            max_iters: o.max_iters,
            tol: o.tol,
            shrink: o.shrink,
            reg_floor: o.reg_floor,
            exact_hessian_below: o.exact_hessian_below,
        }
    }
}

impl From<SolverConfig> for SolverOpts {
    fn from(c: SolverConfig) -> Self {
        SolverOpts {
            max_iters: c.max_iters,
            tol: c.tol,
            shrink: c.shrink,
            reg_floor: c.reg_floor,
            exact_hessian_below: c.exact_hessian_below,
        }
    }
}

/// Environment overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub dt: Option<f64>,
    pub gravity: Option<f64>,
    pub theta_dyn: Option<Vec<f64>>,
    pub theta_obj: Option<Vec<f64>>,
    pub goal: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub torque_coeff: Option<f64>,
}

impl From<&EnvConfig> for EnvOverrides {
    fn from(c: &EnvConfig) -> Self {
        EnvOverrides {
            dt: c.dt,
            gravity: c.gravity,
            theta_dyn: c.theta_dyn.clone(),
            theta_obj: c.theta_obj.clone(),
            goal: c.goal.clone(),
            x0: c.x0.clone(),
            torque_coeff: c.torque_coeff,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: ModeName,
    pub env: String,
    /// Learning rate `η`.
    pub lr: f64,
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub halve_on_increase: bool,
    /// Record wall-clock times; off keeps the runrecords reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
    /// Control-mode horizon.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default, rename = "env_overrides")]
    pub overrides: EnvConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub theta0: Theta0Spec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub parameterization: Parameterization,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("config (bytes {}..{})", s.start, s.end))
                .unwrap_or_else(|| "config".into());
            bad(&field, e.message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn control_horizon(&self) -> usize {
        self.horizon.unwrap_or(20)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !ENV_NAMES.contains(&self.env.as_str()) {
            return Err(bad(
                "env",
                format!("unknown environment `{}` (valid: {})", self.env, ENV_NAMES.join(", ")),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(bad("lr", format!("must be finite and non-negative, got {}", self.lr)));
        }
        if self.trials == 0 {
            return Err(bad("trials", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(bad("workers", "must be at least 1"));
        }
        if self.horizon == Some(0) {
            return Err(bad("horizon", "must be at least 1"));
        }
        let s = &self.solver;
        if s.max_iters == 0 {
            return Err(bad("solver.max_iters", "must be at least 1"));
        }
        if !(s.tol > 0.0) {
            return Err(bad("solver.tol", format!("must be positive, got {}", s.tol)));
        }
        if !(s.shrink > 0.0 && s.shrink < 1.0) {
            return Err(bad("solver.shrink", format!("must lie in (0, 1), got {}", s.shrink)));
        }
        if !(s.reg_floor >= 0.0) {
            return Err(bad(
                "solver.reg_floor",
                format!("must be non-negative, got {}", s.reg_floor),
            ));
        }
        if let Some(dt) = self.overrides.dt {
            if !(dt > 0.0) {
                return Err(bad("env_overrides.dt", format!("must be positive, got {dt}")));
            }
        }
        if let Some(w) = &self.overrides.theta_obj {
            if let Some(v) = w.iter().find(|v| !(**v >= 0.0)) {
                return Err(bad(
                    "env_overrides.theta_obj",
                    format!("weights must be non-negative, got {v}"),
                ));
            }
        }
        if let Some([lo, hi]) = self.data.horizon {
            if lo == 0 || lo > hi {
                return Err(bad("data.horizon", format!("need 1 <= low <= high, got [{lo}, {hi}]")));
            }
        }
        if !(self.data.input_amplitude >= 0.0) {
            return Err(bad("data.input_amplitude", "must be non-negative"));
        }
        match &self.theta0 {
            Theta0Spec::Perturb { fraction } if !(*fraction >= 0.0) => {
                return Err(bad("theta0.fraction", format!("must be non-negative, got {fraction}")));
            }
            Theta0Spec::Random { low, high } if !(low <= high) => {
                return Err(bad("theta0", format!("need low <= high, got [{low}, {high}]")));
            }
            Theta0Spec::Perturb { .. } if self.parameterization != Parameterization::Physical => {
                return Err(bad("theta0.kind", "perturb needs the physical parameterization"));
            }
            _ => {}
        }
        match (&self.parameterization, self.mode) {
            (Parameterization::Physical, ModeName::Control) => {
                return Err(bad(
                    "parameterization.kind",
                    "control mode needs a lagrange or mlp policy",
                ));
            }
            (Parameterization::Lagrange { .. }, m) if m != ModeName::Control => {
                return Err(bad(
                    "parameterization.kind",
                    "lagrange policies are only used in control mode",
                ));
            }
            (Parameterization::Lagrange { degree: 0 }, _) => {
                return Err(bad("parameterization.degree", "must be at least 1"));
            }
            (Parameterization::Mlp { hidden }, _) if hidden.contains(&0) => {
                return Err(bad("parameterization.hidden", "widths must be positive"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Learning modes need at least one trajectory; `gen-demos` accepts none.
    pub fn validate_for_learning(&self) -> Result<(), ConfigError> {
        if self.mode != ModeName::Control && self.data.count == 0 && self.data.file.is_none() {
            return Err(bad("data.count", "learning needs at least one trajectory"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "mode = \"sysid\"\nenv = \"cartpole\"\nlr = 1e-4\niters = 10\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!((cfg.trials, cfg.workers, cfg.seed), (1, 1, 0));
        assert_eq!(cfg.data.count, 5);
        assert_eq!(cfg.data.horizon_range(cfg.mode), [10, 20]);
        assert_eq!(cfg.parameterization, Parameterization::Physical);
    }

    #[test]
    fn errors_name_the_field() {
        let err = RunConfig::from_toml(&MINIMAL.replace("1e-4", "-1.0")).unwrap_err();
        assert_eq!(err.field, "lr");
        let err = RunConfig::from_toml(&MINIMAL.replace("cartpole", "acrobot")).unwrap_err();
        assert_eq!(err.field, "env");
        assert!(err.message.contains("quadrotor"));
        let err = RunConfig::from_toml(&format!("{MINIMAL}[solver]\nshrink = 2.0\n")).unwrap_err();
        assert_eq!(err.field, "solver.shrink");
        let err = RunConfig::from_toml(&MINIMAL.replace("sysid", "control")).unwrap_err();
        assert_eq!(err.field, "parameterization.kind");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml(&format!("{MINIMAL}learning_rate = 3\n")).unwrap_err();
        assert!(err.message.contains("learning_rate"), "{err}");
    }

    #[test]
    fn nested_tables_parse() {
        let text = format!(
            "{}[theta0]\nkind = \"random\"\nlow = 0.1\nhigh = 2.0\n[parameterization]\nkind = \"mlp\"\nhidden = [8]\n[env_overrides]\ndt = 0.05\n",
            MINIMAL
        );
        let cfg = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.theta0, Theta0Spec::Random { low: 0.1, high: 2.0 });
        assert_eq!(cfg.parameterization, Parameterization::Mlp { hidden: vec![8] });
        assert_eq!(cfg.overrides.dt, Some(0.05));
    }
}
