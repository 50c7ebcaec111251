//! The `run`, `gen-demos` and `check-gradients` verbs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, Context, Result};
use pdp_core::envs::{make_env, EnvOverrides, ENV_NAMES};
use pdp_core::modes::DemoSet;

use crate::checks::{self, CheckLine};
use crate::config::{ModeName, RunConfig};
use crate::experiment::{rng_for, Experiment, TrialResult};
use crate::io::{
    write_demos, write_json, write_runrecord, write_theta_history, write_trajectory, DemoManifest, TrialMetadata,
};

/// Environment variable naming the default output root.
pub const OUT_ROOT_VAR: &str = "PDP_OUT_DIR";

/// `explicit`, else the config's `out`, else `$PDP_OUT_DIR/<leaf>` (root `runs`).
pub fn resolve_out(explicit: Option<PathBuf>, cfg: &RunConfig, leaf: &str) -> PathBuf {
    explicit.or_else(|| cfg.out.clone()).unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(leaf)
    })
}

/// One line of the `run` summary.
#[derive(Clone, Debug)]
pub struct TrialSummary {
    pub trial: usize,
    pub dir: PathBuf,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub failed_iterations: usize,
    pub wall_ms: f64,
}

impl std::fmt::Display for TrialSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "trial {:>3}  loss {:.6e} -> {:.6e}  iters {}  failed {}  {:.1} ms  {}",
            self.trial,
            self.initial_loss,
            self.final_loss,
            self.iterations,
            self.failed_iterations,
            self.wall_ms,
            self.dir.display()
        )
    }
}

fn write_trial(exp: &Experiment, dir: &Path, res: &TrialResult, data: &DemoSet, source: &str) -> Result<TrialSummary> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let rec = &res.record;
    write_runrecord(&dir.join("runrecord.csv"), rec)?;
    write_theta_history(&dir.join("theta.csv"), rec)?;
    if let Some(traj) = &res.final_traj {
        write_trajectory(&dir.join("trajectory.csv"), traj)?;
    }
    let layout = exp.theta_layout()?;
    let cfg = &exp.cfg;
    let spec = &exp.env.spec;
    let meta = TrialMetadata {
        mode: cfg.mode.as_str().into(),
        env: cfg.env.clone(),
        parameterization: cfg.parameterization.label(),
        seed: cfg.seed,
        trial: res.trial,
        lr: cfg.lr,
        iters: cfg.iters,
        halve_on_increase: cfg.halve_on_increase,
        timing: cfg.timing,
        theta_names: layout.names,
        theta0: rec.theta0().to_vec(),
        final_theta: rec.final_theta().to_vec(),
        theta_true: layout.truth,
        initial_loss: rec.initial_loss(),
        final_loss: rec.final_loss(),
        failed_iterations: rec.failed_iterations,
        solver: rec.solver.map(|_| cfg.solver),
        dt: spec.dt,
        horizons: match cfg.mode {
            ModeName::Control => vec![cfg.control_horizon()],
            _ => data.iter().map(|d| d.horizon()).collect(),
        },
        x0_center: spec.x0.clone(),
        x0_spread: spec.x0_spread.clone(),
        demo_source: source.into(),
    };
    write_json(&dir.join("metadata.json"), &meta)?;
    Ok(TrialSummary {
        trial: res.trial,
        dir: dir.to_path_buf(),
        initial_loss: rec.initial_loss(),
        final_loss: rec.final_loss(),
        iterations: rec.rows.len() - 1,
        failed_iterations: rec.failed_iterations,
        wall_ms: res.wall_ms,
    })
}

/// Runs every trial of `cfg` into `out/trial_XXX/`, spreading trials over
/// `cfg.workers` threads. Summaries come back in trial order; a trial that
/// cannot start is reported as an error after all others have finished.
pub fn run(cfg: RunConfig, out: &Path) -> Result<Vec<TrialSummary>> {
    cfg.validate_for_learning()?;
    let exp = Experiment::new(cfg)?;
    let (data, source) = exp.data()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), toml::to_string(&exp.cfg)?)?;

    let trials = exp.cfg.trials;
    let results: Vec<Mutex<Option<Result<TrialSummary>>>> = (0..trials).map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    let workers = exp.cfg.workers.min(trials);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = {
                    let mut n = next.lock().expect("trial counter");
                    let k = *n;
                    *n += 1;
                    k
                };
                if k >= trials {
                    break;
                }
                let dir = out.join(format!("trial_{k:03}"));
                let outcome = exp
                    .run_trial(&data, k)
                    .and_then(|res| write_trial(&exp, &dir, &res, &data, &source))
                    .with_context(|| format!("trial {k}"));
                *results[k].lock().expect("trial slot") = Some(outcome);
            });
        }
    });

    let mut summaries = Vec::with_capacity(trials);
    let mut errors = Vec::new();
    for slot in results {
        match slot.into_inner().expect("trial slot").expect("every trial ran") {
            Ok(s) => summaries.push(s),
            Err(e) => errors.push(format!("{e:#}")),
        }
    }
    if !errors.is_empty() {
        return Err(anyhow!(
            "{} of {trials} trials failed:\n{}",
            errors.len(),
            errors.join("\n")
        ));
    }
    Ok(summaries)
}

/// Generates `data.count` IOC demos or SysID trajectories into `out` and
/// returns the manifest path.
pub fn gen_demos(cfg: RunConfig, out: &Path) -> Result<PathBuf> {
    if cfg.mode == ModeName::Control {
        return Err(anyhow!("mode: gen-demos needs ioc or sysid"));
    }
    let exp = Experiment::new(cfg)?;
    let demos = exp.generate_data(exp.cfg.data.count, &mut rng_for(exp.cfg.seed, 0))?;
    let manifest = DemoManifest {
        env: exp.cfg.env.clone(),
        mode: exp.cfg.mode.as_str().into(),
        seed: exp.cfg.seed,
        dt: exp.env.spec.dt,
        theta_dyn: exp.env.theta_dyn.clone(),
        theta_obj: exp.env.theta_obj.clone(),
        demos: Vec::new(),
    };
    write_demos(out, manifest, &demos)
}

/// Result of `check-gradients`.
#[derive(Clone, Debug)]
pub struct GradientReport {
    pub lines: Vec<CheckLine>,
    /// `(name, worst relative error)` of the end-to-end checks.
    pub end_to_end: Vec<(String, f64)>,
}

impl GradientReport {
    pub fn passes(&self) -> bool {
        self.lines.iter().all(CheckLine::passes) && self.end_to_end.iter().all(|(_, e)| *e <= checks::END_TO_END_TOL)
    }
}

/// Finite-difference checks at `points` random points of every environment
/// (or just `cfg.env`, with its overrides, when `all` is false) and parameterization, plus short
/// end-to-end gradient checks of the three learning modes.
pub fn check_gradients(cfg: &RunConfig, points: usize, all: bool) -> Result<GradientReport> {
    let names: Vec<&str> = if all {
        ENV_NAMES.to_vec()
    } else {
        vec![cfg.env.as_str()]
    };
    let mut rng = rng_for(cfg.seed, 0);
    let overrides = if all {
        EnvOverrides::default()
    } else {
        EnvOverrides::from(&cfg.overrides)
    };
    let mut lines = Vec::new();
    let mut end_to_end = Vec::new();
    for name in names {
        let env = make_env(name, &overrides)?;
        lines.extend(checks::env_checks(&env, points, &mut rng)?);
        lines.extend(checks::parameterization_checks(
            env.spec.n, env.spec.m, points, &mut rng,
        )?);
        end_to_end.push((format!("{name}/sysid"), checks::sysid_end_to_end(&env, 10, &mut rng)?));
        end_to_end.push((
            format!("{name}/control"),
            checks::control_end_to_end(&env, 10, &mut rng)?,
        ));
        if matches!(name, "pendulum" | "cartpole") {
            end_to_end.push((format!("{name}/ioc"), checks::ioc_end_to_end(&env, 10, &mut rng)?));
        }
    }
    Ok(GradientReport { lines, end_to_end })
}
