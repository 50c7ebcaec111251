//! On-disk formats.
//!
//! * `runrecord.csv`: `iter,loss,grad_inf_norm,wall_ms_forward,wall_ms_backward,converged`,
//!   one row per iteration, `converged` as `0`/`1`.
//! * `theta.csv`: `iter,failed,theta_0,…`, the parameter snapshot of every row.
//! * trajectory files: `t,x_0,…,x_{n-1},u_0,…,u_{m-1}`; the row `t = T` leaves
//!   the control fields empty.
//! * `metadata.json` and `manifest.json`: JSON documents.
//!
//! Floats are written with 17 significant digits, so every value re-reads
//! to the identical `f64`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DVector;
use pdp_core::modes::{DemoSet, RunRecord};
use pdp_core::Trajectory;
use serde::{Deserialize, Serialize};

pub const RUNRECORD_HEADER: [&str; 6] = [
    "iter",
    "loss",
    "grad_inf_norm",
    "wall_ms_forward",
    "wall_ms_backward",
    "converged",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, path: &Path, line: u64) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| anyhow!("{}:{line}: `{s}` is not a number", path.display()))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))
}

/// One parsed `runrecord.csv` row.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub iter: usize,
    pub loss: f64,
    pub grad_inf_norm: f64,
    pub wall_ms_forward: f64,
    pub wall_ms_backward: f64,
    pub converged: bool,
}

pub fn write_runrecord(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(RUNRECORD_HEADER)?;
    for r in &rec.rows {
        w.write_record([
            r.iter.to_string(),
            fmt_f64(r.loss),
            fmt_f64(r.grad_inf_norm),
            fmt_f64(r.wall_ms_forward),
            fmt_f64(r.wall_ms_backward),
            u8::from(r.converged).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_runrecord(path: &Path) -> Result<Vec<RunRow>> {
    let mut rd = reader(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != RUNRECORD_HEADER {
        bail!("{}:1: unexpected header {header:?}", path.display());
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != RUNRECORD_HEADER.len() {
            bail!("{}:{line}: expected 6 fields, found {}", path.display(), rec.len());
        }
        let iter = rec[0]
            .parse()
            .map_err(|_| anyhow!("{}:{line}: bad iteration `{}`", path.display(), &rec[0]))?;
        let converged = match &rec[5] {
            "0" => false,
            "1" => true,
            other => bail!("{}:{line}: converged must be 0 or 1, got `{other}`", path.display()),
        };
        rows.push(RunRow {
            iter,
            loss: parse_f64(&rec[1], path, line)?,
            grad_inf_norm: parse_f64(&rec[2], path, line)?,
            wall_ms_forward: parse_f64(&rec[3], path, line)?,
            wall_ms_backward: parse_f64(&rec[4], path, line)?,
            converged,
        });
    }
    Ok(rows)
}

pub fn write_theta_history(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut w = writer(path)?;
    let r = rec.rows.first().map_or(0, |row| row.theta.len());
    let mut header = vec!["iter".to_string(), "failed".to_string()];
    header.extend((0..r).map(|i| format!("theta_{i}")));
    w.write_record(&header)?;
    for row in &rec.rows {
        let mut fields = vec![row.iter.to_string(), u8::from(row.failed).to_string()];
        fields.extend(row.theta.iter().map(|v| fmt_f64(*v)));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let n = traj.states[0].len();
    let m = traj.controls.first().map_or(0, |u| u.len());
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.extend((0..m).map(|i| format!("u_{i}")));
    w.write_record(&header)?;
    for (t, x) in traj.states.iter().enumerate() {
        let mut fields = vec![t.to_string()];
        fields.extend(x.iter().map(|v| fmt_f64(*v)));
        match traj.controls.get(t) {
            Some(u) => fields.extend(u.iter().map(|v| fmt_f64(*v))),
            None => fields.extend(std::iter::repeat_n(String::new(), m)),
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut rd = reader(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let n = header.iter().filter(|h| h.starts_with("x_")).count();
    let m = header.iter().filter(|h| h.starts_with("u_")).count();
    if header.first().map(String::as_str) != Some("t") || header.len() != 1 + n + m || n == 0 {
        bail!("{}:1: unexpected trajectory header {header:?}", path.display());
    }
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let mut ended = false;
    for rec in rd.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if ended {
            bail!("{}:{line}: row after the terminal state", path.display());
        }
        if rec.len() != header.len() {
            bail!(
                "{}:{line}: expected {} fields, found {}",
                path.display(),
                header.len(),
                rec.len()
            );
        }
        if rec[0].parse::<usize>().ok() != Some(states.len()) {
            bail!(
                "{}:{line}: expected t = {}, found `{}`",
                path.display(),
                states.len(),
                &rec[0]
            );
        }
        let x: Vec<f64> = (1..=n).map(|i| parse_f64(&rec[i], path, line)).collect::<Result<_>>()?;
        states.push(DVector::from_vec(x));
        if m > 0 && rec[1 + n].is_empty() {
            ended = true;
            continue;
        }
        let u: Vec<f64> = (1 + n..1 + n + m)
            .map(|i| parse_f64(&rec[i], path, line))
            .collect::<Result<_>>()?;
        controls.push(DVector::from_vec(u));
    }
    if !ended {
        bail!("{}: missing terminal row with empty controls", path.display());
    }
    Ok(Trajectory::new(states, controls)?)
}

/// `metadata.json` of one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetadata {
    pub mode: String,
    pub env: String,
    pub parameterization: String,
    pub seed: u64,
    pub trial: usize,
    pub lr: f64,
    pub iters: usize,
    pub halve_on_increase: bool,
    pub timing: bool,
    pub theta_names: Vec<String>,
    pub theta0: Vec<f64>,
    pub final_theta: Vec<f64>,
    /// Ground truth, when the parameterization has one.
    pub theta_true: Option<Vec<f64>>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub failed_iterations: usize,
    pub solver: Option<crate::config::SolverConfig>,
    pub dt: f64,
    pub horizons: Vec<usize>,
    pub x0_center: Vec<f64>,
    pub x0_spread: Vec<f64>,
    pub demo_source: String,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoEntry {
    pub file: String,
    pub horizon: usize,
    pub x0: Vec<f64>,
}

/// `manifest.json` written by `gen-demos`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoManifest {
    pub env: String,
    pub mode: String,
    pub seed: u64,
    pub dt: f64,
    pub theta_dyn: Vec<f64>,
    pub theta_obj: Vec<f64>,
    pub demos: Vec<DemoEntry>,
}

pub fn write_demos(dir: &Path, manifest_base: DemoManifest, demos: &DemoSet) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut manifest = manifest_base;
    manifest.demos.clear();
    for (i, d) in demos.iter().enumerate() {
        let file = format!("demo_{i:03}.csv");
        write_trajectory(&dir.join(&file), d)?;
        manifest.demos.push(DemoEntry {
            file,
            horizon: d.horizon(),
            x0: d.states[0].as_slice().to_vec(),
        });
    }
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn load_demos(manifest_path: &Path) -> Result<(DemoManifest, DemoSet)> {
    let manifest: DemoManifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut demos = Vec::with_capacity(manifest.demos.len());
    for e in &manifest.demos {
        let traj = read_trajectory(&dir.join(&e.file))?;
        if traj.horizon() != e.horizon {
            bail!(
                "{}: horizon {} does not match the manifest ({})",
                e.file,
                traj.horizon(),
                e.horizon
            );
        }
        demos.push(traj);
    }
    Ok((manifest, DemoSet::new(demos)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_text_round_trips() {
        for v in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            1.7976931348623157e308,
            f64::MIN_POSITIVE,
            0.0,
        ] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
