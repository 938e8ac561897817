//! CSV and manifest writers. Floats use the shortest round-trip decimal form,
//! and nothing time- or host-dependent is written, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::constitutive::{validate_assumptions, AssumptionReport, Model};
use crate::diagnostics::apriori_report;
use crate::error::{Error, Result};
use crate::solver::Trajectory;

pub const DIAGNOSTICS_HEADER: &str = "step,time,lyapunov,diss_dbeta_sq,diss_capillary,diss_grad_dbeta,diss_eps_w,diss_proj_mu,min_species,max_total,fp_iters";

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropySummary {
    pub tol: f64,
    pub min_margin: f64,
    pub violations: usize,
    pub margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub versions: BTreeMap<String, String>,
    pub config: RunConfig,
    pub assumptions: AssumptionReport,
    pub steps: usize,
    pub apriori: BTreeMap<String, f64>,
    pub entropy: EntropySummary,
    pub min_species: f64,
    pub max_total: f64,
    pub total_fp_iters: usize,
    pub files: Vec<String>,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(format!("{}: {e}", path.display()))
}

pub fn diagnostics_csv(traj: &Trajectory) -> String {
    let mut out = String::from(DIAGNOSTICS_HEADER);
    out.push('\n');
    for r in &traj.diagnostics {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            r.step,
            r.time,
            r.lyapunov,
            r.diss_dbeta_sq,
            r.diss_capillary,
            r.diss_grad_dbeta,
            r.diss_eps_w,
            r.diss_proj_mu,
            r.min_species,
            r.max_total,
            r.fp_iters
        );
    }
    out
}

/// All nodes of the initial state and of every `record_every`-th state.
pub fn snapshots_csv(traj: &Trajectory, record_every: usize) -> String {
    let n = traj.states.first().map_or(0, |s| s.n_species());
    let mut out = String::from("time,node_index,x");
    for i in 1..=n {
        let _ = write!(out, ",S_{i}");
    }
    out.push('\n');
    let every = record_every.max(1);
    for (k, state) in traj.states.iter().enumerate().filter(|(k, _)| k % every == 0) {
        for (node, x) in traj.mesh.nodes().iter().enumerate() {
            let _ = write!(out, "{:?},{node},{x:?}", traj.times[k]);
            for v in state.node(node) {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn build_manifest(traj: &Trajectory, config: &RunConfig, model: &Model) -> Result<Manifest> {
    let tol = config.solver.entropy_tol();
    let margins = traj.entropy_margins.clone();
    let values = traj.states.iter().flat_map(|s| s.values().iter().copied());
    let totals = traj.states.iter().flat_map(|s| s.totals());
    let versions = BTreeMap::from([
        ("capflow".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("format".to_string(), FORMAT_VERSION.to_string()),
    ]);
    Ok(Manifest {
        versions,
        config: config.clone(),
        assumptions: validate_assumptions(model.params()),
        steps: traj.states.len() - 1,
        apriori: apriori_report(traj, model)?,
        entropy: EntropySummary {
            tol,
            min_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
            violations: margins.iter().filter(|&&m| !(m >= 0.0)).count(),
            margins,
        },
        min_species: values.fold(f64::INFINITY, f64::min),
        max_total: totals.fold(f64::NEG_INFINITY, f64::max),
        total_fp_iters: traj.fp_iters.iter().sum(),
        files: vec!["diagnostics.csv".into(), "snapshots.csv".into(), "manifest.json".into()],
    })
}

/// Writes `diagnostics.csv`, `snapshots.csv` and, last, `manifest.json`
/// (through a temporary file and a rename, so a failed run leaves none).
pub fn write_outputs(traj: &Trajectory, config: &RunConfig, model: &Model, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let diag = dir.join("diagnostics.csv");
    fs::write(&diag, diagnostics_csv(traj)).map_err(io(&diag))?;
    let snap = dir.join("snapshots.csv");
    fs::write(&snap, snapshots_csv(traj, config.solver.record_every)).map_err(io(&snap))?;

    let manifest = build_manifest(traj, config, model)?;
    let mut json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Io(format!("manifest serialization: {e}")))?;
    json.push('\n');
    let tmp = dir.join("manifest.json.tmp");
    fs::write(&tmp, json).map_err(io(&tmp))?;
    let dest = dir.join("manifest.json");
    fs::rename(&tmp, &dest).map_err(io(&dest))?;
    Ok(manifest)
}
