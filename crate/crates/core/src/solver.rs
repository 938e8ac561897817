//! Implicit Euler stepping by damped Picard iteration on the frozen
//! linearization, with a homotopy ladder as fallback, and refinement studies.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_frozen, recover, LinearSystem, NodeScalars};
use crate::constitutive::Model;
use crate::diagnostics::{
    check_entropy_step, dissipation_budget, lyapunov_functional, AprioriTracker,
    DiagnosticsRecord, DissipationBudget,
};
use crate::entropy::{w_from_state, DiffusionMatrixSpec, SpeciesState};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::mesh::{Mesh, NodalField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Lumped L² tolerance on successive entropy-variable iterates.
    pub fp_tol: f64,
    pub fp_max_iters: usize,
    /// Initial damping; halved on residual growth down to 1/8.
    pub damping: f64,
    /// Rungs of the σ ladder used when the plain iteration fails.
    pub homotopy_steps: usize,
    pub linear_tol: f64,
    pub t_end: f64,
    pub record_every: usize,
    /// Abort on the first step that violates the discrete entropy inequality.
    pub strict_entropy: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            fp_tol: 1e-9,
            fp_max_iters: 100,
            damping: 1.0,
            homotopy_steps: 4,
            linear_tol: 1e-12,
            t_end: 0.05,
            record_every: 1,
            strict_entropy: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.fp_tol > 0.0) {
            bad.push(format!("fp_tol = {}", self.fp_tol));
        }
        if self.fp_max_iters < 1 {
            bad.push("fp_max_iters = 0".to_string());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            bad.push(format!("damping = {}", self.damping));
        }
        if self.homotopy_steps < 1 {
            bad.push("homotopy_steps = 0".to_string());
        }
        if !(self.linear_tol > 0.0) {
            bad.push(format!("linear_tol = {}", self.linear_tol));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            bad.push(format!("t_end = {}", self.t_end));
        }
        if self.record_every < 1 {
            bad.push("record_every = 0".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid solver settings: {}", bad.join(", "))))
        }
    }

    /// Tolerance of the per-step entropy check.
    pub fn entropy_tol(&self) -> f64 {
        10.0 * self.fp_tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    /// Linear solves performed, including any homotopy rungs.
    pub fp_iters: usize,
    pub residual: f64,
    pub used_homotopy: bool,
}

/// Every step of a run; `states[k]` lives at `times[k] = k κ`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub mesh: Mesh,
    pub kappa: f64,
    pub eps: f64,
    pub times: Vec<f64>,
    pub states: Vec<NodalField>,
    /// Records every `record_every` steps.
    pub diagnostics: Vec<DiagnosticsRecord>,
    /// Per step, starting with step 1.
    pub fp_iters: Vec<usize>,
    pub entropy_margins: Vec<f64>,
    pub budgets: Vec<DissipationBudget>,
    /// Lyapunov value of every stored state.
    pub lyapunov: Vec<f64>,
}

/// Size above which the conjugate-gradient path replaces the banded factorization.
pub const DIRECT_SOLVE_LIMIT: usize = 200_000;

/// Solves the assembled system to `‖r‖ ≤ linear_tol ‖b‖`.
pub fn solve_linear(system: &LinearSystem, linear_tol: f64) -> Result<Vec<f64>> {
    let b = &system.rhs;
    let bnorm = norm(b);
    let dim = b.len();
    if bnorm == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let a = &system.matrix;
    if dim > DIRECT_SOLVE_LIMIT {
        return a.conjugate_gradient(b, linear_tol, 10 * dim);
    }
    let chol = a.cholesky()?;
    let mut x = chol.solve(b);
    let residual = |x: &[f64]| {
        let ax = a.matvec(x);
        norm(&b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<_>>())
    };
    let mut rnorm = residual(&x);
    for _ in 0..4 {
        if rnorm <= linear_tol * bnorm {
            return Ok(x);
        }
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let dx = chol.solve(&r);
        let cand: Vec<f64> = x.iter().zip(dx).map(|(xi, d)| xi + d).collect();
        let cnorm = residual(&cand);
        if !(cnorm < rnorm) {
            break;
        }
        x = cand;
        rnorm = cnorm;
    }
    // Normwise backward error once refinement stalls.
    if rnorm <= linear_tol * bnorm || rnorm <= linear_tol * (a.norm_inf() * norm(&x) + bnorm) {
        Ok(x)
    } else {
        Err(Error::LinearSolve(format!(
            "relative residual {:e} above {linear_tol:e}",
            rnorm / bnorm
        )))
    }
}

fn lumped_distance(mass: &[f64], a: &NodalField, b: &NodalField) -> f64 {
    let n = a.n_species();
    a.values()
        .chunks_exact(n)
        .zip(b.values().chunks_exact(n))
        .zip(mass)
        .map(|((x, y), m)| m * x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

struct StepContext<'a> {
    model: &'a Model,
    spec: &'a DiffusionMatrixSpec,
    mesh: &'a Mesh,
    cfg: &'a SolverConfig,
    s_prev: &'a NodalField,
    prev: NodeScalars,
    mass: Vec<f64>,
    zero: NodalField,
}


impl StepContext<'_> {
    /// Damped Picard iteration at fixed σ.
    fn picard(&self, start: NodalField, sigma: f64) -> Result<(NodalField, usize, f64)> {
        let mut w_star = start;
        let mut damping = self.cfg.damping;
        let mut last = f64::INFINITY;
        for it in 1..=self.cfg.fp_max_iters {
            let frozen = recover(self.model, self.mesh, &w_star, &self.prev.total)?;
            let system = assemble_frozen(
                self.model,
                self.spec,
                self.mesh,
                &frozen,
                &w_star,
                self.s_prev,
                &self.prev.beta,
                sigma,
            )?;
            let x = solve_linear(&system, self.cfg.linear_tol)?;
            let w_new = system.to_nodal(&x);
            let r = lumped_distance(&self.mass, &w_new, &w_star);
            if r <= self.cfg.fp_tol {
                return Ok((w_new, it, r));
            }
            // Stalled within fp_tol relative to ‖w‖.
            let scale = lumped_distance(&self.mass, &w_new, &self.zero);
            if r >= last && r <= self.cfg.fp_tol * scale {
                return Ok((w_new, it, r));
            }
            if !r.is_finite() {
                return Err(Error::FixedPoint { iterations: it, residual: r });
            }
            if r > last {
                damping = (0.5 * damping).max(0.125);
            }
            last = r;
            let blended =
                w_star.values().iter().zip(w_new.values()).map(|(a, b)| a + damping * (b - a)).collect();
            w_star = NodalField::new(w_star.n_species(), blended)?;
        }
        Err(Error::FixedPoint { iterations: self.cfg.fp_max_iters, residual: last })
    }
}

/// Advances one implicit step from `s_prev`.
pub fn solve_time_step(
    s_prev: &NodalField,
    model: &Model,
    spec: &DiffusionMatrixSpec,
    mesh: &Mesh,
    cfg: &SolverConfig,
) -> Result<(NodalField, StepStats)> {
    s_prev.check_species(model, mesh)?;
    let ctx = StepContext {
        model,
        spec,
        mesh,
        cfg,
        s_prev,
        prev: NodeScalars::new(model, s_prev),
        mass: mesh.lumped_mass(),
        zero: NodalField::zeros(model.n_species(), mesh.num_nodes()),
    };

    // The previous state is the exact preimage of its own entropy variables.
    let n = model.n_species();
    let mut start = NodalField::zeros(n, mesh.num_nodes());
    for k in 1..mesh.num_nodes() - 1 {
        let st = SpeciesState::new(s_prev.node(k).to_vec())?;
        start.node_mut(k).copy_from_slice(&w_from_state(model, &st, ctx.prev.total[k])?.w);
    }

    let (w, stats) = match ctx.picard(start, 1.0) {
        Ok((w, it, r)) => (w, StepStats { fp_iters: it, residual: r, used_homotopy: false }),
        Err(first) => {
            let spent = match first {
                Error::FixedPoint { iterations, .. } => iterations,
                _ => 0,
            };
            let mut w = NodalField::zeros(n, mesh.num_nodes());
            let mut total = spent;
            let mut residual = 0.0;
            let rungs = cfg.homotopy_steps;
            for m in 1..=rungs {
                let sigma = m as f64 / rungs as f64;
                match ctx.picard(w, sigma) {
                    Ok((next, it, r)) => {
                        w = next;
                        total += it;
                        residual = r;
                    }
                    Err(Error::FixedPoint { iterations, residual }) => {
                        return Err(Error::FixedPoint { iterations: total + iterations, residual });
                    }
                    Err(e) => return Err(e),
                }
            }
            (w, StepStats { fp_iters: total, residual, used_homotopy: true })
        }
    };
    let frozen = recover(model, mesh, &w, &ctx.prev.total)?;
    Ok((frozen.species, stats))
}

fn record(
    step: usize,
    time: f64,
    lyapunov: f64,
    budget: &DissipationBudget,
    state: &NodalField,
    fp_iters: usize,
    apriori: BTreeMap<String, f64>,
) -> DiagnosticsRecord {
    DiagnosticsRecord {
        step,
        time,
        lyapunov,
        diss_dbeta_sq: budget.diss_dbeta_sq,
        diss_capillary: budget.diss_capillary,
        diss_grad_dbeta: budget.diss_grad_dbeta,
        diss_eps_w: budget.diss_eps_w,
        diss_proj_mu: budget.diss_proj_mu,
        min_species: state.values().iter().copied().fold(f64::INFINITY, f64::min),
        max_total: state.totals().into_iter().fold(f64::NEG_INFINITY, f64::max),
        fp_iters,
        apriori,
    }
}

/// Runs `round(t_end / κ)` steps from `initial`.
pub fn run_simulation(
    initial: &NodalField,
    model: &Model,
    spec: &DiffusionMatrixSpec,
    mesh: &Mesh,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    spec.validate()?;
    initial.check_species(model, mesh)?;
    let kappa = model.kappa();
    let steps = (cfg.t_end / kappa).round() as usize;
    let tol = cfg.entropy_tol();

    let mut traj = Trajectory {
        mesh: mesh.clone(),
        kappa,
        eps: model.eps(),
        times: vec![0.0],
        states: vec![initial.clone()],
        diagnostics: Vec::new(),
        fp_iters: Vec::new(),
        entropy_margins: Vec::new(),
        budgets: Vec::new(),
        lyapunov: vec![lyapunov_functional(initial, model, mesh)?],
    };
    let mut tracker = AprioriTracker::new(model, mesh, initial)?;

    for k in 1..=steps {
        let prev = &traj.states[k - 1];
        let (new, stats) = solve_time_step(prev, model, spec, mesh, cfg)?;
        let budget = dissipation_budget(&new, prev, model, spec, mesh)?;
        let l_new = lyapunov_functional(&new, model, mesh)?;
        let check = check_entropy_step(traj.lyapunov[k - 1], l_new, &budget, kappa, tol);
        if cfg.strict_entropy && !check.passed {
            return Err(Error::EntropyViolation { step: k, margin: check.margin });
        }
        tracker.push(model, prev, &new, &budget)?;
        let time = k as f64 * kappa;
        if k % cfg.record_every == 0 {
            traj.diagnostics.push(record(k, time, l_new, &budget, &new, stats.fp_iters, tracker.report()));
        }
        traj.times.push(time);
        traj.states.push(new);
        traj.lyapunov.push(l_new);
        traj.fp_iters.push(stats.fp_iters);
        traj.entropy_margins.push(check.margin);
        traj.budgets.push(budget);
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub kappa: f64,
    pub eps: f64,
    pub apriori: BTreeMap<String, f64>,
    pub total_fp_iters: usize,
    pub min_entropy_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    /// Runs along the κ ladder at the first ε.
    pub kappa_runs: Vec<RunSummary>,
    /// `‖S_κj - S_κj+1‖` in L²(Ω×(0,T)) for successive entries.
    pub kappa_differences: Vec<f64>,
    /// Observed temporal orders from successive differences.
    pub kappa_orders: Vec<f64>,
    /// Runs along the ε ladder at the first κ.
    pub eps_runs: Vec<RunSummary>,
    pub eps_differences: Vec<f64>,
    /// Bound quantities that grow along a ladder by more than a factor 2
    /// over the smallest earlier value.
    pub flagged: Vec<String>,
}

/// Factor beyond which a bound quantity is considered not uniform along a ladder.
pub const UNIFORMITY_FACTOR: f64 = 2.0;

/// L²(Ω×(0,T)) distance of total densities, sampled at the times of `a`
/// with `b` interpolated linearly in time.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let mass = a.mesh.lumped_mass();
    let totals_b: Vec<Vec<f64>> = b.states.iter().map(NodalField::totals).collect();
    let mut sum = 0.0;
    for k in 1..a.times.len() {
        let t = a.times[k];
        let j = b.times.partition_point(|&s| s < t).clamp(1, b.times.len() - 1);
        let (t0, t1) = (b.times[j - 1], b.times[j]);
        let theta = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 1.0 };
        let ta = a.states[k].totals();
        let dt = a.times[k] - a.times[k - 1];
        for (node, m) in mass.iter().enumerate() {
            let tb = (1.0 - theta) * totals_b[j - 1][node] + theta * totals_b[j][node];
            sum += dt * m * (ta[node] - tb).powi(2);
        }
    }
    sum.sqrt()
}

fn flag_ladder(label: &str, runs: &[RunSummary], out: &mut Vec<String>) {
    let Some(first) = runs.first() else { return };
    for key in first.apriori.keys() {
        let mut floor = f64::INFINITY;
        let mut worst = 1.0f64;
        for v in runs.iter().map(|r| r.apriori[key].abs()) {
            if floor.is_finite() && v > 0.0 {
                worst = worst.max(if floor > 0.0 { v / floor } else { f64::INFINITY });
            }
            floor = floor.min(v);
        }
        if !(worst <= UNIFORMITY_FACTOR) {
            out.push(format!("{label}:{key} growth {worst:.3}"));
        }
    }
}

fn summarize(traj: &Trajectory, model: &Model) -> Result<RunSummary> {
    Ok(RunSummary {
        kappa: model.kappa(),
        eps: model.eps(),
        apriori: crate::diagnostics::apriori_report(traj, model)?,
        total_fp_iters: traj.fp_iters.iter().sum(),
        min_entropy_margin: traj.entropy_margins.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// Reruns the problem along a κ ladder (at `eps_list[0]`) and an ε ladder
/// (at `kappa_list[0]`); independent runs execute in parallel.
pub fn refinement_study(
    initial: &NodalField,
    model: &Model,
    spec: &DiffusionMatrixSpec,
    mesh: &Mesh,
    cfg: &SolverConfig,
    kappa_list: &[f64],
    eps_list: &[f64],
) -> Result<StudyReport> {
    if kappa_list.is_empty() || eps_list.is_empty() {
        return Err(Error::Argument("empty κ or ε list".into()));
    }
    if kappa_list.windows(2).any(|w| w[1] > w[0]) || eps_list.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Argument("κ and ε lists must be decreasing".into()));
    }
    let mut jobs: Vec<(f64, f64)> = kappa_list.iter().map(|&k| (k, eps_list[0])).collect();
    jobs.extend(eps_list[1..].iter().map(|&e| (kappa_list[0], e)));

    let results: Vec<(Trajectory, RunSummary)> = jobs
        .par_iter()
        .map(|&(kappa, eps)| {
            let m = model.with_kappa_eps(kappa, eps)?;
            let traj = run_simulation(initial, &m, spec, mesh, cfg)?;
            let summary = summarize(&traj, &m)?;
            Ok((traj, summary))
        })
        .collect::<Result<_>>()?;

    let nk = kappa_list.len();
    let kappa_idx: Vec<usize> = (0..nk).collect();
    let eps_idx: Vec<usize> = std::iter::once(0).chain(nk..results.len()).collect();
    let diffs = |idx: &[usize]| -> Vec<f64> {
        idx.windows(2).map(|w| trajectory_distance(&results[w[0]].0, &results[w[1]].0)).collect()
    };
    let kappa_differences = diffs(&kappa_idx);
    let kappa_orders = kappa_differences
        .windows(2)
        .enumerate()
        .map(|(j, d)| (d[0] / d[1]).ln() / (kappa_list[j] / kappa_list[j + 1]).ln())
        .collect();
    let kappa_runs: Vec<RunSummary> = kappa_idx.iter().map(|&i| results[i].1.clone()).collect();
    let eps_runs: Vec<RunSummary> = eps_idx.iter().map(|&i| results[i].1.clone()).collect();
    let mut flagged = Vec::new();
    flag_ladder("kappa", &kappa_runs, &mut flagged);
    flag_ladder("eps", &eps_runs, &mut flagged);
    Ok(StudyReport {
        kappa_runs,
        kappa_differences,
        kappa_orders,
        eps_differences: diffs(&eps_idx),
        eps_runs,
        flagged,
    })
}
