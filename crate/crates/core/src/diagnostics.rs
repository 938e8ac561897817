//! Lyapunov functional, per-step dissipation budget, bound trackers and
//! residual checks over completed trajectories.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::assembly::{cell_coeffs, NodeScalars};
use crate::constitutive::{validate_assumptions, Model};
use crate::entropy::{
    boundary_state, chem_potentials, diffusion_matrix_at, free_energy, project_orthogonal,
    w_from_state, DiffusionMatrixSpec, SpeciesState,
};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodalField};
use crate::quadrature::{GAUSS2, GAUSS3};
use crate::solver::Trajectory;

/// `𝓕̃` with the boundary-state data computed once.
struct RelativeEntropy {
    f_gamma: f64,
    mu_gamma: Vec<f64>,
    s_gamma: Vec<f64>,
}

impl RelativeEntropy {
    fn new(model: &Model) -> Result<Self> {
        let g = boundary_state(model)?;
        Ok(Self {
            f_gamma: free_energy(model, &g)?,
            mu_gamma: chem_potentials(model, &g)?,
            s_gamma: g.into_vec(),
        })
    }

    fn eval(&self, model: &Model, s: &[f64]) -> Result<f64> {
        if s == self.s_gamma.as_slice() {
            return Ok(0.0);
        }
        let state = SpeciesState::new(s.to_vec())?;
        let linear: f64 = self
            .mu_gamma
            .iter()
            .zip(s.iter().zip(&self.s_gamma))
            .map(|(m, (a, b))| m * (a - b))
            .sum();
        Ok(free_energy(model, &state)? - self.f_gamma - linear)
    }
}

/// `∫ 𝓕̃(S) + ½ |∇β(S)|²` with lumped mass and P1 gradients of nodal `β`.
pub fn lyapunov_functional(state: &NodalField, model: &Model, mesh: &Mesh) -> Result<f64> {
    let rel = RelativeEntropy::new(model)?;
    let mass = mesh.lumped_mass();
    let mut total = 0.0;
    for k in 0..mesh.num_nodes() {
        total += mass[k] * rel.eval(model, state.node(k))?;
    }
    let beta: Vec<f64> = state.totals().iter().map(|&s| model.beta_value(s)).collect::<Result<_>>()?;
    for c in 0..mesh.num_cells() {
        total += 0.5 * (beta[c + 1] - beta[c]).powi(2) / mesh.cell_width(c);
    }
    Ok(total)
}

/// Dissipation integrals of one step and the weights under which the scheme
/// guarantees `L_new + κ Σ weight·term ≤ L_prev`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DissipationBudget {
    /// `∫ (D_κβ)²`.
    pub diss_dbeta_sq: f64,
    /// `∫ τ p_c' |∇S|²`.
    pub diss_capillary: f64,
    /// `∫ a |∇D_κβ|²`.
    pub diss_grad_dbeta: f64,
    /// `ε Σ_i ‖w_i‖²_{H¹}`.
    pub diss_eps_w: f64,
    /// `‖Π∇μ‖²`.
    pub diss_proj_mu: f64,
    /// `1 / max τ`.
    pub weight_dbeta: f64,
    pub weight_eps_w: f64,
    pub weight_proj_mu: f64,
}

impl DissipationBudget {
    pub fn weighted_sum(&self) -> f64 {
        self.weight_dbeta * self.diss_dbeta_sq
            + 2.0 / 3.0 * self.diss_capillary
            + 0.25 * self.diss_grad_dbeta
            + self.weight_eps_w * self.diss_eps_w
            + self.weight_proj_mu * self.diss_proj_mu
    }
}

/// Nodal entropy variables of `state` with history totals `prev_totals`; zero on the boundary.
fn nodal_w(model: &Model, mesh: &Mesh, state: &NodalField, prev_totals: &[f64]) -> Result<NodalField> {
    let n = model.n_species();
    let mut w = NodalField::zeros(n, mesh.num_nodes());
    for k in 1..mesh.num_nodes() - 1 {
        let st = SpeciesState::new(state.node(k).to_vec())?;
        w.node_mut(k).copy_from_slice(&w_from_state(model, &st, prev_totals[k])?.w);
    }
    Ok(w)
}

/// Smallest constant with `‖v‖² ≤ C ‖∇v‖²` for lumped P1 functions vanishing at both ends.
fn discrete_poincare(mesh: &Mesh) -> f64 {
    let cells = mesh.num_cells() as f64;
    let h = mesh.length() / cells;
    let lambda = 4.0 / (h * h) * (std::f64::consts::PI / (2.0 * cells)).sin().powi(2);
    1.0 / lambda
}

pub fn dissipation_budget(
    state_new: &NodalField,
    state_prev: &NodalField,
    model: &Model,
    spec: &DiffusionMatrixSpec,
    mesh: &Mesh,
) -> Result<DissipationBudget> {
    let n = model.n_species();
    let kappa = model.kappa();
    let eps = model.eps();
    let mass = mesh.lumped_mass();
    let new = NodeScalars::new(model, state_new);
    let prev = NodeScalars::new(model, state_prev);
    let dbeta: Vec<f64> = new.beta.iter().zip(&prev.beta).map(|(a, b)| a - b).collect();
    let w = nodal_w(model, mesh, state_new, &prev.total)?;

    let mut b = DissipationBudget {
        diss_dbeta_sq: dbeta.iter().zip(&mass).map(|(d, m)| m * (d / kappa).powi(2)).sum(),
        ..Default::default()
    };
    for c in 0..mesh.num_cells() {
        let cc = cell_coeffs(model, spec, mesh, c, state_new, &new)?;
        let h = cc.h;
        let grad_s = (new.total[c + 1] - new.total[c]) / h;
        b.diss_capillary += h * cc.tau_bar * cc.p_bar * grad_s * grad_s;
        let grad_db = (dbeta[c + 1] - dbeta[c]) / (h * kappa);
        b.diss_grad_dbeta += h * cc.a_c * grad_db * grad_db;
        let dw: Vec<f64> = (0..n).map(|i| (w.node(c + 1)[i] - w.node(c)[i]) / h).collect();
        b.diss_proj_mu += h * project_orthogonal(&dw).iter().map(|v| v * v).sum::<f64>();
        b.diss_eps_w += eps * h * dw.iter().map(|v| v * v).sum::<f64>();
    }
    for k in 0..mesh.num_nodes() {
        b.diss_eps_w += eps * mass[k] * w.node(k).iter().map(|v| v * v).sum::<f64>();
    }

    let d0 = spec.d0;
    b.weight_dbeta = 1.0 / model.max_tau();
    b.weight_proj_mu = 0.5 * d0;
    b.weight_eps_w = if eps > 0.0 {
        (0.5 * d0).min(eps) / (4.0 * n as f64 * eps * (1.0 + discrete_poincare(mesh)))
    } else {
        0.0
    };
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyCheck {
    pub passed: bool,
    /// `l_prev + tol - (l_new + κ·weighted dissipation)`; negative on failure.
    pub margin: f64,
}

pub fn check_entropy_step(
    l_prev: f64,
    l_new: f64,
    budget: &DissipationBudget,
    kappa: f64,
    tol: f64,
) -> EntropyCheck {
    let margin = l_prev + tol - (l_new + kappa * budget.weighted_sum());
    EntropyCheck { passed: margin >= 0.0, margin }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub time: f64,
    pub lyapunov: f64,
    pub diss_dbeta_sq: f64,
    pub diss_capillary: f64,
    pub diss_grad_dbeta: f64,
    pub diss_eps_w: f64,
    pub diss_proj_mu: f64,
    pub min_species: f64,
    pub max_total: f64,
    pub fp_iters: usize,
    /// Running values of the bound quantities up to this step.
    pub apriori: BTreeMap<String, f64>,
}

/// Ratio of the peak of `a^-p` to its boundary-state value above which a run is flagged.
pub const DEGENERACY_RATIO: f64 = 100.0;

/// Incremental accumulator for the bound quantities of a trajectory.
#[derive(Debug, Clone)]
pub struct AprioriTracker {
    mass: Vec<f64>,
    widths: Vec<f64>,
    kappa: f64,
    gamma1: f64,
    lambda: f64,
    alpha1: f64,
    alpha2: f64,
    p: f64,
    q: f64,
    a_p_gamma: f64,
    sup_entropy: f64,
    sup_grad_beta: f64,
    sum_dbeta: f64,
    sum_cap: f64,
    sum_grad_dbeta: f64,
    sum_eps_w: f64,
    sum_proj_mu: f64,
    sup_s_pow: f64,
    sup_one_minus_pow: f64,
    sum_s_alpha: f64,
    sum_one_minus_alpha: f64,
    sum_a_p: f64,
    peak_a_p: f64,
    sum_3rd: f64,
    sum_hm1: f64,
}

impl AprioriTracker {
    pub fn new(model: &Model, mesh: &Mesh, initial: &NodalField) -> Result<Self> {
        let p = model.params();
        let report = validate_assumptions(p);
        let a_gamma = p.mobility_raw(model.s_gamma_total());
        let mut t = Self {
            mass: mesh.lumped_mass(),
            widths: (0..mesh.num_cells()).map(|c| mesh.cell_width(c)).collect(),
            kappa: model.kappa(),
            gamma1: p.gamma1,
            lambda: p.lambda,
            alpha1: report.alpha1,
            alpha2: report.alpha2,
            p: report.p,
            q: report.q,
            a_p_gamma: a_gamma.powf(-report.p),
            sup_entropy: f64::NEG_INFINITY,
            sup_grad_beta: 0.0,
            sum_dbeta: 0.0,
            sum_cap: 0.0,
            sum_grad_dbeta: 0.0,
            sum_eps_w: 0.0,
            sum_proj_mu: 0.0,
            sup_s_pow: 0.0,
            sup_one_minus_pow: 0.0,
            sum_s_alpha: 0.0,
            sum_one_minus_alpha: 0.0,
            sum_a_p: 0.0,
            peak_a_p: 0.0,
            sum_3rd: 0.0,
            sum_hm1: 0.0,
        };
        t.observe_state(model, initial)?;
        Ok(t)
    }

    fn lumped<F: Fn(f64) -> f64>(&self, totals: &[f64], f: F) -> f64 {
        totals.iter().zip(&self.mass).map(|(&s, m)| m * f(s)).sum()
    }

    fn observe_state(&mut self, model: &Model, state: &NodalField) -> Result<()> {
        let p = model.params();
        let totals = state.totals();
        let entropy = self.lumped(&totals, |s| p.energy_raw(s));
        self.sup_entropy = self.sup_entropy.max(entropy);
        let beta: Vec<f64> = totals.iter().map(|&s| model.beta_raw(s)).collect();
        let grad: f64 = self
            .widths
            .iter()
            .enumerate()
            .map(|(c, h)| (beta[c + 1] - beta[c]).powi(2) / h)
            .sum();
        self.sup_grad_beta = self.sup_grad_beta.max(grad.sqrt());
        let (g1, lam) = (self.gamma1, self.lambda);
        self.sup_s_pow = self.sup_s_pow.max(self.lumped(&totals, |s| s.powf(2.0 - g1)));
        self.sup_one_minus_pow =
            self.sup_one_minus_pow.max(self.lumped(&totals, |s| (1.0 - s).powf(2.0 - lam)));
        Ok(())
    }

    /// Adds step `S^{k-1} → S^k` with its dissipation budget.
    pub fn push(
        &mut self,
        model: &Model,
        prev: &NodalField,
        new: &NodalField,
        budget: &DissipationBudget,
    ) -> Result<()> {
        self.observe_state(model, new)?;
        let kappa = self.kappa;
        self.sum_dbeta += kappa * budget.diss_dbeta_sq;
        self.sum_cap += kappa * budget.diss_capillary;
        self.sum_grad_dbeta += kappa * budget.diss_grad_dbeta;
        self.sum_eps_w += kappa * budget.diss_eps_w;
        self.sum_proj_mu += kappa * budget.diss_proj_mu;

        let p = model.params();
        let totals = new.totals();
        let (a1, a2, pp) = (self.alpha1, self.alpha2, self.p);
        self.sum_s_alpha += kappa * self.lumped(&totals, |s| s.powf(6.0 * a1)).cbrt();
        self.sum_one_minus_alpha += kappa * self.lumped(&totals, |s| (1.0 - s).powf(6.0 * a2)).cbrt();
        self.sum_a_p += kappa * self.lumped(&totals, |s| p.mobility_raw(s).powf(-pp));
        let peak = totals.iter().map(|&s| p.mobility_raw(s).powf(-pp)).fold(0.0, f64::max);
        self.peak_a_p = self.peak_a_p.max(peak);

        let prev_totals = prev.totals();
        let db: Vec<f64> = totals
            .iter()
            .zip(&prev_totals)
            .map(|(&a, &b)| (model.beta_raw(a) - model.beta_raw(b)) / kappa)
            .collect();
        let q = self.q;
        let third: f64 = self
            .widths
            .iter()
            .enumerate()
            .map(|(c, h)| h * ((db[c + 1] - db[c]) / h).abs().powf(q))
            .sum();
        self.sum_3rd += kappa * third;

        let mut hm1 = 0.0;
        for i in 0..prev.n_species() {
            let rate: Vec<f64> = new
                .component(i)
                .iter()
                .zip(prev.component(i))
                .map(|(a, b)| (a - b) / kappa)
                .collect();
            hm1 += dual_norm_sq(&self.widths, &self.mass, &rate);
        }
        self.sum_hm1 += kappa * hm1;
        Ok(())
    }

    pub fn report(&self) -> BTreeMap<String, f64> {
        let ratio = self.peak_a_p / self.a_p_gamma;
        let degenerate = if ratio > DEGENERACY_RATIO { 1.0 } else { 0.0 };
        [
            ("sup_entropy", self.sup_entropy),
            ("sup_grad_beta", self.sup_grad_beta),
            ("dbeta_l2", self.sum_dbeta.sqrt()),
            ("capillary_l2", self.sum_cap.sqrt()),
            ("grad_dbeta_l2", self.sum_grad_dbeta.sqrt()),
            ("eps_w_h1", self.sum_eps_w.sqrt()),
            ("proj_mu_l2", self.sum_proj_mu.sqrt()),
            ("sup_s_pow", self.sup_s_pow),
            ("sup_one_minus_s_pow", self.sup_one_minus_pow),
            ("s_alpha1_l2l6", self.sum_s_alpha.sqrt()),
            ("one_minus_s_alpha2_l2l6", self.sum_one_minus_alpha.sqrt()),
            ("a_pow_neg_p", self.sum_a_p),
            ("a_pow_peak_ratio", ratio),
            ("degenerate", degenerate),
            ("grad_dbeta_lq", self.sum_3rd.powf(1.0 / self.q)),
            ("time_derivative_hm1", self.sum_hm1.sqrt()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// `‖∇z‖²` where `z` solves the discrete Poisson problem `-z'' = f` with
/// homogeneous Dirichlet data and a lumped load: the discrete H⁻¹ norm² of `f`.
fn dual_norm_sq(widths: &[f64], mass: &[f64], f: &[f64]) -> f64 {
    let m = widths.len() - 1;
    if m == 0 {
        return 0.0;
    }
    // Thomas algorithm on interior nodes 1..=m.
    let load: Vec<f64> = (1..=m).map(|k| mass[k] * f[k]).collect();
    let diag: Vec<f64> = (1..=m).map(|k| 1.0 / widths[k - 1] + 1.0 / widths[k]).collect();
    let off: Vec<f64> = (1..m).map(|k| -1.0 / widths[k]).collect();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = if m > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = load[0] / diag[0];
    for k in 1..m {
        let denom = diag[k] - off[k - 1] * c[k - 1];
        c[k] = if k < m - 1 { off[k] / denom } else { 0.0 };
        d[k] = (load[k] - off[k - 1] * d[k - 1]) / denom;
    }
    let mut z = vec![0.0; m];
    z[m - 1] = d[m - 1];
    for k in (0..m - 1).rev() {
        z[k] = d[k] - c[k] * z[k + 1];
    }
    z.iter().zip(&load).map(|(a, b)| a * b).sum()
}

/// Bound quantities of a whole trajectory.
pub fn apriori_report(trajectory: &Trajectory, model: &Model) -> Result<BTreeMap<String, f64>> {
    let states = &trajectory.states;
    let first = states.first().ok_or_else(|| Error::Argument("empty trajectory".into()))?;
    let mut tracker = AprioriTracker::new(model, &trajectory.mesh, first)?;
    for (k, pair) in states.windows(2).enumerate() {
        tracker.push(model, &pair[0], &pair[1], &trajectory.budgets[k])?;
    }
    Ok(tracker.report())
}

/// `∫_{t0}^{t1}` of the hat of half-width `r` centred at `c`, exactly.
fn hat_integral(t0: f64, t1: f64, c: f64, r: f64) -> f64 {
    let hat = |t: f64| (1.0 - (t - c).abs() / r).max(0.0);
    let mut pts = vec![t0, t1];
    pts.extend([c - r, c, c + r].into_iter().filter(|&p| p > t0 && p < t1));
    pts.sort_by(f64::total_cmp);
    pts.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (hat(w[0]) + hat(w[1]))).sum()
}

/// Maximum absolute weak-form residual over bubble × time-hat test functions
/// (three spatial centres, three temporal centres, every species).
pub fn weak_residual(
    trajectory: &Trajectory,
    model: &Model,
    spec: &DiffusionMatrixSpec,
    num_test_functions: usize,
) -> Result<f64> {
    let mesh = &trajectory.mesh;
    let states = &trajectory.states;
    let n = model.n_species();
    let kappa = model.kappa();
    let eps = model.eps();
    let p = model.params();
    let steps = states.len().saturating_sub(1);
    if steps == 0 {
        return Ok(0.0);
    }
    let t_start = trajectory.times[0];
    let t_end = trajectory.times[steps];
    let horizon = t_end - t_start;
    let len = mesh.length();
    let rx = 0.25 * len;
    let rt = 0.25 * horizon;

    let mut tests = Vec::new();
    for fx in [0.25, 0.5, 0.75] {
        for ft in [0.25, 0.5, 0.75] {
            for i in 0..n {
                tests.push((mesh.x_left() + fx * len, t_start + ft * horizon, i));
            }
        }
    }
    tests.truncate(num_test_functions);
    let mut residuals = vec![0.0; tests.len()];

    let psi = |x: f64, c: f64| {
        let u = (x - c) / rx;
        if u.abs() < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 }
    };
    let dpsi = |x: f64, c: f64| {
        let u = (x - c) / rx;
        if u.abs() < 1.0 { -4.0 * u * (1.0 - u * u) / rx } else { 0.0 }
    };

    for k in 1..=steps {
        let (prev, new) = (&states[k - 1], &states[k]);
        let t0 = trajectory.times[k - 1];
        let t1 = trajectory.times[k];
        let weights: Vec<f64> = tests.iter().map(|&(_, ct, _)| hat_integral(t0, t1, ct, rt)).collect();
        if weights.iter().all(|&w| w == 0.0) {
            continue;
        }
        let sc_new = NodeScalars::new(model, new);
        let sc_prev = NodeScalars::new(model, prev);
        let w = nodal_w(model, mesh, new, &sc_prev.total)?;
        let mu: Vec<Vec<f64>> = (0..mesh.num_nodes())
            .map(|k| {
                let st = SpeciesState::new(new.node(k).to_vec())?;
                chem_potentials(model, &st)
            })
            .collect::<Result<_>>()?;

        for c in 0..mesh.num_cells() {
            let h = mesh.cell_width(c);
            let x0 = mesh.nodes()[c];
            let (sl, sr) = (new.node(c), new.node(c + 1));
            let (pl, pr) = (prev.node(c), prev.node(c + 1));
            let grad_s = (sc_new.total[c + 1] - sc_new.total[c]) / h;
            let grad_db = ((sc_new.beta[c + 1] - sc_prev.beta[c + 1])
                - (sc_new.beta[c] - sc_prev.beta[c]))
                / (h * kappa);
            let grad_mu: Vec<f64> = (0..n).map(|j| (mu[c + 1][j] - mu[c][j]) / h).collect();
            let grad_w: Vec<f64> = (0..n).map(|j| (w.node(c + 1)[j] - w.node(c)[j]) / h).collect();

            for (t, &(cx, _, i)) in tests.iter().enumerate() {
                if weights[t] == 0.0 || x0 + h <= cx - rx || x0 >= cx + rx {
                    continue;
                }
                let mut time_part = 0.0;
                for (g, wt) in GAUSS3 {
                    let x = x0 + g * h;
                    let rate = ((sl[i] - pl[i]) + g * ((sr[i] - pr[i]) - (sl[i] - pl[i]))) / kappa;
                    time_part += h * wt * rate * psi(x, cx);
                }
                let mut flux_part = 0.0;
                for g in GAUSS2 {
                    let x = x0 + g * h;
                    let s: Vec<f64> = sl.iter().zip(sr).map(|(a, b)| a + g * (b - a)).collect();
                    let total: f64 = s.iter().sum();
                    let frac = s[i] / total;
                    let cap = frac * p.mobility_raw(total) * (p.pc_prime_raw(total) * grad_s + grad_db);
                    let d = diffusion_matrix_at(&s, spec);
                    let cross: f64 = (0..n).map(|j| d[(i, j)] * grad_mu[j]).sum();
                    let reg = eps * frac * grad_w[i];
                    flux_part += 0.5 * h * (cap + cross + reg) * dpsi(x, cx);
                }
                residuals[t] += weights[t] * (time_part + flux_part);
            }
        }
    }
    Ok(residuals.iter().fold(0.0, |m, r| m.max(r.abs())))
}

/// L² norm of `Σ_i S_i ∇μ_i - ∇P` with `P(S) = ∫_{1/2}^S σ τ/a`, both
/// gradients from nodal interpolants and species at two Gauss points per cell.
pub fn gibbs_duhem_check(state: &NodalField, model: &Model, mesh: &Mesh) -> Result<f64> {
    let n = model.n_species();
    let p = model.params();
    let mut mu = Vec::with_capacity(mesh.num_nodes());
    let mut pressure = Vec::with_capacity(mesh.num_nodes());
    for k in 0..mesh.num_nodes() {
        let st = SpeciesState::new(state.node(k).to_vec())?;
        pressure.push(p.pressure_raw(st.total()));
        mu.push(chem_potentials(model, &st)?);
    }
    let mut sum = 0.0;
    for c in 0..mesh.num_cells() {
        let h = mesh.cell_width(c);
        let grad_p = (pressure[c + 1] - pressure[c]) / h;
        for g in GAUSS2 {
            let lhs: f64 = (0..n)
                .map(|i| {
                    let s = state.node(c)[i] + g * (state.node(c + 1)[i] - state.node(c)[i]);
                    s * (mu[c + 1][i] - mu[c][i]) / h
                })
                .sum();
            sum += 0.5 * h * (lhs - grad_p).powi(2);
        }
    }
    Ok(sum.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::ModelParams;
    use crate::mesh::build_mesh;

    fn model() -> Model {
        Model::new(ModelParams::p0()).unwrap()
    }

    fn equilibrium(mesh: &Mesh) -> NodalField {
        NodalField::from_nodes(&vec![vec![0.15; 3]; mesh.num_nodes()]).unwrap()
    }

    #[test]
    fn lyapunov_zero_at_equilibrium_positive_elsewhere() {
        let m = model();
        let mesh = build_mesh(4, 0.0, 1.0).unwrap();
        let eq = equilibrium(&mesh);
        assert_eq!(lyapunov_functional(&eq, &m, &mesh).unwrap(), 0.0);
        let mut pert = eq.clone();
        pert.node_mut(2)[0] = 0.2;
        assert!(lyapunov_functional(&pert, &m, &mesh).unwrap() > 0.0);
    }

    #[test]
    fn budget_zero_at_equilibrium() {
        let m = model();
        let mesh = build_mesh(4, 0.0, 1.0).unwrap();
        let eq = equilibrium(&mesh);
        let b = dissipation_budget(&eq, &eq, &m, &DiffusionMatrixSpec::default(), &mesh).unwrap();
        assert_eq!(b.weighted_sum(), 0.0);
        let check = check_entropy_step(1.0, 1.0, &b, 1e-3, 1e-8);
        assert!(check.passed && (check.margin - 1e-8).abs() < 1e-15);
        assert!(!check_entropy_step(1.0, 1.0 + 1e-7, &b, 1e-3, 1e-8).passed);
    }

    #[test]
    fn budget_matches_hand_quadrature_on_two_cells() {
        let m = model();
        let mesh = build_mesh(2, 0.0, 1.0).unwrap();
        let prev = equilibrium(&mesh);
        let mut new = prev.clone();
        new.node_mut(1).copy_from_slice(&[0.2, 0.15, 0.1]);
        let spec = DiffusionMatrixSpec::default();
        let b = dissipation_budget(&new, &prev, &m, &spec, &mesh).unwrap();

        // The total stays 0.45, so only the fractions dissipate.
        assert!(b.diss_dbeta_sq.abs() < 1e-12);
        assert!(b.diss_capillary.abs() < 1e-12);
        assert!(b.diss_grad_dbeta.abs() < 1e-12);
        let w: Vec<f64> =
            [0.2f64, 0.15, 0.1].iter().map(|s| (s / 0.45).ln() - (1.0f64 / 3.0).ln()).collect();
        let h = 0.5;
        let grad_sq: f64 = w.iter().map(|v| (v / h).powi(2)).sum::<f64>();
        let mean = w.iter().sum::<f64>() / 3.0;
        let proj_sq: f64 = w.iter().map(|v| ((v - mean) / h).powi(2)).sum::<f64>();
        assert!((b.diss_proj_mu - 2.0 * h * proj_sq).abs() < 1e-12);
        let l2: f64 = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        assert!((b.diss_eps_w - 1e-3 * (2.0 * h * grad_sq + l2)).abs() < 1e-10);
    }

    #[test]
    fn budget_total_terms_match_hand_quadrature() {
        let m = model();
        let mesh = build_mesh(2, 0.0, 1.0).unwrap();
        let prev = equilibrium(&mesh);
        let mut new = prev.clone();
        new.node_mut(1).copy_from_slice(&[0.2, 0.2, 0.2]);
        let b = dissipation_budget(&new, &prev, &m, &DiffusionMatrixSpec::default(), &mesh).unwrap();

        // Antiderivatives of p_c' and τ/a for λ = 7, γ₁ = β₁ = β₂ = 6.
        let pc = |s: f64| -s.powi(-5) / 5.0 + (1.0 - s).powi(-5) / 5.0;
        let f0 = |s: f64| (1.0 - s).powi(-6) / 6.0 - s.powi(-5) / 5.0;
        let (s0, s1, kappa, h) = (0.45, 0.6, 1e-3, 0.5);
        let dbeta = m.beta_value(s1).unwrap() - m.beta_value(s0).unwrap();
        let ds = s1 - s0;
        let tau_bar = dbeta / ds;
        let p_bar = (pc(s1) - pc(s0)) / ds;
        let a_c = tau_bar / ((f0(s1) - f0(s0)) / ds);
        let rel = |x: f64, y: f64| ((x - y) / y).abs();
        assert!(rel(b.diss_dbeta_sq, 0.5 * (dbeta / kappa).powi(2)) < 1e-12);
        assert!(rel(b.diss_capillary, 2.0 * h * tau_bar * p_bar * (ds / h).powi(2)) < 1e-9);
        assert!(rel(b.diss_grad_dbeta, 2.0 * h * a_c * (dbeta / (h * kappa)).powi(2)) < 1e-9);
        assert!(b.diss_proj_mu.abs() < 1e-20);
    }

    #[test]
    fn hat_integral_is_exact() {
        assert!((hat_integral(0.0, 2.0, 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((hat_integral(0.5, 1.0, 1.0, 1.0) - 0.375).abs() < 1e-15);
        assert_eq!(hat_integral(3.0, 4.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn dual_norm_matches_continuous_value() {
        // f = 1 on (0,1): z = x(1-x)/2, ‖z'‖² = 1/12.
        let mesh = build_mesh(200, 0.0, 1.0).unwrap();
        let widths: Vec<f64> = (0..200).map(|c| mesh.cell_width(c)).collect();
        let v = dual_norm_sq(&widths, &mesh.lumped_mass(), &vec![1.0; 201]);
        assert!((v - 1.0 / 12.0).abs() < 1e-4);
    }

    #[test]
    fn gibbs_duhem_constant_and_rough() {
        let m = model();
        let mesh = build_mesh(8, 0.0, 1.0).unwrap();
        let mut f = NodalField::from_nodes(&vec![vec![0.1, 0.2, 0.3]; 9]).unwrap();
        assert_eq!(gibbs_duhem_check(&f, &m, &mesh).unwrap(), 0.0);
        for k in 0..9 {
            f.node_mut(k)[0] = if k % 2 == 0 { 0.05 } else { 0.35 };
        }
        assert!(gibbs_duhem_check(&f, &m, &mesh).unwrap().is_finite());
    }
}
