//! Closed-form constitutive laws: mobility `a`, capillary slope `p_c'`,
//! relaxation `τ = β'`, the potential `β`, the chemical-potential integral
//! `f0` and the convex energy `𝓔`, plus the parameter-region validator.
//!
//! All functions use the base point `S = 1/2`, so `β`, `f0` and `𝓔` vanish
//! there. Powers of `S` and `1 - S` are evaluated through logarithms so that
//! the singular factors do not overflow before they have to.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Exponents, boundary state and numerical knobs of one model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub n_species: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub gamma1: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Boundary densities `S_i^Γ`.
    pub s_gamma: Vec<f64>,
    /// Time step.
    pub kappa: f64,
    /// Regularization weight.
    pub eps: f64,
    pub quadrature_tol: f64,
    pub rootfind_tol: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::p0()
    }
}

impl ModelParams {
    /// Interior point of the admissible exponent region:
    /// `λ = 7, γ = 6.2, γ₁ = 6, β₁ = β₂ = 6`, three species at 0.15 each.
    pub fn p0() -> Self {
        Self {
            n_species: 3,
            lambda: 7.0,
            gamma: 6.2,
            gamma1: 6.0,
            beta1: 6.0,
            beta2: 6.0,
            s_gamma: vec![0.15; 3],
            kappa: 1e-3,
            eps: 1e-3,
            quadrature_tol: 1e-13,
            rootfind_tol: 1e-13,
        }
    }

    fn check_open_unit(s: f64) -> Result<()> {
        if s > 0.0 && s < 1.0 {
            Ok(())
        } else {
            Err(Error::Domain { what: "S", value: s, domain: "0 < S < 1" })
        }
    }

    /// Mobility `a(S) = 1 / (S^-γ + (1-S)^-λ)`.
    pub(crate) fn mobility_raw(&self, s: f64) -> f64 {
        let (l, m) = logs(s);
        (-log_add_exp(-self.gamma * l, -self.lambda * m)).exp()
    }

    pub(crate) fn pc_prime_raw(&self, s: f64) -> f64 {
        s.powf(-self.beta1) + (1.0 - s).powf(-self.beta2)
    }

    pub(crate) fn tau_raw(&self, s: f64) -> f64 {
        let (l, m) = logs(s);
        let num = log_add_exp(self.gamma * l, (self.gamma - self.gamma1) * l + self.lambda * m);
        let den = log_add_exp(self.gamma * l, self.lambda * m);
        (num - den).exp()
    }

    /// `τ(S)/a(S) = (1-S)^-λ + S^-γ₁`.
    pub(crate) fn tau_over_a_raw(&self, s: f64) -> f64 {
        (1.0 - s).powf(-self.lambda) + s.powf(-self.gamma1)
    }

    // Antiderivative of τ/a, unnormalized.
    fn f0_antiderivative(&self, s: f64) -> f64 {
        let (l, m) = logs(s);
        ((1.0 - self.lambda) * m).exp() / (self.lambda - 1.0)
            - ((1.0 - self.gamma1) * l).exp() / (self.gamma1 - 1.0)
    }

    pub(crate) fn f0_raw(&self, s: f64) -> f64 {
        self.f0_antiderivative(s) - self.f0_antiderivative(0.5)
    }

    // Antiderivative of the unnormalized f0 antiderivative.
    fn energy_antiderivative(&self, s: f64) -> f64 {
        let (l, m) = logs(s);
        ((2.0 - self.lambda) * m).exp() / ((self.lambda - 1.0) * (self.lambda - 2.0))
            + ((2.0 - self.gamma1) * l).exp() / ((self.gamma1 - 1.0) * (self.gamma1 - 2.0))
    }

    pub(crate) fn energy_raw(&self, s: f64) -> f64 {
        self.energy_antiderivative(s)
            - self.energy_antiderivative(0.5)
            - self.f0_antiderivative(0.5) * (s - 0.5)
    }

    /// Antiderivative of `p_c'`; only differences of it are meaningful.
    pub(crate) fn pc_raw(&self, s: f64) -> f64 {
        let (l, m) = logs(s);
        ((1.0 - self.beta1) * l).exp() / (1.0 - self.beta1)
            + ((1.0 - self.beta2) * m).exp() / (self.beta2 - 1.0)
    }

    // Antiderivative of σ τ(σ)/a(σ).
    fn pressure_antiderivative(&self, s: f64) -> f64 {
        let (l, m) = logs(s);
        ((1.0 - self.lambda) * m).exp() / (self.lambda - 1.0)
            - ((2.0 - self.lambda) * m).exp() / (self.lambda - 2.0)
            + ((2.0 - self.gamma1) * l).exp() / (2.0 - self.gamma1)
    }

    /// `∫_{1/2}^S σ τ(σ)/a(σ) dσ`, the total-density part of the thermodynamic pressure.
    pub(crate) fn pressure_raw(&self, s: f64) -> f64 {
        self.pressure_antiderivative(s) - self.pressure_antiderivative(0.5)
    }

    /// Evaluates `a`, `p_c'`, `τ` and `τ/a` at one saturation.
    pub fn eval_coeffs(&self, s: f64) -> Result<CoefficientValues> {
        Self::check_open_unit(s)?;
        let a = self.mobility_raw(s);
        let tau = self.tau_raw(s);
        let tau_over_a = self.tau_over_a_raw(s);
        debug_assert!(
            !(tau / a).is_finite() || ((tau / a) - tau_over_a).abs() <= 1e-10 * tau_over_a,
            "closed-form τ/a disagrees with division at S = {s}"
        );
        Ok(CoefficientValues { a, pc_prime: self.pc_prime_raw(s), tau, tau_over_a })
    }

    /// `f0(S) = ∫_{1/2}^S τ/a`, in closed form.
    pub fn f0_integral(&self, s: f64) -> Result<f64> {
        Self::check_open_unit(s)?;
        Ok(self.f0_raw(s))
    }

    /// `𝓔(S) = ∫_{1/2}^S f0`, in closed form. Convex with `𝓔(1/2) = 𝓔'(1/2) = 0`.
    pub fn entropy_e(&self, s: f64) -> Result<f64> {
        Self::check_open_unit(s)?;
        Ok(self.energy_raw(s))
    }

    /// Constant `C` with `𝓔(S) ≥ C (S^(2-γ₁) + (1-S)^(2-λ))` near both endpoints:
    /// half of the smaller leading coefficient of the closed form.
    pub fn entropy_lower_bound_constant(&self) -> f64 {
        let c_low = 1.0 / ((self.gamma1 - 1.0) * (self.gamma1 - 2.0));
        let c_high = 1.0 / ((self.lambda - 1.0) * (self.lambda - 2.0));
        0.5 * c_low.min(c_high)
    }

    /// `∫_{1/2}^S σ τ/a dσ`.
    pub fn pressure_integral(&self, s: f64) -> Result<f64> {
        Self::check_open_unit(s)?;
        Ok(self.pressure_raw(s))
    }

    pub fn s_gamma_total(&self) -> f64 {
        self.s_gamma.iter().sum()
    }
}

/// `(ln S, ln(1 - S))`.
#[inline]
fn logs(s: f64) -> (f64, f64) {
    (s.ln(), (-s).ln_1p())
}

#[inline]
pub(crate) fn log_add_exp(x: f64, y: f64) -> f64 {
    let hi = x.max(y);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (-(x - y).abs()).exp().ln_1p()
}

/// Coefficients at a single saturation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientValues {
    pub a: f64,
    pub pc_prime: f64,
    pub tau: f64,
    pub tau_over_a: f64,
}

/// Outcome of [`validate_assumptions`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub accepted: bool,
    pub violated_clauses: Vec<String>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub p_gamma: f64,
    pub p_lambda: f64,
    pub p: f64,
    pub q: f64,
    /// Grid points where `p_c' > τ/a`; zero whenever the exponent clauses hold.
    pub pc_bound_violations: usize,
}

/// Number of grid points used to sample `p_c' ≤ τ/a`.
pub const PC_BOUND_GRID: usize = 10_000;

/// Checks the exponent region, the boundary state and the numerical knobs,
/// and derives the integrability exponents. Never fails: rejection is
/// expressed in the report.
pub fn validate_assumptions(params: &ModelParams) -> AssumptionReport {
    let ModelParams { lambda, gamma, gamma1, beta1, beta2, .. } = *params;
    let mut violated = Vec::new();
    let mut clause = |ok: bool, id: &str, detail: String| {
        if !ok {
            violated.push(format!("{id}: {detail}"));
        }
    };

    clause(5.0 < beta1, "5 < β₁", format!("β₁ = {beta1}"));
    clause(beta1 <= gamma1, "β₁ ≤ γ₁", format!("β₁ = {beta1}, γ₁ = {gamma1}"));
    clause(gamma1 < gamma, "γ₁ < γ", format!("γ₁ = {gamma1}, γ = {gamma}"));
    let gamma_bound = 0.5 * beta1 + 5.0 / 6.0 * (gamma1 - 2.0);
    clause(
        gamma < gamma_bound,
        "γ < β₁/2 + (5/6)(γ₁−2)",
        format!("γ = {gamma}, bound {gamma_bound:.4}"),
    );
    clause(5.0 < beta2, "5 < β₂", format!("β₂ = {beta2}"));
    clause(beta2 <= lambda, "β₂ ≤ λ", format!("β₂ = {beta2}, λ = {lambda}"));
    let lambda_bound = 3.0 * beta2 - 10.0;
    clause(
        lambda < lambda_bound,
        "λ < 3β₂ − 10",
        format!("λ = {lambda}, bound {lambda_bound:.4}"),
    );

    clause(params.n_species >= 1, "n ≥ 1", format!("n = {}", params.n_species));
    clause(
        params.s_gamma.len() == params.n_species,
        "len(S^Γ) = n",
        format!("len = {}, n = {}", params.s_gamma.len(), params.n_species),
    );
    clause(
        params.s_gamma.iter().all(|&s| s > 0.0),
        "S_i^Γ > 0",
        format!("S^Γ = {:?}", params.s_gamma),
    );
    let total = params.s_gamma_total();
    clause(total < 1.0, "Σ S_i^Γ < 1", format!("Σ = {total}"));
    clause(params.kappa > 0.0, "κ > 0", format!("κ = {}", params.kappa));
    clause(params.eps >= 0.0, "ε ≥ 0", format!("ε = {}", params.eps));
    clause(
        params.quadrature_tol > 0.0,
        "quadrature_tol > 0",
        format!("{}", params.quadrature_tol),
    );
    clause(params.rootfind_tol > 0.0, "rootfind_tol > 0", format!("{}", params.rootfind_tol));

    let alpha1 = 1.0 + (gamma - gamma1 - beta1) / 2.0;
    let alpha2 = 1.0 - beta2 / 2.0;
    let p_gamma = -(10.0 / 3.0 + gamma - 5.0 / 3.0 * gamma1 - beta1) / gamma;
    let p_lambda = -(4.0 / 3.0 - 2.0 / 3.0 * lambda + 2.0 - beta2) / lambda;
    let p = p_gamma.min(p_lambda);
    let q = 2.0 * p / (1.0 + p);

    let pc_bound_violations = (1..=PC_BOUND_GRID)
        .map(|j| j as f64 / (PC_BOUND_GRID as f64 + 1.0))
        .filter(|&s| params.pc_prime_raw(s) > params.tau_over_a_raw(s))
        .count();
    if pc_bound_violations > 0 {
        violated.push(format!("p_c' ≤ τ/a: violated at {pc_bound_violations} grid points"));
    }

    AssumptionReport {
        accepted: violated.is_empty(),
        violated_clauses: violated,
        alpha1,
        alpha2,
        p_gamma,
        p_lambda,
        p,
        q,
        pc_bound_violations,
    }
}

/// Cumulative table of `β` on breakpoints that are geometric towards both
/// endpoints and uniform in the middle; values between breakpoints are
/// completed by one Kronrod panel. Built once per model.
#[derive(Debug, Clone)]
struct BetaTable {
    breaks: Vec<f64>,
    cum: Vec<f64>,
}

impl BetaTable {
    fn build(params: &ModelParams) -> Result<Self> {
        // Repeated halving reaches the smallest subnormal exactly.
        let mut breaks: Vec<f64> =
            std::iter::successors(Some(0.0625f64), |&b| Some(b / 2.0).filter(|&h| h > 0.0))
                .collect();
        breaks.reverse();
        breaks.extend((9..=120).map(|j| j as f64 / 128.0));
        breaks.extend((5..=53).map(|k| 1.0 - 2f64.powi(-k)));
        debug_assert!(breaks.windows(2).all(|w| w[0] < w[1]));

        let half = breaks.iter().position(|&b| b == 0.5).expect("1/2 is a breakpoint");
        let tau = |s: f64| params.tau_raw(s);
        let mut cum = vec![0.0; breaks.len()];
        for k in half + 1..breaks.len() {
            cum[k] = cum[k - 1]
                + quadrature::integrate(tau, breaks[k - 1], breaks[k], params.quadrature_tol)?;
        }
        for k in (0..half).rev() {
            cum[k] = cum[k + 1]
                - quadrature::integrate(tau, breaks[k], breaks[k + 1], params.quadrature_tol)?;
        }
        Ok(Self { breaks, cum })
    }

    fn segment(&self, s: f64) -> usize {
        // Largest k with breaks[k] <= s, clamped to a valid left endpoint.
        self.breaks.partition_point(|&b| b <= s).saturating_sub(1)
    }

    fn value(&self, params: &ModelParams, s: f64) -> f64 {
        let k = self.segment(s);
        let b = self.breaks[k];
        if s == b {
            return self.cum[k];
        }
        self.cum[k] + quadrature::gk15(&|x| params.tau_raw(x), b, s).0
    }

    fn inf(&self) -> f64 {
        self.cum[0]
    }

    fn sup(&self) -> f64 {
        // τ ≤ 1, so the tail beyond the last breakpoint adds at most 2^-53.
        self.cum[self.cum.len() - 1] + 2f64.powi(-53)
    }
}

/// A validated parameter set together with the precomputed `β` table and
/// boundary-state quantities. Read-only after construction.
#[derive(Debug, Clone)]
pub struct Model {
    params: ModelParams,
    beta_table: BetaTable,
    s_gamma_total: f64,
    /// Upper bound of `τ` on `[0, 1]`.
    max_tau: f64,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        let report = validate_assumptions(&params);
        if !report.accepted {
            return Err(Error::Assumptions(report.violated_clauses));
        }
        let beta_table = BetaTable::build(&params)?;
        let s_gamma_total = params.s_gamma_total();
        // Fine interior grid plus points approaching S = 1, where τ → 1.
        let grid = (1..10_000)
            .map(|j| j as f64 / 10_000.0)
            .chain((1..=15).map(|k| 1.0 - 10f64.powi(-k)));
        let max_tau = grid.map(|s| params.tau_raw(s)).fold(0.0, f64::max);
        Ok(Self { params, beta_table, s_gamma_total, max_tau })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n_species(&self) -> usize {
        self.params.n_species
    }

    pub fn kappa(&self) -> f64 {
        self.params.kappa
    }

    pub fn eps(&self) -> f64 {
        self.params.eps
    }

    pub fn s_gamma(&self) -> &[f64] {
        &self.params.s_gamma
    }

    pub fn s_gamma_total(&self) -> f64 {
        self.s_gamma_total
    }

    /// `sup τ`, used for the constant in front of `∫ (D_κ β)²`.
    pub fn max_tau(&self) -> f64 {
        self.max_tau
    }

    /// Returns a copy of this model with a different time step or regularization.
    /// The `β` table does not depend on either, so it is reused.
    pub fn with_kappa_eps(&self, kappa: f64, eps: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(eps >= 0.0) {
            return Err(Error::Argument(format!("κ = {kappa}, ε = {eps}")));
        }
        let mut out = self.clone();
        out.params.kappa = kappa;
        out.params.eps = eps;
        Ok(out)
    }

    pub fn eval_coeffs(&self, s: f64) -> Result<CoefficientValues> {
        self.params.eval_coeffs(s)
    }

    pub fn f0_integral(&self, s: f64) -> Result<f64> {
        self.params.f0_integral(s)
    }

    pub fn entropy_e(&self, s: f64) -> Result<f64> {
        self.params.entropy_e(s)
    }

    /// `β(S) = ∫_{1/2}^S τ`.
    pub fn beta_value(&self, s: f64) -> Result<f64> {
        ModelParams::check_open_unit(s)?;
        Ok(self.beta_raw(s))
    }

    pub(crate) fn beta_raw(&self, s: f64) -> f64 {
        self.beta_table.value(&self.params, s)
    }

    /// Inverts `β` by bracketing on the table and safeguarded Newton steps.
    pub fn beta_inverse(&self, b: f64) -> Result<f64> {
        let table = &self.beta_table;
        let (low, high) = (table.inf(), table.sup());
        if !(b > low && b < high) {
            return Err(Error::Range { value: b, low, high });
        }
        let k = table.cum.partition_point(|&c| c <= b).saturating_sub(1);
        let mut lo = table.breaks[k];
        if table.cum[k] == b {
            return Ok(lo);
        }
        let mut hi = table.breaks.get(k + 1).copied().unwrap_or(1.0 - f64::EPSILON / 2.0);
        let tol = self.params.rootfind_tol;
        let mut s = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = self.beta_raw(s) - b;
            if g.abs() <= tol {
                return Ok(s);
            }
            if g > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let newton = s - g / self.params.tau_raw(s);
            s = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= 2.0 * f64::EPSILON * hi {
                return Ok(s);
            }
        }
        Err(Error::RootFind(format!("β⁻¹({b}) did not converge")))
    }
}
