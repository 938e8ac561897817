//! Free energy, chemical potentials, the entropy-variable transform and the
//! cross-diffusion matrix family.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::constitutive::Model;
use crate::error::{Error, Result};

/// A point of the admissible set: every `S_i > 0` and `S = Σ S_i < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesState {
    s: Vec<f64>,
    total: f64,
}

impl SpeciesState {
    pub fn new(s: Vec<f64>) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::Argument("empty species vector".into()));
        }
        if let Some(&bad) = s.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Domain { what: "S_i", value: bad, domain: "S_i > 0" });
        }
        let total: f64 = s.iter().sum();
        if !(total < 1.0) {
            return Err(Error::Domain { what: "S", value: total, domain: "Σ S_i < 1" });
        }
        Ok(Self { s, total })
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.s
    }
}

/// Entropy variables at one point together with the data of the inverse map.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyVars {
    pub w: Vec<f64>,
    /// `∂S/∂w_j`.
    pub ds_dw: Vec<f64>,
    /// `f(S)` of the scalar inversion relation.
    pub f_value: f64,
    /// `f'(S) = τ/a + τ/κ`.
    pub f_prime: f64,
}

impl EntropyVars {
    /// `M_ij = S_i ∂S/∂w_j`.
    pub fn mobility_matrix(&self, state: &SpeciesState) -> DMatrix<f64> {
        let n = state.n();
        DMatrix::from_fn(n, n, |i, j| state.s[i] * self.ds_dw[j])
    }

    /// `∂S_i/∂w_j`, symmetric positive definite.
    pub fn mass_jacobian(&self, state: &SpeciesState) -> DMatrix<f64> {
        let n = state.n();
        let total = state.total;
        DMatrix::from_fn(n, n, |i, j| {
            let (xi, xj) = (state.s[i] / total, state.s[j] / total);
            let delta = if i == j { xi } else { 0.0 };
            total * (delta - xi * xj) + xi * xj / self.f_prime
        })
    }
}

fn check_species(model: &Model, state: &SpeciesState) -> Result<()> {
    if state.n() != model.n_species() {
        return Err(Error::SizeMismatch { expected: model.n_species(), got: state.n() });
    }
    Ok(())
}

/// `Σ S_i log(S_i/S) + 𝓔(S)`.
pub fn free_energy(model: &Model, state: &SpeciesState) -> Result<f64> {
    check_species(model, state)?;
    let total = state.total;
    let mixing: f64 = state.s.iter().map(|&si| si * (si / total).ln()).sum();
    Ok(mixing + model.entropy_e(total)?)
}

/// `μ_i = log(S_i/S) + f0(S)`.
pub fn chem_potentials(model: &Model, state: &SpeciesState) -> Result<Vec<f64>> {
    check_species(model, state)?;
    let f0 = model.f0_integral(state.total)?;
    Ok(state.s.iter().map(|&si| (si / state.total).ln() + f0).collect())
}

/// `𝓕(S) - 𝓕(S^Γ) - μ(S^Γ)·(S - S^Γ)`.
pub fn relative_free_energy(model: &Model, state: &SpeciesState) -> Result<f64> {
    let gamma = boundary_state(model)?;
    let mu_g = chem_potentials(model, &gamma)?;
    let linear: f64 = mu_g
        .iter()
        .zip(state.s.iter().zip(&gamma.s))
        .map(|(m, (s, g))| m * (s - g))
        .sum();
    Ok(free_energy(model, state)? - free_energy(model, &gamma)? - linear)
}

pub fn boundary_state(model: &Model) -> Result<SpeciesState> {
    SpeciesState::new(model.s_gamma().to_vec())
}

/// `Π v = v - mean(v)`.
pub fn project_orthogonal(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

/// `S_i = S e^(μ*_i) / Σ_j e^(μ*_j)`.
pub fn species_from_relative(total: f64, mu_star: &[f64]) -> Result<SpeciesState> {
    if !(total > 0.0 && total < 1.0) {
        return Err(Error::Domain { what: "S", value: total, domain: "0 < S < 1" });
    }
    if mu_star.iter().any(|m| !m.is_finite()) {
        return Err(Error::Argument("non-finite relative potential".into()));
    }
    let max = mu_star.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = mu_star.iter().map(|m| (m - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    SpeciesState::new(e.iter().map(|v| total * v / sum).collect())
}

/// `f(S) = f0(S) - f0(S^Γ) + (β(S) - β(s_prev))/κ`, with `β(s_prev)` supplied.
fn f_scalar(model: &Model, s: f64, f0_gamma: f64, beta_prev: f64) -> f64 {
    model.params().f0_raw(s) - f0_gamma + (model.beta_raw(s) - beta_prev) / model.kappa()
}

fn f_prime(model: &Model, s: f64) -> f64 {
    let p = model.params();
    let tau = p.tau_raw(s);
    p.tau_over_a_raw(s) + tau / model.kappa()
}

fn check_prev(s_prev_total: f64) -> Result<()> {
    if s_prev_total > 0.0 && s_prev_total < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain { what: "s_prev_total", value: s_prev_total, domain: "0 < S < 1" })
    }
}

/// Entropy variables `w_i = μ_i(S) - μ_i(S^Γ) + (β(S) - β(s_prev))/κ`.
pub fn w_from_state(model: &Model, state: &SpeciesState, s_prev_total: f64) -> Result<EntropyVars> {
    check_species(model, state)?;
    check_prev(s_prev_total)?;
    let gamma_total = model.s_gamma_total();
    let f0_gamma = model.params().f0_raw(gamma_total);
    let f_value = f_scalar(model, state.total, f0_gamma, model.beta_raw(s_prev_total));
    let w = state
        .s
        .iter()
        .zip(model.s_gamma())
        .map(|(&si, &gi)| (si / state.total).ln() - (gi / gamma_total).ln() + f_value)
        .collect();
    let fp = f_prime(model, state.total);
    let ds_dw = state.s.iter().map(|&si| si / state.total / fp).collect();
    Ok(EntropyVars { w, ds_dw, f_value, f_prime: fp })
}

/// Inverts the transform: solves `f(S) = log Σ_j (S_j^Γ/S^Γ) e^(w_j)` for the
/// total, then distributes it over species.
pub fn state_from_w(
    model: &Model,
    w: &[f64],
    s_prev_total: f64,
) -> Result<(EntropyVars, SpeciesState)> {
    if w.len() != model.n_species() {
        return Err(Error::SizeMismatch { expected: model.n_species(), got: w.len() });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite entropy variable".into()));
    }
    check_prev(s_prev_total)?;
    let s_gamma = model.s_gamma();
    let gamma_total = model.s_gamma_total();
    let wmax = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weighted: Vec<f64> = s_gamma.iter().zip(w).map(|(g, wi)| g * (wi - wmax).exp()).collect();
    let sum: f64 = weighted.iter().sum();
    let target = wmax + sum.ln() - gamma_total.ln();

    let f0_gamma = model.params().f0_raw(gamma_total);
    let beta_prev = model.beta_raw(s_prev_total);
    let s = solve_total(model, target, s_prev_total, f0_gamma, beta_prev)?;

    let fp = f_prime(model, s);
    let species: Vec<f64> = weighted.iter().map(|v| s * v / sum).collect();
    let ds_dw = weighted.iter().map(|v| v / sum / fp).collect();
    let f_value = f_scalar(model, s, f0_gamma, beta_prev);
    let state = SpeciesState::new(species)?;
    Ok((EntropyVars { w: w.to_vec(), ds_dw, f_value, f_prime: fp }, state))
}

fn solve_total(model: &Model, target: f64, s0: f64, f0_gamma: f64, beta_prev: f64) -> Result<f64> {
    let g = |s: f64| f_scalar(model, s, f0_gamma, beta_prev) - target;
    let tol = model.params().rootfind_tol * target.abs().max(1.0);
    let g0 = g(s0);
    if g0 == 0.0 {
        return Ok(s0);
    }
    let fail = || Error::RootFind(format!("no total density with f(S) = {target}"));

    // Bracket by halving the distance to the endpoint on the side of the root.
    let (mut lo, mut hi) = (s0, s0);
    if g0 < 0.0 {
        let gap = 1.0 - s0;
        let mut k = 0;
        loop {
            k += 1;
            let cand = 1.0 - gap * 0.5f64.powi(k);
            if cand >= 1.0 || k > 1100 {
                return Err(fail());
            }
            if g(cand) >= 0.0 {
                hi = cand;
                break;
            }
            lo = cand;
        }
    } else {
        let mut k = 0;
        loop {
            k += 1;
            let cand = s0 * 0.5f64.powi(k);
            if cand <= 0.0 || k > 1100 {
                return Err(fail());
            }
            if g(cand) <= 0.0 {
                lo = cand;
                break;
            }
            hi = cand;
        }
    }

    let mut s = if g0 < 0.0 { hi } else { lo };
    for _ in 0..200 {
        let gs = g(s);
        if gs.abs() <= tol {
            return Ok(s);
        }
        if gs > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(s);
        }
        let newton = s - gs / f_prime(model, s);
        s = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Err(fail())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionKind {
    ScaledProjection,
    StateWeighted,
}

/// Family of matrices `D(S)` with `d0 |Πv|² ≤ v·D v ≤ d1 |Πv|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionMatrixSpec {
    pub kind: DiffusionKind,
    pub d0: f64,
    pub d1: f64,
}

impl Default for DiffusionMatrixSpec {
    fn default() -> Self {
        Self { kind: DiffusionKind::ScaledProjection, d0: 1.0, d1: 1.0 }
    }
}

impl DiffusionMatrixSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0) || !(self.d1 >= self.d0) || !self.d1.is_finite() {
            return Err(Error::Argument(format!(
                "diffusion constants need 0 < d0 ≤ d1, got d0 = {}, d1 = {}",
                self.d0, self.d1
            )));
        }
        Ok(())
    }
}

/// `Π = I - 𝟙𝟙ᵀ/n`.
pub fn projection_matrix(n: usize) -> DMatrix<f64> {
    let inv = 1.0 / n as f64;
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - inv } else { -inv })
}

pub fn diffusion_matrix(state: &SpeciesState, spec: &DiffusionMatrixSpec) -> DMatrix<f64> {
    diffusion_matrix_at(state.s(), spec)
}

pub(crate) fn diffusion_matrix_at(s: &[f64], spec: &DiffusionMatrixSpec) -> DMatrix<f64> {
    let n = s.len();
    let pi = projection_matrix(n);
    match spec.kind {
        DiffusionKind::ScaledProjection => pi * spec.d0,
        DiffusionKind::StateWeighted => {
            let weights = DVector::from_iterator(
                n,
                s.iter().map(|&si| spec.d0 + (spec.d1 - spec.d0) * si),
            );
            let d = &pi * DMatrix::from_diagonal(&weights) * &pi;
            (&d + d.transpose()) * 0.5
        }
    }
}

/// Orthonormal basis of the complement of `span{𝟙}` as columns of an `n × (n-1)` matrix.
fn helmert_basis(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n - 1, |i, k| {
        let k1 = k + 1;
        let norm = ((k1 * (k1 + 1)) as f64).sqrt();
        if i < k1 {
            1.0 / norm
        } else if i == k1 {
            -(k1 as f64) / norm
        } else {
            0.0
        }
    })
}

/// Extreme values of `v·Dv / |Πv|²` on the complement of the constants.
pub fn hypocoercivity_constants(matrix: &DMatrix<f64>) -> Result<(f64, f64)> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::SizeMismatch { expected: n, got: matrix.ncols() });
    }
    if n < 2 {
        return Err(Error::Argument("need at least two species".into()));
    }
    let scale = matrix.amax().max(f64::MIN_POSITIVE);
    if (matrix - matrix.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Argument("matrix is not symmetric".into()));
    }
    let q = helmert_basis(n);
    let restricted = q.transpose() * matrix * &q;
    let eig = SymmetricEigen::new(restricted);
    let low = eig.eigenvalues.min();
    let high = eig.eigenvalues.max();
    Ok((low, high))
}

/// Tests `|α·v|² + |v - (β·v)β|² ≥ (α·β)²|v|²/4` for unit `α`, `β`.
pub fn jmz_inequality_check(alpha: &[f64], beta: &[f64], v: &[f64]) -> Result<bool> {
    let n = v.len();
    if alpha.len() != n || beta.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: alpha.len().max(beta.len()) });
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for (name, u) in [("alpha", alpha), ("beta", beta)] {
        let norm = dot(u, u).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Argument(format!("{name} has norm {norm}, expected 1")));
        }
    }
    let av = dot(alpha, v);
    let bv = dot(beta, v);
    let rest: f64 = v.iter().zip(beta).map(|(vi, bi)| (vi - bv * bi).powi(2)).sum();
    let ab = dot(alpha, beta);
    Ok(av * av + rest >= 0.25 * ab * ab * dot(v, v))
}
