//! Frozen-coefficient P1 assembly of one linearized implicit step.
//!
//! Per-cell coefficients are divided differences of nodal closed forms, which
//! makes the discrete chain rule exact: `a_c ∇f0_h = ∇β_h` on every cell and
//! `Σ_i θ_i ∇w_i = ∇f_h` with `θ` the normalized logarithmic mean of the
//! species fractions.

use nalgebra::DMatrix;

use crate::constitutive::Model;
use crate::entropy::{diffusion_matrix_at, state_from_w, DiffusionMatrixSpec};
use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::mesh::{Mesh, NodalField};
use crate::quadrature::GAUSS2;

/// Assembled operator and load over interior degrees of freedom.
/// Unknown `i` of interior node `k` sits at `(k - 1) n + i`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: BandMatrix,
    pub rhs: Vec<f64>,
    pub sigma: f64,
    n_species: usize,
    num_nodes: usize,
}

impl LinearSystem {
    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Extends an interior solution by the homogeneous boundary values.
    pub fn to_nodal(&self, x: &[f64]) -> NodalField {
        let n = self.n_species;
        let mut values = vec![0.0; n * self.num_nodes];
        values[n..n + x.len()].copy_from_slice(x);
        NodalField::new(n, values).expect("consistent sizes")
    }

    pub fn interior(&self, field: &NodalField) -> Vec<f64> {
        let n = self.n_species;
        field.values()[n..n * (self.num_nodes - 1)].to_vec()
    }
}

/// Nodal scalars of a species field that the cell coefficients are built from.
#[derive(Debug, Clone)]
pub(crate) struct NodeScalars {
    pub total: Vec<f64>,
    pub beta: Vec<f64>,
    pub f0: Vec<f64>,
    pub pc: Vec<f64>,
}

impl NodeScalars {
    pub fn new(model: &Model, species: &NodalField) -> Self {
        let total = species.totals();
        let p = model.params();
        Self {
            beta: total.iter().map(|&s| model.beta_raw(s)).collect(),
            f0: total.iter().map(|&s| p.f0_raw(s)).collect(),
            pc: total.iter().map(|&s| p.pc_raw(s)).collect(),
            total,
        }
    }
}

/// States recovered from an entropy-variable iterate.
#[derive(Debug, Clone)]
pub(crate) struct Frozen {
    pub species: NodalField,
    pub scalars: NodeScalars,
    pub f_prime: Vec<f64>,
}

pub(crate) fn recover(
    model: &Model,
    mesh: &Mesh,
    w: &NodalField,
    prev_totals: &[f64],
) -> Result<Frozen> {
    let n = model.n_species();
    let num_nodes = mesh.num_nodes();
    let mut species = NodalField::zeros(n, num_nodes);
    let mut f_prime = vec![0.0; num_nodes];
    for k in 0..num_nodes {
        if mesh.is_boundary(k) {
            species.node_mut(k).copy_from_slice(model.s_gamma());
            continue;
        }
        let (vars, state) = state_from_w(model, w.node(k), prev_totals[k])?;
        species.node_mut(k).copy_from_slice(state.s());
        f_prime[k] = vars.f_prime;
    }
    let scalars = NodeScalars::new(model, &species);
    Ok(Frozen { species, scalars, f_prime })
}

/// Below this total-density jump the divided differences are replaced by midpoint values.
const DIVIDED_DIFFERENCE_MIN: f64 = 1e-6;

/// Logarithmic mean `(b - a)/(ln b - ln a)`.
pub(crate) fn log_mean(a: f64, b: f64) -> f64 {
    let r = b / a - 1.0;
    if r.abs() < 1e-3 {
        a * (1.0 + r / 2.0 - r * r / 12.0 + r * r * r / 24.0 - 19.0 * r.powi(4) / 720.0)
    } else {
        (b - a) / (b / a).ln()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CellCoeffs {
    pub h: f64,
    /// Mobility consistent with `a_c ∇f0_h = ∇β_h`.
    pub a_c: f64,
    pub tau_bar: f64,
    #[cfg_attr(not(test), allow(dead_code))]
    pub f0_bar: f64,
    pub p_bar: f64,
    /// `a_c (p̄ + τ̄/κ) / (f̄0 + τ̄/κ)`.
    pub g_prime: f64,
    /// `a_c (f̄0 - p̄) / (f̄0 + τ̄/κ)`, multiplies the history gradient.
    pub hist_factor: f64,
    pub theta: Vec<f64>,
    pub d_bar: DMatrix<f64>,
}

pub(crate) fn cell_coeffs(
    model: &Model,
    spec: &DiffusionMatrixSpec,
    mesh: &Mesh,
    cell: usize,
    species: &NodalField,
    sc: &NodeScalars,
) -> Result<CellCoeffs> {
    let (l, r) = (cell, cell + 1);
    let h = mesh.cell_width(cell);
    let p = model.params();
    let kappa = model.kappa();
    let ds = sc.total[r] - sc.total[l];
    let (tau_bar, f0_bar, p_bar) = if ds.abs() < DIVIDED_DIFFERENCE_MIN {
        let mid = 0.5 * (sc.total[l] + sc.total[r]);
        (p.tau_raw(mid), p.tau_over_a_raw(mid), p.pc_prime_raw(mid))
    } else {
        (
            (sc.beta[r] - sc.beta[l]) / ds,
            (sc.f0[r] - sc.f0[l]) / ds,
            (sc.pc[r] - sc.pc[l]) / ds,
        )
    };
    let a_c = tau_bar / f0_bar;
    let f_s = f0_bar + tau_bar / kappa;
    let g_prime = a_c * (p_bar + tau_bar / kappa) / f_s;
    let hist_factor = a_c * (f0_bar - p_bar) / f_s;

    let (sl, sr) = (species.node(l), species.node(r));
    let lm: Vec<f64> = sl
        .iter()
        .zip(sr)
        .map(|(&a, &b)| log_mean(a / sc.total[l], b / sc.total[r]))
        .collect();
    let lm_sum: f64 = lm.iter().sum();
    let theta: Vec<f64> = lm.iter().map(|v| v / lm_sum).collect();

    let n = model.n_species();
    let mut d_bar = DMatrix::zeros(n, n);
    for g in GAUSS2 {
        let s: Vec<f64> = sl.iter().zip(sr).map(|(a, b)| a + g * (b - a)).collect();
        d_bar += diffusion_matrix_at(&s, spec) * 0.5;
    }

    for (what, v) in [
        ("tau_bar", tau_bar),
        ("f0_bar", f0_bar),
        ("p_bar", p_bar),
        ("a_c", a_c),
        ("g_prime", g_prime),
        ("hist_factor", hist_factor),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { cell, what });
        }
    }
    if theta.iter().any(|t| !t.is_finite()) || d_bar.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { cell, what: "theta/D" });
    }
    Ok(CellCoeffs { h, a_c, tau_bar, f0_bar, p_bar, g_prime, hist_factor, theta, d_bar })
}

/// Assembles `[σ M_L J/κ + K] w = σ [M_L J w*/κ - M_L (S* - S_prev)/κ + H]`,
/// where `J = ∂S/∂w` and `K`, `H` are frozen at `w*`. A fixed point at σ = 1
/// is one step of the entropy-stable scheme; σ = 0 maps to `w = 0`.
pub(crate) fn assemble_frozen(
    model: &Model,
    spec: &DiffusionMatrixSpec,
    mesh: &Mesh,
    frozen: &Frozen,
    w_star: &NodalField,
    s_prev: &NodalField,
    beta_prev: &[f64],
    sigma: f64,
) -> Result<LinearSystem> {
    let n = model.n_species();
    let num_nodes = mesh.num_nodes();
    let dim = n * (num_nodes - 2);
    let kappa = model.kappa();
    let eps = model.eps();
    let mut matrix = BandMatrix::zeros(dim, 2 * n - 1);
    let mut rhs = vec![0.0; dim];
    let mass = mesh.lumped_mass();
    let dof = |k: usize, i: usize| (k - 1) * n + i;

    for k in 1..num_nodes - 1 {
        let s = frozen.species.node(k);
        let total = frozen.scalars.total[k];
        let fp = frozen.f_prime[k];
        let scale = sigma * mass[k] / kappa;
        let ws = w_star.node(k);
        for i in 0..n {
            let xi = s[i] / total;
            let mut jw = 0.0;
            for j in 0..n {
                let xj = s[j] / total;
                let delta = if i == j { xi } else { 0.0 };
                let jac = total * (delta - xi * xj) + xi * xj / fp;
                matrix.add(dof(k, i), dof(k, j), scale * jac);
                jw += jac * ws[j];
            }
            rhs[dof(k, i)] += scale * jw - scale * (s[i] - s_prev.node(k)[i]);
        }
    }

    for c in 0..mesh.num_cells() {
        let cc = cell_coeffs(model, spec, mesh, c, &frozen.species, &frozen.scalars)?;
        let hc = cc.hist_factor * (beta_prev[c + 1] - beta_prev[c]) / (cc.h * kappa);
        let block = DMatrix::from_fn(n, n, |i, l| {
            let reg = if i == l { eps * cc.theta[i] } else { 0.0 };
            (cc.g_prime * cc.theta[i] * cc.theta[l] + cc.d_bar[(i, l)] + reg) / cc.h
        });
        for (a, sign_a) in [(c, -1.0), (c + 1, 1.0)] {
            if mesh.is_boundary(a) {
                continue;
            }
            for i in 0..n {
                rhs[dof(a, i)] += sigma * sign_a * cc.theta[i] * hc;
            }
            for (b, sign_b) in [(c, -1.0), (c + 1, 1.0)] {
                if mesh.is_boundary(b) {
                    continue;
                }
                let sign = sign_a * sign_b;
                for i in 0..n {
                    for l in 0..n {
                        matrix.add(dof(a, i), dof(b, l), sign * block[(i, l)]);
                    }
                }
            }
        }
    }

    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { cell: usize::MAX, what: "load" });
    }
    Ok(LinearSystem { matrix, rhs, sigma, n_species: n, num_nodes })
}

/// Recovers the states behind `w_star` (history totals from `s_prev`) and
/// assembles the linearized step at homotopy weight `sigma`.
pub fn assemble_system(
    w_star: &NodalField,
    s_prev: &NodalField,
    model: &Model,
    spec: &DiffusionMatrixSpec,
    mesh: &Mesh,
    sigma: f64,
) -> Result<LinearSystem> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::Argument(format!("sigma = {sigma} outside [0, 1]")));
    }
    s_prev.check_species(model, mesh)?;
    if w_star.num_nodes() != mesh.num_nodes() || w_star.n_species() != model.n_species() {
        return Err(Error::SizeMismatch { expected: mesh.num_nodes(), got: w_star.num_nodes() });
    }
    let prev = NodeScalars::new(model, s_prev);
    let frozen = recover(model, mesh, w_star, &prev.total)?;
    assemble_frozen(model, spec, mesh, &frozen, w_star, s_prev, &prev.beta, sigma)
}
