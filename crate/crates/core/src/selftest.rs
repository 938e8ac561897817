//! Invariant suite on the reference parameter set, one result per criterion.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::assemble_system;
use crate::constitutive::{validate_assumptions, Model, ModelParams};
use crate::diagnostics::{gibbs_duhem_check, weak_residual};
use crate::entropy::{jmz_inequality_check, state_from_w, w_from_state, DiffusionMatrixSpec, SpeciesState};
use crate::error::Result;
use crate::mesh::{build_mesh, Mesh, NodalField};
use crate::solver::{refinement_study, run_simulation, SolverConfig, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Box half-width for entropy variables in the round-trip check; beyond a
/// few hundred the smallest species underflows.
pub const W_SAMPLE_BOUND: f64 = 50.0;

/// Exponents drawn uniformly from the admissible region.
pub fn random_valid_params(rng: &mut impl Rng) -> ModelParams {
    loop {
        let beta1 = rng.gen_range(5.0..9.0);
        let gamma1 = rng.gen_range(beta1..3.0 * beta1 - 10.0);
        let bound = 0.5 * beta1 + 5.0 / 6.0 * (gamma1 - 2.0);
        let gamma = rng.gen_range(gamma1..bound);
        let beta2 = rng.gen_range(5.0..9.0);
        let lambda = rng.gen_range(beta2..3.0 * beta2 - 10.0);
        let p = ModelParams { lambda, gamma, gamma1, beta1, beta2, ..ModelParams::p0() };
        if p.gamma > p.gamma1 && p.lambda < 3.0 * p.beta2 - 10.0 {
            return p;
        }
    }
}

/// Uniform sample of the admissible set with `n` species.
pub fn random_state(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let e: Vec<f64> = (0..=n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let z: f64 = e.iter().sum();
        let s: Vec<f64> = e[..n].iter().map(|v| v / z).collect();
        if s.iter().all(|&v| v > 0.0) {
            return s;
        }
    }
}

pub fn sine_initial(model: &Model, mesh: &Mesh, amplitude: f64) -> NodalField {
    let mut f = NodalField::from_nodes(&vec![model.s_gamma().to_vec(); mesh.num_nodes()])
        .expect("uniform rows");
    for k in 1..mesh.num_nodes() - 1 {
        let xi = (mesh.nodes()[k] - mesh.x_left()) / mesh.length();
        f.node_mut(k)[0] += amplitude * (PI * xi).sin();
    }
    f
}

fn reference_run(cells: usize, kappa: f64) -> Result<(Model, Trajectory)> {
    let model = Model::new(ModelParams::p0())?.with_kappa_eps(kappa, 1e-3)?;
    let mesh = build_mesh(cells, 0.0, 1.0)?;
    let init = sine_initial(&model, &mesh, 0.1);
    let traj = run_simulation(&init, &model, &DiffusionMatrixSpec::default(), &mesh, &SolverConfig::default())?;
    Ok((model, traj))
}

fn timed(id: u32, name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult { id, name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Runs the full suite; `seed` drives every randomized check.
pub fn run_selftest(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let spec = DiffusionMatrixSpec::default();
    let cfg = SolverConfig::default();

    out.push(timed(1, "assumption arithmetic", || {
        let r = validate_assumptions(&ModelParams::p0());
        let ok = r.accepted
            && (r.alpha1 + 1.9).abs() <= 1e-12
            && (r.alpha2 + 2.0).abs() <= 1e-12
            && (r.p - 1.0430).abs() <= 1e-3
            && (r.q - 1.0211).abs() <= 1e-3;
        Ok((ok, format!("α₁={} α₂={} p={:.5} q={:.5}", r.alpha1, r.alpha2, r.p, r.q)))
    }));

    out.push(timed(2, "p_c' ≤ τ/a on the grid", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sets = vec![ModelParams::p0()];
        sets.extend((0..20).map(|_| random_valid_params(&mut rng)));
        let violations: usize = sets.iter().map(|p| validate_assumptions(p).pc_bound_violations).sum();
        Ok((violations == 0, format!("{violations} violations over {} parameter sets", sets.len())))
    }));

    out.push(timed(3, "transform bijectivity", || {
        let model = Model::new(ModelParams::p0())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-W_SAMPLE_BOUND..W_SAMPLE_BOUND)).collect();
            let prev = rng.gen_range(0.01..0.99);
            let (_, st) = state_from_w(&model, &w, prev)?;
            let w2 = w_from_state(&model, &st, prev)?.w;
            let (_, st2) = state_from_w(&model, &w2, prev)?;
            for (a, b) in w.iter().zip(&w2).chain(st.s().iter().zip(st2.s())) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok((worst <= 1e-10, format!("max error {worst:e}")))
    }));

    out.push(timed(4, "mobility matrix structure", || {
        let model = Model::new(ModelParams::p0())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
        let (mut asym, mut neg, mut second) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..1000 {
            let st = SpeciesState::new(random_state(&mut rng, 3))?;
            let prev = rng.gen_range(0.01..0.99);
            let m = w_from_state(&model, &st, prev)?.mobility_matrix(&st);
            let scale = m.amax();
            asym = asym.max((&m - m.transpose()).amax() / scale);
            let mut ev: Vec<f64> = SymmetricEigen::new(0.5 * (&m + m.transpose())).eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            neg = neg.max(-ev[0] / scale);
            second = second.max(ev[ev.len() - 2].abs() / scale);
        }
        let ok = asym <= 1e-12 && neg <= 1e-12 && second <= 1e-12;
        Ok((ok, format!("asymmetry {asym:e}, most negative {neg:e}, second eigenvalue {second:e} (relative)")))
    }));

    out.push(timed(5, "projection inequality", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
        let mut violations = 0;
        for _ in 0..100_000 {
            let n = rng.gen_range(2..=6);
            let unit = |rng: &mut ChaCha8Rng| {
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect::<Vec<_>>()
            };
            let (a, b) = (unit(&mut rng), unit(&mut rng));
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            if !jmz_inequality_check(&a, &b, &v)? {
                violations += 1;
            }
        }
        Ok((violations == 0, format!("{violations} violations")))
    }));

    out.push(timed(6, "coercivity of the assembled system", || {
        let mesh = build_mesh(16, 0.0, 1.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(6));
        let mut detail = String::new();
        let mut ok = true;
        for eps in [1e-3, 0.0] {
            let model = Model::new(ModelParams::p0())?.with_kappa_eps(1e-3, eps)?;
            let prev = sine_initial(&model, &mesh, 0.1);
            let mut w = NodalField::zeros(3, mesh.num_nodes());
            for k in 1..mesh.num_nodes() - 1 {
                for v in w.node_mut(k) {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            let sys = assemble_system(&w, &prev, &model, &spec, &mesh, 1.0)?;
            let dense = sys.matrix.to_dense();
            let asym = sys.matrix.symmetry_error();
            let min_ev = SymmetricEigen::new(dense.clone()).eigenvalues.min();
            let mut min_q = f64::INFINITY;
            for _ in 0..1000 {
                let v = nalgebra::DVector::from_fn(dense.nrows(), |_, _| rng.gen_range(-1.0..1.0));
                min_q = min_q.min(v.dot(&(&dense * &v)));
            }
            ok &= asym <= 1e-12 && min_q >= -1e-10 && (eps == 0.0 || min_ev > 0.0);
            detail.push_str(&format!("ε={eps}: asym {asym:e}, λ_min {min_ev:e}, min vᵀAv {min_q:e}; "));
        }
        Ok((ok, detail))
    }));

    out.push(timed(7, "equilibrium stationarity", || {
        let model = Model::new(ModelParams::p0())?;
        let mesh = build_mesh(64, 0.0, 1.0)?;
        let init = sine_initial(&model, &mesh, 0.0);
        let c = SolverConfig { t_end: 100.0 * model.kappa(), ..cfg.clone() };
        let traj = run_simulation(&init, &model, &spec, &mesh, &c)?;
        let drift = traj
            .states
            .iter()
            .flat_map(|s| s.values().chunks_exact(3).flat_map(|n| n.iter().zip(model.s_gamma()).map(|(a, b)| (a - b).abs())).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        let diss = traj
            .budgets
            .iter()
            .map(|b| [b.diss_dbeta_sq, b.diss_capillary, b.diss_grad_dbeta, b.diss_eps_w, b.diss_proj_mu])
            .flatten()
            .fold(0.0, f64::max);
        let ok = traj.states.len() == 101 && drift <= 1e-9 && diss <= 1e-12;
        Ok((ok, format!("max drift {drift:e}, max dissipation {diss:e}")))
    }));

    let reference = reference_run(64, 1e-3);
    out.push(timed(8, "discrete entropy inequality", || {
        let (_, traj) = reference.as_ref().map_err(Clone::clone)?;
        let min_margin = traj.entropy_margins.iter().copied().fold(f64::INFINITY, f64::min);
        let monotone = traj.lyapunov.windows(2).all(|w| w[1] <= w[0]);
        Ok((min_margin >= 0.0 && monotone, format!("min margin {min_margin:e}, monotone {monotone}")))
    }));
    out.push(timed(9, "positivity and boundedness", || {
        let (_, traj) = reference.as_ref().map_err(Clone::clone)?;
        let min_s = traj.states.iter().flat_map(|s| s.values().iter().copied()).fold(f64::INFINITY, f64::min);
        let max_t = traj.states.iter().flat_map(|s| s.totals()).fold(f64::NEG_INFINITY, f64::max);
        Ok((min_s > 0.0 && max_t < 1.0, format!("min S_i {min_s}, max S {max_t}")))
    }));

    out.push(timed(10, "κ-uniformity and temporal order", || {
        let model = Model::new(ModelParams::p0())?;
        let mesh = build_mesh(64, 0.0, 1.0)?;
        let init = sine_initial(&model, &mesh, 0.1);
        let report = refinement_study(&init, &model, &spec, &mesh, &cfg, &[1e-3, 5e-4, 2.5e-4], &[1e-3])?;
        let mut worst = (String::new(), 1.0f64);
        for key in report.kappa_runs[0].apriori.keys() {
            let vals: Vec<f64> = report.kappa_runs.iter().map(|r| r.apriori[key].abs()).collect();
            let max = vals.iter().copied().fold(0.0, f64::max);
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let ratio = if max == 0.0 { 1.0 } else { max / min };
            if !(ratio <= worst.1) {
                worst = (key.clone(), ratio);
            }
        }
        let order = report.kappa_orders[0];
        let ok = worst.1 <= 2.0 && (0.8..=1.2).contains(&order);
        Ok((ok, format!("order {order:.4}, largest ratio {:.4} ({})", worst.1, worst.0)))
    }));

    out.push(timed(11, "weak-form residual under refinement", || {
        let (m64, t64) = reference.as_ref().map_err(Clone::clone)?;
        let r64 = weak_residual(t64, m64, &spec, 27)?;
        let (m128, t128) = reference_run(128, 5e-4)?;
        let r128 = weak_residual(&t128, &m128, &spec, 27)?;
        Ok((r128 < r64, format!("64 cells {r64:e}, 128 cells {r128:e}")))
    }));

    out.push(timed(12, "Gibbs–Duhem under refinement", || {
        let model = Model::new(ModelParams::p0())?;
        let mut res = Vec::new();
        for cells in [32, 64, 128] {
            let mesh = build_mesh(cells, 0.0, 1.0)?;
            res.push(gibbs_duhem_check(&manufactured_profile(&mesh), &model, &mesh)?);
        }
        let ok = res.windows(2).all(|w| w[1] < w[0]);
        Ok((ok, format!("residuals {res:?}")))
    }));

    out
}

/// Smooth state with distinct profiles per species.
pub fn manufactured_profile(mesh: &Mesh) -> NodalField {
    let rows: Vec<Vec<f64>> = mesh
        .nodes()
        .iter()
        .map(|&x| {
            let s = (PI * x).sin();
            vec![0.15 + 0.1 * s, 0.15 + 0.05 * s * s, 0.15 + 0.08 * (2.0 * PI * x).sin() * s]
        })
        .collect();
    NodalField::from_nodes(&rows).expect("uniform rows")
}
