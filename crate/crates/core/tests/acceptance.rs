//! One line per acceptance criterion, each at its stated tolerance and time limit.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use capflow::assembly::assemble_system;
use capflow::diagnostics::{check_entropy_step, gibbs_duhem_check, weak_residual};
use capflow::entropy::{jmz_inequality_check, state_from_w, w_from_state, DiffusionMatrixSpec, SpeciesState};
use capflow::mesh::{build_mesh, Mesh, NodalField};
use capflow::solver::{refinement_study, run_simulation, SolverConfig, Trajectory};
use capflow::{validate_assumptions, Model, ModelParams};

type Outcome = Result<String, String>;

fn p0() -> ModelParams {
    ModelParams::p0()
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

fn sine(model: &Model, mesh: &Mesh) -> NodalField {
    let mut f = NodalField::from_nodes(&vec![model.s_gamma().to_vec(); mesh.num_nodes()]).unwrap();
    for k in 1..mesh.num_nodes() - 1 {
        f.node_mut(k)[0] += 0.1 * (PI * mesh.nodes()[k]).sin();
    }
    f
}

fn reference(cells: usize, kappa: f64) -> (Model, Trajectory) {
    let model = Model::new(ModelParams { kappa, eps: 1e-3, ..p0() }).unwrap();
    let mesh = build_mesh(cells, 0.0, 1.0).unwrap();
    let traj = run_simulation(&sine(&model, &mesh), &model, &DiffusionMatrixSpec::default(), &mesh, &SolverConfig::default())
        .unwrap();
    (model, traj)
}

fn uniform_state(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..=n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let z: f64 = e.iter().sum();
    e[..n].iter().map(|v| v / z).collect()
}

fn c1() -> Outcome {
    let r = validate_assumptions(&p0());
    // α₁ = 1 + (γ − γ₁ − β₁)/2, α₂ = 1 − β₂/2 at (6.2, 6, 6, 6).
    let ok = r.accepted
        && (r.alpha1 - (-1.9)).abs() <= 1e-12
        && (r.alpha2 - (-2.0)).abs() <= 1e-12
        && (r.p - 1.0430).abs() <= 1e-3
        && (r.q - 1.0211).abs() <= 1e-3;
    ensure(ok, format!("α₁={} α₂={} p={:.6} q={:.6}", r.alpha1, r.alpha2, r.p, r.q))
}

fn c2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut sets = vec![p0()];
    while sets.len() < 21 {
        let beta1 = rng.gen_range(5.0..9.0);
        let gamma1 = rng.gen_range(beta1..3.0 * beta1 - 10.0);
        let gamma = rng.gen_range(gamma1..0.5 * beta1 + 5.0 / 6.0 * (gamma1 - 2.0));
        let beta2 = rng.gen_range(5.0..9.0);
        let lambda = rng.gen_range(beta2..3.0 * beta2 - 10.0);
        let p = ModelParams { lambda, gamma, gamma1, beta1, beta2, ..p0() };
        if validate_assumptions(&p).accepted {
            sets.push(p);
        }
    }
    let mut violations = 0;
    let mut formula_err = 0.0f64;
    for p in &sets {
        let model = Model::new(p.clone()).unwrap();
        for j in 1..=10_000 {
            let s = j as f64 / 10_001.0;
            let c = model.eval_coeffs(s).unwrap();
            if c.pc_prime > c.tau_over_a {
                violations += 1;
            }
            // Closed forms: p_c' = S^-β₁ + (1-S)^-β₂, τ/a = (1-S)^-λ + S^-γ₁.
            let pc = s.powf(-p.beta1) + (1.0 - s).powf(-p.beta2);
            let ta = (1.0 - s).powf(-p.lambda) + s.powf(-p.gamma1);
            formula_err = formula_err.max(((c.pc_prime - pc) / pc).abs()).max(((c.tau_over_a - ta) / ta).abs());
        }
    }
    ensure(
        violations == 0 && formula_err < 1e-12,
        format!("{violations} violations over {} sets, closed-form deviation {formula_err:e}", sets.len()),
    )
}

fn c3() -> Outcome {
    let model = Model::new(p0()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let prev = rng.gen_range(0.01..0.99);
        let (_, st) = state_from_w(&model, &w, prev).map_err(|e| e.to_string())?;
        let w2 = w_from_state(&model, &st, prev).map_err(|e| e.to_string())?.w;
        let (_, st2) = state_from_w(&model, &w2, prev).map_err(|e| e.to_string())?;
        for (a, b) in w.iter().zip(&w2).chain(st.s().iter().zip(st2.s())) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-10, format!("max round-trip error {worst:e} (w in [-50, 50]^3)"))
}

fn c4() -> Outcome {
    let model = Model::new(p0()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut asym, mut neg, mut second, mut lead) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let st = SpeciesState::new(uniform_state(&mut rng, 3)).unwrap();
        let prev = rng.gen_range(0.01..0.99);
        let vars = w_from_state(&model, &st, prev).unwrap();
        let m = vars.mobility_matrix(&st);
        let scale = m.amax();
        asym = asym.max((&m - m.transpose()).amax() / scale);
        let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        neg = neg.max(-ev[0] / scale);
        second = second.max(ev[1].abs() / scale);
        // Rank one: M = S Sᵀ/(S f'), eigenvalue |S|²/(S f').
        let norm2: f64 = st.s().iter().map(|v| v * v).sum();
        let expected = norm2 / (st.total() * vars.f_prime);
        lead = lead.max(((ev[2] - expected) / expected).abs());
    }
    ensure(
        asym <= 1e-12 && neg <= 1e-12 && second <= 1e-12 && lead <= 1e-10,
        format!("asymmetry {asym:e}, min eigenvalue {neg:e}, second {second:e}, leading eigenvalue error {lead:e}"),
    )
}

fn c5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..100_000 {
        let n = rng.gen_range(2..=8);
        let mut unit = || {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect::<Vec<_>>()
        };
        let (a, b) = (unit(), unit());
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        if !jmz_inequality_check(&a, &b, &v).unwrap() {
            violations += 1;
        }
    }
    ensure(violations == 0, format!("{violations} violations in 100000 instances"))
}

fn c6() -> Outcome {
    let mesh = build_mesh(16, 0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut lines = Vec::new();
    let mut ok = true;
    for eps in [1e-3, 0.0] {
        let model = Model::new(ModelParams { eps, ..p0() }).unwrap();
        let prev = sine(&model, &mesh);
        let mut w = NodalField::zeros(3, mesh.num_nodes());
        for k in 1..mesh.num_nodes() - 1 {
            for v in w.node_mut(k) {
                *v = rng.gen_range(-2.0..2.0);
            }
        }
        let sys = assemble_system(&w, &prev, &model, &DiffusionMatrixSpec::default(), &mesh, 1.0).unwrap();
        let a: DMatrix<f64> = sys.matrix.to_dense();
        let asym = (&a - a.transpose()).amax();
        let min_ev = SymmetricEigen::new(a.clone()).eigenvalues.min();
        let mut min_q = f64::INFINITY;
        for _ in 0..2000 {
            let v = DVector::from_fn(a.nrows(), |_, _| rng.gen_range(-1.0..1.0));
            min_q = min_q.min(v.dot(&(&a * &v)));
        }
        if eps > 0.0 {
            ok &= asym <= 1e-12 * a.amax() && min_ev > 0.0;
        } else {
            ok &= min_q >= -1e-10;
        }
        lines.push(format!("ε={eps}: asym {asym:e}, λ_min {min_ev:e}, min vᵀAv {min_q:e}"));
    }
    ensure(ok, lines.join("; "))
}

fn c7() -> Outcome {
    let model = Model::new(p0()).unwrap();
    let mesh = build_mesh(64, 0.0, 1.0).unwrap();
    let init = NodalField::from_nodes(&vec![model.s_gamma().to_vec(); mesh.num_nodes()]).unwrap();
    let cfg = SolverConfig { t_end: 100.0 * model.kappa(), ..SolverConfig::default() };
    let traj = run_simulation(&init, &model, &DiffusionMatrixSpec::default(), &mesh, &cfg).unwrap();
    let mut drift = 0.0f64;
    for st in &traj.states {
        for node in st.values().chunks_exact(3) {
            for (a, b) in node.iter().zip(model.s_gamma()) {
                drift = drift.max((a - b).abs());
            }
        }
    }
    let diss = traj
        .diagnostics
        .iter()
        .flat_map(|r| [r.diss_dbeta_sq, r.diss_capillary, r.diss_grad_dbeta, r.diss_eps_w, r.diss_proj_mu])
        .fold(0.0f64, f64::max);
    ensure(
        traj.fp_iters.len() == 100 && drift <= 1e-9 && diss <= 1e-12,
        format!("{} steps, max drift {drift:e}, max dissipation {diss:e}", traj.fp_iters.len()),
    )
}

fn c8(traj: &Trajectory, model: &Model) -> Outcome {
    let tol = 10.0 * SolverConfig::default().fp_tol;
    let mut failures = 0;
    let mut min_margin = f64::INFINITY;
    for k in 1..traj.states.len() {
        let c = check_entropy_step(traj.lyapunov[k - 1], traj.lyapunov[k], &traj.budgets[k - 1], model.kappa(), tol);
        min_margin = min_margin.min(c.margin);
        failures += usize::from(!c.passed);
    }
    let col: Vec<f64> = traj.diagnostics.iter().map(|r| r.lyapunov).collect();
    let increases = col.windows(2).filter(|w| w[1] > w[0]).count();
    ensure(
        failures == 0 && increases == 0 && col.len() == 50,
        format!("{failures} failed steps, min margin {min_margin:e}, {increases} Lyapunov increases over {} rows", col.len()),
    )
}

fn c9(traj: &Trajectory) -> Outcome {
    let mut bad = 0;
    let (mut min_s, mut max_t) = (f64::INFINITY, 0.0f64);
    for st in &traj.states {
        let m = st.values().iter().copied().fold(f64::INFINITY, f64::min);
        let t = st.totals().into_iter().fold(0.0, f64::max);
        bad += usize::from(!(m > 0.0 && t < 1.0));
        min_s = min_s.min(m);
        max_t = max_t.max(t);
    }
    ensure(bad == 0, format!("{bad} violating states, min S_i {min_s}, max S {max_t}"))
}

fn c10() -> Outcome {
    let model = Model::new(p0()).unwrap();
    let mesh = build_mesh(64, 0.0, 1.0).unwrap();
    let report = refinement_study(
        &sine(&model, &mesh),
        &model,
        &DiffusionMatrixSpec::default(),
        &mesh,
        &SolverConfig::default(),
        &[1e-3, 5e-4, 2.5e-4],
        &[1e-3],
    )
    .map_err(|e| e.to_string())?;
    let mut worst = ("", 1.0f64);
    for key in report.kappa_runs[0].apriori.keys() {
        let v: Vec<f64> = report.kappa_runs.iter().map(|r| r.apriori[key].abs()).collect();
        let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        let ratio = if hi == 0.0 { 1.0 } else { hi / lo };
        if !(ratio <= worst.1) {
            worst = (key.as_str(), ratio);
        }
    }
    // Order from the two successive differences, independent of the report's own.
    let d = &report.kappa_differences;
    let order = (d[0] / d[1]).log2();
    ensure(
        worst.1 <= 2.0 && (0.8..=1.2).contains(&order),
        format!("order {order:.4}, largest ratio {:.4} ({})", worst.1, worst.0),
    )
}

fn c11(coarse: &(Model, Trajectory)) -> Outcome {
    let spec = DiffusionMatrixSpec::default();
    let r64 = weak_residual(&coarse.1, &coarse.0, &spec, 27).unwrap();
    let fine = reference(128, 5e-4);
    let r128 = weak_residual(&fine.1, &fine.0, &spec, 27).unwrap();
    ensure(r128 < r64, format!("64 cells {r64:e}, 128 cells {r128:e}"))
}

fn c12() -> Outcome {
    let model = Model::new(p0()).unwrap();
    let mut res = Vec::new();
    for cells in [32, 64, 128] {
        let mesh = build_mesh(cells, 0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = mesh
            .nodes()
            .iter()
            .map(|&x| {
                let s = (PI * x).sin();
                vec![0.2 + 0.1 * s, 0.1 + 0.05 * (3.0 * x).cos(), 0.15 + 0.1 * x * (1.0 - x)]
            })
            .collect();
        res.push(gibbs_duhem_check(&NodalField::from_nodes(&rows).unwrap(), &model, &mesh).unwrap());
    }
    ensure(res.windows(2).all(|w| w[1] < w[0]), format!("residuals {res:?}"))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: u32, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) => (took < limit, d),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {id:>2}: {} ({:.2}s, limit {}s) {detail}",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs()
        );
    };
    let secs = Duration::from_secs;
    report(1, secs(1), &mut c1);
    report(2, secs(5), &mut c2);
    report(3, secs(10), &mut c3);
    report(4, secs(5), &mut c4);
    report(5, secs(5), &mut c5);
    report(6, secs(5), &mut c6);
    report(7, secs(10), &mut c7);
    let mut reference_run = None;
    report(8, secs(60), &mut || {
        let run = reference(64, 1e-3);
        let out = c8(&run.1, &run.0);
        reference_run = Some(run);
        out
    });
    let reference_run = reference_run.expect("criterion 8 ran");
    report(9, secs(60), &mut || c9(&reference_run.1));
    report(10, secs(300), &mut c10);
    report(11, secs(180), &mut || c11(&reference_run));
    report(12, secs(30), &mut c12);
    if failed == 0 {
        println!("all 12 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
