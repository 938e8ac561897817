use std::f64::consts::PI;

use proptest::prelude::*;

use capflow::config::{parse_config, InitialCondition, RunConfig};
use capflow::diagnostics::{apriori_report, weak_residual};
use capflow::entropy::DiffusionMatrixSpec;
use capflow::mesh::{build_mesh, NodalField};
use capflow::output::write_outputs;
use capflow::solver::{refinement_study, run_simulation, SolverConfig, Trajectory};
use capflow::{Model, ModelParams};

fn perturbed(model: &Model, cells: usize, amp: [f64; 3], modes: [f64; 3]) -> (capflow::mesh::Mesh, NodalField) {
    let mesh = build_mesh(cells, 0.0, 1.0).unwrap();
    let mut f = NodalField::from_nodes(&vec![model.s_gamma().to_vec(); mesh.num_nodes()]).unwrap();
    for k in 1..mesh.num_nodes() - 1 {
        let x = mesh.nodes()[k];
        for i in 0..3 {
            f.node_mut(k)[i] += amp[i] * (modes[i] * PI * x).sin();
        }
    }
    (mesh, f)
}

fn short_run(model: &Model, cells: usize, steps: usize, amp: [f64; 3], modes: [f64; 3]) -> Trajectory {
    let (mesh, init) = perturbed(model, cells, amp, modes);
    let cfg = SolverConfig { t_end: steps as f64 * model.kappa(), ..SolverConfig::default() };
    run_simulation(&init, model, &DiffusionMatrixSpec::default(), &mesh, &cfg).unwrap()
}

#[test]
fn config_to_outputs() {
    let text = "[model]\nkappa = 2e-3\n[mesh]\nnum_cells = 12\n[solver]\nt_end = 0.02\n\
                [initial]\nprofile = \"step_profile\"\nleft_state = [0.2, 0.1, 0.1]\nright_state = [0.1, 0.1, 0.3]\n\
                [output]\nrecord_every = 2\n";
    let cfg: RunConfig = parse_config(text).unwrap();
    let model = Model::new(cfg.model.clone()).unwrap();
    let mesh = cfg.build_mesh().unwrap();
    let init = cfg.initial_state(&model, &mesh).unwrap();
    let traj = run_simulation(&init, &model, &cfg.diffusion, &mesh, &cfg.solver).unwrap();
    assert_eq!(traj.states.len(), 11);
    assert_eq!(traj.diagnostics.len(), 5);
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_outputs(&traj, &cfg, &model, dir.path()).unwrap();
    assert_eq!(manifest.entropy.violations, 0);
    assert!(manifest.min_species > 0.0 && manifest.max_total < 1.0);
}

#[test]
fn runs_are_bit_identical_and_thread_count_independent() {
    let model = Model::new(ModelParams::p0()).unwrap();
    let a = short_run(&model, 16, 5, [0.1, 0.0, 0.05], [1.0, 1.0, 2.0]);
    let b = short_run(&model, 16, 5, [0.1, 0.0, 0.05], [1.0, 1.0, 2.0]);
    assert_eq!(a.states, b.states);

    let (mesh, init) = perturbed(&model, 16, [0.1, 0.0, 0.0], [1.0; 3]);
    let cfg = SolverConfig { t_end: 0.005, ..SolverConfig::default() };
    let study = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            refinement_study(&init, &model, &DiffusionMatrixSpec::default(), &mesh, &cfg, &[1e-3, 5e-4], &[1e-3, 1e-4])
                .unwrap()
        })
    };
    assert_eq!(study(1), study(4));
}

#[test]
fn equilibrium_trajectory_has_zero_residual_and_integrals() {
    let model = Model::new(ModelParams::p0()).unwrap();
    let traj = short_run(&model, 16, 10, [0.0; 3], [1.0; 3]);
    let spec = DiffusionMatrixSpec::default();
    assert!(weak_residual(&traj, &model, &spec, 27).unwrap() <= SolverConfig::default().linear_tol);
    let report = apriori_report(&traj, &model).unwrap();
    for key in ["dbeta_l2", "capillary_l2", "grad_dbeta_l2", "eps_w_h1", "proj_mu_l2", "sup_grad_beta"] {
        assert_eq!(report[key], 0.0, "{key}");
    }
    assert!(traj.lyapunov.iter().all(|&l| l == 0.0));
}

#[test]
fn corrupted_state_inflates_weak_residual() {
    let model = Model::new(ModelParams::p0()).unwrap();
    let mut traj = short_run(&model, 32, 20, [0.1, 0.0, 0.0], [1.0; 3]);
    let spec = DiffusionMatrixSpec::default();
    let clean = weak_residual(&traj, &model, &spec, 27).unwrap();
    let node = traj.states[10].node_mut(16);
    node[1] += 0.2;
    let dirty = weak_residual(&traj, &model, &spec, 27).unwrap();
    assert!(dirty > 100.0 * clean, "clean {clean:e}, dirty {dirty:e}");
}

#[test]
fn eps_ladder_keeps_regularization_bound_in_band() {
    let model = Model::new(ModelParams::p0()).unwrap();
    let (mesh, init) = perturbed(&model, 32, [0.1, 0.0, 0.0], [1.0; 3]);
    let cfg = SolverConfig { t_end: 0.02, ..SolverConfig::default() };
    let report =
        refinement_study(&init, &model, &DiffusionMatrixSpec::default(), &mesh, &cfg, &[1e-3], &[1e-2, 1e-3, 1e-4])
            .unwrap();
    assert!(!report.flagged.iter().any(|f| f.starts_with("eps:eps_w_h1")), "{:?}", report.flagged);
    assert!(report.eps_runs.iter().all(|r| r.apriori.values().all(|v| v.is_finite())));
}

#[test]
fn driving_towards_saturation_flags_degeneracy() {
    let model = Model::new(ModelParams::p0()).unwrap();
    let mut cfg = RunConfig::default();
    cfg.mesh.num_cells = 16;
    cfg.solver.t_end = 0.005;
    cfg.initial = InitialCondition::StepProfile { left_state: vec![0.15; 3], right_state: vec![0.33, 0.33, 0.33] };
    let mesh = cfg.build_mesh().unwrap();
    let init = cfg.initial_state(&model, &mesh).unwrap();
    let traj = run_simulation(&init, &model, &cfg.diffusion, &mesh, &cfg.solver).unwrap();
    let near_one = apriori_report(&traj, &model).unwrap();
    let calm = apriori_report(&short_run(&model, 16, 5, [0.05, 0.0, 0.0], [1.0; 3]), &model).unwrap();
    assert!(near_one["a_pow_neg_p"] > 10.0 * calm["a_pow_neg_p"]);
    assert_eq!(near_one["degenerate"], 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn every_step_dissipates_and_stays_admissible(
        a1 in -0.12f64..0.12, a2 in -0.12f64..0.12, a3 in -0.12f64..0.12,
        m1 in 1u8..4, m2 in 1u8..4, m3 in 1u8..4,
    ) {
        let model = Model::new(ModelParams::p0()).unwrap();
        let traj = short_run(&model, 12, 4, [a1, a2, a3], [m1 as f64, m2 as f64, m3 as f64]);
        let tol = SolverConfig::default().entropy_tol();
        for (k, b) in traj.budgets.iter().enumerate() {
            for v in [b.diss_dbeta_sq, b.diss_capillary, b.diss_grad_dbeta, b.diss_eps_w, b.diss_proj_mu] {
                prop_assert!(v >= -1e-12);
            }
            prop_assert!(traj.lyapunov[k + 1] <= traj.lyapunov[k] + tol);
            prop_assert!(traj.entropy_margins[k] >= 0.0);
        }
        for st in &traj.states {
            prop_assert!(st.values().iter().all(|&v| v > 0.0));
            prop_assert!(st.totals().iter().all(|&t| t < 1.0));
        }
        prop_assert!(traj.lyapunov.iter().all(|&l| l >= -1e-12));
        prop_assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }
}
