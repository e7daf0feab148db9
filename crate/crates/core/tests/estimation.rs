use nalgebra::DMatrix;
use netobs::estimate::*;
use netobs::linalg;
use netobs::model::{ConnectionMatrix, NetworkedSystem};
use netobs::synth::{self, SizeSpec};
use netobs::Tolerances;
use proptest::prelude::*;
use rand::Rng;

fn setup_for(sys: &NetworkedSystem) -> EstimationSetup {
    EstimationSetup::new(sys, &Tolerances::default()).unwrap()
}

fn random_setup(seed: u64) -> EstimationSetup {
    let mut rng = synth::rng(seed);
    loop {
        let sys = synth::random_system(&mut rng, &SizeSpec::default());
        if let Ok(s) = EstimationSetup::new(&sys, &Tolerances::default()) {
            return s;
        }
    }
}

fn random_pd(seed: u64, n: usize) -> CovarianceState {
    let mut rng = synth::rng(seed);
    let g = synth::uniform(&mut rng, n, n, 1.0);
    CovarianceState::new(&g * g.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.05..1.0))
}

fn psd_within(p: &DMatrix<f64>) -> bool {
    linalg::min_eigenvalue(p) >= -1e-10 * linalg::norm2(p).max(1.0)
}

/// Block `(i, i)` of a covariance as a system-sized matrix.
fn diag_block(s: &EstimationSetup, p: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    let r = s.offsets().t_range(i);
    p.view((r.start, r.start), (r.len(), r.len())).into_owned()
}

/// One subsystem of a decoupled system as a standalone single-subsystem system.
fn standalone(sys: &NetworkedSystem, i: usize) -> NetworkedSystem {
    let s = sys.subsystem(i).clone();
    let sources = vec![0; s.a_ts.ncols()];
    let m_z = s.a_st.nrows();
    NetworkedSystem::new(vec![s], ConnectionMatrix::selection(m_z, &sources))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn steps_return_symmetric_psd_covariances(seed in any::<u64>()) {
        let s = random_setup(seed);
        let p = random_pd(seed ^ 1, s.states());
        for next in [cdossp_step(&s, &p).unwrap(), kalman_step(&s, &p).unwrap().next, cdossp_step_infoform(&s, &p).unwrap()] {
            prop_assert!((&next.p - next.p.transpose()).norm() <= 1e-12 * next.p.norm().max(1.0));
            prop_assert!(psd_within(&next.p));
            prop_assert_eq!(next.t, p.t + 1);
        }
    }

    #[test]
    fn kalman_forms_agree(seed in any::<u64>()) {
        let s = random_setup(seed);
        let p = random_pd(seed ^ 2, s.states());
        let a = kalman_step(&s, &p).unwrap().next.p;
        let b = kalman_step_infoform(&s, &p).unwrap().p;
        prop_assert!((&a - &b).norm() <= 1e-9 * a.norm());
    }

    #[test]
    fn gain_matches_information_form(seed in any::<u64>()) {
        // K_i = A_i (P^-1 + C_bar_i^T C_bar_i)^-1 C_bar_i^T R_i^{-1/2}
        let s = random_setup(seed);
        let p = random_pd(seed ^ 3, s.states());
        let p_inv = linalg::spd_inverse(&p.p, "P").unwrap();
        for i in 0..s.len() {
            let part = s.part(i);
            let x = linalg::spd_inverse(&(&p_inv + part.c_bar.transpose() * &part.c_bar), "X").unwrap();
            let r_inv_sqrt = linalg::sym_inv_sqrt(&part.r, 1e-12).unwrap();
            let expect = &part.a_rows * x * part.c_bar.transpose() * r_inv_sqrt;
            let k = cdossp_gain(&s, &p, i).unwrap();
            prop_assert!((&k - &expect).norm() <= 1e-9 * expect.norm().max(1.0));
        }
    }

    #[test]
    fn closed_form_gap_is_psd_at_matched_covariance(seed in any::<u64>()) {
        let s = random_setup(seed);
        let p = random_pd(seed ^ 4, s.states());
        for i in 0..s.len() {
            let gap = covariance_gap(&s, &p, &p, i).unwrap();
            prop_assert!(linalg::min_eigenvalue(&linalg::symmetrize(&gap)) >= -1e-10 * linalg::norm2(&gap).max(1.0));
        }
    }

    #[test]
    fn gap_identity_holds_for_unmatched_covariances(seed in any::<u64>()) {
        let s = random_setup(seed);
        let p = random_pd(seed ^ 5, s.states());
        let pk = random_pd(seed ^ 6, s.states());
        let cd = cdossp_step(&s, &p).unwrap().p;
        let kal = kalman_step(&s, &pk).unwrap().next.p;
        for i in 0..s.len() {
            let direct = diag_block(&s, &cd, i) - diag_block(&s, &kal, i);
            let gap = covariance_gap(&s, &p, &pk, i).unwrap();
            prop_assert!((&gap - &direct).norm() <= 1e-8 * cd.norm().max(kal.norm()));
        }
    }

    #[test]
    fn gain_condition_and_information_condition_agree(seed in any::<u64>()) {
        // A_i P C_bar^T (I + C_bar P C_bar^T)^-1 J_yj = 0 for all j != i   vs
        // A_i (P^-1 + C_bar^T C_bar)^-1 C_hat_i^T = 0
        let tol = Tolerances::default();
        let mut rng = synth::rng(seed);
        let isolated = rng.gen_range(0..=2);
        let sys = synth::mixed_estimation_system(&mut rng, 2, isolated);
        let s = setup_for(&sys);
        let mut p = CovarianceState::identity(s.states());
        for _ in 0..3 {
            p = kalman_step(&s, &p).unwrap().next;
        }
        let check = equivalence_check_step(&s, &p, &tol).unwrap();
        let p_inv = linalg::spd_inverse(&p.p, "P").unwrap();
        let y = linalg::spd_inverse(&(p_inv + s.c_bar().transpose() * s.c_bar()), "Y").unwrap();
        let off = s.offsets();
        for r in &check.per_i {
            let part = s.part(r.i);
            let mut worst: f64 = 0.0;
            for j in (0..s.len()).filter(|&j| j != r.i) {
                let cj = s.c_bar().rows(off.y_range(j).start, off.y_range(j).len()).into_owned();
                worst = worst.max((&part.a_rows * &y * cj.transpose()).norm());
            }
            let scale = linalg::norm2(&part.a_rows) * linalg::norm2(&p.p);
            prop_assert_eq!(r.holds, worst <= tol.equiv_tol * scale);
        }
    }
}

#[test]
fn no_noise_and_perfect_prior_stay_zero() {
    let mut rng = synth::rng(1);
    let sys = synth::coupled_estimation_system(&mut rng, 3);
    let mut subs = sys.subsystems().to_vec();
    for s in &mut subs {
        s.b_t.fill(0.0);
    }
    let s = setup_for(&NetworkedSystem::new(subs, sys.phi().clone()));
    let zero = CovarianceState::new(DMatrix::zeros(s.states(), s.states()));
    assert_eq!(cdossp_step(&s, &zero).unwrap().p.norm(), 0.0);
}

#[test]
fn decoupled_recursion_is_blockwise_kalman() {
    let mut rng = synth::rng(17);
    let sys = synth::decoupled_estimation_system(&mut rng, 3);
    let s = setup_for(&sys);
    let parts: Vec<EstimationSetup> = (0..3).map(|i| setup_for(&standalone(&sys, i))).collect();
    let mut p = CovarianceState::identity(s.states());
    let mut local: Vec<CovarianceState> = parts.iter().map(|q| CovarianceState::identity(q.states())).collect();
    for _ in 0..30 {
        p = cdossp_step(&s, &p).unwrap();
        for (q, l) in parts.iter().zip(local.iter_mut()) {
            *l = kalman_step(q, l).unwrap().next;
        }
        let off = s.offsets();
        for i in 0..3 {
            assert!((diag_block(&s, &p.p, i) - &local[i].p).norm() <= 1e-12 * local[i].p.norm());
            for j in (0..3).filter(|&j| j != i) {
                assert_eq!(p.block(off, i, j).norm(), 0.0);
            }
        }
    }
}

#[test]
fn decoupled_steady_state_is_blockdiag_of_local_dares() {
    let tol = Tolerances::default();
    let mut rng = synth::rng(23);
    let sys = synth::decoupled_estimation_system(&mut rng, 3);
    let s = setup_for(&sys);
    let p0 = CovarianceState::identity(s.states());
    let cd = steady_state(&s, Estimator::Cdossp, &p0, tol.steady_max_iters, tol.steady_tol).unwrap();
    assert!(cd.converged());
    for i in 0..3 {
        let q = setup_for(&standalone(&sys, i));
        let local = steady_state(&q, Estimator::Kalman, &CovarianceState::identity(q.states()), 100_000, 1e-13).unwrap();
        let rel = (diag_block(&s, &cd.p.p, i) - &local.p.p).norm() / local.p.p.norm();
        assert!(rel < 1e-8, "block {i}: {rel:e}");
    }
}

#[test]
fn coupled_system_breaks_block_equivalence() {
    let tol = Tolerances::default();
    let mut rng = synth::rng(29);
    let s = setup_for(&synth::coupled_estimation_system(&mut rng, 3));
    let p = steady_state(&s, Estimator::Kalman, &CovarianceState::identity(s.states()), 100_000, 1e-10).unwrap();
    let check = equivalence_check_step(&s, &p.p, &tol).unwrap();
    assert!(!check.all_hold());
    assert!(check.worst().unwrap().residual > 1e3 * tol.equiv_tol);
    assert!(check.gain_offdiag_norm > 1e-4);
}

#[test]
fn decoupled_blocks_hold_with_block_diagonal_covariance() {
    let tol = Tolerances::default();
    let mut rng = synth::rng(31);
    let s = setup_for(&synth::decoupled_estimation_system(&mut rng, 3));
    let check = equivalence_check_step(&s, &CovarianceState::identity(s.states()), &tol).unwrap();
    assert!(check.all_hold());
    assert!(check.per_i.iter().all(|r| r.residual == 0.0));
}

#[test]
fn unstable_hidden_mode_is_hypothesis_unmet() {
    let tol = Tolerances::default();
    let mut rng = synth::rng(37);
    let sys = synth::decoupled_estimation_system(&mut rng, 2);
    let mut subs = sys.subsystems().to_vec();
    subs[0].a_tt = DMatrix::identity(subs[0].a_tt.nrows(), subs[0].a_tt.nrows()) * 1.3;
    subs[0].c_t.fill(0.0);
    let s = setup_for(&NetworkedSystem::new(subs, sys.phi().clone()));
    let eq = equivalence_check_steady(&s, &CovarianceState::identity(s.states()), &tol).unwrap();
    assert_eq!(eq.verdict, SteadyVerdict::HypothesisUnmet);
    assert_eq!(eq.kalman.status, SteadyStatus::Diverged);
}
