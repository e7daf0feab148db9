use nalgebra::DMatrix;
use netobs::model::Subsystem;
use netobs::synth::{self, SizeSpec};
use netobs::zeros::{transmission_zeros, SubsystemTfm, TfmKind};
use netobs::Tolerances;
use num_complex::Complex64;
use proptest::prelude::*;

fn subsystem(seed: u64) -> Subsystem {
    let mut rng = synth::rng(seed);
    let sys = synth::random_system(&mut rng, &SizeSpec::default());
    sys.subsystem(0).clone()
}

fn similar(s: &Subsystem, t: &DMatrix<f64>) -> Subsystem {
    let ti = t.clone().try_inverse().unwrap();
    let mut out = s.clone();
    out.a_tt = &ti * &s.a_tt * t;
    out.a_ts = &ti * &s.a_ts;
    out.b_t = &ti * &s.b_t;
    out.a_st = &s.a_st * t;
    out.c_t = &s.c_t * t;
    out
}

fn matched(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().all(|z| b.iter().any(|w| (z - w).norm() <= tol * z.norm().max(1.0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zeros_are_similarity_invariant(seed in any::<u64>()) {
        let tol = Tolerances::default();
        let s = subsystem(seed);
        let mut rng = synth::rng(seed ^ 0x5a5a);
        let n = s.a_tt.nrows();
        let t = DMatrix::identity(n, n) + synth::uniform(&mut rng, n, n, 0.3);
        for kind in [TfmKind::G1, TfmKind::G2] {
            let z0 = transmission_zeros(&SubsystemTfm::new(kind, 1, &s), &tol);
            let z1 = transmission_zeros(&SubsystemTfm::new(kind, 1, &similar(&s, &t)), &tol);
            prop_assert_eq!(z0.normal_rank, z1.normal_rank);
            prop_assert!(matched(&z0.zeros, &z1.zeros, 1e-6), "{:?} vs {:?}", z0.zeros, z1.zeros);
        }
    }

    #[test]
    fn complex_zeros_come_in_conjugate_pairs(seed in any::<u64>()) {
        let tol = Tolerances::default();
        let s = subsystem(seed);
        for kind in [TfmKind::G1, TfmKind::G2, TfmKind::G1Dual, TfmKind::G2Dual] {
            let z = transmission_zeros(&SubsystemTfm::new(kind, 1, &s), &tol).zeros;
            for w in z.iter().filter(|w| w.im != 0.0) {
                prop_assert!(z.iter().any(|v| (v - w.conj()).norm() <= 1e-7 * w.norm().max(1.0)));
            }
        }
    }
}
