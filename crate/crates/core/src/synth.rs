//! Seeded random networked systems for property tests, benches and the
//! acceptance corpus.
//!
//! Besides generic systems there are three engineered families whose
//! observability/controllability fails for a known reason:
//! a subsystem mode hidden from the outputs and the interconnection, the
//! transposed construction for controllability, and a two-subsystem loop
//! tuned so that `Phi G2(lambda0) y = y` at a shared zero of `G1`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::linalg;
use crate::model::{check_well_posedness, ConnectionMatrix, NetworkedSystem, Subsystem, SubsystemDims};
use crate::tol::Tolerances;
use crate::zeros::{transmission_zeros, Family, SubsystemTfm};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Generic,
    HiddenUnobservable,
    HiddenUncontrollable,
    ResonantLoop,
}

/// Size limits for random systems.
#[derive(Clone, Copy, Debug)]
pub struct SizeSpec {
    pub min_subsystems: usize,
    pub max_subsystems: usize,
    pub max_states: usize,
    /// `m_S = m_z` drawn from `1..=max_ports`.
    pub max_ports: usize,
}

impl Default for SizeSpec {
    fn default() -> Self {
        Self {
            min_subsystems: 2,
            max_subsystems: 4,
            max_states: 3,
            max_ports: 2,
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// `A` scaled to the given spectral radius.
pub fn with_spectral_radius(a: &DMatrix<f64>, radius: f64) -> DMatrix<f64> {
    let rho = a
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max);
    if rho < 1e-12 {
        a.clone()
    } else {
        a * (radius / rho)
    }
}

fn well_conditioned(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) + uniform(rng, n, n, 0.3)
}

/// Generic subsystem in estimation form (`B_S = 0`, `D_d = 0`, `D_w`
/// square and well conditioned).
pub fn random_subsystem(rng: &mut impl Rng, dims: SubsystemDims) -> Subsystem {
    let mut s = Subsystem::zeros(dims);
    let radius = rng.gen_range(0.3..1.3);
    s.a_tt = with_spectral_radius(&uniform(rng, dims.m_t, dims.m_t, 1.0), radius);
    s.a_ts = uniform(rng, dims.m_t, dims.m_s, 1.0);
    s.a_st = uniform(rng, dims.m_z, dims.m_t, 1.0);
    s.a_ss = uniform(rng, dims.m_z, dims.m_s, 0.4);
    s.b_t = uniform(rng, dims.m_t, dims.m_d, 1.0);
    s.c_t = uniform(rng, dims.m_y, dims.m_t, 1.0);
    s.c_s = uniform(rng, dims.m_y, dims.m_s, 1.0);
    s.d_w = well_conditioned(rng, dims.m_y);
    s
}

fn random_dims(rng: &mut impl Rng, size: &SizeSpec) -> SubsystemDims {
    let m_t = rng.gen_range(1..=size.max_states);
    let m_s = rng.gen_range(1..=size.max_ports);
    let m_y = m_s + rng.gen_range(0..=1);
    let m_d = m_s + rng.gen_range(0..=1);
    SubsystemDims {
        m_t,
        m_s,
        m_z: m_s,
        m_y,
        m_d,
        m_w: m_y,
    }
}

/// Strict 0/1 interconnection: every internal input picks one internal output.
pub fn random_strict_phi(rng: &mut impl Rng, subsystems: &[Subsystem]) -> ConnectionMatrix {
    let m_s: usize = subsystems.iter().map(|s| s.dims().m_s).sum();
    let m_z: usize = subsystems.iter().map(|s| s.dims().m_z).sum();
    let sources: Vec<usize> = (0..m_s).map(|_| rng.gen_range(0..m_z)).collect();
    ConnectionMatrix::selection(m_z, &sources)
}

pub fn random_system(rng: &mut impl Rng, size: &SizeSpec) -> NetworkedSystem {
    let n = rng.gen_range(size.min_subsystems..=size.max_subsystems);
    let subs: Vec<Subsystem> = (0..n)
        .map(|_| {
            let dims = random_dims(rng, size);
            random_subsystem(rng, dims)
        })
        .collect();
    let phi = random_strict_phi(rng, &subs);
    NetworkedSystem::new(subs, phi)
}

fn hidden_mode_value(rng: &mut impl Rng) -> f64 {
    let mag = if rng.gen_bool(0.5) {
        rng.gen_range(0.1..0.9)
    } else {
        rng.gen_range(1.1..1.5)
    };
    if rng.gen_bool(0.5) {
        mag
    } else {
        -mag
    }
}

/// Applies `x -> T x` to a subsystem (state similarity).
fn similarity(s: &mut Subsystem, t: &DMatrix<f64>) {
    let t_inv = t.clone().try_inverse().expect("well-conditioned similarity");
    s.a_tt = &t_inv * &s.a_tt * t;
    s.a_ts = &t_inv * &s.a_ts;
    s.b_t = &t_inv * &s.b_t;
    s.a_st = &s.a_st * t;
    s.c_t = &s.c_t * t;
}

/// Makes the first state an eigen-direction invisible to `C_T` and `A_ST`.
fn hide_from_outputs(rng: &mut impl Rng, s: &mut Subsystem) -> f64 {
    let lambda = hidden_mode_value(rng);
    let n = s.a_tt.nrows();
    for r in 0..n {
        s.a_tt[(r, 0)] = if r == 0 { lambda } else { 0.0 };
    }
    s.c_t.column_mut(0).fill(0.0);
    s.a_st.column_mut(0).fill(0.0);
    let t = well_conditioned(rng, n);
    similarity(s, &t);
    lambda
}

/// Makes the first state a left eigen-direction unreachable from `B_T` and `A_TS`.
fn hide_from_inputs(rng: &mut impl Rng, s: &mut Subsystem) -> f64 {
    let lambda = hidden_mode_value(rng);
    let n = s.a_tt.nrows();
    for c in 0..n {
        s.a_tt[(0, c)] = if c == 0 { lambda } else { 0.0 };
    }
    s.b_t.row_mut(0).fill(0.0);
    s.a_ts.row_mut(0).fill(0.0);
    let t = well_conditioned(rng, n);
    similarity(s, &t);
    lambda
}

fn strictly_proper_part(s: &Subsystem, c: &DMatrix<f64>, lambda: f64) -> Option<f64> {
    let n = s.a_tt.nrows();
    let res = DMatrix::identity(n, n) * lambda - &s.a_tt;
    let x = res.lu().solve(&s.a_ts)?;
    Some((c * x)[(0, 0)])
}

/// Two scalar-port subsystems wired in a ring and tuned so that
/// `G2_1(l0) G2_2(l0) = 1` at a common zero `l0` of `G1_1` and `G1_2`.
fn resonant_loop(rng: &mut impl Rng, size: &SizeSpec) -> Option<NetworkedSystem> {
    let n = rng.gen_range(size.min_subsystems.max(2)..=size.max_subsystems.max(2));
    let lambda0: f64 = rng.gen_range(-1.5..1.5);
    let mut subs = Vec::with_capacity(n);
    for k in 0..n {
        let mut dims = random_dims(rng, size);
        if k < 2 {
            dims.m_s = 1;
            dims.m_z = 1;
            dims.m_y = 1;
            dims.m_w = 1;
        }
        subs.push(random_subsystem(rng, dims));
    }
    let gain: f64 = rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    for (k, target) in [(0, gain), (1, 1.0 / gain)] {
        let s = &mut subs[k];
        let g1_sp = strictly_proper_part(s, &s.c_t, lambda0)?;
        s.c_s[(0, 0)] = -g1_sp;
        let g2_sp = strictly_proper_part(s, &s.a_st, lambda0)?;
        s.a_ss[(0, 0)] = target - g2_sp;
    }
    // v1 <- z2, v2 <- z1; the rest only listen to subsystems 3..n.
    let m_z_rest: usize = subs[2..].iter().map(|s| s.dims().m_z).sum();
    let mut sources = vec![1, 0];
    for s in &subs[2..] {
        for _ in 0..s.dims().m_s {
            sources.push(2 + rng.gen_range(0..m_z_rest));
        }
    }
    let m_z: usize = subs.iter().map(|s| s.dims().m_z).sum();
    Some(NetworkedSystem::new(subs, ConnectionMatrix::selection(m_z, &sources)))
}

pub fn scenario_system(rng: &mut impl Rng, scenario: Scenario, size: &SizeSpec) -> Option<NetworkedSystem> {
    match scenario {
        Scenario::Generic => Some(random_system(rng, size)),
        Scenario::HiddenUnobservable | Scenario::HiddenUncontrollable => {
            let sys = random_system(rng, size);
            let pick = rng.gen_range(0..sys.len());
            let mut subs = sys.subsystems().to_vec();
            if scenario == Scenario::HiddenUnobservable {
                hide_from_outputs(rng, &mut subs[pick]);
            } else {
                hide_from_inputs(rng, &mut subs[pick]);
            }
            Some(NetworkedSystem::new(subs, sys.phi().clone()))
        }
        Scenario::ResonantLoop => resonant_loop(rng, size),
    }
}

/// True when every `G1` of the family has full column normal rank.
pub fn full_normal_rank(sys: &NetworkedSystem, family: Family, tol: &Tolerances) -> bool {
    let (k1, _) = family.kinds();
    sys.subsystems()
        .iter()
        .enumerate()
        .all(|(i, s)| transmission_zeros(&SubsystemTfm::new(k1, i + 1, s), tol).full_column_normal_rank)
}

/// Well-posed systems with a well-conditioned loop, cycling through the
/// scenarios in the given proportions.
pub fn corpus(seed: u64, count: usize, mix: &[(Scenario, usize)], size: &SizeSpec, tol: &Tolerances) -> Vec<(Scenario, NetworkedSystem)> {
    let mut rng = rng(seed);
    let cycle: Vec<Scenario> = mix.iter().flat_map(|&(s, w)| std::iter::repeat(s).take(w)).collect();
    let mut out = Vec::with_capacity(count);
    let mut k = 0;
    while out.len() < count {
        let scenario = cycle[k % cycle.len()];
        k += 1;
        let Some(sys) = scenario_system(&mut rng, scenario, size) else {
            continue;
        };
        match check_well_posedness(&sys, tol) {
            Ok(wp) if wp.well_posed && wp.condition_estimate < 1e4 => {}
            _ => continue,
        }
        if !full_normal_rank(&sys, Family::Primal, tol) {
            continue;
        }
        out.push((scenario, sys));
    }
    out
}

/// The mix used by the verification acceptance corpus.
pub const VERIFICATION_MIX: [(Scenario, usize); 4] = [
    (Scenario::Generic, 5),
    (Scenario::HiddenUnobservable, 2),
    (Scenario::HiddenUncontrollable, 1),
    (Scenario::ResonantLoop, 2),
];

/// Subsystems with no coupling at all (`A_TS = 0`, `C_S = 0`, `A_ST = 0`),
/// stable and observable through their own outputs.
pub fn decoupled_estimation_system(rng: &mut impl Rng, n: usize) -> NetworkedSystem {
    let mut subs = Vec::with_capacity(n);
    for _ in 0..n {
        let m_t = rng.gen_range(1..=3);
        let m_y = rng.gen_range(1..=2);
        let dims = SubsystemDims { m_t, m_s: 1, m_z: 1, m_y, m_d: m_t, m_w: m_y };
        let mut s = random_subsystem(rng, dims);
        s.a_tt = with_spectral_radius(&s.a_tt, rng.gen_range(0.3..0.95));
        s.a_ts.fill(0.0);
        s.c_s.fill(0.0);
        s.a_st.fill(0.0);
        subs.push(s);
    }
    let phi = random_strict_phi(rng, &subs);
    NetworkedSystem::new(subs, phi)
}

/// Stable coupled system in estimation form with a ring interconnection so
/// every subsystem influences its neighbour.
pub fn coupled_estimation_system(rng: &mut impl Rng, n: usize) -> NetworkedSystem {
    loop {
        let mut subs = Vec::with_capacity(n);
        for _ in 0..n {
            let m_t = rng.gen_range(1..=3);
            let m_y = rng.gen_range(1..=2);
            let dims = SubsystemDims { m_t, m_s: 1, m_z: 1, m_y, m_d: m_t, m_w: m_y };
            subs.push(random_subsystem(rng, dims));
        }
        let sources: Vec<usize> = (0..n).map(|i| (i + n - 1) % n).collect();
        let phi = ConnectionMatrix::selection(n, &sources);
        let sys = NetworkedSystem::new(subs, phi);
        let tol = Tolerances::default();
        let Ok(lumped) = crate::model::assemble_lumped(&sys, &tol) else {
            continue;
        };
        let rho = lumped
            .a
            .complex_eigenvalues()
            .iter()
            .map(|l: &Complex64| l.norm())
            .fold(0.0, f64::max);
        if rho < 0.95 && linalg::condition_number(&crate::model::loop_matrix(&sys)) < 1e3 {
            return sys;
        }
    }
}

/// Two systems side by side with no interaction; `Phi` is block diagonal.
pub fn disjoint_union(a: &NetworkedSystem, b: &NetworkedSystem) -> NetworkedSystem {
    let shift_r = a.phi().rows();
    let shift_c = a.phi().cols();
    let mut entries = a.phi().entries().to_vec();
    entries.extend(b.phi().entries().iter().map(|&(r, c, v)| (r + shift_r, c + shift_c, v)));
    let phi = ConnectionMatrix::new(shift_r + b.phi().rows(), shift_c + b.phi().cols(), entries);
    let mut subs = a.subsystems().to_vec();
    subs.extend_from_slice(b.subsystems());
    NetworkedSystem::new(subs, phi)
}

/// A coupled core of `coupled` subsystems next to `isolated` decoupled ones,
/// so the block-wise equivalence condition holds for some blocks only.
pub fn mixed_estimation_system(rng: &mut impl Rng, coupled: usize, isolated: usize) -> NetworkedSystem {
    let core = coupled_estimation_system(rng, coupled);
    if isolated == 0 {
        return core;
    }
    disjoint_union(&core, &decoupled_estimation_system(rng, isolated))
}
