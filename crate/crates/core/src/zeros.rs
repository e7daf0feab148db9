//! Subsystem transfer function matrices, their transmission zeros, and the
//! per-zero null-space certificates consumed by the rank tests.
//!
//! Zeros are the finite `lambda` where the Rosenbrock pencil
//! `[lambda I - A, -B; C, D]` loses column rank. Tall pencils are first
//! compressed to a square one with a fixed random row mixing; candidates are
//! the finite generalized eigenvalues of the square pencil and are kept only
//! if the original pencil is numerically singular there.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::linalg::{self, to_complex, CMatrix};
use crate::model::{NetworkedSystem, Subsystem};
use crate::tol::Tolerances;

/// Probe radius and angles used to estimate normal rank.
const PROBE_RADIUS: f64 = 2.0;
const PROBE_ANGLES: [f64; 3] = [0.713_705_2, 2.391_143_8, 4.426_324_1];
/// Generalized eigenvalues beyond this magnitude are treated as infinite.
const INFINITE_ZERO: f64 = 1e8;
/// Seed of the fixed row mixing used for tall pencils.
const COMPRESSION_SEED: u64 = 0x7a65_726f_735f_7131;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum TfmKind {
    /// `C_S + C_T (lambda I - A_TT)^{-1} A_TS`
    G1,
    /// `A_SS + A_ST (lambda I - A_TT)^{-1} A_TS`
    G2,
    /// `B_S^T + B_T^T (lambda I - A_TT^T)^{-1} A_ST^T`
    G1Dual,
    /// `A_SS^T + A_TS^T (lambda I - A_TT^T)^{-1} A_ST^T`
    G2Dual,
}

/// Which pair of transfer function matrices drives a rank test: the primal
/// pair for observability, the transposed pair (with `Phi^T`) for
/// controllability.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Family {
    Primal,
    Dual,
}

impl Family {
    pub fn kinds(self) -> (TfmKind, TfmKind) {
        match self {
            Family::Primal => (TfmKind::G1, TfmKind::G2),
            Family::Dual => (TfmKind::G1Dual, TfmKind::G2Dual),
        }
    }
}

/// `G(lambda) = d + c (lambda I - a)^{-1} b` for one subsystem.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemTfm {
    pub kind: TfmKind,
    /// 1-based subsystem index.
    pub index: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl SubsystemTfm {
    pub fn new(kind: TfmKind, index: usize, s: &Subsystem) -> Self {
        let (a, b, c, d) = match kind {
            TfmKind::G1 => (s.a_tt.clone(), s.a_ts.clone(), s.c_t.clone(), s.c_s.clone()),
            TfmKind::G2 => (s.a_tt.clone(), s.a_ts.clone(), s.a_st.clone(), s.a_ss.clone()),
            TfmKind::G1Dual => (
                s.a_tt.transpose(),
                s.a_st.transpose(),
                s.b_t.transpose(),
                s.b_s.transpose(),
            ),
            TfmKind::G2Dual => (
                s.a_tt.transpose(),
                s.a_st.transpose(),
                s.a_ts.transpose(),
                s.a_ss.transpose(),
            ),
        };
        Self { kind, index, a, b, c, d }
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn rows(&self) -> usize {
        self.d.nrows()
    }

    pub fn cols(&self) -> usize {
        self.d.ncols()
    }

    /// `[lambda I - a, -b; c, d]`
    pub fn rosenbrock(&self, lambda: Complex64) -> CMatrix {
        let n = self.states();
        let (p, m) = (self.rows(), self.cols());
        let mut r = CMatrix::zeros(n + p, n + m);
        for i in 0..n {
            for j in 0..n {
                r[(i, j)] = Complex64::new(-self.a[(i, j)], 0.0);
            }
            r[(i, i)] += lambda;
            for j in 0..m {
                r[(i, n + j)] = Complex64::new(-self.b[(i, j)], 0.0);
            }
        }
        for i in 0..p {
            for j in 0..n {
                r[(n + i, j)] = Complex64::new(self.c[(i, j)], 0.0);
            }
            for j in 0..m {
                r[(n + i, n + j)] = Complex64::new(self.d[(i, j)], 0.0);
            }
        }
        r
    }

    fn resolvent(&self, lambda: Complex64) -> CMatrix {
        let n = self.states();
        CMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { lambda } else { Complex64::new(0.0, 0.0) };
            diag - self.a[(i, j)]
        })
    }
}

/// How `(lambda I - A)^{-1}` is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResolventMode {
    /// Plain inverse; fails near an eigenvalue of the A-part.
    Exact,
    /// Minimum-norm least squares, accepted only if the residual is small.
    LeastSquares,
    /// Exact when possible, least squares otherwise.
    Auto,
}

#[derive(Clone, Debug)]
pub struct TfmValue {
    pub value: CMatrix,
    /// `||(lambda I - A) X - B||_F` when the least-squares resolvent was used.
    pub lsq_residual: Option<f64>,
}

pub fn eval_tfm(
    tfm: &SubsystemTfm,
    lambda: Complex64,
    mode: ResolventMode,
    tol: &Tolerances,
) -> Result<TfmValue> {
    let res = tfm.resolvent(lambda);
    let b = to_complex(&tfm.b);
    let near_eigenvalue = || {
        linalg::singular_values(&res)
            .last()
            .is_some_and(|&s| s <= tol.eig_guard_tol)
    };
    let use_lsq = match mode {
        ResolventMode::Exact => {
            if near_eigenvalue() {
                return Err(Error::ResolventSingular(lambda));
            }
            false
        }
        ResolventMode::LeastSquares => true,
        ResolventMode::Auto => near_eigenvalue(),
    };
    let (x, lsq_residual) = if tfm.states() == 0 {
        (CMatrix::zeros(0, tfm.cols()), None)
    } else if use_lsq {
        let svd = res.clone().svd(true, true);
        let x = svd
            .solve(&b, tol.rank_rel_tol * linalg::norm2(&res))
            .map_err(|_| Error::ResolventSingular(lambda))?;
        let residual = (&res * &x - &b).norm();
        let allowed = tol.lsq_residual_tol * b.norm().max(1.0);
        if residual > allowed {
            return Err(Error::InconsistentResolvent {
                lambda,
                residual,
                tol: allowed,
            });
        }
        (x, Some(residual))
    } else {
        let x = res.lu().solve(&b).ok_or(Error::ResolventSingular(lambda))?;
        (x, None)
    };
    let value = to_complex(&tfm.d) + to_complex(&tfm.c) * x;
    Ok(TfmValue { value, lsq_residual })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroSet {
    /// Finite zeros, repeated according to their pencil multiplicity, sorted
    /// by real then imaginary part.
    pub zeros: Vec<Complex64>,
    pub normal_rank: usize,
    pub full_column_normal_rank: bool,
}

/// Normal rank of the TFM: pencil rank minus the state count, maximized over
/// the probe points.
pub fn normal_rank(tfm: &SubsystemTfm, tol: &Tolerances) -> usize {
    PROBE_ANGLES
        .iter()
        .map(|&theta| {
            let lambda = Complex64::from_polar(PROBE_RADIUS, theta);
            let r = tfm.rosenbrock(lambda);
            linalg::numerical_rank(&r, tol.rank_rel_tol).saturating_sub(tfm.states())
        })
        .max()
        .unwrap_or(0)
}

/// Relative singularity of the Rosenbrock pencil at `lambda`:
/// `sigma_{n+m} / sigma_max`.
pub fn pencil_singularity(tfm: &SubsystemTfm, lambda: Complex64) -> f64 {
    let sv = linalg::singular_values(&tfm.rosenbrock(lambda));
    let k = tfm.states() + tfm.cols();
    match (sv.first(), k) {
        (_, 0) => 1.0,
        (Some(&hi), k) if hi > 0.0 => sv.get(k - 1).copied().unwrap_or(0.0) / hi,
        _ => 0.0,
    }
}

pub fn transmission_zeros(tfm: &SubsystemTfm, tol: &Tolerances) -> ZeroSet {
    let normal_rank = normal_rank(tfm, tol);
    let full = normal_rank == tfm.cols();
    let zeros = if full { pencil_zeros(tfm, tol) } else { Vec::new() };
    ZeroSet {
        zeros,
        normal_rank,
        full_column_normal_rank: full,
    }
}

fn compression(m: usize, p: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(COMPRESSION_SEED ^ ((m as u64) << 32 | p as u64));
    DMatrix::from_fn(m, p, |_, _| StandardNormal.sample(&mut rng))
}

/// Finite generalized eigenvalues of the square (possibly compressed) pencil,
/// filtered against the original pencil.
fn pencil_zeros(tfm: &SubsystemTfm, tol: &Tolerances) -> Vec<Complex64> {
    let n = tfm.states();
    let (p, m) = (tfm.rows(), tfm.cols());
    let k = n + m;
    if k == 0 {
        return Vec::new();
    }
    let (c, d) = if p > m {
        let q = compression(m, p);
        (&q * &tfm.c, &q * &tfm.d)
    } else {
        (tfm.c.clone(), tfm.d.clone())
    };
    // lambda E - F with E = diag(I_n, 0), F = [a, b; -c, -d]
    let mut f = DMatrix::zeros(k, k);
    f.view_mut((0, 0), (n, n)).copy_from(&tfm.a);
    f.view_mut((0, n), (n, m)).copy_from(&tfm.b);
    f.view_mut((n, 0), (m, n)).copy_from(&(-c));
    f.view_mut((n, n), (m, m)).copy_from(&(-d));
    let mut e = DMatrix::zeros(k, k);
    e.view_mut((0, 0), (n, n)).fill_with_identity();

    let scale = 1.0 + linalg::norm2(&f);
    let shifts = [0.618_033_988_7, -1.324_717_957_2, 2.236_067_977_5, -0.414_213_562_4, 3.141_592_653_6];
    let mut best: Option<(f64, f64, DMatrix<f64>)> = None;
    for s in shifts {
        let sigma = s * scale;
        let shifted = &e * sigma - &f;
        let cond = linalg::condition_number(&shifted);
        if best.as_ref().map_or(true, |b| cond < b.0) {
            best = Some((cond, sigma, shifted));
        }
        if cond < 1e8 {
            break;
        }
    }
    let (cond, sigma, shifted) = best.expect("at least one shift");
    if !cond.is_finite() {
        // lambda E - F singular at every shift: the square pencil is degenerate.
        return Vec::new();
    }
    let Some(t) = shifted.lu().solve(&e) else {
        return Vec::new();
    };

    // lambda E - F = F_sigma (I + (lambda - sigma) T): lambda = sigma - 1/mu
    let mut zeros: Vec<Complex64> = t
        .complex_eigenvalues()
        .iter()
        .filter(|mu| mu.norm() > 0.0)
        .map(|mu| Complex64::new(sigma, 0.0) - mu.inv())
        .filter(|l| l.norm() <= INFINITE_ZERO && l.is_finite())
        .filter(|&l| pencil_singularity(tfm, l) <= tol.zero_residual_tol)
        .map(|l| {
            if l.im.abs() <= tol.cluster_scale(l.norm(), 0.0) {
                Complex64::new(l.re, 0.0)
            } else {
                l
            }
        })
        .collect();
    zeros.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    zeros
}

/// One distinct zero and the (1-based) subsystems contributing to it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroCluster {
    pub lambda0: Complex64,
    pub participants: Vec<usize>,
}

/// Single-linkage merge of zeros closer than the cluster tolerance. The
/// representative is the mean of the members. Input position `k` is
/// subsystem `k + 1`.
pub fn cluster_distinct_zeros(per_subsystem: &[Vec<Complex64>], tol: &Tolerances) -> Vec<ZeroCluster> {
    let items: Vec<(usize, Complex64)> = per_subsystem
        .iter()
        .enumerate()
        .flat_map(|(i, zs)| zs.iter().map(move |&z| (i + 1, z)))
        .collect();
    let mut parent: Vec<usize> = (0..items.len()).collect();
    fn root(parent: &mut [usize], mut k: usize) -> usize {
        while parent[k] != k {
            parent[k] = parent[parent[k]];
            k = parent[k];
        }
        k
    }
    for a in 0..items.len() {
        for b in (a + 1)..items.len() {
            let (za, zb) = (items[a].1, items[b].1);
            if (za - zb).norm() <= tol.cluster_scale(za.norm(), zb.norm()) {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                if ra != rb {
                    parent[rb.max(ra)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for k in 0..items.len() {
        let r = root(&mut parent, k);
        match groups.iter_mut().find(|(g, _)| *g == r) {
            Some((_, members)) => members.push(k),
            None => groups.push((r, vec![k])),
        }
    }
    let mut clusters: Vec<ZeroCluster> = groups
        .into_iter()
        .map(|(_, members)| {
            let sum: Complex64 = members.iter().map(|&k| items[k].1).sum();
            let mut participants: Vec<usize> = members.iter().map(|&k| items[k].0).collect();
            participants.sort_unstable();
            participants.dedup();
            ZeroCluster {
                lambda0: sum / members.len() as f64,
                participants,
            }
        })
        .collect();
    clusters.sort_by(|a, b| {
        a.lambda0
            .re
            .total_cmp(&b.lambda0.re)
            .then(a.lambda0.im.total_cmp(&b.lambda0.im))
    });
    clusters
}

/// Orthonormal basis of the null space of `G(lambda0)`.
pub fn null_basis(tfm: &SubsystemTfm, lambda0: Complex64, tol: &Tolerances) -> Result<CMatrix> {
    let g = eval_tfm(tfm, lambda0, ResolventMode::Auto, tol)?.value;
    let scale = linalg::norm2(&tfm.rosenbrock(lambda0));
    let (basis, _) = linalg::null_space(&g, tol.zero_residual_tol, scale);
    if basis.ncols() == 0 {
        return Err(Error::EmptyNullSpace {
            index: tfm.index,
            lambda: lambda0,
        });
    }
    Ok(basis)
}

/// Zero directions of one participating subsystem.
///
/// `x` (states), `y` (internal input) and `z` (internal output) share columns:
/// each column is a null vector `[x; y]` of the Rosenbrock pencil of `G1` and
/// `z = c2 x + d2 y` with the `G2` realization. When the `y` part has full
/// column rank the columns are re-based so `y` is orthonormal, which makes
/// `y` a basis of the null space of `G1(lambda0)` and `z = G2(lambda0) y`.
/// Otherwise (a zero that is also an eigenvalue of the A-part with a
/// direction invisible at the ports) the orthonormal pencil basis is kept.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParticipantBasis {
    pub index: usize,
    #[serde(skip)]
    pub x: CMatrix,
    #[serde(skip)]
    pub y: CMatrix,
    #[serde(skip)]
    pub z: CMatrix,
    pub orthonormal_y: bool,
}

impl ParticipantBasis {
    pub fn dim(&self) -> usize {
        self.y.ncols()
    }
}

/// Threshold on `sigma_min(y-part)` for re-basing onto an orthonormal `y`.
const REBASE_MIN_SV: f64 = 1e-6;

pub fn participant_basis(
    g1: &SubsystemTfm,
    g2: &SubsystemTfm,
    lambda0: Complex64,
    tol: &Tolerances,
) -> Result<ParticipantBasis> {
    let n = g1.states();
    let m = g1.cols();
    let (basis, _) = linalg::null_space(&g1.rosenbrock(lambda0), tol.zero_residual_tol, 0.0);
    if basis.ncols() == 0 {
        return Err(Error::EmptyNullSpace {
            index: g1.index,
            lambda: lambda0,
        });
    }
    let mut x = basis.rows(0, n).into_owned();
    let mut y = basis.rows(n, m).into_owned();
    let p = basis.ncols();
    let mut orthonormal_y = false;
    if m >= p && p > 0 {
        let svd = y.clone().svd(true, true);
        let sv = &svd.singular_values;
        if sv.iter().all(|&s| s >= REBASE_MIN_SV) {
            // y = U S V^H  =>  [x; y] V S^{-1} has y-part U.
            let u = svd.u.expect("left vectors requested");
            let v = svd.v_t.expect("right vectors requested").adjoint();
            let s_inv = CMatrix::from_diagonal(&sv.map(|s| Complex64::new(1.0 / s, 0.0)));
            x = x * &v * &s_inv;
            y = u;
            orthonormal_y = true;
        }
    }
    let z = to_complex(&g2.c) * &x + to_complex(&g2.d) * &y;
    Ok(ParticipantBasis {
        index: g1.index,
        x,
        y,
        z,
        orthonormal_y,
    })
}

/// One distinct zero with its participants and the aggregate `Y`, `Z`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroCertificate {
    pub lambda0: Complex64,
    pub participants: Vec<ParticipantBasis>,
    #[serde(skip)]
    pub y_agg: CMatrix,
    #[serde(skip)]
    pub z_agg: CMatrix,
}

impl ZeroCertificate {
    pub fn participant_indices(&self) -> Vec<usize> {
        self.participants.iter().map(|p| p.index).collect()
    }

    pub fn columns(&self) -> usize {
        self.participants.iter().map(ParticipantBasis::dim).sum()
    }
}

/// Row offsets of the internal-input (`y`) and internal-output (`z`) spaces
/// for a family: the dual family exchanges them.
fn family_offsets(sys: &NetworkedSystem, family: Family) -> (&[usize], &[usize]) {
    let off = sys.offsets();
    match family {
        Family::Primal => (&off.s, &off.z),
        Family::Dual => (&off.z, &off.s),
    }
}

/// Places each participant's `y` at row offset of its internal-input block and
/// `z` at its internal-output block, in disjoint column blocks.
pub fn build_aggregates(
    lambda0: Complex64,
    participants: Vec<ParticipantBasis>,
    sys: &NetworkedSystem,
    family: Family,
) -> Result<ZeroCertificate> {
    let (y_off, z_off) = family_offsets(sys, family);
    let total_y = *y_off.last().unwrap();
    let total_z = *z_off.last().unwrap();
    let cols: usize = participants.iter().map(ParticipantBasis::dim).sum();
    let mut y_agg = CMatrix::zeros(total_y, cols);
    let mut z_agg = CMatrix::zeros(total_z, cols);
    let mut col = 0;
    for p in &participants {
        let i = p.index - 1;
        if i + 1 >= y_off.len()
            || y_off[i] + p.y.nrows() > total_y
            || z_off[i] + p.z.nrows() > total_z
            || y_off[i + 1] - y_off[i] != p.y.nrows()
            || z_off[i + 1] - z_off[i] != p.z.nrows()
        {
            return Err(Error::Dimension(format!(
                "zero direction of subsystem {} does not fit the system offsets",
                p.index
            )));
        }
        y_agg.view_mut((y_off[i], col), (p.y.nrows(), p.dim())).copy_from(&p.y);
        z_agg.view_mut((z_off[i], col), (p.z.nrows(), p.dim())).copy_from(&p.z);
        col += p.dim();
    }
    Ok(ZeroCertificate {
        lambda0,
        participants,
        y_agg,
        z_agg,
    })
}

/// Zero sets of every subsystem plus one certificate per distinct zero.
#[derive(Clone, Debug, Serialize)]
pub struct CertificateSet {
    pub family: Family,
    pub zero_sets: Vec<ZeroSet>,
    pub certificates: Vec<ZeroCertificate>,
}

impl CertificateSet {
    /// 1-based indices of subsystems whose `G1` lacks full column normal rank.
    pub fn rank_deficient(&self) -> Vec<usize> {
        self.zero_sets
            .iter()
            .enumerate()
            .filter(|(_, z)| !z.full_column_normal_rank)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

pub fn family_tfms(sys: &NetworkedSystem, family: Family) -> Vec<(SubsystemTfm, SubsystemTfm)> {
    let (k1, k2) = family.kinds();
    sys.subsystems()
        .iter()
        .enumerate()
        .map(|(i, s)| (SubsystemTfm::new(k1, i + 1, s), SubsystemTfm::new(k2, i + 1, s)))
        .collect()
}

/// Runs the zero computation for every subsystem and builds the certificates.
/// Certificates are only built when every `G1` has full column normal rank.
pub fn certificates(
    sys: &NetworkedSystem,
    family: Family,
    tol: &Tolerances,
    exec: Execution,
) -> Result<CertificateSet> {
    sys.ensure_consistent()?;
    let tfms = family_tfms(sys, family);
    let zero_sets = exec::map_slice(&tfms, exec, |(g1, _)| transmission_zeros(g1, tol));
    let mut set = CertificateSet {
        family,
        zero_sets,
        certificates: Vec::new(),
    };
    if !set.rank_deficient().is_empty() {
        return Ok(set);
    }
    let per: Vec<Vec<Complex64>> = set.zero_sets.iter().map(|z| z.zeros.clone()).collect();
    for cluster in cluster_distinct_zeros(&per, tol) {
        let participants = cluster
            .participants
            .iter()
            .map(|&i| {
                let (g1, g2) = &tfms[i - 1];
                participant_basis(g1, g2, cluster.lambda0, tol)
            })
            .collect::<Result<Vec<_>>>()?;
        set.certificates
            .push(build_aggregates(cluster.lambda0, participants, sys, family)?);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConnectionMatrix, SubsystemDims};
    use approx::assert_relative_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_g1() -> SubsystemTfm {
        SubsystemTfm {
            kind: TfmKind::G1,
            index: 1,
            a: m1(0.2),
            b: m1(0.3),
            c: m1(1.0),
            d: m1(1.0),
        }
    }

    #[test]
    fn scalar_evaluation() {
        let tol = Tolerances::default();
        let v = eval_tfm(&scalar_g1(), c(1.0), ResolventMode::Exact, &tol).unwrap();
        assert_relative_eq!(v.value[(0, 0)].re, 1.375, epsilon = 1e-15);
        assert!(v.lsq_residual.is_none());
    }

    #[test]
    fn large_lambda_approaches_feedthrough() {
        let tol = Tolerances::default();
        let v = eval_tfm(&scalar_g1(), c(1e8), ResolventMode::Exact, &tol).unwrap();
        assert!((v.value[(0, 0)] - c(1.0)).norm() < 1e-7);
    }

    #[test]
    fn exact_mode_rejects_eigenvalue() {
        let tol = Tolerances::default();
        let err = eval_tfm(&scalar_g1(), c(0.2), ResolventMode::Exact, &tol).unwrap_err();
        assert!(matches!(err, Error::ResolventSingular(_)));
    }

    #[test]
    fn least_squares_mode_accepts_consistent_rhs() {
        // A_TS lies in the range of (0.5 I - A) even though 0.5 is an eigenvalue.
        let tfm = SubsystemTfm {
            kind: TfmKind::G1,
            index: 1,
            a: DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.1]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 0.4]),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            d: m1(2.0),
        };
        let tol = Tolerances::default();
        let v = eval_tfm(&tfm, c(0.5), ResolventMode::Auto, &tol).unwrap();
        assert!(v.lsq_residual.unwrap() < 1e-12);
        assert_relative_eq!(v.value[(0, 0)].re, 2.0 + 0.4 / 0.4, epsilon = 1e-12);
    }

    #[test]
    fn two_by_two_matches_cofactor_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -0.7, 0.4, 0.1]);
        let tfm = SubsystemTfm {
            kind: TfmKind::G2,
            index: 1,
            a: a.clone(),
            b: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 0.8]),
            c: DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 1.1, -0.3]),
            d: DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]),
        };
        let lambda = Complex64::new(0.9, 0.35);
        let got = eval_tfm(&tfm, lambda, ResolventMode::Exact, &Tolerances::default())
            .unwrap()
            .value;
        // cofactor inverse of [[l - a00, -a01], [-a10, l - a11]]
        let (p, q, r, s) = (lambda - a[(0, 0)], c(-a[(0, 1)]), c(-a[(1, 0)]), lambda - a[(1, 1)]);
        let det = p * s - q * r;
        let inv = [[s / det, -q / det], [-r / det, p / det]];
        for i in 0..2 {
            for j in 0..2 {
                let mut want = c(tfm.d[(i, j)]);
                for k in 0..2 {
                    for l in 0..2 {
                        want += tfm.c[(i, k)] * inv[k][l] * tfm.b[(l, j)];
                    }
                }
                assert!((got[(i, j)] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn scalar_zero_at_root_of_numerator() {
        // G(l) = 1 + 0.3/(l - 0.2) = (l + 0.1)/(l - 0.2)
        let z = transmission_zeros(&scalar_g1(), &Tolerances::default());
        assert!(z.full_column_normal_rank);
        assert_eq!(z.zeros.len(), 1);
        assert_relative_eq!(z.zeros[0].re, -0.1, epsilon = 1e-12);
        assert_eq!(z.zeros[0].im, 0.0);
    }

    #[test]
    fn constant_identity_tfm_has_only_decoupling_zeros() {
        let tfm = SubsystemTfm {
            kind: TfmKind::G1,
            index: 1,
            a: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, -0.3]),
            b: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 1.0]),
            c: DMatrix::zeros(2, 2),
            d: DMatrix::identity(2, 2),
        };
        // C = 0 makes every eigenvalue of A an output-decoupling zero of the
        // pencil; with c = 0 the pencil drops rank at eig(A).
        let z = transmission_zeros(&tfm, &Tolerances::default());
        assert!(z.full_column_normal_rank);
        assert_eq!(z.normal_rank, 2);
        // the transfer matrix itself has no zeros: it is identity everywhere
        for &l in &z.zeros {
            assert!(eval_tfm(&tfm, l + c(1e-3), ResolventMode::Exact, &Tolerances::default()).is_ok());
            assert!(null_basis(&tfm, l, &Tolerances::default()).is_err());
        }
        let no_states = SubsystemTfm {
            kind: TfmKind::G1,
            index: 1,
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, 2),
            c: DMatrix::zeros(2, 0),
            d: DMatrix::identity(2, 2),
        };
        let z = transmission_zeros(&no_states, &Tolerances::default());
        assert!(z.zeros.is_empty() && z.full_column_normal_rank);
    }

    #[test]
    fn no_external_output_is_rank_deficient() {
        let tfm = SubsystemTfm {
            kind: TfmKind::G1,
            index: 1,
            a: m1(0.3),
            b: m1(1.0),
            c: DMatrix::zeros(0, 1),
            d: DMatrix::zeros(0, 1),
        };
        let z = transmission_zeros(&tfm, &Tolerances::default());
        assert!(!z.full_column_normal_rank);
        assert_eq!(z.normal_rank, 0);
    }

    #[test]
    fn tall_tfm_zero_survives_compression() {
        // two outputs sharing the factor (l - 0.4): G = [(l-0.4)/(l-0.1); 2(l-0.4)/(l-0.1)]
        let tfm = SubsystemTfm {
            kind: TfmKind::G1,
            index: 1,
            a: m1(0.1),
            b: m1(1.0),
            c: DMatrix::from_row_slice(2, 1, &[-0.3, -0.6]),
            d: DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
        };
        let z = transmission_zeros(&tfm, &Tolerances::default());
        assert_eq!(z.zeros.len(), 1);
        assert_relative_eq!(z.zeros[0].re, 0.4, epsilon = 1e-10);
    }

    #[test]
    fn clustering_semantics() {
        let tol = Tolerances::default();
        let disjoint = cluster_distinct_zeros(&[vec![c(-0.1)], vec![c(0.7)]], &tol);
        assert_eq!(disjoint.len(), 2);
        assert_eq!(disjoint[0].participants, vec![1]);
        assert_eq!(disjoint[1].participants, vec![2]);

        let shared = cluster_distinct_zeros(&[vec![c(0.5)], vec![c(0.5)]], &tol);
        assert_eq!(shared.len(), 1);
        assert_eq!(shared[0].participants, vec![1, 2]);

        let near = cluster_distinct_zeros(&[vec![c(0.5)], vec![c(0.5 + 1e-12)]], &tol);
        assert_eq!(near.len(), 1);
        assert_relative_eq!(near[0].lambda0.re, 0.5 + 0.5e-12, epsilon = 1e-15);

        let far = cluster_distinct_zeros(&[vec![c(100.0)], vec![c(100.0 + 5e-6)]], &tol);
        assert_eq!(far.len(), 1, "relative tolerance outside the unit disk");
    }

    #[test]
    fn null_basis_of_scalar_zero() {
        let tol = Tolerances::default();
        let b = null_basis(&scalar_g1(), c(-0.1), &tol).unwrap();
        assert_eq!(b.shape(), (1, 1));
        assert_relative_eq!(b[(0, 0)].norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn null_basis_of_diagonal_tfm_is_coordinate_axis() {
        // diag(g(l), 1) with g(l) = (l + 0.1)/(l - 0.2)
        let tfm = SubsystemTfm {
            kind: TfmKind::G1,
            index: 1,
            a: m1(0.2),
            b: DMatrix::from_row_slice(1, 2, &[0.3, 0.0]),
            c: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            d: DMatrix::identity(2, 2),
        };
        let b = null_basis(&tfm, c(-0.1), &Tolerances::default()).unwrap();
        assert_eq!(b.ncols(), 1);
        assert_relative_eq!(b[(0, 0)].norm(), 1.0, epsilon = 1e-12);
        assert!(b[(1, 0)].norm() < 1e-12);
    }

    #[test]
    fn aggregates_follow_offsets() {
        let dims = SubsystemDims { m_t: 1, m_s: 2, m_z: 1, m_y: 2, m_d: 1, m_w: 2 };
        let sys = NetworkedSystem::new(
            vec![Subsystem::zeros(dims), Subsystem::zeros(dims)],
            ConnectionMatrix::selection(2, &[0, 1, 0, 1]),
        );
        let part = |index: usize| ParticipantBasis {
            index,
            x: CMatrix::zeros(1, 1),
            y: CMatrix::from_element(2, 1, c(index as f64)),
            z: CMatrix::from_element(1, 1, c(10.0 * index as f64)),
            orthonormal_y: false,
        };
        let cert = build_aggregates(c(0.5), vec![part(1), part(2)], &sys, Family::Primal).unwrap();
        assert_eq!(cert.y_agg.shape(), (4, 2));
        assert_eq!(cert.z_agg.shape(), (2, 2));
        assert_eq!(cert.y_agg[(0, 0)], c(1.0));
        assert_eq!(cert.y_agg[(2, 0)], c(0.0));
        assert_eq!(cert.y_agg[(2, 1)], c(2.0));
        assert_eq!(cert.y_agg[(0, 1)], c(0.0));
        assert_eq!(cert.z_agg[(1, 1)], c(20.0));

        let bad = ParticipantBasis {
            index: 2,
            x: CMatrix::zeros(1, 1),
            y: CMatrix::zeros(3, 1),
            z: CMatrix::zeros(1, 1),
            orthonormal_y: false,
        };
        assert!(matches!(
            build_aggregates(c(0.5), vec![bad], &sys, Family::Primal),
            Err(Error::Dimension(_))
        ));
    }
}
