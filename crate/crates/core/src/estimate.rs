//! Distributed one-step predictor (CDOSSP) and lumped Kalman covariance
//! recursions, steady-state iteration and the equivalence tests between
//! the two estimators.
//!
//! All matrices are time-invariant; a step maps `P(t)` to `P(t+1)`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::exec::{map_indexed, Execution};
use crate::linalg::{self, block_diag};
use crate::model::{assemble_lumped, loop_matrix, LumpedModel, NetworkedSystem, Offsets};
use crate::tol::Tolerances;
use crate::verify::require_estimation_form;
use crate::{Error, Result};

/// Eigenvalue floor for `D_w D_w^T` before taking its inverse square root.
const NOISE_FLOOR: f64 = 1e-12;
/// Covariance norm beyond which an iteration is reported as diverged.
const DIVERGENCE_GUARD: f64 = 1e12;

/// Per-subsystem matrices of the distributed predictor.
#[derive(Clone, Debug)]
pub struct SubsystemEstimation {
    /// `[J_Ti^T; J_Si^T Phi (I - A_SS Phi)^{-1} A_ST]`
    pub w: DMatrix<f64>,
    /// `[A_TT(i) A_TS(i)]`
    pub a_t: DMatrix<f64>,
    /// `[C_T(i) C_S(i)]`
    pub c: DMatrix<f64>,
    /// `D_w(i) D_w(i)^T`
    pub r: DMatrix<f64>,
    pub r_inv: DMatrix<f64>,
    /// `C(i)^T R_i^{-1} C(i)`
    pub s: DMatrix<f64>,
    /// Whitened output rows of the lumped model.
    pub c_bar: DMatrix<f64>,
    /// State rows of the lumped `A`.
    pub a_rows: DMatrix<f64>,
    /// `B_T(i) B_T(i)^T`
    pub q: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct EstimationSetup {
    sys: NetworkedSystem,
    lumped: LumpedModel,
    parts: Vec<SubsystemEstimation>,
    /// Full whitened output matrix.
    c_bar: DMatrix<f64>,
    /// `B B^T`
    q: DMatrix<f64>,
    /// Block-diagonal `D D^T`.
    r: DMatrix<f64>,
    exec: Execution,
}

impl EstimationSetup {
    pub fn new(sys: &NetworkedSystem, tol: &Tolerances) -> Result<Self> {
        require_estimation_form(sys)?;
        let lumped = assemble_lumped(sys, tol)?;
        let off = sys.offsets();
        let mt = off.total_t();

        // Phi (I - A_SS Phi)^{-1} A_ST : M_S x M_T
        let a_st = sys.stacked(|s| &s.a_st);
        let resolved = linalg::solve(&loop_matrix(sys), &a_st, "I - A_SS Phi")?;
        let l = sys.phi().apply(&resolved);

        let mut parts = Vec::with_capacity(sys.len());
        let mut c_bar = DMatrix::zeros(off.total_y(), mt);
        for (i, s) in sys.subsystems().iter().enumerate() {
            let d = s.dims();
            let (tr, sr, yr) = (off.t_range(i), off.s_range(i), off.y_range(i));
            if d.m_w < d.m_y {
                return Err(Error::Precondition(format!(
                    "subsystem {}: D_w must have full row rank",
                    i + 1
                )));
            }
            let mut w = DMatrix::zeros(d.m_t + d.m_s, mt);
            for k in 0..d.m_t {
                w[(k, tr.start + k)] = 1.0;
            }
            w.rows_mut(d.m_t, d.m_s).copy_from(&l.rows(sr.start, d.m_s));

            let mut a_t = DMatrix::zeros(d.m_t, d.m_t + d.m_s);
            a_t.columns_mut(0, d.m_t).copy_from(&s.a_tt);
            a_t.columns_mut(d.m_t, d.m_s).copy_from(&s.a_ts);
            let mut c = DMatrix::zeros(d.m_y, d.m_t + d.m_s);
            c.columns_mut(0, d.m_t).copy_from(&s.c_t);
            c.columns_mut(d.m_t, d.m_s).copy_from(&s.c_s);

            let r = linalg::symmetrize(&(&s.d_w * s.d_w.transpose()));
            let r_inv_sqrt = linalg::sym_inv_sqrt(&r, NOISE_FLOOR).map_err(|_| {
                Error::Precondition(format!("subsystem {}: D_w must have full row rank", i + 1))
            })?;
            let r_inv = &r_inv_sqrt * &r_inv_sqrt;
            let s_mat = linalg::symmetrize(&(c.transpose() * &r_inv * &c));
            let cb = &r_inv_sqrt * lumped.c.rows(yr.start, d.m_y);
            c_bar.rows_mut(yr.start, d.m_y).copy_from(&cb);
            parts.push(SubsystemEstimation {
                w,
                a_t,
                c,
                r,
                r_inv,
                s: s_mat,
                c_bar: cb,
                a_rows: lumped.a.rows(tr.start, d.m_t).into_owned(),
                q: &s.b_t * s.b_t.transpose(),
            });
        }
        let q = linalg::symmetrize(&(&lumped.b * lumped.b.transpose()));
        let r_blocks: Vec<&DMatrix<f64>> = parts.iter().map(|p| &p.r).collect();
        let r = block_diag(&r_blocks);
        Ok(Self {
            sys: sys.clone(),
            lumped,
            parts,
            c_bar,
            q,
            r,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn system(&self) -> &NetworkedSystem {
        &self.sys
    }

    pub fn offsets(&self) -> &Offsets {
        self.sys.offsets()
    }

    pub fn lumped(&self) -> &LumpedModel {
        &self.lumped
    }

    pub fn part(&self, i: usize) -> &SubsystemEstimation {
        &self.parts[i]
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn states(&self) -> usize {
        self.lumped.a.nrows()
    }

    pub fn c_bar(&self) -> &DMatrix<f64> {
        &self.c_bar
    }

    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Block-diagonal measurement noise covariance.
    pub fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn check_state(&self, p: &CovarianceState) -> Result<()> {
        let n = self.states();
        if p.p.nrows() != n || p.p.ncols() != n {
            return Err(Error::Dimension(format!(
                "covariance is {}x{}, expected {n}x{n}",
                p.p.nrows(),
                p.p.ncols()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceState {
    pub p: DMatrix<f64>,
    pub t: usize,
}

impl CovarianceState {
    pub fn new(p: DMatrix<f64>) -> Self {
        Self { p: linalg::symmetrize(&p), t: 0 }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn block(&self, off: &Offsets, i: usize, j: usize) -> DMatrix<f64> {
        let (ri, rj) = (off.t_range(i), off.t_range(j));
        self.p.view((ri.start, rj.start), (ri.len(), rj.len())).into_owned()
    }

    fn next(&self, p: DMatrix<f64>) -> Self {
        Self {
            p: linalg::symmetrize(&p),
            t: self.t + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GainSet {
    /// `K_T(i)`, one `m_Ti x m_yi` matrix per subsystem.
    Distributed(Vec<DMatrix<f64>>),
    /// Lumped `M_T x M_y` gain acting on raw innovations.
    Lumped(DMatrix<f64>),
}

impl GainSet {
    /// Full `M_T x M_y` gain; distributed gains are block diagonal.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            GainSet::Distributed(k) => block_diag(&k.iter().collect::<Vec<_>>()),
            GainSet::Lumped(k) => k.clone(),
        }
    }
}

/// `(I + Pi_i S_i)^{-1}` with `Pi_i = W_i P W_i^T`, and `Pi_i` itself.
fn loop_factor(part: &SubsystemEstimation, p: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let pi = &part.w * p * part.w.transpose();
    let n = pi.nrows();
    let f = DMatrix::identity(n, n) + &pi * &part.s;
    let inv = linalg::inverse(&f, "I + W P W^T C^T R^-1 C")?;
    Ok((inv, pi))
}

/// Optimal distributed gain of subsystem `i` (0-based).
pub fn cdossp_gain(setup: &EstimationSetup, p: &CovarianceState, i: usize) -> Result<DMatrix<f64>> {
    setup.check_state(p)?;
    let part = &setup.parts[i];
    let (inv, pi) = loop_factor(part, &p.p)?;
    Ok(&part.a_t * inv * pi * part.c.transpose() * &part.r_inv)
}

pub fn cdossp_gains(setup: &EstimationSetup, p: &CovarianceState) -> Result<GainSet> {
    let gains: Result<Vec<_>> = map_indexed(setup.len(), setup.exec, |i| cdossp_gain(setup, p, i))
        .into_iter()
        .collect();
    Ok(GainSet::Distributed(gains?))
}

fn assemble_blocks(setup: &EstimationSetup, block: impl Fn(usize, usize) -> DMatrix<f64> + Sync) -> DMatrix<f64> {
    let off = setup.offsets();
    let n = setup.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let blocks = map_indexed(pairs.len(), setup.exec, |k| block(pairs[k].0, pairs[k].1));
    let mut out = DMatrix::zeros(setup.states(), setup.states());
    for (&(i, j), b) in pairs.iter().zip(&blocks) {
        let (ri, rj) = (off.t_range(i), off.t_range(j));
        out.view_mut((ri.start, rj.start), (ri.len(), rj.len())).copy_from(b);
        if i != j {
            out.view_mut((rj.start, ri.start), (rj.len(), ri.len()))
                .copy_from(&b.transpose());
        }
    }
    out
}

/// Distributed covariance update, accepts singular `P`.
pub fn cdossp_step(setup: &EstimationSetup, p: &CovarianceState) -> Result<CovarianceState> {
    setup.check_state(p)?;
    let factors: Result<Vec<_>> = map_indexed(setup.len(), setup.exec, |i| loop_factor(&setup.parts[i], &p.p))
        .into_iter()
        .collect();
    let factors = factors?;
    // A_T(i) (I + Pi_i S_i)^{-1}
    let left: Vec<DMatrix<f64>> = factors
        .iter()
        .zip(&setup.parts)
        .map(|((inv, _), part)| &part.a_t * inv)
        .collect();
    let next = assemble_blocks(setup, |i, j| {
        let (pi, pj) = (&setup.parts[i], &setup.parts[j]);
        if i == j {
            &left[i] * &factors[i].1 * pi.a_t.transpose() + &pi.q
        } else {
            &left[i] * &pi.w * &p.p * pj.w.transpose() * left[j].transpose()
        }
    });
    Ok(p.next(next))
}

/// `X_i = (P^{-1} + C_bar_i^T C_bar_i)^{-1}` for every subsystem.
fn info_factors(setup: &EstimationSetup, p_inv: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    map_indexed(setup.len(), setup.exec, |i| {
        let cb = &setup.parts[i].c_bar;
        linalg::spd_inverse(&(p_inv + cb.transpose() * cb), "P^-1 + C_bar_i^T C_bar_i")
    })
    .into_iter()
    .collect()
}

/// Information form of the distributed update; requires `P` positive definite.
pub fn cdossp_step_infoform(setup: &EstimationSetup, p: &CovarianceState) -> Result<CovarianceState> {
    setup.check_state(p)?;
    let p_inv = linalg::spd_inverse(&p.p, "P")?;
    let x = info_factors(setup, &p_inv)?;
    let ax: Vec<DMatrix<f64>> = x.iter().zip(&setup.parts).map(|(x, part)| &part.a_rows * x).collect();
    let next = assemble_blocks(setup, |i, j| {
        if i == j {
            &ax[i] * setup.parts[i].a_rows.transpose() + &setup.parts[i].q
        } else {
            &ax[i] * &p_inv * ax[j].transpose()
        }
    });
    Ok(p.next(next))
}

#[derive(Clone, Debug)]
pub struct KalmanStep {
    pub next: CovarianceState,
    pub gain: GainSet,
}

/// Lumped Kalman update in covariance form (no `P^{-1}`), with the gain
/// `K = A P C^T (R + C P C^T)^{-1}`.
///
/// Uses the Joseph arrangement `(A - K C) P (A - K C)^T + K R K^T + B B^T`;
/// the textbook `A P A^T - K C P A^T + B B^T` cancels catastrophically when
/// `A` has large observable modes and stalls fixed-point iteration.
pub fn kalman_step(setup: &EstimationSetup, p: &CovarianceState) -> Result<KalmanStep> {
    setup.check_state(p)?;
    let (a, c) = (&setup.lumped.a, &setup.lumped.c);
    let apct = a * &p.p * c.transpose();
    let innov = linalg::symmetrize(&(&setup.r + c * &p.p * c.transpose()));
    let inv = linalg::spd_inverse(&innov, "R + C P C^T")?;
    let k = &apct * inv;
    let f = a - &k * c;
    let next = &f * &p.p * f.transpose() + &k * &setup.r * k.transpose() + &setup.q;
    Ok(KalmanStep {
        next: p.next(next),
        gain: GainSet::Lumped(k),
    })
}

/// Information form `A (P^{-1} + C_bar^T C_bar)^{-1} A^T + B B^T`.
pub fn kalman_step_infoform(setup: &EstimationSetup, p: &CovarianceState) -> Result<CovarianceState> {
    setup.check_state(p)?;
    let p_inv = linalg::spd_inverse(&p.p, "P")?;
    let y = linalg::spd_inverse(
        &(p_inv + setup.c_bar.transpose() * &setup.c_bar),
        "P^-1 + C_bar^T C_bar",
    )?;
    let a = &setup.lumped.a;
    Ok(p.next(a * y * a.transpose() + &setup.q))
}

/// Whitened lumped gain `A P C_bar^T (I + C_bar P C_bar^T)^{-1}`.
pub fn whitened_kalman_gain(setup: &EstimationSetup, p: &CovarianceState) -> Result<DMatrix<f64>> {
    setup.check_state(p)?;
    let cb = &setup.c_bar;
    let m = cb.nrows();
    let inner = DMatrix::identity(m, m) + cb * &p.p * cb.transpose();
    let inv = linalg::spd_inverse(&inner, "I + C_bar P C_bar^T")?;
    Ok(&setup.lumped.a * &p.p * cb.transpose() * inv)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Kalman,
    Cdossp,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Kalman => "kalman",
            Estimator::Cdossp => "cdossp",
        })
    }
}

pub fn step(setup: &EstimationSetup, which: Estimator, p: &CovarianceState) -> Result<CovarianceState> {
    match which {
        Estimator::Kalman => Ok(kalman_step(setup, p)?.next),
        Estimator::Cdossp => cdossp_step(setup, p),
    }
}

/// `P(0), ..., P(steps)`.
pub fn trace(setup: &EstimationSetup, which: Estimator, p0: &CovarianceState, steps: usize) -> Result<Vec<CovarianceState>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(p0.clone());
    for _ in 0..steps {
        let next = step(setup, which, out.last().unwrap())?;
        out.push(next);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyStatus {
    Converged,
    MaxIters,
    Diverged,
}

#[derive(Clone, Debug, Serialize)]
pub struct SteadyState {
    pub p: CovarianceState,
    pub status: SteadyStatus,
    pub iters: usize,
    /// Last relative Frobenius change.
    pub change: f64,
}

impl SteadyState {
    pub fn converged(&self) -> bool {
        self.status == SteadyStatus::Converged
    }
}

/// Fixed-point iteration until `||P+ - P||_F <= tol * max(1, ||P||_F)`.
pub fn steady_state(
    setup: &EstimationSetup,
    which: Estimator,
    p0: &CovarianceState,
    max_iters: usize,
    tol: f64,
) -> Result<SteadyState> {
    let mut p = p0.clone();
    let mut change = f64::INFINITY;
    for k in 1..=max_iters {
        let next = step(setup, which, &p)?;
        let scale = p.p.norm().max(1.0);
        change = (&next.p - &p.p).norm() / scale;
        let norm = next.p.norm();
        if !norm.is_finite() || norm > DIVERGENCE_GUARD {
            return Ok(SteadyState {
                p: next,
                status: SteadyStatus::Diverged,
                iters: k,
                change,
            });
        }
        p = next;
        if change <= tol {
            return Ok(SteadyState {
                p,
                status: SteadyStatus::Converged,
                iters: k,
                change,
            });
        }
    }
    Ok(SteadyState {
        p,
        status: SteadyStatus::MaxIters,
        iters: max_iters,
        change,
    })
}

/// Closed-form difference between the distributed update from `P` and the
/// Kalman update from `P_kal`, block `(i, i)`:
/// `A_i Y {P_kal^{-1} - P^{-1} + sum_{k != i} C_bar_k^T C_bar_k} X_i A_i^T`.
pub fn covariance_gap(setup: &EstimationSetup, p: &CovarianceState, p_kal: &CovarianceState, i: usize) -> Result<DMatrix<f64>> {
    setup.check_state(p)?;
    setup.check_state(p_kal)?;
    let p_inv = linalg::spd_inverse(&p.p, "P")?;
    let pk_inv = linalg::spd_inverse(&p_kal.p, "P_kal")?;
    let part = &setup.parts[i];
    let x = linalg::spd_inverse(&(&p_inv + part.c_bar.transpose() * &part.c_bar), "P^-1 + C_bar_i^T C_bar_i")?;
    let ctc = setup.c_bar.transpose() * &setup.c_bar;
    let y = linalg::spd_inverse(&(&pk_inv + &ctc), "P_kal^-1 + C_bar^T C_bar")?;
    let others = ctc - part.c_bar.transpose() * &part.c_bar;
    let middle = pk_inv - p_inv + others;
    Ok(&part.a_rows * y * middle * x * part.a_rows.transpose())
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockResidual {
    /// 0-based subsystem index.
    pub i: usize,
    /// Subsystem `j != i` attaining the maximum (None when `N = 1`).
    pub worst_j: Option<usize>,
    /// `max_j ||A_i P C_bar^T (I + C_bar P C_bar^T)^{-1} J_yj||_F / (||A_i|| ||P||)`.
    pub residual: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepEquivalence {
    pub per_i: Vec<BlockResidual>,
    /// Frobenius norm of the off-block-diagonal part of the lumped gain.
    pub gain_offdiag_norm: f64,
}

impl StepEquivalence {
    pub fn all_hold(&self) -> bool {
        self.per_i.iter().all(|r| r.holds)
    }

    pub fn worst(&self) -> Option<&BlockResidual> {
        self.per_i
            .iter()
            .max_by(|a, b| a.residual.total_cmp(&b.residual))
    }
}

fn off_block_norm(setup: &EstimationSetup, k: &DMatrix<f64>) -> f64 {
    let off = setup.offsets();
    let mut acc = 0.0;
    for i in 0..setup.len() {
        for j in 0..setup.len() {
            if i != j {
                let (ri, rj) = (off.t_range(i), off.y_range(j));
                acc += k.view((ri.start, rj.start), (ri.len(), rj.len())).norm_squared();
            }
        }
    }
    acc.sqrt()
}

/// Whether the distributed predictor reproduces the Kalman update at `P`,
/// block row by block row.
pub fn equivalence_check_step(setup: &EstimationSetup, p: &CovarianceState, tol: &Tolerances) -> Result<StepEquivalence> {
    let kw = whitened_kalman_gain(setup, p)?;
    let off = setup.offsets();
    let p_norm = linalg::norm2(&p.p);
    let per_i = (0..setup.len())
        .map(|i| {
            let ri = off.t_range(i);
            let scale = linalg::norm2(&setup.parts[i].a_rows) * p_norm;
            let mut best: (Option<usize>, f64) = (None, 0.0);
            for j in (0..setup.len()).filter(|&j| j != i) {
                let rj = off.y_range(j);
                let raw = kw.view((ri.start, rj.start), (ri.len(), rj.len())).norm();
                let r = if scale > 0.0 { raw / scale } else { raw };
                if best.0.is_none() || r > best.1 {
                    best = (Some(j), r);
                }
            }
            BlockResidual {
                i,
                worst_j: best.0,
                residual: best.1,
                holds: best.1 <= tol.equiv_tol,
            }
        })
        .collect();
    let k = kalman_step(setup, p)?.gain.to_dense();
    Ok(StepEquivalence {
        per_i,
        gain_offdiag_norm: off_block_norm(setup, &k),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyVerdict {
    Equivalent,
    NotEquivalent,
    HypothesisUnmet,
}

#[derive(Clone, Debug, Serialize)]
pub struct SteadyEquivalence {
    pub verdict: SteadyVerdict,
    pub kalman: SteadyState,
    /// Residuals at the Kalman steady state (empty when the hypothesis fails).
    pub residuals: Vec<BlockResidual>,
    /// Distributed iteration started from the Kalman steady state.
    pub cdossp: Option<SteadyState>,
    /// `max_t ||P_cdossp(t) - P*||_F / ||P*||_F` over the first steps from `P*`.
    pub drift_from_kalman: Option<f64>,
    /// Smallest eigenvalue over `i` of `P_ii^cdossp - P_ii^kal` at steady state.
    pub min_dominance_eig: Option<f64>,
    pub detail: String,
}

const DRIFT_STEPS: usize = 20;

/// Steady-state equivalence of the two estimators: solve the Kalman fixed
/// point from `p0`, test the per-block gain condition there, then run the
/// distributed recursion from that point.
pub fn equivalence_check_steady(setup: &EstimationSetup, p0: &CovarianceState, tol: &Tolerances) -> Result<SteadyEquivalence> {
    let kalman = steady_state(setup, Estimator::Kalman, p0, tol.steady_max_iters, tol.steady_tol)?;
    let pd = kalman.converged() && linalg::min_eigenvalue(&kalman.p.p) > 0.0;
    if !pd {
        let detail = if kalman.converged() {
            "Kalman steady-state covariance is not positive definite".to_string()
        } else {
            format!(
                "Kalman iteration {:?} after {} iterations (relative change {:.3e})",
                kalman.status, kalman.iters, kalman.change
            )
        };
        return Ok(SteadyEquivalence {
            verdict: SteadyVerdict::HypothesisUnmet,
            kalman,
            residuals: Vec::new(),
            cdossp: None,
            drift_from_kalman: None,
            min_dominance_eig: None,
            detail,
        });
    }
    let star = CovarianceState::new(kalman.p.p.clone());
    let check = equivalence_check_step(setup, &star, tol)?;
    let equivalent = check.all_hold();

    let star_norm = star.p.norm().max(f64::MIN_POSITIVE);
    let mut drift: f64 = 0.0;
    let mut p = star.clone();
    for _ in 0..DRIFT_STEPS {
        p = cdossp_step(setup, &p)?;
        drift = drift.max((&p.p - &star.p).norm() / star_norm);
    }
    let cdossp = steady_state(setup, Estimator::Cdossp, &star, tol.steady_max_iters, tol.steady_tol)?;
    let off = setup.offsets();
    let dominance = (0..setup.len())
        .map(|i| linalg::min_eigenvalue(&(cdossp.p.block(off, i, i) - star.block(off, i, i))))
        .fold(f64::INFINITY, f64::min);
    let detail = match (equivalent, check.worst()) {
        (true, _) => format!(
            "all {} block residuals <= {:.1e}; distributed recursion drifts {:.3e} from P*",
            check.per_i.len(),
            tol.equiv_tol,
            drift
        ),
        (false, Some(w)) => format!(
            "worst block (i = {}, j = {}) residual {:.3e} > {:.1e}",
            w.i + 1,
            w.worst_j.map_or(0, |j| j + 1),
            w.residual,
            tol.equiv_tol
        ),
        (false, None) => String::new(),
    };
    Ok(SteadyEquivalence {
        verdict: if equivalent {
            SteadyVerdict::Equivalent
        } else {
            SteadyVerdict::NotEquivalent
        },
        kalman,
        residuals: check.per_i,
        cdossp: Some(cdossp),
        drift_from_kalman: Some(drift),
        min_dominance_eig: Some(dominance),
        detail,
    })
}

/// CSV header for [`trace_csv_row`]: `t,trace,P11_fro,...,PNN_fro`.
pub fn trace_csv_header(prefix: &str, n: usize) -> String {
    let mut cols = vec![format!("{prefix}trace")];
    cols.extend((1..=n).map(|i| format!("{prefix}P{i}{i}_fro")));
    cols.join(",")
}

pub fn trace_csv_row(p: &CovarianceState, off: &Offsets, n: usize) -> String {
    let mut cols = vec![format!("{:.12e}", p.p.trace())];
    cols.extend((0..n).map(|i| format!("{:.12e}", p.block(off, i, i).norm())));
    cols.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConnectionMatrix, Subsystem, SubsystemDims};
    use approx::assert_relative_eq;

    fn m(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_plant(a: f64, c: f64, q: f64, r: f64) -> NetworkedSystem {
        let dims = SubsystemDims { m_t: 1, m_s: 1, m_z: 1, m_y: 1, m_d: 1, m_w: 1 };
        let mut s = Subsystem::zeros(dims);
        s.a_tt = m(a);
        s.c_t = m(c);
        s.b_t = m(q.sqrt());
        s.d_w = m(r.sqrt());
        NetworkedSystem::new(vec![s], ConnectionMatrix::selection(1, &[0]))
    }

    fn dare_root(a: f64, c: f64, q: f64, r: f64) -> f64 {
        // p = a^2 p r / (r + c^2 p) + q  <=>  c^2 p^2 + (r - a^2 r - q c^2) p - q r = 0
        let (qa, qb, qc) = (c * c, r - a * a * r - q * c * c, -q * r);
        (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
    }

    fn setup(sys: &NetworkedSystem) -> EstimationSetup {
        EstimationSetup::new(sys, &Tolerances::default()).unwrap()
    }

    #[test]
    fn zero_prior_gives_zero_gain() {
        let s = setup(&scalar_plant(0.9, 1.0, 1.0, 1.0));
        let k = cdossp_gain(&s, &CovarianceState::new(DMatrix::zeros(1, 1)), 0).unwrap();
        assert_eq!(k[(0, 0)], 0.0);
    }

    #[test]
    fn scalar_gain_matches_textbook() {
        let (a, c, r, p) = (0.8, 2.0, 0.5, 1.7);
        let s = setup(&scalar_plant(a, c, 1.0, r));
        let k = cdossp_gain(&s, &CovarianceState::new(m(p)), 0).unwrap();
        assert_relative_eq!(k[(0, 0)], a * p * c / (r + c * c * p), epsilon = 1e-14);
        let kk = kalman_step(&s, &CovarianceState::new(m(p))).unwrap();
        assert_relative_eq!(kk.gain.to_dense()[(0, 0)], k[(0, 0)], epsilon = 1e-14);
    }

    #[test]
    fn memoryless_plant() {
        let s = setup(&scalar_plant(0.0, 1.0, 1.0, 1.0));
        for p in [0.0, 0.3, 50.0] {
            let next = kalman_step(&s, &CovarianceState::new(m(p))).unwrap().next;
            assert_relative_eq!(next.p[(0, 0)], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn scalar_steady_state_is_dare_root() {
        let s = setup(&scalar_plant(0.9, 1.0, 1.0, 1.0));
        let root = dare_root(0.9, 1.0, 1.0, 1.0);
        for p0 in [0.0, 100.0] {
            for which in [Estimator::Kalman, Estimator::Cdossp] {
                let ss = steady_state(&s, which, &CovarianceState::new(m(p0)), 100_000, 1e-12).unwrap();
                assert!(ss.converged());
                assert_relative_eq!(ss.p.p[(0, 0)], root, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn open_loop_propagation_without_measurements() {
        let mut sys = scalar_plant(0.7, 0.0, 2.0, 1.0);
        let mut subs = sys.subsystems().to_vec();
        subs[0].c_t = m(0.0);
        sys = NetworkedSystem::new(subs, sys.phi().clone());
        let s = setup(&sys);
        let p = CovarianceState::new(m(3.0));
        let expect = 0.49 * 3.0 + 2.0;
        assert_relative_eq!(cdossp_step(&s, &p).unwrap().p[(0, 0)], expect, epsilon = 1e-12);
        assert_relative_eq!(cdossp_step_infoform(&s, &p).unwrap().p[(0, 0)], expect, epsilon = 1e-12);
    }

    #[test]
    fn infoform_requires_definite_covariance() {
        let s = setup(&scalar_plant(0.9, 1.0, 1.0, 1.0));
        let p = CovarianceState::new(m(0.0));
        assert!(matches!(cdossp_step_infoform(&s, &p), Err(Error::NotPositiveDefinite(_))));
        assert!(cdossp_step(&s, &p).is_ok());
    }

    #[test]
    fn estimation_form_is_required() {
        let mut subs = scalar_plant(0.9, 1.0, 1.0, 1.0).subsystems().to_vec();
        subs[0].d_d = m(0.1);
        let sys = NetworkedSystem::new(subs, ConnectionMatrix::selection(1, &[0]));
        assert!(matches!(
            EstimationSetup::new(&sys, &Tolerances::default()),
            Err(Error::Precondition(_))
        ));
    }
}
