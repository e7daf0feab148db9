//! Structured controllability/observability tests built from subsystem zero
//! certificates, the restricted Kalman-convergence test, and brute-force PBH
//! oracles on the assembled model.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::Result;
use crate::exec::{self, Execution};
use crate::linalg::{self, to_complex, CMatrix};
use crate::model::{assemble_lumped, check_well_posedness, dual_system, LumpedModel, NetworkedSystem};
use crate::tol::Tolerances;
use crate::zeros::{self, cluster_distinct_zeros, Family, ZeroCertificate};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Observable,
    Controllable,
    KalmanConvergent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Holds,
    Fails,
    Indeterminate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Structured,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub lambda0: Complex64,
    /// 1-based subsystem indices involved in the deficient direction.
    pub subsystems: Vec<usize>,
    pub deficiency: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub property: Property,
    pub result: Outcome,
    pub witnesses: Vec<Witness>,
    pub method: Method,
    /// Distinct zeros (structured) or distinct eigenvalues (oracle) examined.
    pub checked: usize,
    pub diagnostics: String,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Holds => "holds",
            Outcome::Fails => "fails",
            Outcome::Indeterminate => "indeterminate",
        })
    }
}

/// Rank of `Phi Z - Y` for one certificate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankTest {
    pub rank: usize,
    pub columns: usize,
    pub sigma_min: f64,
    /// Unit-norm `alpha` minimizing `||(Phi Z - Y) alpha||`.
    #[serde(skip)]
    pub alpha: Vec<Complex64>,
}

impl RankTest {
    pub fn deficiency(&self) -> usize {
        self.columns - self.rank
    }
}

/// `Phi Z - Y` with `Phi` oriented for the family (`Phi^T` for the dual).
pub fn loop_residual_matrix(cert: &ZeroCertificate, sys: &NetworkedSystem, family: Family) -> CMatrix {
    let phi = match family {
        Family::Primal => sys.phi().clone(),
        Family::Dual => sys.phi().transpose(),
    };
    phi.apply(&cert.z_agg) - &cert.y_agg
}

pub fn certificate_rank(cert: &ZeroCertificate, sys: &NetworkedSystem, family: Family, tol: &Tolerances) -> RankTest {
    let m = loop_residual_matrix(cert, sys, family);
    let columns = m.ncols();
    if columns == 0 {
        return RankTest {
            rank: 0,
            columns,
            sigma_min: 0.0,
            alpha: Vec::new(),
        };
    }
    let (null, sv) = linalg::null_space(&m, tol.rank_rel_tol, 1.0);
    let rank = columns - null.ncols();
    let sigma_min = sv.last().copied().unwrap_or(0.0);
    // smallest right singular direction
    let (all, _) = linalg::null_space(&m, f64::INFINITY, 1.0);
    let alpha = all.column(all.ncols() - 1).iter().copied().collect();
    RankTest {
        rank,
        columns,
        sigma_min,
        alpha,
    }
}

fn structured(
    sys: &NetworkedSystem,
    family: Family,
    property: Property,
    include: impl Fn(Complex64) -> bool,
    tol: &Tolerances,
    exec: Execution,
) -> Result<Verdict> {
    let wp = check_well_posedness(sys, tol)?;
    if !wp.well_posed {
        return Err(Error::NotWellPosed {
            ratio: 1.0 / wp.condition_estimate,
        });
    }
    let set = zeros::certificates(sys, family, tol, exec)?;
    let deficient = set.rank_deficient();
    if !deficient.is_empty() {
        let tfm = match family {
            Family::Primal => "G1",
            Family::Dual => "dual G1",
        };
        return Ok(Verdict {
            property,
            result: Outcome::Indeterminate,
            witnesses: Vec::new(),
            method: Method::Structured,
            checked: 0,
            diagnostics: format!(
                "{tfm} lacks full column normal rank for subsystem(s) {deficient:?}; zero-based test does not apply, use the PBH oracle"
            ),
        });
    }
    let mut checked = 0;
    for cert in set.certificates.iter().filter(|c| include(c.lambda0)) {
        checked += 1;
        let test = certificate_rank(cert, sys, family, tol);
        if test.deficiency() > 0 {
            return Ok(Verdict {
                property,
                result: Outcome::Fails,
                witnesses: vec![Witness {
                    lambda0: cert.lambda0,
                    subsystems: cert.participant_indices(),
                    deficiency: test.deficiency(),
                }],
                method: Method::Structured,
                checked,
                diagnostics: format!(
                    "Phi Z - Y loses rank at lambda0 = {:.6} (sigma_min = {:.3e})",
                    cert.lambda0, test.sigma_min
                ),
            });
        }
    }
    Ok(Verdict {
        property,
        result: Outcome::Holds,
        witnesses: Vec::new(),
        method: Method::Structured,
        checked,
        diagnostics: format!("m = {checked} zero certificates checked"),
    })
}

/// Zero-certificate observability test on the primal family.
pub fn verify_observability(sys: &NetworkedSystem, tol: &Tolerances) -> Result<Verdict> {
    verify_observability_with(sys, tol, Execution::Serial)
}

pub fn verify_observability_with(sys: &NetworkedSystem, tol: &Tolerances, exec: Execution) -> Result<Verdict> {
    structured(sys, Family::Primal, Property::Observable, |_| true, tol, exec)
}

/// Zero-certificate controllability test on the dual family with `Phi^T`.
pub fn verify_controllability(sys: &NetworkedSystem, tol: &Tolerances) -> Result<Verdict> {
    verify_controllability_with(sys, tol, Execution::Serial)
}

pub fn verify_controllability_with(sys: &NetworkedSystem, tol: &Tolerances, exec: Execution) -> Result<Verdict> {
    structured(sys, Family::Dual, Property::Controllable, |_| true, tol, exec)
}

/// The same question answered as observability of the dual system.
pub fn verify_controllability_via_dual(sys: &NetworkedSystem, tol: &Tolerances) -> Result<Verdict> {
    let mut v = verify_observability(&dual_system(sys), tol)?;
    v.property = Property::Controllable;
    Ok(v)
}

pub(crate) fn require_estimation_form(sys: &NetworkedSystem) -> Result<()> {
    for (i, s) in sys.subsystems().iter().enumerate() {
        if s.b_s.iter().any(|&v| v != 0.0) || s.d_d.iter().any(|&v| v != 0.0) {
            return Err(Error::Precondition(format!(
                "subsystem {}: B_S and D_d must be zero",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Sufficient condition for convergence of the lumped Kalman filter: the
/// observability test restricted to zeros with `|lambda| >= 1` and the dual
/// test restricted to zeros on the unit circle.
pub fn check_kalman_convergence(sys: &NetworkedSystem, tol: &Tolerances) -> Result<Verdict> {
    require_estimation_form(sys)?;
    let band = tol.unit_circle_band;
    let obs = structured(
        sys,
        Family::Primal,
        Property::KalmanConvergent,
        |l| l.norm() >= 1.0 - band,
        tol,
        Execution::Serial,
    )?;
    let ctrb = structured(
        sys,
        Family::Dual,
        Property::KalmanConvergent,
        |l| (l.norm() - 1.0).abs() <= band,
        tol,
        Execution::Serial,
    )?;
    let checked = obs.checked + ctrb.checked;
    let mut witnesses = obs.witnesses.clone();
    witnesses.extend(ctrb.witnesses.iter().cloned());
    let (result, diagnostics) = match (obs.result, ctrb.result) {
        (Outcome::Fails, _) | (_, Outcome::Fails) => (
            Outcome::Fails,
            format!(
                "convergence not guaranteed: detectability part {}, unit-circle part {}",
                obs.result, ctrb.result
            ),
        ),
        (Outcome::Indeterminate, _) | (_, Outcome::Indeterminate) => (
            Outcome::Indeterminate,
            format!("{}; {}", obs.diagnostics, ctrb.diagnostics),
        ),
        _ => (
            Outcome::Holds,
            format!(
                "restricted sets: {} zero(s) with |lambda| >= 1, {} dual zero(s) on the unit circle",
                obs.checked, ctrb.checked
            ),
        ),
    };
    Ok(Verdict {
        property: Property::KalmanConvergent,
        result,
        witnesses,
        method: Method::Structured,
        checked,
        diagnostics,
    })
}

/// Subsystems whose state block carries a non-negligible part of `v`.
fn support(v: &[Complex64], partition: Option<&[usize]>) -> Vec<usize> {
    let Some(off) = partition else {
        return Vec::new();
    };
    let total: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    (0..off.len().saturating_sub(1))
        .filter(|&i| {
            let part: f64 = v[off[i]..off[i + 1]].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            part > 1e-6 * total
        })
        .map(|i| i + 1)
        .collect()
}

fn pbh(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    property: Property,
    partition: Option<&[usize]>,
    include: impl Fn(Complex64) -> bool,
    tol: &Tolerances,
) -> Verdict {
    let n = a.nrows();
    let eigs: Vec<Complex64> = if n == 0 {
        Vec::new()
    } else {
        a.complex_eigenvalues().iter().copied().collect()
    };
    let distinct = cluster_distinct_zeros(&[eigs], tol);
    let mut witnesses = Vec::new();
    let mut checked = 0;
    for cl in distinct.iter().filter(|cl| include(cl.lambda0)) {
        checked += 1;
        let lambda = cl.lambda0;
        let mut m = CMatrix::zeros(n + c.nrows(), n);
        m.view_mut((0, 0), (n, n)).copy_from(&(-to_complex(a)));
        for k in 0..n {
            m[(k, k)] += lambda;
        }
        m.view_mut((n, 0), (c.nrows(), n)).copy_from(&to_complex(c));
        let (null, _) = linalg::null_space(&m, tol.rank_rel_tol, 0.0);
        if null.ncols() > 0 {
            let v: Vec<Complex64> = null.column(0).iter().copied().collect();
            witnesses.push(Witness {
                lambda0: lambda,
                subsystems: support(&v, partition),
                deficiency: null.ncols(),
            });
        }
    }
    let result = if witnesses.is_empty() { Outcome::Holds } else { Outcome::Fails };
    Verdict {
        property,
        result,
        method: Method::Oracle,
        checked,
        diagnostics: format!("PBH rank test at {checked} distinct eigenvalue(s)"),
        witnesses,
    }
}

/// PBH: `rank [lambda I - A; C] = n` at every eigenvalue of `A`.
pub fn pbh_observability_oracle(lumped: &LumpedModel, tol: &Tolerances) -> Verdict {
    pbh(&lumped.a, &lumped.c, Property::Observable, None, |_| true, tol)
}

/// PBH on `(A^T, B^T)`.
pub fn pbh_controllability_oracle(lumped: &LumpedModel, tol: &Tolerances) -> Verdict {
    pbh(&lumped.a.transpose(), &lumped.b.transpose(), Property::Controllable, None, |_| true, tol)
}

/// Oracle on the assembled model with witnesses mapped back to subsystems.
pub fn oracle_for(sys: &NetworkedSystem, property: Property, tol: &Tolerances) -> Result<Verdict> {
    let lumped = assemble_lumped(sys, tol)?;
    let part = Some(sys.offsets().t.as_slice());
    Ok(match property {
        Property::Observable => pbh(&lumped.a, &lumped.c, property, part, |_| true, tol),
        Property::Controllable => pbh(&lumped.a.transpose(), &lumped.b.transpose(), property, part, |_| true, tol),
        Property::KalmanConvergent => {
            // detectability plus no uncontrollable mode on the unit circle
            let band = tol.unit_circle_band;
            let det = pbh(&lumped.a, &lumped.c, property, part, |l| l.norm() >= 1.0 - band, tol);
            let stab = pbh(
                &lumped.a.transpose(),
                &lumped.b.transpose(),
                property,
                part,
                |l| (l.norm() - 1.0).abs() <= band,
                tol,
            );
            let mut witnesses = det.witnesses;
            witnesses.extend(stab.witnesses);
            Verdict {
                property,
                result: if witnesses.is_empty() { Outcome::Holds } else { Outcome::Fails },
                method: Method::Oracle,
                checked: det.checked + stab.checked,
                diagnostics: format!(
                    "PBH at {} eigenvalue(s) with |lambda| >= 1 and {} on the unit circle",
                    det.checked, stab.checked
                ),
                witnesses,
            }
        }
    })
}

/// The stacked pencil
/// `M(lambda) = [lambda I - A_TT, -A_TS; -C_T, -C_S; -Phi A_ST, I - Phi A_SS]`.
#[derive(Clone, Debug)]
pub struct Mvp {
    a_tt: DMatrix<f64>,
    a_ts: DMatrix<f64>,
    c_t: DMatrix<f64>,
    c_s: DMatrix<f64>,
    phi_a_st: DMatrix<f64>,
    phi_a_ss: DMatrix<f64>,
}

impl Mvp {
    pub fn new(sys: &NetworkedSystem) -> Self {
        let phi = sys.phi();
        Self {
            a_tt: sys.stacked(|s| &s.a_tt),
            a_ts: sys.stacked(|s| &s.a_ts),
            c_t: sys.stacked(|s| &s.c_t),
            c_s: sys.stacked(|s| &s.c_s),
            phi_a_st: phi.apply(&sys.stacked(|s| &s.a_st)),
            phi_a_ss: phi.apply(&sys.stacked(|s| &s.a_ss)),
        }
    }

    pub fn rows(&self) -> usize {
        self.a_tt.nrows() + self.c_t.nrows() + self.phi_a_st.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a_tt.ncols() + self.a_ts.ncols()
    }

    pub fn at(&self, lambda: Complex64) -> CMatrix {
        let (mt, ms, my) = (self.a_tt.nrows(), self.a_ts.ncols(), self.c_t.nrows());
        let mut m = CMatrix::zeros(self.rows(), self.cols());
        m.view_mut((0, 0), (mt, mt)).copy_from(&(-to_complex(&self.a_tt)));
        for k in 0..mt {
            m[(k, k)] += lambda;
        }
        m.view_mut((0, mt), (mt, ms)).copy_from(&(-to_complex(&self.a_ts)));
        m.view_mut((mt, 0), (my, mt)).copy_from(&(-to_complex(&self.c_t)));
        m.view_mut((mt, mt), (my, ms)).copy_from(&(-to_complex(&self.c_s)));
        let r = mt + my;
        m.view_mut((r, 0), (ms, mt)).copy_from(&(-to_complex(&self.phi_a_st)));
        let loop_block = DMatrix::identity(ms, ms) - &self.phi_a_ss;
        m.view_mut((r, mt), (ms, ms)).copy_from(&to_complex(&loop_block));
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MvpRank {
    pub rank: usize,
    pub columns: usize,
    pub full_column: bool,
}

pub fn mvp_rank_probe(sys: &NetworkedSystem, lambda: Complex64, tol: &Tolerances) -> MvpRank {
    let mvp = Mvp::new(sys);
    let rank = linalg::numerical_rank(&mvp.at(lambda), tol.rank_rel_tol);
    MvpRank {
        rank,
        columns: mvp.cols(),
        full_column: rank == mvp.cols(),
    }
}

/// Runs one property over many systems.
pub fn verify_many(
    systems: &[NetworkedSystem],
    property: Property,
    tol: &Tolerances,
    exec: Execution,
) -> Vec<Result<Verdict>> {
    exec::map_slice(systems, exec, |sys| match property {
        Property::Observable => verify_observability(sys, tol),
        Property::Controllable => verify_controllability(sys, tol),
        Property::KalmanConvergent => check_kalman_convergence(sys, tol),
    })
}
