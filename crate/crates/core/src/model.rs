//! Networked system representation: subsystems, interconnection, lumped assembly.

use std::fmt;
use std::ops::Range;

use nalgebra::{ComplexField, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, block_diag};
use crate::tol::Tolerances;

/// Interconnections with `rows + cols` at or below this keep a dense copy.
pub const DENSE_PHI_THRESHOLD: usize = 64;

/// One LTI subsystem.
///
/// ```text
/// x(t+1) = A_TT x + A_TS v + B_T d
/// z(t)   = A_ST x + A_SS v + B_S d
/// y(t)   = C_T  x + C_S  v + D_d d + D_w w
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Subsystem {
    pub a_tt: DMatrix<f64>,
    pub a_ts: DMatrix<f64>,
    pub a_st: DMatrix<f64>,
    pub a_ss: DMatrix<f64>,
    pub b_t: DMatrix<f64>,
    pub b_s: DMatrix<f64>,
    pub c_t: DMatrix<f64>,
    pub c_s: DMatrix<f64>,
    pub d_d: DMatrix<f64>,
    pub d_w: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemDims {
    pub m_t: usize,
    pub m_s: usize,
    pub m_z: usize,
    pub m_y: usize,
    pub m_d: usize,
    pub m_w: usize,
}

impl Subsystem {
    /// All-zero subsystem of the given dimensions.
    pub fn zeros(d: SubsystemDims) -> Self {
        Self {
            a_tt: DMatrix::zeros(d.m_t, d.m_t),
            a_ts: DMatrix::zeros(d.m_t, d.m_s),
            a_st: DMatrix::zeros(d.m_z, d.m_t),
            a_ss: DMatrix::zeros(d.m_z, d.m_s),
            b_t: DMatrix::zeros(d.m_t, d.m_d),
            b_s: DMatrix::zeros(d.m_z, d.m_d),
            c_t: DMatrix::zeros(d.m_y, d.m_t),
            c_s: DMatrix::zeros(d.m_y, d.m_s),
            d_d: DMatrix::zeros(d.m_y, d.m_d),
            d_w: DMatrix::zeros(d.m_y, d.m_w),
        }
    }

    /// Dimensions read from the anchor matrices (`A_TT`, `A_TS`, `A_ST`,
    /// `C_T`, `B_T`, `D_w`). The remaining shapes are checked by
    /// [`Subsystem::shape_violations`].
    pub fn dims(&self) -> SubsystemDims {
        SubsystemDims {
            m_t: self.a_tt.nrows(),
            m_s: self.a_ts.ncols(),
            m_z: self.a_st.nrows(),
            m_y: self.c_t.nrows(),
            m_d: self.b_t.ncols(),
            m_w: self.d_w.ncols(),
        }
    }

    fn named(&self) -> [(&'static str, &DMatrix<f64>); 10] {
        [
            ("A_TT", &self.a_tt),
            ("A_TS", &self.a_ts),
            ("A_ST", &self.a_st),
            ("A_SS", &self.a_ss),
            ("B_T", &self.b_t),
            ("B_S", &self.b_s),
            ("C_T", &self.c_t),
            ("C_S", &self.c_s),
            ("D_d", &self.d_d),
            ("D_w", &self.d_w),
        ]
    }

    pub fn shape_violations(&self) -> Vec<String> {
        let d = self.dims();
        let expected = [
            (d.m_t, d.m_t),
            (d.m_t, d.m_s),
            (d.m_z, d.m_t),
            (d.m_z, d.m_s),
            (d.m_t, d.m_d),
            (d.m_z, d.m_d),
            (d.m_y, d.m_t),
            (d.m_y, d.m_s),
            (d.m_y, d.m_d),
            (d.m_y, d.m_w),
        ];
        let mut out = Vec::new();
        if d.m_t == 0 {
            out.push("A_TT must have at least one state".to_string());
        }
        for ((name, m), (r, c)) in self.named().into_iter().zip(expected) {
            if m.shape() != (r, c) {
                out.push(format!("{name} is {}x{}, expected {r}x{c}", m.nrows(), m.ncols()));
            }
            if m.iter().any(|v| !v.is_finite()) {
                out.push(format!("{name} has non-finite entries"));
            }
        }
        out
    }

    /// Transposed subsystem used by the controllability dual.
    ///
    /// The noise channel does not take part in the duality; the dual carries an
    /// empty `D_w` with as many rows as the dual has outputs.
    pub fn dual(&self) -> Self {
        Self {
            a_tt: self.a_tt.transpose(),
            a_ts: self.a_st.transpose(),
            a_st: self.a_ts.transpose(),
            a_ss: self.a_ss.transpose(),
            b_t: self.c_t.transpose(),
            b_s: self.c_s.transpose(),
            c_t: self.b_t.transpose(),
            c_s: self.b_s.transpose(),
            d_d: self.d_d.transpose(),
            d_w: DMatrix::zeros(self.b_t.ncols(), 0),
        }
    }
}

/// The interconnection `v = Phi z`, stored as a coordinate list.
#[derive(Clone, Debug)]
pub struct ConnectionMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
    dense: Option<DMatrix<f64>>,
}

impl PartialEq for ConnectionMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.entries == other.entries
    }
}

impl ConnectionMatrix {
    /// Entries are kept in (row, col) order; duplicates are kept and summed on
    /// application, and reported by validation.
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let dense = (rows + cols <= DENSE_PHI_THRESHOLD).then(|| densify(rows, cols, &entries));
        Self {
            rows,
            cols,
            entries,
            dense,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    entries.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::new(m.nrows(), m.ncols(), entries)
    }

    /// 0/1 selection matrix where row `r` picks column `sources[r]`.
    pub fn selection(cols: usize, sources: &[usize]) -> Self {
        let entries = sources.iter().enumerate().map(|(r, &c)| (r, c, 1.0)).collect();
        Self::new(sources.len(), cols, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.dense {
            Some(d) => d.clone(),
            None => densify(self.rows, self.cols, &self.entries),
        }
    }

    pub fn transpose(&self) -> Self {
        let entries = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        Self::new(self.cols, self.rows, entries)
    }

    /// `Phi * x` for real or complex `x`.
    pub fn apply<T>(&self, x: &DMatrix<T>) -> DMatrix<T>
    where
        T: ComplexField<RealField = f64>,
    {
        assert_eq!(x.nrows(), self.cols, "Phi applied to a matrix with wrong row count");
        if let Some(d) = &self.dense {
            return d.map(|v| T::from_real(v)) * x;
        }
        let mut out = DMatrix::zeros(self.rows, x.ncols());
        for &(r, c, v) in &self.entries {
            if r < self.rows && c < self.cols {
                for k in 0..x.ncols() {
                    out[(r, k)] += x[(c, k)].clone().scale(v);
                }
            }
        }
        out
    }

    fn violations(&self, strict: bool) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.rows];
        for (k, &(r, c, v)) in self.entries.iter().enumerate() {
            if r >= self.rows || c >= self.cols {
                out.push(Violation::phi(r, format!("entry ({r}, {c}) outside {}x{}", self.rows, self.cols)));
                continue;
            }
            if !v.is_finite() {
                out.push(Violation::phi(r, format!("entry ({r}, {c}) is not finite")));
            }
            if k > 0 && self.entries[k - 1].0 == r && self.entries[k - 1].1 == c {
                out.push(Violation::phi(r, format!("duplicate entry ({r}, {c})")));
            }
            if v != 0.0 {
                per_row[r].push((c, v));
            }
        }
        if strict {
            for (r, nz) in per_row.iter().enumerate() {
                match nz.as_slice() {
                    [(_, v)] if *v == 1.0 => {}
                    [(c, v)] => out.push(Violation::phi(r, format!("strict mode: entry ({r}, {c}) = {v}, expected 1"))),
                    [] => out.push(Violation::phi(r, "strict mode: row has no nonzero entry".into())),
                    many => out.push(Violation::phi(r, format!("strict mode: row has {} nonzero entries", many.len()))),
                }
            }
        }
        out
    }
}

fn densify(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(rows, cols);
    for &(r, c, v) in entries {
        if r < rows && c < cols {
            d[(r, c)] += v;
        }
    }
    d
}

/// Prefix sums of subsystem dimensions (`M_Ti`, `M_Si`, ...). Each vector has
/// `N + 1` entries; the last one is the total.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Offsets {
    pub t: Vec<usize>,
    pub s: Vec<usize>,
    pub z: Vec<usize>,
    pub y: Vec<usize>,
    pub d: Vec<usize>,
    pub w: Vec<usize>,
}

fn prefix(dims: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut acc = vec![0];
    for d in dims {
        acc.push(acc.last().unwrap() + d);
    }
    acc
}

impl Offsets {
    pub fn of(subsystems: &[Subsystem]) -> Self {
        let dims: Vec<_> = subsystems.iter().map(Subsystem::dims).collect();
        Self {
            t: prefix(dims.iter().map(|d| d.m_t)),
            s: prefix(dims.iter().map(|d| d.m_s)),
            z: prefix(dims.iter().map(|d| d.m_z)),
            y: prefix(dims.iter().map(|d| d.m_y)),
            d: prefix(dims.iter().map(|d| d.m_d)),
            w: prefix(dims.iter().map(|d| d.m_w)),
        }
    }

    pub fn total_t(&self) -> usize {
        *self.t.last().unwrap()
    }
    pub fn total_s(&self) -> usize {
        *self.s.last().unwrap()
    }
    pub fn total_z(&self) -> usize {
        *self.z.last().unwrap()
    }
    pub fn total_y(&self) -> usize {
        *self.y.last().unwrap()
    }
    pub fn total_d(&self) -> usize {
        *self.d.last().unwrap()
    }
    pub fn total_w(&self) -> usize {
        *self.w.last().unwrap()
    }

    // 0-based subsystem position.
    pub fn t_range(&self, i: usize) -> Range<usize> {
        self.t[i]..self.t[i + 1]
    }
    pub fn s_range(&self, i: usize) -> Range<usize> {
        self.s[i]..self.s[i + 1]
    }
    pub fn z_range(&self, i: usize) -> Range<usize> {
        self.z[i]..self.z[i + 1]
    }
    pub fn y_range(&self, i: usize) -> Range<usize> {
        self.y[i]..self.y[i + 1]
    }
}

/// Ordered subsystems plus their interconnection.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkedSystem {
    subsystems: Vec<Subsystem>,
    phi: ConnectionMatrix,
    offsets: Offsets,
}

impl NetworkedSystem {
    pub fn new(subsystems: Vec<Subsystem>, phi: ConnectionMatrix) -> Self {
        let offsets = Offsets::of(&subsystems);
        Self {
            subsystems,
            phi,
            offsets,
        }
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn subsystem(&self, i: usize) -> &Subsystem {
        &self.subsystems[i]
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn phi(&self) -> &ConnectionMatrix {
        &self.phi
    }

    pub fn offsets(&self) -> &Offsets {
        &self.offsets
    }

    /// Block-diagonal stacking of one subsystem matrix over all subsystems.
    pub fn stacked(&self, pick: impl Fn(&Subsystem) -> &DMatrix<f64>) -> DMatrix<f64> {
        let blocks: Vec<&DMatrix<f64>> = self.subsystems.iter().map(pick).collect();
        block_diag(&blocks)
    }

    /// Structural errors (shapes, Phi size) as a hard error; the strict
    /// Phi rule is not applied.
    pub fn ensure_consistent(&self) -> Result<()> {
        let report = validate_system(self, false);
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::Invalid(report.to_string()))
        }
    }
}

/// One failed structural rule. Subsystem indices are 1-based, Phi rows 0-based
/// (as in the model file).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub subsystem: Option<usize>,
    pub phi_row: Option<usize>,
    pub message: String,
}

impl Violation {
    fn subsystem(index: usize, message: String) -> Self {
        Self {
            subsystem: Some(index),
            phi_row: None,
            message,
        }
    }

    fn phi(row: usize, message: String) -> Self {
        Self {
            subsystem: None,
            phi_row: Some(row),
            message,
        }
    }

    fn global(message: String) -> Self {
        Self {
            subsystem: None,
            phi_row: None,
            message,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.subsystem, self.phi_row) {
            (Some(i), _) => write!(f, "subsystem {i}: {}", self.message),
            (None, Some(r)) => write!(f, "phi row {r}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

pub fn validate_system(sys: &NetworkedSystem, strict_phi: bool) -> ValidationReport {
    let mut violations = Vec::new();
    if sys.is_empty() {
        violations.push(Violation::global("system has no subsystems".into()));
    }
    for (i, s) in sys.subsystems.iter().enumerate() {
        violations.extend(s.shape_violations().into_iter().map(|m| Violation::subsystem(i + 1, m)));
    }
    let off = &sys.offsets;
    if sys.phi.rows() != off.total_s() || sys.phi.cols() != off.total_z() {
        violations.push(Violation::global(format!(
            "phi is {}x{}, expected M_S x M_z = {}x{}",
            sys.phi.rows(),
            sys.phi.cols(),
            off.total_s(),
            off.total_z()
        )));
    }
    violations.extend(sys.phi.violations(strict_phi));
    ValidationReport { violations }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WellPosedness {
    pub well_posed: bool,
    pub condition_estimate: f64,
}

/// `I - A_SS Phi`, an `M_z x M_z` matrix.
pub fn loop_matrix(sys: &NetworkedSystem) -> DMatrix<f64> {
    let a_ss = sys.stacked(|s| &s.a_ss);
    let n = sys.offsets.total_z();
    DMatrix::identity(n, n) - a_ss * sys.phi.to_dense()
}

pub fn check_well_posedness(sys: &NetworkedSystem, tol: &Tolerances) -> Result<WellPosedness> {
    if let Err(Error::Invalid(msg)) = sys.ensure_consistent() {
        return Err(Error::Dimension(msg));
    }
    let sv = linalg::singular_values(&loop_matrix(sys));
    let (hi, lo) = match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) => (hi, lo),
        _ => (1.0, 1.0),
    };
    Ok(WellPosedness {
        well_posed: lo > tol.rank_rel_tol * hi,
        condition_estimate: if lo > 0.0 { hi / lo } else { f64::INFINITY },
    })
}

/// Assembled `(A, B, C, D)`; `D = [D_d-part, D_w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LumpedModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

pub fn assemble_lumped(sys: &NetworkedSystem, tol: &Tolerances) -> Result<LumpedModel> {
    let wp = check_well_posedness(sys, tol)?;
    if !wp.well_posed {
        return Err(Error::NotWellPosed {
            ratio: 1.0 / wp.condition_estimate,
        });
    }
    let off = &sys.offsets;
    let (mt, md) = (off.total_t(), off.total_d());
    let a_st = sys.stacked(|s| &s.a_st);
    let b_s = sys.stacked(|s| &s.b_s);
    let mut rhs = DMatrix::zeros(off.total_z(), mt + md);
    rhs.view_mut((0, 0), (off.total_z(), mt)).copy_from(&a_st);
    rhs.view_mut((0, mt), (off.total_z(), md)).copy_from(&b_s);

    // v = Phi (I - A_SS Phi)^{-1} (A_ST x + B_S d)
    let resolved = linalg::solve(&loop_matrix(sys), &rhs, "I - A_SS Phi")?;
    let v_map = sys.phi.apply(&resolved);
    let v_x = v_map.columns(0, mt);
    let v_d = v_map.columns(mt, md);

    let a_ts = sys.stacked(|s| &s.a_ts);
    let c_s = sys.stacked(|s| &s.c_s);
    let a = sys.stacked(|s| &s.a_tt) + &a_ts * v_x;
    let b = sys.stacked(|s| &s.b_t) + &a_ts * v_d;
    let c = sys.stacked(|s| &s.c_t) + &c_s * v_x;
    let d_d = sys.stacked(|s| &s.d_d) + &c_s * v_d;
    let d_w = sys.stacked(|s| &s.d_w);
    let my = off.total_y();
    let mut d = DMatrix::zeros(my, md + off.total_w());
    d.view_mut((0, 0), (my, md)).copy_from(&d_d);
    d.view_mut((0, md), (my, off.total_w())).copy_from(&d_w);
    Ok(LumpedModel { a, b, c, d })
}

pub fn dual_system(sys: &NetworkedSystem) -> NetworkedSystem {
    NetworkedSystem::new(
        sys.subsystems.iter().map(Subsystem::dual).collect(),
        sys.phi.transpose(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a_tt: f64, a_ts: f64, a_st: f64, a_ss: f64, c_t: f64, c_s: f64) -> Subsystem {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Subsystem {
            a_tt: m(a_tt),
            a_ts: m(a_ts),
            a_st: m(a_st),
            a_ss: m(a_ss),
            b_t: m(1.0),
            b_s: m(0.0),
            c_t: m(c_t),
            c_s: m(c_s),
            d_d: m(0.0),
            d_w: m(1.0),
        }
    }

    fn ring(a_ss: f64) -> NetworkedSystem {
        NetworkedSystem::new(
            vec![scalar(0.5, 1.0, 1.0, a_ss, 1.0, 0.0), scalar(0.3, 1.0, 1.0, a_ss, 1.0, 0.0)],
            ConnectionMatrix::selection(2, &[1, 0]),
        )
    }

    #[test]
    fn ring_coupling_validates() {
        assert!(validate_system(&ring(0.0), true).is_valid());
    }

    #[test]
    fn strict_mode_flags_two_ones_in_a_row() {
        let phi = ConnectionMatrix::new(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0)]);
        let sys = NetworkedSystem::new(ring(0.0).subsystems.clone(), phi);
        let report = validate_system(&sys, true);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].phi_row, Some(0));
        assert!(validate_system(&sys, false).is_valid());
    }

    #[test]
    fn strict_mode_boundary_on_fractional_entry() {
        let phi = ConnectionMatrix::new(2, 2, vec![(0, 1, 0.5), (1, 0, 1.0)]);
        let sys = NetworkedSystem::new(ring(0.0).subsystems.clone(), phi);
        assert!(validate_system(&sys, false).is_valid());
        let strict = validate_system(&sys, true);
        assert_eq!(strict.violations.len(), 1);
        assert_eq!(strict.violations[0].phi_row, Some(0));
    }

    #[test]
    fn duplicates_and_shape_errors_are_reported() {
        let phi = ConnectionMatrix::new(2, 2, vec![(0, 1, 1.0), (0, 1, 1.0), (1, 0, 1.0)]);
        let mut subs = ring(0.0).subsystems.clone();
        subs[1].c_s = DMatrix::zeros(2, 1);
        let report = validate_system(&NetworkedSystem::new(subs, phi), false);
        assert!(report.violations.iter().any(|v| v.message.contains("duplicate")));
        assert!(report.violations.iter().any(|v| v.subsystem == Some(2) && v.message.contains("C_S")));
    }

    #[test]
    fn well_posedness_boundaries() {
        let tol = Tolerances::default();
        let wp = check_well_posedness(&ring(0.0), &tol).unwrap();
        assert!(wp.well_posed);
        assert_relative_eq!(wp.condition_estimate, 1.0, epsilon = 1e-12);

        let singular = NetworkedSystem::new(ring(1.0).subsystems.clone(), ConnectionMatrix::selection(2, &[0, 1]));
        assert!(!check_well_posedness(&singular, &tol).unwrap().well_posed);
        assert!(matches!(assemble_lumped(&singular, &tol), Err(Error::NotWellPosed { .. })));
    }

    #[test]
    fn single_subsystem_without_feedthrough() {
        let s = scalar(0.2, 0.7, -0.4, 0.0, 1.0, 0.5);
        let sys = NetworkedSystem::new(vec![s], ConnectionMatrix::selection(1, &[0]));
        let l = assemble_lumped(&sys, &Tolerances::default()).unwrap();
        assert_relative_eq!(l.a[(0, 0)], 0.2 + 0.7 * -0.4, epsilon = 1e-15);
        assert_relative_eq!(l.c[(0, 0)], 1.0 + 0.5 * -0.4, epsilon = 1e-15);
    }

    #[test]
    fn two_scalar_loop_matches_closed_form_inverse() {
        // Phi swaps the two channels; (I - A_SS Phi)^{-1} = [[1, a1], [a2, 1]] / (1 - a1 a2).
        let (a1, a2) = (0.4, -0.7);
        let sys = NetworkedSystem::new(
            vec![scalar(0.1, 0.5, 0.8, a1, 1.0, 0.3), scalar(-0.2, 0.9, 0.6, a2, 1.0, -0.4)],
            ConnectionMatrix::selection(2, &[1, 0]),
        );
        let l = assemble_lumped(&sys, &Tolerances::default()).unwrap();
        let det = 1.0 - a1 * a2;
        // Phi (I - A_SS Phi)^{-1} = [[a2, 1], [1, a1]] / det
        let pk = [[a2 / det, 1.0 / det], [1.0 / det, a1 / det]];
        let a_ts = [0.5, 0.9];
        let a_st = [0.8, 0.6];
        let c_s = [0.3, -0.4];
        let a_tt = [0.1, -0.2];
        for i in 0..2 {
            for j in 0..2 {
                let diag = if i == j { a_tt[i] } else { 0.0 };
                assert_relative_eq!(l.a[(i, j)], diag + a_ts[i] * pk[i][j] * a_st[j], epsilon = 1e-14);
                let cdiag = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(l.c[(i, j)], cdiag + c_s[i] * pk[i][j] * a_st[j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn decoupled_system_assembles_block_diagonal() {
        let subs = vec![scalar(0.5, 0.0, 1.0, 0.2, 2.0, 0.0), scalar(0.3, 0.0, 1.0, 0.1, 3.0, 0.0)];
        let sys = NetworkedSystem::new(subs, ConnectionMatrix::selection(2, &[1, 0]));
        let l = assemble_lumped(&sys, &Tolerances::default()).unwrap();
        assert_eq!(l.a, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.3])));
        assert_eq!(l.c, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0])));
        let dual = dual_system(&sys);
        assert!(dual.subsystems().iter().all(|s| s.a_st.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn selection_phi_permutes_with_duplication() {
        let phi = ConnectionMatrix::selection(3, &[2, 0, 2]);
        for k in 0..3 {
            let mut e = DMatrix::zeros(3, 1);
            e[(k, 0)] = 1.0;
            let image = phi.apply(&e);
            for r in 0..3 {
                let expected = if [2, 0, 2][r] == k { 1.0 } else { 0.0 };
                assert_eq!(image[(r, 0)], expected);
            }
        }
    }

    #[test]
    fn sparse_and_dense_phi_agree() {
        let n = 40;
        let sources: Vec<usize> = (0..n).map(|r| (r * 7 + 3) % n).collect();
        let phi = ConnectionMatrix::selection(n, &sources);
        assert!(!phi.is_dense());
        let x = DMatrix::from_fn(n, 2, |r, c| (r * 3 + c) as f64);
        assert_eq!(phi.apply(&x), phi.to_dense() * &x);
    }
}
