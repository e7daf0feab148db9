//! JSON model files.
//!
//! ```json
//! {
//!   "subsystems": [
//!     { "A_TT": [[0.5]], "A_TS": [[1.0]], "A_ST": [[1.0]], "A_SS": [[0.0]],
//!       "B_T": [[1.0]], "C_T": [[1.0]], "D_w": [[1.0]] }
//!   ],
//!   "phi": { "rows": 1, "cols": 1, "entries": [[0, 0, 1.0]] }
//! }
//! ```
//!
//! Matrices are row-major arrays of rows. Omitted matrices are zero with
//! dimensions inferred from the others; `dims` may pin them explicitly.
//! `phi` takes either sparse `entries` (0-based `[row, col, value]`) or a
//! `dense` array.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::{ConnectionMatrix, NetworkedSystem, Subsystem, SubsystemDims};
use crate::{Error, Result};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<DimsFile>,
    #[serde(rename = "A_TT", default)]
    pub a_tt: Option<Rows>,
    #[serde(rename = "A_TS", default)]
    pub a_ts: Option<Rows>,
    #[serde(rename = "A_ST", default)]
    pub a_st: Option<Rows>,
    #[serde(rename = "A_SS", default)]
    pub a_ss: Option<Rows>,
    #[serde(rename = "B_T", default)]
    pub b_t: Option<Rows>,
    #[serde(rename = "B_S", default)]
    pub b_s: Option<Rows>,
    #[serde(rename = "C_T", default)]
    pub c_t: Option<Rows>,
    #[serde(rename = "C_S", default)]
    pub c_s: Option<Rows>,
    #[serde(rename = "D_d", default)]
    pub d_d: Option<Rows>,
    #[serde(rename = "D_w", default)]
    pub d_w: Option<Rows>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DimsFile {
    pub m_t: Option<usize>,
    pub m_s: Option<usize>,
    pub m_z: Option<usize>,
    pub m_y: Option<usize>,
    pub m_d: Option<usize>,
    pub m_w: Option<usize>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PhiFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<(usize, usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense: Option<Rows>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub subsystems: Vec<SubsystemFile>,
    pub phi: PhiFile,
}

fn shape(field: &str, sub: usize, rows: &Rows) -> Result<(usize, Option<usize>)> {
    let Some(first) = rows.first() else {
        return Ok((0, None));
    };
    for (k, r) in rows.iter().enumerate() {
        if r.len() != first.len() {
            return Err(Error::Parse(format!(
                "subsystem {sub}, field {field}: row {} has {} entries, expected {} (ragged matrix)",
                k + 1,
                r.len(),
                first.len()
            )));
        }
        if let Some(c) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse(format!(
                "subsystem {sub}, field {field}: non-finite entry at row {}, column {}",
                k + 1,
                c + 1
            )));
        }
    }
    Ok((rows.len(), Some(first.len())))
}

fn to_matrix(rows: &Rows, nrows: usize, ncols: usize) -> DMatrix<f64> {
    if rows.is_empty() {
        return DMatrix::zeros(nrows, ncols);
    }
    DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c])
}

impl SubsystemFile {
    fn to_subsystem(&self, sub: usize) -> Result<Subsystem> {
        let fields: [(&str, &Option<Rows>, fn(&mut Inferred, usize, Option<usize>)); 10] = [
            ("A_TT", &self.a_tt, |d, r, c| {
                d.set_t(r);
                d.t.get_or_insert_opt(c);
            }),
            ("A_TS", &self.a_ts, |d, r, c| {
                d.set_t(r);
                d.s.get_or_insert_opt(c);
            }),
            ("A_ST", &self.a_st, |d, r, c| {
                d.z.get_or_insert(r);
                d.t.get_or_insert_opt(c);
            }),
            ("A_SS", &self.a_ss, |d, r, c| {
                d.z.get_or_insert(r);
                d.s.get_or_insert_opt(c);
            }),
            ("B_T", &self.b_t, |d, r, c| {
                d.set_t(r);
                d.d.get_or_insert_opt(c);
            }),
            ("B_S", &self.b_s, |d, r, c| {
                d.z.get_or_insert(r);
                d.d.get_or_insert_opt(c);
            }),
            ("C_T", &self.c_t, |d, r, c| {
                d.y.get_or_insert(r);
                d.t.get_or_insert_opt(c);
            }),
            ("C_S", &self.c_s, |d, r, c| {
                d.y.get_or_insert(r);
                d.s.get_or_insert_opt(c);
            }),
            ("D_d", &self.d_d, |d, r, c| {
                d.y.get_or_insert(r);
                d.d.get_or_insert_opt(c);
            }),
            ("D_w", &self.d_w, |d, r, c| {
                d.y.get_or_insert(r);
                d.w.get_or_insert_opt(c);
            }),
        ];
        let mut inferred = Inferred::from(self.dims.unwrap_or_default());
        for (name, rows, record) in fields.iter() {
            if let Some(rows) = rows {
                let (r, c) = shape(name, sub, rows)?;
                if r > 0 {
                    record(&mut inferred, r, c);
                }
            }
        }
        let d = inferred.finish();
        let m = |rows: &Option<Rows>, nr: usize, nc: usize| match rows {
            Some(rows) => to_matrix(rows, nr, nc),
            None => DMatrix::zeros(nr, nc),
        };
        Ok(Subsystem {
            a_tt: m(&self.a_tt, d.m_t, d.m_t),
            a_ts: m(&self.a_ts, d.m_t, d.m_s),
            a_st: m(&self.a_st, d.m_z, d.m_t),
            a_ss: m(&self.a_ss, d.m_z, d.m_s),
            b_t: m(&self.b_t, d.m_t, d.m_d),
            b_s: m(&self.b_s, d.m_z, d.m_d),
            c_t: m(&self.c_t, d.m_y, d.m_t),
            c_s: m(&self.c_s, d.m_y, d.m_s),
            d_d: m(&self.d_d, d.m_y, d.m_d),
            d_w: m(&self.d_w, d.m_y, d.m_w),
        })
    }

    fn from_subsystem(s: &Subsystem) -> Self {
        let rows = |m: &DMatrix<f64>| -> Option<Rows> {
            Some((0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect())
        };
        let d = s.dims();
        Self {
            dims: Some(DimsFile {
                m_t: Some(d.m_t),
                m_s: Some(d.m_s),
                m_z: Some(d.m_z),
                m_y: Some(d.m_y),
                m_d: Some(d.m_d),
                m_w: Some(d.m_w),
            }),
            a_tt: rows(&s.a_tt),
            a_ts: rows(&s.a_ts),
            a_st: rows(&s.a_st),
            a_ss: rows(&s.a_ss),
            b_t: rows(&s.b_t),
            b_s: rows(&s.b_s),
            c_t: rows(&s.c_t),
            c_s: rows(&s.c_s),
            d_d: rows(&s.d_d),
            d_w: rows(&s.d_w),
        }
    }
}

trait InsertOpt {
    fn get_or_insert_opt(&mut self, v: Option<usize>);
}

impl InsertOpt for Option<usize> {
    fn get_or_insert_opt(&mut self, v: Option<usize>) {
        if let Some(v) = v {
            self.get_or_insert(v);
        }
    }
}

/// First-seen wins; explicit `dims` are seen first. Shape conflicts are left
/// for validation to report.
#[derive(Default)]
struct Inferred {
    t: Option<usize>,
    s: Option<usize>,
    z: Option<usize>,
    y: Option<usize>,
    d: Option<usize>,
    w: Option<usize>,
}

impl Inferred {
    fn set_t(&mut self, r: usize) {
        self.t.get_or_insert(r);
    }

    fn finish(self) -> SubsystemDims {
        SubsystemDims {
            m_t: self.t.unwrap_or(0),
            m_s: self.s.unwrap_or(0),
            m_z: self.z.unwrap_or(0),
            m_y: self.y.unwrap_or(0),
            m_d: self.d.unwrap_or(0),
            m_w: self.w.unwrap_or(0),
        }
    }
}

impl From<DimsFile> for Inferred {
    fn from(d: DimsFile) -> Self {
        Self {
            t: d.m_t,
            s: d.m_s,
            z: d.m_z,
            y: d.m_y,
            d: d.m_d,
            w: d.m_w,
        }
    }
}

impl ModelFile {
    pub fn to_system(&self) -> Result<NetworkedSystem> {
        let subs: Vec<Subsystem> = self
            .subsystems
            .iter()
            .enumerate()
            .map(|(k, s)| s.to_subsystem(k + 1))
            .collect::<Result<_>>()?;
        let m_s: usize = subs.iter().map(|s| s.a_ts.ncols()).sum();
        let m_z: usize = subs.iter().map(|s| s.a_st.nrows()).sum();
        let phi = match (&self.phi.entries, &self.phi.dense) {
            (Some(_), Some(_)) => {
                return Err(Error::Parse("phi: give either entries or dense, not both".into()))
            }
            (None, Some(dense)) => {
                let (r, c) = shape("phi.dense", 0, dense).map_err(|_| {
                    Error::Parse("field phi.dense: ragged matrix".into())
                })?;
                ConnectionMatrix::from_dense(&to_matrix(dense, r, c.unwrap_or(m_z)))
            }
            (entries, None) => {
                let rows = self.phi.rows.unwrap_or(m_s);
                let cols = self.phi.cols.unwrap_or(m_z);
                let entries = entries.clone().unwrap_or_default();
                if let Some(&(r, c, _)) = entries.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
                    return Err(Error::Parse(format!(
                        "field phi.entries: entry ({r}, {c}) outside {rows}x{cols}"
                    )));
                }
                if let Some(&(r, c, _)) = entries.iter().find(|e| !e.2.is_finite()) {
                    return Err(Error::Parse(format!("field phi.entries: non-finite value at ({r}, {c})")));
                }
                ConnectionMatrix::new(rows, cols, entries)
            }
        };
        Ok(NetworkedSystem::new(subs, phi))
    }

    pub fn from_system(sys: &NetworkedSystem, name: Option<&str>) -> Self {
        let phi = sys.phi();
        Self {
            name: name.map(str::to_string),
            subsystems: sys.subsystems().iter().map(SubsystemFile::from_subsystem).collect(),
            phi: PhiFile {
                rows: Some(phi.rows()),
                cols: Some(phi.cols()),
                entries: Some(phi.entries().to_vec()),
                dense: None,
            },
        }
    }
}

pub fn parse_model(text: &str) -> Result<NetworkedSystem> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.to_system()
}

pub fn load_model(path: &Path) -> Result<NetworkedSystem> {
    parse_model(&std::fs::read_to_string(path)?)
}

pub fn model_to_json(sys: &NetworkedSystem, name: Option<&str>) -> String {
    serde_json::to_string_pretty(&ModelFile::from_system(sys, name)).expect("model serializes")
}

pub fn save_model(sys: &NetworkedSystem, name: Option<&str>, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(sys, name) + "\n")?;
    Ok(())
}
