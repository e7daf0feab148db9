use std::fmt::Write as _;

use nalgebra::DMatrix;
use netobs::Tolerances;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::args::Format;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILS: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INDETERMINATE: i32 = 3;

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub model: String,
    /// sha256 of the model file bytes.
    pub digest: String,
    pub tolerances: Tolerances,
    pub options: Value,
    pub exit_code: i32,
    pub result: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
    #[serde(skip)]
    pub body: String,
}

pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn exit_label(code: i32) -> &'static str {
    match code {
        EXIT_OK => "ok",
        EXIT_FAILS => "fails",
        EXIT_INPUT => "input error",
        _ => "indeterminate",
    }
}

impl RunReport {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(self).expect("report serializes") + "\n",
            Format::Text => {
                let t = &self.tolerances;
                let mut out = String::new();
                let _ = writeln!(out, "command: {}", self.command);
                let _ = writeln!(out, "model: {} (sha256 {})", self.model, self.digest);
                let _ = writeln!(
                    out,
                    "tolerances: rank_rel_tol={:e} zero_residual_tol={:e} zero_cluster_tol={:e} eig_guard_tol={:e} lsq_residual_tol={:e} unit_circle_band={:e} equiv_tol={:e} steady_tol={:e} steady_max_iters={}",
                    t.rank_rel_tol,
                    t.zero_residual_tol,
                    t.zero_cluster_tol,
                    t.eig_guard_tol,
                    t.lsq_residual_tol,
                    t.unit_circle_band,
                    t.equiv_tol,
                    t.steady_tol,
                    t.steady_max_iters
                );
                out.push_str(&self.body);
                if !self.body.ends_with('\n') {
                    out.push('\n');
                }
                if let Some(ms) = self.duration_ms {
                    let _ = writeln!(out, "duration: {ms:.1} ms");
                }
                let _ = writeln!(out, "exit: {} ({})", self.exit_code, exit_label(self.exit_code));
                out
            }
        }
    }
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub fn matrix_text(m: &DMatrix<f64>, indent: &str) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let cells: Vec<String> = m.row(r).iter().map(|v| format!("{v:>20.12e}")).collect();
        let _ = writeln!(out, "{indent}[{}]", cells.join(" "));
    }
    out
}
