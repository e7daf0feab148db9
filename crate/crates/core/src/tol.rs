use serde::{Deserialize, Serialize};

/// Numerical policy shared by every module.
///
/// All exact-arithmetic conditions (regularity, zero existence, unit-circle
/// membership, block-diagonal gains) are decided against these knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// A matrix is numerically singular when `sigma_min <= rank_rel_tol * sigma_max`.
    pub rank_rel_tol: f64,
    /// Relative pencil singularity accepted at a computed zero, and the
    /// residual bound for null-space directions.
    pub zero_residual_tol: f64,
    /// Zeros closer than this (absolute for |lambda| <= 1, relative otherwise) merge.
    pub zero_cluster_tol: f64,
    /// `lambda I - A` counts as singular below this smallest singular value.
    pub eig_guard_tol: f64,
    /// Residual accepted by the least-squares resolvent.
    pub lsq_residual_tol: f64,
    /// Half-width of the band treated as the unit circle.
    pub unit_circle_band: f64,
    /// Block-diagonal gain test, relative to `||A_i|| ||P||`.
    pub equiv_tol: f64,
    /// Fixed-point stopping rule for covariance iterations.
    pub steady_tol: f64,
    pub steady_max_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank_rel_tol: 1e-9,
            zero_residual_tol: 1e-8,
            zero_cluster_tol: 1e-7,
            eig_guard_tol: 1e-10,
            lsq_residual_tol: 1e-8,
            unit_circle_band: 1e-7,
            equiv_tol: 1e-7,
            steady_tol: 1e-10,
            steady_max_iters: 100_000,
        }
    }
}

impl Tolerances {
    /// Cluster distance scale: absolute inside the unit disk, relative outside.
    pub fn cluster_scale(&self, a: f64, b: f64) -> f64 {
        self.zero_cluster_tol * a.max(b).max(1.0)
    }
}
