use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use netobs::Tolerances;

const CSV_HELP: &str = "\
CSV columns:
  estimate:  t, <est>_trace, <est>_P11_fro .. <est>_PNN_fro for each estimator run;
             with --estimator both also gap_min_eig_1 .. gap_min_eig_N
             (smallest eigenvalue of P_ii^cdossp - P_ii^kalman divided by ||P^kalman||)
  simulate:  t, analytic_cdossp_trace, empirical_cdossp_trace, analytic_kalman_trace,
             empirical_kalman_trace, cdossp_rel_gap, kalman_rel_gap
Exit codes: 0 holds/success, 1 fails, 2 input error, 3 indeterminate or hypothesis unmet.";

#[derive(Debug, Parser)]
#[command(name = "netobs", version, about = "Observability, controllability and distributed prediction for networked LTI systems", after_help = CSV_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check shapes, the interconnection and well-posedness.
    Validate(ValidateArgs),
    /// Verify observability, controllability or Kalman-filter convergence.
    Verify(VerifyArgs),
    /// Run the covariance recursions of the distributed predictor and/or the Kalman filter.
    Estimate(EstimateArgs),
    /// Test whether the distributed predictor attains Kalman steady-state accuracy.
    Equivalence(EquivalenceArgs),
    /// Monte-Carlo comparison of empirical and analytic error covariances.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Model file (JSON).
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Accept general real Phi instead of the strict 0/1 one-source-per-row form.
    #[arg(long)]
    pub general_phi: bool,
    /// Single-threaded execution.
    #[arg(long)]
    pub serial: bool,
    /// Include wall-clock duration in the report.
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub tol: TolArgs,
}

#[derive(Debug, Args, Default)]
pub struct TolArgs {
    /// Relative singular-value threshold for numerical rank [default: 1e-9].
    #[arg(long)]
    pub rank_rel_tol: Option<f64>,
    /// Pencil residual accepted for a computed zero [default: 1e-8].
    #[arg(long)]
    pub zero_residual_tol: Option<f64>,
    /// Distance at which zeros are merged [default: 1e-7].
    #[arg(long)]
    pub zero_cluster_tol: Option<f64>,
    /// Distance from a subsystem eigenvalue treated as singular [default: 1e-10].
    #[arg(long)]
    pub eig_guard_tol: Option<f64>,
    /// Residual accepted by the least-squares resolvent [default: 1e-8].
    #[arg(long)]
    pub lsq_residual_tol: Option<f64>,
    /// Half-width of the unit-circle band [default: 1e-7].
    #[arg(long)]
    pub unit_circle_band: Option<f64>,
    /// Relative tolerance of the equivalence residuals [default: 1e-7].
    #[arg(long)]
    pub equiv_tol: Option<f64>,
    /// Relative Frobenius change that ends a fixed-point iteration [default: 1e-10].
    #[arg(long)]
    pub steady_tol: Option<f64>,
    /// Iteration cap of the fixed-point solver [default: 100000].
    #[arg(long)]
    pub steady_max_iters: Option<usize>,
}

impl TolArgs {
    pub fn resolve(&self) -> Tolerances {
        let mut t = Tolerances::default();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { t.$f = v; } )* };
        }
        set!(
            rank_rel_tol,
            zero_residual_tol,
            zero_cluster_tol,
            eig_guard_tol,
            lsq_residual_tol,
            unit_circle_band,
            equiv_tol,
            steady_tol,
            steady_max_iters
        );
        t
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PropertyArg {
    Obsv,
    Ctrb,
    KalmanConv,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = PropertyArg::Obsv)]
    pub property: PropertyArg,
    /// Also run the PBH test on the assembled model and compare.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Cdossp,
    Kalman,
    Both,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Both)]
    pub estimator: EstimatorArg,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Iterate to the fixed point instead of a fixed number of steps.
    #[arg(long)]
    pub steady: bool,
    /// Initial covariance: `identity`, `zero`, `scaled:<x>` or a JSON file with a row-major matrix.
    #[arg(long, default_value = "identity")]
    pub p0: String,
    /// Write the per-step trace here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EquivalenceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "identity")]
    pub p0: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 20)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "identity")]
    pub p0: String,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}
