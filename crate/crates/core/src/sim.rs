//! Monte-Carlo simulation of the assembled plant with both estimators
//! running on identical noise.
//!
//! Gains come from the analytic covariance recursions. Each trial owns its
//! random streams keyed by `(seed, trial)`, and partial sums are combined in
//! fixed chunk order, so results are bitwise identical for serial and
//! parallel execution.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::estimate::{cdossp_gains, kalman_step, CovarianceState, EstimationSetup};
use crate::exec::{map_indexed, Execution};
use crate::linalg;
use crate::{Error, Result};

const CHUNK: usize = 256;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    /// Initial state covariance; identity when `None`.
    pub p0: Option<DMatrix<f64>>,
    /// Multiplies both noise sequences (0 gives a noise-free plant).
    pub noise_scale: f64,
    pub exec: Execution,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            trials: 1000,
            seed: 0,
            p0: None,
            noise_scale: 1.0,
            exec: Execution::default(),
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.horizon == 0 {
            return Err(Error::Invalid("trials and horizon must be at least 1".into()));
        }
        Ok(())
    }

    fn p0(&self, n: usize) -> Result<DMatrix<f64>> {
        match &self.p0 {
            None => Ok(DMatrix::identity(n, n)),
            Some(p) if p.nrows() == n && p.ncols() == n => Ok(p.clone()),
            Some(p) => Err(Error::Dimension(format!(
                "P0 is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            ))),
        }
    }
}

/// Per-trial generators: initial state, process noise, measurement noise.
pub struct TrialStreams {
    pub x0: ChaCha8Rng,
    pub d: ChaCha8Rng,
    pub w: ChaCha8Rng,
}

impl TrialStreams {
    pub fn new(seed: u64, trial: usize) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(3 * trial as u64 + k);
            r
        };
        Self {
            x0: stream(0),
            d: stream(1),
            w: stream(2),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

#[derive(Clone, Debug)]
pub struct PlantTrajectory {
    /// `x(0), ..., x(T)`
    pub x: Vec<DVector<f64>>,
    /// `y(0), ..., y(T-1)`
    pub y: Vec<DVector<f64>>,
}

struct Plant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d_w: DMatrix<f64>,
}

impl Plant {
    fn new(setup: &EstimationSetup) -> Self {
        let l = setup.lumped();
        let md = l.b.ncols();
        Self {
            a: l.a.clone(),
            b: l.b.clone(),
            c: l.c.clone(),
            d_w: l.d.columns(md, l.d.ncols() - md).into_owned(),
        }
    }

    fn step(&self, x: &DVector<f64>, s: &mut TrialStreams, scale: f64) -> (DVector<f64>, DVector<f64>) {
        let d = normal(&mut s.d, self.b.ncols()) * scale;
        let w = normal(&mut s.w, self.d_w.ncols()) * scale;
        let y = &self.c * x + &self.d_w * w;
        let next = &self.a * x + &self.b * d;
        (next, y)
    }
}

/// One trial of `x(t+1) = A x + B_T d`, `y = C x + D_w w` with the
/// interconnection resolved through the assembled model.
pub fn simulate_plant(setup: &EstimationSetup, x0: &DVector<f64>, config: &SimConfig, trial: usize) -> PlantTrajectory {
    let plant = Plant::new(setup);
    let mut streams = TrialStreams::new(config.seed, trial);
    let mut x = vec![x0.clone()];
    let mut y = Vec::with_capacity(config.horizon);
    for _ in 0..config.horizon {
        let (next, out) = plant.step(x.last().unwrap(), &mut streams, config.noise_scale);
        x.push(next);
        y.push(out);
    }
    PlantTrajectory { x, y }
}

/// Draws `x(0) ~ N(0, P0)` for a trial.
pub fn initial_state(p0_sqrt: &DMatrix<f64>, seed: u64, trial: usize) -> DVector<f64> {
    let mut s = TrialStreams::new(seed, trial);
    p0_sqrt * normal(&mut s.x0, p0_sqrt.ncols())
}

#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub analytic_cdossp: DMatrix<f64>,
    pub analytic_kalman: DMatrix<f64>,
    pub empirical_cdossp: DMatrix<f64>,
    pub empirical_kalman: DMatrix<f64>,
    pub mean_error_cdossp: DVector<f64>,
    pub mean_error_kalman: DVector<f64>,
}

impl StepRecord {
    pub fn rel_gap_cdossp(&self) -> f64 {
        rel_frobenius(&self.empirical_cdossp, &self.analytic_cdossp)
    }

    pub fn rel_gap_kalman(&self) -> f64 {
        rel_frobenius(&self.empirical_kalman, &self.analytic_kalman)
    }
}

pub fn rel_frobenius(x: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let r = reference.norm();
    let diff = (x - reference).norm();
    if r > 0.0 {
        diff / r
    } else {
        diff
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimResult {
    pub trials: usize,
    pub seed: u64,
    /// Steps `0..=horizon`.
    pub records: Vec<StepRecord>,
    /// Per-subsystem RMS prediction error at the final step.
    pub rms_cdossp: Vec<f64>,
    pub rms_kalman: Vec<f64>,
}

impl SimResult {
    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("horizon >= 1")
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(
            "t,analytic_cdossp_trace,empirical_cdossp_trace,analytic_kalman_trace,empirical_kalman_trace,cdossp_rel_gap,kalman_rel_gap\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                r.t,
                r.analytic_cdossp.trace(),
                r.empirical_cdossp.trace(),
                r.analytic_kalman.trace(),
                r.empirical_kalman.trace(),
                r.rel_gap_cdossp(),
                r.rel_gap_kalman()
            ));
        }
        out
    }
}

/// Sums of `e` and `e e^T` per step for both estimators.
#[derive(Clone)]
struct Moments {
    sum_cd: Vec<DVector<f64>>,
    sum_kal: Vec<DVector<f64>>,
    outer_cd: Vec<DMatrix<f64>>,
    outer_kal: Vec<DMatrix<f64>>,
}

impl Moments {
    fn zeros(steps: usize, n: usize) -> Self {
        Self {
            sum_cd: vec![DVector::zeros(n); steps],
            sum_kal: vec![DVector::zeros(n); steps],
            outer_cd: vec![DMatrix::zeros(n, n); steps],
            outer_kal: vec![DMatrix::zeros(n, n); steps],
        }
    }

    fn add(&mut self, t: usize, e_cd: &DVector<f64>, e_kal: &DVector<f64>) {
        self.sum_cd[t] += e_cd;
        self.sum_kal[t] += e_kal;
        self.outer_cd[t].ger(1.0, e_cd, e_cd, 1.0);
        self.outer_kal[t].ger(1.0, e_kal, e_kal, 1.0);
    }

    fn merge(&mut self, other: &Moments) {
        for t in 0..self.sum_cd.len() {
            self.sum_cd[t] += &other.sum_cd[t];
            self.sum_kal[t] += &other.sum_kal[t];
            self.outer_cd[t] += &other.outer_cd[t];
            self.outer_kal[t] += &other.outer_kal[t];
        }
    }
}

/// Analytic covariances `P(0..=T)` and gains `K(0..T)` of both estimators.
pub struct AnalyticRun {
    pub p_cdossp: Vec<DMatrix<f64>>,
    pub p_kalman: Vec<DMatrix<f64>>,
    pub k_cdossp: Vec<DMatrix<f64>>,
    pub k_kalman: Vec<DMatrix<f64>>,
}

pub fn analytic_run(setup: &EstimationSetup, p0: &DMatrix<f64>, horizon: usize) -> Result<AnalyticRun> {
    let mut pc = CovarianceState::new(p0.clone());
    let mut pk = pc.clone();
    let mut run = AnalyticRun {
        p_cdossp: vec![pc.p.clone()],
        p_kalman: vec![pk.p.clone()],
        k_cdossp: Vec::with_capacity(horizon),
        k_kalman: Vec::with_capacity(horizon),
    };
    for _ in 0..horizon {
        run.k_cdossp.push(cdossp_gains(setup, &pc)?.to_dense());
        pc = crate::estimate::cdossp_step(setup, &pc)?;
        let ks = kalman_step(setup, &pk)?;
        run.k_kalman.push(ks.gain.to_dense());
        pk = ks.next;
        run.p_cdossp.push(pc.p.clone());
        run.p_kalman.push(pk.p.clone());
    }
    Ok(run)
}

/// Runs plant, distributed predictor and Kalman predictor over all trials.
/// Both predictors start from `x_hat(0) = 0`.
pub fn run_estimators(setup: &EstimationSetup, config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let n = setup.states();
    let p0 = config.p0(n)?;
    let p0_sqrt = linalg::psd_sqrt(&p0);
    let run = analytic_run(setup, &p0, config.horizon)?;
    let plant = Plant::new(setup);
    let steps = config.horizon + 1;

    let chunks = config.trials.div_ceil(CHUNK);
    let partial = map_indexed(chunks, config.exec, |c| {
        let mut m = Moments::zeros(steps, n);
        for trial in c * CHUNK..((c + 1) * CHUNK).min(config.trials) {
            let mut streams = TrialStreams::new(config.seed, trial);
            let mut x = &p0_sqrt * normal(&mut streams.x0, n);
            let mut xc = DVector::zeros(n);
            let mut xk = DVector::zeros(n);
            m.add(0, &(&x - &xc), &(&x - &xk));
            for t in 0..config.horizon {
                let (next, y) = plant.step(&x, &mut streams, config.noise_scale);
                xc = &plant.a * &xc + &run.k_cdossp[t] * (&y - &plant.c * &xc);
                xk = &plant.a * &xk + &run.k_kalman[t] * (&y - &plant.c * &xk);
                x = next;
                m.add(t + 1, &(&x - &xc), &(&x - &xk));
            }
        }
        m
    });
    let mut total = Moments::zeros(steps, n);
    for m in &partial {
        total.merge(m);
    }

    let scale = 1.0 / config.trials as f64;
    let records: Vec<StepRecord> = (0..steps)
        .map(|t| StepRecord {
            t,
            analytic_cdossp: run.p_cdossp[t].clone(),
            analytic_kalman: run.p_kalman[t].clone(),
            empirical_cdossp: linalg::symmetrize(&(&total.outer_cd[t] * scale)),
            empirical_kalman: linalg::symmetrize(&(&total.outer_kal[t] * scale)),
            mean_error_cdossp: &total.sum_cd[t] * scale,
            mean_error_kalman: &total.sum_kal[t] * scale,
        })
        .collect();
    let off = setup.offsets();
    let rms = |p: &DMatrix<f64>| -> Vec<f64> {
        (0..setup.len())
            .map(|i| {
                let r = off.t_range(i);
                let tr: f64 = r.clone().map(|k| p[(k, k)]).sum();
                (tr / r.len().max(1) as f64).sqrt()
            })
            .collect()
    };
    let last = records.last().unwrap();
    Ok(SimResult {
        trials: config.trials,
        seed: config.seed,
        rms_cdossp: rms(&last.empirical_cdossp),
        rms_kalman: rms(&last.empirical_kalman),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConnectionMatrix, NetworkedSystem, Subsystem, SubsystemDims};
    use crate::synth;
    use crate::Tolerances;

    fn setup(sys: &NetworkedSystem) -> EstimationSetup {
        EstimationSetup::new(sys, &Tolerances::default()).unwrap()
    }

    fn identity_plant() -> NetworkedSystem {
        let dims = SubsystemDims { m_t: 2, m_s: 1, m_z: 1, m_y: 1, m_d: 2, m_w: 1 };
        let mut s = Subsystem::zeros(dims);
        s.a_tt = DMatrix::identity(2, 2);
        s.b_t = DMatrix::identity(2, 2);
        s.c_t = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        s.d_w = DMatrix::identity(1, 1);
        NetworkedSystem::new(vec![s], ConnectionMatrix::selection(1, &[0]))
    }

    #[test]
    fn noise_free_plant_from_rest_stays_at_rest() {
        let s = setup(&identity_plant());
        let cfg = SimConfig { noise_scale: 0.0, horizon: 5, ..Default::default() };
        let traj = simulate_plant(&s, &DVector::zeros(2), &cfg, 0);
        assert!(traj.x.iter().chain(&traj.y).all(|v| v.iter().all(|&e| e == 0.0)));
    }

    #[test]
    fn noise_free_identity_plant_is_constant() {
        let s = setup(&identity_plant());
        let cfg = SimConfig { noise_scale: 0.0, horizon: 5, ..Default::default() };
        let e1 = DVector::from_column_slice(&[1.0, 0.0]);
        let traj = simulate_plant(&s, &e1, &cfg, 3);
        assert!(traj.x.iter().all(|x| x == &e1));
    }

    #[test]
    fn process_noise_sample_covariance_is_identity() {
        let mut s = TrialStreams::new(42, 0);
        let n = 100_000;
        let mut acc = DMatrix::zeros(3, 3);
        for _ in 0..n {
            let d = normal(&mut s.d, 3);
            acc.ger(1.0, &d, &d, 1.0);
        }
        acc /= n as f64;
        let gap = (&acc - DMatrix::identity(3, 3)).norm() / 3f64.sqrt();
        assert!(gap < 0.03, "{gap}");
    }

    #[test]
    fn serial_and_parallel_runs_are_bitwise_identical() {
        let mut rng = synth::rng(5);
        let s = setup(&synth::coupled_estimation_system(&mut rng, 3));
        let base = SimConfig { trials: 600, horizon: 4, seed: 9, ..Default::default() };
        let a = run_estimators(&s, &SimConfig { exec: Execution::Serial, ..base.clone() }).unwrap();
        let b = run_estimators(&s, &SimConfig { exec: Execution::Parallel, ..base }).unwrap();
        assert_eq!(a.csv(), b.csv());
        assert_eq!(a.last().empirical_kalman, b.last().empirical_kalman);
    }

    #[test]
    fn noise_free_errors_decay() {
        let mut rng = synth::rng(8);
        let s = setup(&synth::coupled_estimation_system(&mut rng, 2));
        let cfg = SimConfig { trials: 50, horizon: 200, noise_scale: 0.0, ..Default::default() };
        let r = run_estimators(&s, &cfg).unwrap();
        assert!(r.last().empirical_cdossp.norm() < 1e-6);
        assert!(r.last().empirical_kalman.norm() < 1e-6);
    }
}
