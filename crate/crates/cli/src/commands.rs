use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use netobs::estimate::{
    self, equivalence_check_steady, steady_state, CovarianceState, EstimationSetup, Estimator,
    SteadyVerdict,
};
use netobs::exec::Execution;
use netobs::model::{check_well_posedness, validate_system, NetworkedSystem};
use netobs::sim::{run_estimators, SimConfig};
use netobs::verify::{self, Outcome, Property, Verdict};
use netobs::{io, linalg, Error, Tolerances};
use serde_json::{json, Value};

use crate::args::{
    Cli, Command, Common, EquivalenceArgs, EstimateArgs, EstimatorArg, PropertyArg, SimulateArgs, ValidateArgs,
    VerifyArgs,
};
use crate::report::{self, rows, RunReport, EXIT_FAILS, EXIT_INDETERMINATE, EXIT_INPUT, EXIT_OK};
use crate::RunOutput;

/// Slack allowed when calling a covariance difference PSD.
const PSD_SLACK: f64 = 1e-10;

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Dimension(_)
            | Error::Invalid(_)
            | Error::NotWellPosed { .. }
            | Error::Precondition(_)
            | Error::Parse(_)
            | Error::Io(_) => EXIT_INPUT,
            _ => EXIT_INDETERMINATE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_INPUT, message: message.into() }
}

struct Context {
    tol: Tolerances,
    exec: Execution,
    digest: String,
    sys: NetworkedSystem,
    warnings: String,
}

/// Command result before the common report fields are attached.
struct Body {
    code: i32,
    options: Value,
    result: Value,
    text: String,
}

fn load(common: &Common) -> Result<Context, Failure> {
    let bytes = std::fs::read(&common.model)
        .map_err(|e| input_error(format!("cannot read {}: {e}", common.model.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| input_error("model file is not UTF-8"))?;
    let sys = io::parse_model(&text)?;
    Ok(Context {
        tol: common.tol.resolve(),
        exec: if common.serial { Execution::Serial } else { Execution::Parallel },
        digest: report::digest(&bytes),
        sys,
        warnings: String::new(),
    })
}

/// Shape and interconnection checks plus well-posedness; any problem is an
/// input error for the analysis commands.
fn require_valid(ctx: &Context, common: &Common) -> Result<(), Failure> {
    let rep = validate_system(&ctx.sys, !common.general_phi);
    if !rep.is_valid() {
        return Err(input_error(format!("model is invalid:\n{rep}")));
    }
    let wp = check_well_posedness(&ctx.sys, &ctx.tol)?;
    if !wp.well_posed {
        return Err(input_error(format!(
            "model is not well-posed: I - A_SS Phi has condition estimate {:.3e}",
            wp.condition_estimate
        )));
    }
    Ok(())
}

pub fn run(cli: Cli) -> RunOutput {
    let (name, common) = match &cli.command {
        Command::Validate(a) => ("validate", &a.common),
        Command::Verify(a) => ("verify", &a.common),
        Command::Estimate(a) => ("estimate", &a.common),
        Command::Equivalence(a) => ("equivalence", &a.common),
        Command::Simulate(a) => ("simulate", &a.common),
    };
    let start = Instant::now();
    let mut ctx = match load(common) {
        Ok(c) => c,
        Err(f) => return failure(name, f),
    };
    let body = match &cli.command {
        Command::Validate(a) => validate(&ctx, a),
        Command::Verify(a) => verify_cmd(&mut ctx, a),
        Command::Estimate(a) => estimate_cmd(&mut ctx, a),
        Command::Equivalence(a) => equivalence_cmd(&ctx, a),
        Command::Simulate(a) => simulate_cmd(&mut ctx, a),
    };
    let body = match body {
        Ok(b) => b,
        Err(f) => {
            let mut out = failure(name, f);
            out.stderr.insert_str(0, &ctx.warnings);
            return out;
        }
    };
    let rep = RunReport {
        command: name,
        model: common.model.display().to_string(),
        digest: ctx.digest.clone(),
        tolerances: ctx.tol,
        options: body.options,
        exit_code: body.code,
        result: body.result,
        duration_ms: common.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
        body: body.text,
    };
    RunOutput {
        code: body.code,
        stdout: rep.render(common.format),
        stderr: ctx.warnings,
    }
}

fn failure(name: &str, f: Failure) -> RunOutput {
    RunOutput {
        code: f.code,
        stdout: String::new(),
        stderr: format!("netobs {name}: {}\n", f.message),
    }
}

fn validate(ctx: &Context, args: &ValidateArgs) -> Result<Body, Failure> {
    let strict = !args.common.general_phi;
    let rep = validate_system(&ctx.sys, strict);
    let off = ctx.sys.offsets();
    let mut text = format!(
        "{} subsystems; M_T = {}, M_S = {}, M_z = {}, M_y = {}, M_d = {}, M_w = {}\n",
        ctx.sys.len(),
        off.total_t(),
        off.total_s(),
        off.total_z(),
        off.total_y(),
        off.total_d(),
        off.total_w()
    );
    let mut violations: Vec<String> = rep.violations.iter().map(|v| v.to_string()).collect();
    let mut well_posed = None;
    if rep.is_valid() {
        let wp = check_well_posedness(&ctx.sys, &ctx.tol)?;
        if !wp.well_posed {
            violations.push(format!(
                "not well-posed: I - A_SS Phi has condition estimate {:.3e}",
                wp.condition_estimate
            ));
        }
        well_posed = Some(json!({ "well_posed": wp.well_posed, "condition_estimate": finite(wp.condition_estimate) }));
        let _ = writeln!(text, "I - A_SS Phi condition estimate: {:.3e}", wp.condition_estimate);
    }
    if violations.is_empty() {
        text.push_str("valid\n");
    } else {
        let _ = writeln!(text, "{} violation(s):", violations.len());
        for v in &violations {
            let _ = writeln!(text, "  {v}");
        }
    }
    Ok(Body {
        code: if violations.is_empty() { EXIT_OK } else { EXIT_FAILS },
        options: json!({ "strict_phi": strict }),
        result: json!({ "valid": violations.is_empty(), "violations": violations, "well_posedness": well_posed }),
        text,
    })
}

fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn verdict_text(v: &Verdict, label: &str) -> String {
    let mut out = format!("{label}: {} — {}\n", v.result, v.diagnostics);
    for w in &v.witnesses {
        let _ = writeln!(
            out,
            "  witness lambda0 = {:.9} {:+.9}i, subsystems {:?}, deficiency {}",
            w.lambda0.re, w.lambda0.im, w.subsystems, w.deficiency
        );
    }
    out
}

fn verify_cmd(ctx: &mut Context, args: &VerifyArgs) -> Result<Body, Failure> {
    require_valid(ctx, &args.common)?;
    let (property, structured) = match args.property {
        PropertyArg::Obsv => (Property::Observable, verify::verify_observability_with(&ctx.sys, &ctx.tol, ctx.exec)?),
        PropertyArg::Ctrb => (Property::Controllable, verify::verify_controllability_with(&ctx.sys, &ctx.tol, ctx.exec)?),
        PropertyArg::KalmanConv => (Property::KalmanConvergent, verify::check_kalman_convergence(&ctx.sys, &ctx.tol)?),
    };
    let indeterminate = structured.result == Outcome::Indeterminate;
    let oracle = if args.oracle || indeterminate {
        if indeterminate {
            ctx.warnings
                .push_str("warning: structured test indeterminate; reporting the PBH oracle on the assembled model\n");
        }
        Some(verify::oracle_for(&ctx.sys, property, &ctx.tol)?)
    } else {
        None
    };
    let mut text = verdict_text(&structured, "structured");
    let mut agreement = Value::Null;
    if let Some(o) = &oracle {
        text.push_str(&verdict_text(o, "oracle"));
        if !indeterminate {
            let agree = o.result == structured.result;
            agreement = json!(agree);
            text.push_str(if agree { "AGREE\n" } else { "DISAGREE\n" });
        }
    }
    let code = match structured.result {
        Outcome::Holds => EXIT_OK,
        Outcome::Fails => EXIT_FAILS,
        Outcome::Indeterminate => EXIT_INDETERMINATE,
    };
    Ok(Body {
        code,
        options: json!({ "property": property, "oracle": args.oracle, "strict_phi": !args.common.general_phi }),
        result: json!({ "structured": structured, "oracle": oracle, "agree": agreement }),
        text,
    })
}

fn parse_p0(spec: &str, n: usize) -> Result<DMatrix<f64>, Failure> {
    match spec {
        "identity" => Ok(DMatrix::identity(n, n)),
        "zero" => Ok(DMatrix::zeros(n, n)),
        s if s.starts_with("scaled:") => {
            let x: f64 = s["scaled:".len()..]
                .parse()
                .map_err(|_| input_error(format!("--p0 {s}: expected scaled:<number>")))?;
            Ok(DMatrix::identity(n, n) * x)
        }
        path => {
            let text = std::fs::read_to_string(Path::new(path))
                .map_err(|e| input_error(format!("--p0 {path}: {e}")))?;
            let rows: Vec<Vec<f64>> =
                serde_json::from_str(&text).map_err(|e| input_error(format!("--p0 {path}: {e}")))?;
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(input_error(format!("--p0 {path}: expected a {n}x{n} matrix")));
            }
            let p = DMatrix::from_fn(n, n, |r, c| rows[r][c]);
            if (&p - p.transpose()).norm() > 1e-12 * p.norm().max(1.0) {
                return Err(input_error(format!("--p0 {path}: matrix is not symmetric")));
            }
            Ok(p)
        }
    }
}

fn setup(ctx: &Context, common: &Common) -> Result<EstimationSetup, Failure> {
    require_valid(ctx, common)?;
    Ok(EstimationSetup::new(&ctx.sys, &ctx.tol)?.with_execution(ctx.exec))
}

fn estimators(arg: EstimatorArg) -> Vec<Estimator> {
    match arg {
        EstimatorArg::Cdossp => vec![Estimator::Cdossp],
        EstimatorArg::Kalman => vec![Estimator::Kalman],
        EstimatorArg::Both => vec![Estimator::Cdossp, Estimator::Kalman],
    }
}

fn estimate_cmd(ctx: &mut Context, args: &EstimateArgs) -> Result<Body, Failure> {
    let s = setup(ctx, &args.common)?;
    let p0 = CovarianceState::new(parse_p0(&args.p0, s.states())?);
    let which = estimators(args.estimator);
    let options = json!({
        "estimator": which,
        "steps": args.steps,
        "steady": args.steady,
        "p0": args.p0,
    });
    let mut text = String::new();
    if args.steady {
        if args.csv.is_some() {
            ctx.warnings.push_str("warning: --csv is ignored with --steady\n");
        }
        let mut results = Vec::new();
        let mut all_converged = true;
        for &w in &which {
            let ss = steady_state(&s, w, &p0, ctx.tol.steady_max_iters, ctx.tol.steady_tol)?;
            all_converged &= ss.converged();
            let _ = writeln!(
                text,
                "{w}: {:?} after {} iterations (relative change {:.3e})",
                ss.status, ss.iters, ss.change
            );
            text.push_str(&report::matrix_text(&ss.p.p, "  "));
            results.push(json!({
                "estimator": w,
                "status": ss.status,
                "iters": ss.iters,
                "change": finite(ss.change),
                "p": rows(&ss.p.p),
            }));
        }
        return Ok(Body {
            code: if all_converged { EXIT_OK } else { EXIT_INDETERMINATE },
            options,
            result: json!({ "steady": results }),
            text,
        });
    }

    let traces: Vec<Vec<CovarianceState>> = which
        .iter()
        .map(|&w| estimate::trace(&s, w, &p0, args.steps))
        .collect::<Result<_, _>>()?;
    let n = s.len();
    let off = s.offsets();
    // per step, per block: min eig of (cdossp - kalman) / ||P_kal||
    let gaps: Option<Vec<Vec<f64>>> = (which.len() == 2).then(|| {
        traces[0]
            .iter()
            .zip(&traces[1])
            .map(|(c, k)| {
                let scale = linalg::norm2(&k.p).max(f64::MIN_POSITIVE);
                (0..n)
                    .map(|i| linalg::min_eigenvalue(&(c.block(off, i, i) - k.block(off, i, i))) / scale)
                    .collect()
            })
            .collect()
    });
    if let Some(path) = &args.csv {
        let mut header = vec!["t".to_string()];
        header.extend(which.iter().map(|w| estimate::trace_csv_header(&format!("{w}_"), n)));
        if gaps.is_some() {
            header.extend((1..=n).map(|i| format!("gap_min_eig_{i}")));
        }
        let mut csv = header.join(",") + "\n";
        for t in 0..=args.steps {
            let mut cols = vec![t.to_string()];
            cols.extend(traces.iter().map(|tr| estimate::trace_csv_row(&tr[t], off, n)));
            if let Some(g) = &gaps {
                cols.extend(g[t].iter().map(|v| format!("{v:.12e}")));
            }
            csv.push_str(&cols.join(","));
            csv.push('\n');
        }
        std::fs::write(path, csv).map_err(|e| input_error(format!("cannot write {}: {e}", path.display())))?;
    }
    let mut finals = Vec::new();
    for (w, tr) in which.iter().zip(&traces) {
        let last = tr.last().unwrap();
        let _ = writeln!(text, "{w}: P({}) with trace {:.12e}", last.t, last.p.trace());
        text.push_str(&report::matrix_text(&last.p, "  "));
        finals.push(json!({ "estimator": w, "t": last.t, "p": rows(&last.p) }));
    }
    let mut gap_summary = Value::Null;
    if let Some(g) = &gaps {
        let worst = g.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let psd = worst >= -PSD_SLACK;
        let _ = writeln!(
            text,
            "diagonal gaps P_ii^cdossp - P_ii^kalman: min eigenvalue / ||P^kalman|| = {worst:.3e} over all t and i ({})",
            if psd { "all PSD" } else { "NOT PSD" }
        );
        gap_summary = json!({ "min_relative_eigenvalue": worst, "all_psd": psd });
    }
    Ok(Body {
        code: EXIT_OK,
        options,
        result: json!({ "final": finals, "gaps": gap_summary }),
        text,
    })
}

fn equivalence_cmd(ctx: &Context, args: &EquivalenceArgs) -> Result<Body, Failure> {
    let s = setup(ctx, &args.common)?;
    let p0 = CovarianceState::new(parse_p0(&args.p0, s.states())?);
    let eq = equivalence_check_steady(&s, &p0, &ctx.tol)?;
    let mut text = format!("verdict: {:?}\n{}\n", eq.verdict, eq.detail);
    let _ = writeln!(
        text,
        "Kalman fixed point: {:?} after {} iterations",
        eq.kalman.status, eq.kalman.iters
    );
    for r in &eq.residuals {
        let _ = writeln!(
            text,
            "  block {}: residual {:.3e} (worst j = {}) {}",
            r.i + 1,
            r.residual,
            r.worst_j.map_or("-".to_string(), |j| (j + 1).to_string()),
            if r.holds { "holds" } else { "fails" }
        );
    }
    if let Some(c) = &eq.cdossp {
        let _ = writeln!(
            text,
            "distributed recursion from P*: {:?} after {} iterations; min eig of P_ii - P*_ii = {:.3e}",
            c.status,
            c.iters,
            eq.min_dominance_eig.unwrap_or(f64::NAN)
        );
    }
    let code = match eq.verdict {
        SteadyVerdict::Equivalent => EXIT_OK,
        SteadyVerdict::NotEquivalent => EXIT_FAILS,
        SteadyVerdict::HypothesisUnmet => EXIT_INDETERMINATE,
    };
    let worst = eq
        .residuals
        .iter()
        .max_by(|a, b| a.residual.total_cmp(&b.residual))
        .map(|r| json!({ "i": r.i + 1, "j": r.worst_j.map(|j| j + 1), "residual": r.residual }));
    let result = json!({
        "verdict": eq.verdict,
        "detail": eq.detail,
        "kalman_status": eq.kalman.status,
        "kalman_iters": eq.kalman.iters,
        "p_star": rows(&eq.kalman.p.p),
        "residuals": eq.residuals.iter().map(|r| json!({
            "i": r.i + 1,
            "worst_j": r.worst_j.map(|j| j + 1),
            "residual": r.residual,
            "holds": r.holds,
        })).collect::<Vec<_>>(),
        "worst": worst,
        "cdossp_status": eq.cdossp.as_ref().map(|c| c.status),
        "cdossp_steady": eq.cdossp.as_ref().map(|c| rows(&c.p.p)),
        "drift_from_kalman": eq.drift_from_kalman,
        "min_dominance_eig": eq.min_dominance_eig,
    });
    Ok(Body {
        code,
        options: json!({ "p0": args.p0 }),
        result,
        text,
    })
}

fn simulate_cmd(ctx: &mut Context, args: &SimulateArgs) -> Result<Body, Failure> {
    let s = setup(ctx, &args.common)?;
    let p0 = parse_p0(&args.p0, s.states())?;
    if args.trials == 0 || args.horizon == 0 {
        return Err(input_error("--trials and --horizon must be at least 1"));
    }
    let config = SimConfig {
        horizon: args.horizon,
        trials: args.trials,
        seed: args.seed,
        p0: Some(p0),
        noise_scale: 1.0,
        exec: ctx.exec,
    };
    let r = run_estimators(&s, &config)?;
    if let Some(path) = &args.csv {
        std::fs::write(path, r.csv()).map_err(|e| input_error(format!("cannot write {}: {e}", path.display())))?;
    }
    let last = r.last();
    let mut text = format!(
        "{} trials, horizon {}, seed {}\nat t = {}: empirical vs analytic Frobenius-relative gap cdossp {:.4} kalman {:.4}\n",
        r.trials,
        args.horizon,
        r.seed,
        last.t,
        last.rel_gap_cdossp(),
        last.rel_gap_kalman()
    );
    let _ = writeln!(
        text,
        "mean error norm: cdossp {:.3e}, kalman {:.3e}",
        last.mean_error_cdossp.norm(),
        last.mean_error_kalman.norm()
    );
    for i in 0..s.len() {
        let (c, k) = (r.rms_cdossp[i], r.rms_kalman[i]);
        let _ = writeln!(
            text,
            "  subsystem {}: RMS error cdossp {c:.6e} kalman {k:.6e} (cdossp - kalman {:+.3e})",
            i + 1,
            c - k
        );
    }
    let result = json!({
        "t": last.t,
        "rel_gap_cdossp": last.rel_gap_cdossp(),
        "rel_gap_kalman": last.rel_gap_kalman(),
        "mean_error_norm_cdossp": last.mean_error_cdossp.norm(),
        "mean_error_norm_kalman": last.mean_error_kalman.norm(),
        "rms_cdossp": r.rms_cdossp,
        "rms_kalman": r.rms_kalman,
        "empirical_cdossp": rows(&last.empirical_cdossp),
        "empirical_kalman": rows(&last.empirical_kalman),
        "analytic_cdossp": rows(&last.analytic_cdossp),
        "analytic_kalman": rows(&last.analytic_kalman),
    });
    Ok(Body {
        code: EXIT_OK,
        options: json!({ "trials": args.trials, "horizon": args.horizon, "seed": args.seed, "p0": args.p0 }),
        result,
        text,
    })
}
