//! Experiment orchestration: oracle, certification, solver runs, sweeps and the
//! files they leave behind.
//!
//! Every artifact carries the problem identity hash. `trace.csv` starts with a
//! `# problem_hash: <hex>` comment line followed by the CSV header.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{AlgorithmConfig, ExperimentConfig, InitMode, StepSize};

use crate::analysis::{self, SpectralCertificate, StepSizeCertificate};
use crate::error::{Error, Result};
use crate::linalg;
use crate::multipliers::{self, MoMConfig};
use crate::oracle::{self, OracleReport, OracleSolution};
use crate::problem::{KktResidual, LiftedProblem, MultiplierState};
use crate::solvers::{self, Algorithm, FirstOrderConfig, Reference, Status, TraceRecord};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "LAGRANGE_NET_THREADS";

/// Errors below this are treated as exact convergence when fitting rates.
pub const NOISE_FLOOR: f64 = 1e-13;

pub const TRACE_HEADER: [&str; 9] = [
    "k",
    "agent",
    "err_x",
    "err_mu",
    "dist_lambda",
    "kkt_stat",
    "kkt_h",
    "kkt_cons",
    "objective",
];
pub const OUTER_HEADER: [&str; 3] = ["c_k", "eps_k", "inner_iters"];
pub const SWEEP_HEADER: [&str; 6] = ["parameter", "value", "status", "final_err_x", "contraction", "r_squared"];

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Usage(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

pub fn status_exit_code(status: Status) -> i32 {
    match status {
        Status::Converged => EXIT_CONVERGED,
        _ => EXIT_NOT_CONVERGED,
    }
}

/// Rayon pool honoring [`THREADS_ENV`].
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let threads: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| Error::Usage(format!("cannot build thread pool: {e}")))
}

/// Oracle solution and lifted multipliers for a configured problem.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub solution: OracleSolution,
    pub reference: Reference,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (solution, reference) = oracle::solve_reference(&cfg.problem, &cfg.oracle_x_init, &cfg.oracle)?;
    Ok(Prepared { solution, reference })
}

pub fn oracle_report(cfg: &ExperimentConfig, prepared: &Prepared) -> OracleReport {
    OracleReport::new(&cfg.problem, &prepared.solution, &prepared.reference)
}

/// JSON body of `certify` and `certificate.json`.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub problem: String,
    pub problem_hash: String,
    pub algorithm: Algorithm,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub c: f64,
    #[serde(flatten)]
    pub spectral: SpectralCertificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<StepSizeCertificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_e: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub admissible: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl CertificateReport {
    /// Overall pass: spectral predicate holds and nothing failed.
    pub fn passed(&self) -> bool {
        self.spectral.verdict && self.failure.is_none()
    }
}

/// Certificate for the configured algorithm; A1/A2 get `B` at the run step, A3 gets the multiplier rate at `c_max`.
pub fn certify(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<CertificateReport> {
    let p = &cfg.problem;
    let reference = &prepared.reference;
    let c_bar = analysis::find_cbar(p, reference).ok();
    match &cfg.algorithm {
        AlgorithmConfig::FirstOrder { algorithm, alpha, c, .. } => {
            let c = if *algorithm == Algorithm::A1 { 0.0 } else { *c };
            let step = analysis::certify_step_size(p, reference, c, 1.0);
            let (step_size, mut failure) = match step {
                Ok(s) => (Some(s), None),
                Err(Error::CertificationFailure(m)) => (None, Some(m)),
                Err(e) => return Err(e),
            };
            let alpha = match (alpha, &step_size) {
                (StepSize::Fixed(a), _) => *a,
                (StepSize::Certified, Some(s)) => s.alpha_recommended,
                // no certified step exists; report the spectrum at a nominal step
                (StepSize::Certified, None) => 0.1,
            };
            let mut spectral = analysis::iteration_matrix_b(p, reference, alpha, c)?;
            let dim = spectral.entries.nrows();
            let rho = linalg::spectral_radius(&(nalgebra::DMatrix::identity(dim, dim) - &spectral.entries * alpha))?;
            spectral.alpha_bound = step_size.as_ref().map(|s| s.alpha_bar);
            spectral.c_bar = c_bar;
            spectral.rate_bound = Some(rho);
            if failure.is_none() && rho >= 1.0 {
                failure = Some(format!("step size {alpha} is unstable (spectral radius {rho})"));
            }
            Ok(CertificateReport {
                problem: p.name().into(),
                problem_hash: p.identity_hash(),
                algorithm: *algorithm,
                alpha: Some(alpha),
                c,
                spectral,
                step_size,
                effective_e: None,
                admissible: None,
                failure,
            })
        }
        AlgorithmConfig::Multipliers(mom) => {
            let rate = analysis::rate_bound_mom(p, reference, mom.c_max)?;
            let mut spectral = rate.spectral();
            spectral.c_bar = c_bar;
            let failure = match c_bar {
                Some(cb) if mom.c0 < cb => Some(format!("c0 = {} is below the penalty threshold {cb}", mom.c0)),
                None => Some("no penalty threshold could be certified".into()),
                _ => None,
            };
            Ok(CertificateReport {
                problem: p.name().into(),
                problem_hash: p.identity_hash(),
                algorithm: Algorithm::A3,
                alpha: None,
                c: mom.c_max,
                spectral,
                step_size: None,
                effective_e: Some(rate.effective_e.clone()),
                admissible: Some(rate.admissible),
                failure,
            })
        }
    }
}

/// Starting iterate per the `init` section.
pub fn initial_state(cfg: &ExperimentConfig, prepared: &Prepared) -> MultiplierState {
    let p = &cfg.problem;
    match &cfg.init {
        InitMode::Zeros => p.zero_state(),
        InitMode::Explicit { x, mu, lambda } => MultiplierState {
            x: DVector::from_column_slice(x),
            mu: DVector::from_column_slice(mu),
            lambda: DVector::from_column_slice(lambda),
        },
        InitMode::OraclePerturb { radius } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut state = analysis::stationary_state(p, &prepared.reference);
            let mut jitter = |v: &mut DVector<f64>| {
                for e in v.iter_mut() {
                    *e += radius * rng.gen_range(-1.0..=1.0);
                }
            };
            jitter(&mut state.x);
            jitter(&mut state.mu);
            jitter(&mut state.lambda);
            state
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub problem: String,
    pub problem_hash: String,
    pub algorithm: Algorithm,
    pub status: Status,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_iterations: Option<usize>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    pub final_err_x: f64,
    pub final_err_mu: f64,
    pub final_dist_lambda: f64,
    pub final_kkt: KktResidual,
    pub final_objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
    pub lambda_projection_drift: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: RunSummary,
    pub trace: Vec<TraceRecord>,
    pub certificate: Option<CertificateReport>,
    pub final_state: MultiplierState,
    pub prepared: Prepared,
}

impl ExperimentResult {
    pub fn exit_code(&self) -> i32 {
        status_exit_code(self.summary.status)
    }
}

/// Errors used for rate fitting: joint error for A1/A2, multiplier error for A3.
fn rate_errors(algorithm: Algorithm, trace: &[TraceRecord]) -> Vec<f64> {
    trace
        .iter()
        .map(|r| match algorithm {
            Algorithm::A3 => r.multiplier_error(),
            _ => r.joint_error(),
        })
        .map(|e| match e {
            Some(v) if v > NOISE_FLOOR => v,
            _ => 0.0,
        })
        .collect()
}

fn fit_rate(algorithm: Algorithm, trace: &[TraceRecord]) -> Option<analysis::RateFit> {
    let errors = rate_errors(algorithm, trace);
    let fit = match algorithm {
        Algorithm::A3 => analysis::fit_log_linear(&errors, 1.0),
        _ => analysis::estimate_linear_rate(&errors, analysis::DEFAULT_TAIL_FRACTION),
    };
    fit.ok()
}

/// Runs the configured experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let p = &cfg.problem;
    let prepared = prepare(cfg)?;
    let needs_certificate = matches!(
        cfg.algorithm,
        AlgorithmConfig::FirstOrder {
            alpha: StepSize::Certified,
            ..
        }
    );
    let certificate = if cfg.certify || needs_certificate {
        match certify(cfg, &prepared) {
            Ok(c) => Some(c),
            Err(Error::MissingCapability(m)) if !needs_certificate => {
                log::warn!("skipping certificate: {m}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let init = initial_state(cfg, &prepared);
    let reference = &prepared.reference;
    let algorithm = cfg.algorithm.algorithm();
    let (status, iterations, inner, final_state, trace, drift, alpha, c) = match &cfg.algorithm {
        AlgorithmConfig::FirstOrder {
            algorithm,
            alpha,
            c,
            max_iter,
            tol,
        } => {
            let alpha = match alpha {
                StepSize::Fixed(a) => *a,
                StepSize::Certified => {
                    let cert = certificate.as_ref().expect("certificate computed");
                    match &cert.step_size {
                        Some(s) => s.alpha_recommended,
                        None => {
                            return Err(Error::CertificationFailure(
                                cert.failure.clone().unwrap_or_else(|| "no certified step size".into()),
                            ))
                        }
                    }
                }
            };
            let config = FirstOrderConfig {
                algorithm: *algorithm,
                alpha,
                c: *c,
                max_iter: *max_iter,
                tol: *tol,
                execution: cfg.execution,
            };
            let run = solvers::run_first_order(p, &config, &init, Some(reference))?;
            (
                run.status,
                run.iterations,
                None,
                run.final_state,
                run.trace,
                run.lambda_projection_drift,
                Some(alpha),
                Some(config.effective_c()),
            )
        }
        AlgorithmConfig::Multipliers(mom) => {
            let run = multipliers::run_a3(p, mom, &init, Some(reference))?;
            (
                run.status,
                run.outer_iterations,
                Some(run.total_inner_iterations),
                run.final_state,
                run.trace,
                run.lambda_projection_drift,
                None,
                Some(mom.c_max),
            )
        }
    };
    let last = trace.last().expect("trace has the initial record");
    let fit = fit_rate(algorithm, &trace);
    let summary = RunSummary {
        problem: p.name().into(),
        problem_hash: p.identity_hash(),
        algorithm,
        status,
        iterations,
        inner_iterations: inner,
        seed: cfg.seed,
        alpha,
        c,
        final_err_x: last.err_x_total().unwrap_or(f64::NAN),
        final_err_mu: last.err_mu.unwrap_or(f64::NAN),
        final_dist_lambda: last.dist_lambda.unwrap_or(f64::NAN),
        final_kkt: last.kkt,
        final_objective: last.objective,
        contraction: fit.map(|f| f.contraction),
        r_squared: fit.map(|f| f.r_squared),
        lambda_projection_drift: drift,
    };
    Ok(ExperimentResult {
        summary,
        trace,
        certificate,
        final_state,
        prepared,
    })
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Writes `trace.csv` (one row per iteration and agent).
pub fn write_trace<W: Write>(mut out: W, problem_hash: &str, algorithm: Algorithm, trace: &[TraceRecord], num_agents: usize) -> Result<()> {
    writeln!(out, "# problem_hash: {problem_hash}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = TRACE_HEADER.to_vec();
    if algorithm == Algorithm::A3 {
        header.extend(OUTER_HEADER);
    }
    w.write_record(&header)?;
    for r in trace {
        for agent in 0..num_agents {
            let mut row = vec![
                r.k.to_string(),
                (agent + 1).to_string(),
                opt_num(r.err_x.get(agent).copied()),
                opt_num(r.err_mu),
                opt_num(r.dist_lambda),
                num(r.kkt.stationarity),
                num(r.kkt.constraint),
                num(r.kkt.consensus),
                num(r.objective),
            ];
            if algorithm == Algorithm::A3 {
                match r.outer {
                    Some(o) => row.extend([num(o.c_k), num(o.eps_k), o.inner_iters.to_string()]),
                    None => row.extend([String::new(), String::new(), String::new()]),
                }
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Timing {
    problem_hash: String,
    wall_time_seconds: f64,
}

/// Runs the experiment and writes `trace.csv`, `summary.json`, `certificate.json`
/// (when certified) and `timing.json` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentResult> {
    let started = std::time::Instant::now();
    let result = execute(cfg)?;
    fs::create_dir_all(out_dir)?;
    let hash = cfg.problem.identity_hash();
    let file = fs::File::create(out_dir.join("trace.csv"))?;
    write_trace(std::io::BufWriter::new(file), &hash, result.summary.algorithm, &result.trace, cfg.problem.num_agents())?;
    write_json(&out_dir.join("summary.json"), &result.summary)?;
    if let Some(cert) = &result.certificate {
        write_json(&out_dir.join("certificate.json"), cert)?;
    }
    write_json(
        &out_dir.join("timing.json"),
        &Timing {
            problem_hash: hash,
            wall_time_seconds: started.elapsed().as_secs_f64(),
        },
    )?;
    log::info!(
        "{} on {}: {} after {} iterations",
        result.summary.algorithm.as_str(),
        cfg.problem.name(),
        result.summary.status.as_str(),
        result.summary.iterations
    );
    Ok(result)
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::A1 => "a1",
            Algorithm::A2 => "a2",
            Algorithm::A3 => "a3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    C,
    CMax,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::C => "c",
            SweepParam::CMax => "c_max",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "c" => Ok(SweepParam::C),
            "c_max" => Ok(SweepParam::CMax),
            other => Err(Error::Usage(format!("unknown sweep parameter `{other}` (expected alpha, c or c_max)"))),
        }
    }
}

/// Parses `0.01,0.02,0.05`.
pub fn parse_grid(raw: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::Usage(format!("bad grid value `{s}`"))))
        .collect::<Result<_>>()?;
    if grid.is_empty() {
        return Err(Error::Usage("sweep grid is empty".into()));
    }
    Ok(grid)
}

/// Copy of `cfg` with one parameter overridden.
pub fn with_parameter(cfg: &ExperimentConfig, param: SweepParam, value: f64) -> Result<ExperimentConfig> {
    let mut out = cfg.clone();
    let invalid = |reason: &str| Error::Usage(format!("cannot sweep {} on {}: {reason}", param.as_str(), cfg.algorithm.algorithm().as_str()));
    match (&mut out.algorithm, param) {
        (AlgorithmConfig::FirstOrder { alpha, .. }, SweepParam::Alpha) => *alpha = StepSize::Fixed(value),
        (AlgorithmConfig::FirstOrder { algorithm: Algorithm::A2, c, .. }, SweepParam::C) => *c = value,
        (AlgorithmConfig::Multipliers(mom), SweepParam::C) => {
            *mom = MoMConfig {
                c0: value,
                c_max: value,
                ..mom.clone()
            }
        }
        (AlgorithmConfig::Multipliers(mom), SweepParam::CMax) => {
            mom.c_max = value;
            mom.c0 = mom.c0.min(value);
        }
        _ => return Err(invalid("parameter not used by this algorithm")),
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub status: Status,
    pub final_err_x: f64,
    pub contraction: Option<f64>,
    pub r_squared: Option<f64>,
}

/// One run per grid value, in parallel; rows keep grid order. Each row writes into `out_dir/rows/NNN`.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, grid: &[f64], out_dir: &Path) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Usage("sweep grid is empty".into()));
    }
    let configs: Vec<ExperimentConfig> = grid
        .iter()
        .map(|&v| with_parameter(cfg, param, v))
        .collect::<Result<_>>()?;
    let pool = thread_pool()?;
    let rows: Vec<Result<SweepRow>> = pool.install(|| {
        configs
            .par_iter()
            .zip(grid.par_iter())
            .enumerate()
            .map(|(idx, (row_cfg, &value))| {
                let dir = out_dir.join("rows").join(format!("{idx:03}"));
                let result = run_experiment(row_cfg, &dir)?;
                Ok(SweepRow {
                    parameter: param.as_str().into(),
                    value,
                    status: result.summary.status,
                    final_err_x: result.summary.final_err_x,
                    contraction: result.summary.contraction,
                    r_squared: result.summary.r_squared,
                })
            })
            .collect()
    });
    let rows: Vec<SweepRow> = rows.into_iter().collect::<Result<_>>()?;
    fs::create_dir_all(out_dir)?;
    let mut text = Vec::new();
    writeln!(text, "# problem_hash: {}", cfg.problem.identity_hash())?;
    {
        let mut w = csv::Writer::from_writer(&mut text);
        w.write_record(SWEEP_HEADER)?;
        for r in &rows {
            w.write_record([
                r.parameter.clone(),
                num(r.value),
                r.status.as_str().into(),
                num(r.final_err_x),
                opt_num(r.contraction),
                opt_num(r.r_squared),
            ])?;
        }
        w.flush()?;
    }
    fs::write(out_dir.join("sweep.csv"), text)?;
    Ok(rows)
}

/// Iterates recorded for later comparison against an oracle.
#[derive(Debug, Clone)]
pub struct StateTrace {
    pub problem_hash: String,
    pub states: Vec<(usize, MultiplierState)>,
}

/// Error columns of a state trace against an oracle report for the same problem.
pub fn compare_to_oracle(p: &LiftedProblem, trace: &StateTrace, report: &OracleReport) -> Result<Vec<TraceRecord>> {
    let hash = p.identity_hash();
    if trace.problem_hash != hash || report.problem_hash != hash {
        return Err(Error::ArtifactMismatch(format!(
            "problem hash differs (problem {hash}, trace {}, oracle {})",
            trace.problem_hash, report.problem_hash
        )));
    }
    let reference = Reference {
        x_star: report.x_star.clone(),
        mu_star: DVector::from_column_slice(&report.mu_star),
        lambda_star: DVector::from_column_slice(&report.lambda_star),
    };
    trace
        .states
        .iter()
        .map(|(k, s)| TraceRecord::observe(p, *k, s, Some(&reference)))
        .collect()
}

/// Output directory: CLI flag, then config, then `./out`.
pub fn output_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.01, 0.02,0.05").unwrap(), vec![0.01, 0.02, 0.05]);
        assert!(matches!(parse_grid(""), Err(Error::Usage(_))));
        assert!(matches!(parse_grid("0.1,x"), Err(Error::Usage(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("a", "b")), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Oracle("x".into())), EXIT_RUNTIME);
        assert_eq!(status_exit_code(Status::Diverged), EXIT_NOT_CONVERGED);
    }
}
