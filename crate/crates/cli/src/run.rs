//! Experiment orchestration. Every experiment turns a validated config into
//! named CSV artifacts plus a list of pass/fail checks; [`run_experiment`]
//! writes them, then the summary, then the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};
use superito::calculus::{
    ito_terms_functional, ito_terms_state, mp_replicate, representation_residual, residual_ratio, summarize_mp,
    AssemblyOptions, ItoReport, RepresentationReport,
};
use superito::functionals::{
    constant_laplace_oracle, mean_laplace_functional, solve_log_laplace, CylindricalPath,
    CylindricalState, ExpMartingale, Functional, LaplaceEstimate, Product, StateFunctional, StateSlice,
};
use superito::pathspace::{dyadic_approximation, path_distance, prestop_identity_holds, stop, ConvergenceRow};
use superito::simulator::{initial_measure, map_replicates, map_total_masses, simulate_replicate};
use superito::stats::{proportion, rms, Summary};
use superito::{feller, FourierField, SimParams};

use crate::config::{ExperimentConfig, ExperimentKind, Family, FunctionalConfig};
use crate::fieldspec::parse_field;
use crate::manifest::{self, Manifest};
use crate::CliError;

pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_MARKER: &str = ".failed";

/// One pass/fail comparison. `bound` is the admissible `|value − target|`
/// unless `kind` says otherwise.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub kind: &'static str,
    pub value: f64,
    pub target: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    fn within(name: impl Into<String>, value: f64, target: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            kind: "abs-diff",
            value,
            target,
            bound,
            pass: (value - target).abs() <= bound,
        }
    }

    fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            kind: "below",
            value,
            target: 0.0,
            bound,
            pass: value < bound,
        }
    }

    fn holds(name: impl Into<String>, ok: bool) -> Self {
        Check {
            name: name.into(),
            kind: "holds",
            value: if ok { 1.0 } else { 0.0 },
            target: 1.0,
            bound: 0.0,
            pass: ok,
        }
    }
}

/// In-memory result of an experiment, before anything touches the disk.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub experiment: ExperimentKind,
    pub checks: Vec<Check>,
    pub details: Value,
    /// `(file name, contents)` in write order.
    pub artifacts: Vec<(String, String)>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summary_json(&self) -> String {
        let v = json!({
            "experiment": self.experiment.label(),
            "pass": self.passed(),
            "checks": self.checks,
            "details": self.details,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// Files written by a run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub outcome: Outcome,
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.outcome.passed()
    }
}

fn core_err(e: superito::Error) -> CliError {
    match e {
        superito::Error::NotAMartingaleFunctional(_)
        | superito::Error::InvalidParams(_)
        | superito::Error::NegativeInput(_) => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn options(cfg: &ExperimentConfig) -> AssemblyOptions<f64> {
    AssemblyOptions::default()
        .with_projection_modes(cfg.assembly.projection_modes)
        .with_numeric_fallback(cfg.assembly.numeric_fallback)
}

fn exp_martingale(cfg: &ExperimentConfig, phi: &FourierField<f64>) -> Result<ExpMartingale<f64>, CliError> {
    let sol = solve_log_laplace(phi, cfg.sim.horizon, cfg.sim.c, cfg.solver.steps, cfg.solver.modes).map_err(core_err)?;
    Ok(ExpMartingale::new(Arc::new(sol)))
}

/// The configured functional as a function of the current measure.
pub fn build_state_functional(cfg: &ExperimentConfig) -> Result<Arc<dyn StateFunctional<f64>>, CliError> {
    let f = cfg.functional();
    let phi = parse_field(&f.phi)?;
    Ok(match f.family {
        Family::Linear => Arc::new(CylindricalState::linear(phi)),
        Family::NegExp => Arc::new(CylindricalState::neg_exp(phi)),
        Family::TimeWeighted => Arc::new(CylindricalState::time_weighted(phi)),
        Family::ExpMartingale => Arc::new(exp_martingale(cfg, &phi)?),
        other => return Err(CliError::Config(format!("{other:?} is not a state functional"))),
    })
}

/// The configured functional as a path functional.
pub fn build_functional(cfg: &ExperimentConfig) -> Result<Arc<dyn Functional<f64>>, CliError> {
    let f: FunctionalConfig = cfg.functional();
    let phi = parse_field(&f.phi)?;
    let psi = parse_field(&f.psi)?;
    Ok(match f.family {
        Family::Linear => Arc::new(StateSlice(CylindricalState::linear(phi))),
        Family::NegExp => Arc::new(StateSlice(CylindricalState::neg_exp(phi))),
        Family::TimeWeighted => Arc::new(StateSlice(CylindricalState::time_weighted(phi))),
        Family::ExpMartingale => Arc::new(StateSlice(exp_martingale(cfg, &phi)?)),
        Family::Product => Arc::new(CylindricalPath::new(Product, phi, psi)),
        Family::TimeIntegral => Arc::new(CylindricalPath::time_integral(psi)),
    })
}

fn csv_line(out: &mut String, fields: &[&dyn std::fmt::Display]) {
    let line: Vec<String> = fields.iter().map(|f| f.to_string()).collect();
    out.push_str(&line.join(","));
    out.push('\n');
}

/// Field specs may contain commas (`coeffs:`), so they are quoted per RFC 4180.
fn quoted(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn simulate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.sim.params();
    let masses = map_total_masses(&params, cfg.replicates).map_err(core_err)?;
    let times: Vec<f64> = (0..=params.steps()).map(|k| k as f64 * params.dt).collect();
    let mut csv = String::from("replicate,time,mass\n");
    for (r, m) in masses.iter().enumerate() {
        for (t, v) in times.iter().zip(m) {
            csv_line(&mut csv, &[&r, t, v]);
        }
    }
    let mut artifacts = vec![("masses.csv".to_string(), csv)];
    for r in 0..cfg.path_csvs.min(cfg.replicates) {
        let path = simulate_replicate(&params, r as u64).map_err(core_err)?;
        artifacts.push((format!("path_{r}.csv"), path.to_csv()));
    }
    let finals: Vec<f64> = masses.iter().map(|m| *m.last().unwrap()).collect();
    let extinct: Vec<bool> = finals.iter().map(|m| *m == 0.0).collect();
    Ok(Outcome {
        experiment: cfg.experiment,
        checks: Vec::new(),
        details: json!({
            "replicates": cfg.replicates,
            "mean_final_mass": Summary::of(&finals).mean,
            "extinct_fraction": proportion(&extinct).mean,
        }),
        artifacts,
    })
}

fn mp(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let fields = cfg.mp_fields()?;
    let params = cfg.sim.params();
    let rows = map_replicates(&params, cfg.replicates, |path| {
        fields.iter().map(|(_, phi)| mp_replicate(&path, phi)).collect::<superito::Result<Vec<_>>>()
    })
    .map_err(core_err)?;
    let th = cfg.thresholds.core();
    let mut csv = String::from("replicate,phi,martingale,qv_empirical,qv_predicted\n");
    for (r, row) in rows.iter().enumerate() {
        for ((name, _), (m, qe, qp)) in fields.iter().zip(row) {
            csv_line(&mut csv, &[&r, &quoted(name), m, qe, qp]);
        }
    }
    let mut checks = Vec::new();
    let mut details = Vec::new();
    for (j, (name, _)) in fields.iter().enumerate() {
        let s = summarize_mp(rows.iter().map(|row| row[j]).collect(), &th);
        checks.push(Check::within(
            format!("mp[{name}].mean"),
            s.mean_martingale,
            0.0,
            th.se_multiple * s.se_martingale,
        ));
        if let Some(ratio) = s.qv_ratio {
            checks.push(Check::within(format!("mp[{name}].qv_ratio"), ratio, 1.0, th.qv_tolerance));
        }
        let isometry = s.qv_ratio.map(|_| {
            let m: Vec<f64> = s.per_replicate.iter().map(|r| r.0).collect();
            Summary::of(&m).variance() / s.mean_qv_predicted
        });
        details.push(json!({
            "phi": name,
            "mean_martingale": s.mean_martingale,
            "se_martingale": s.se_martingale,
            "mean_qv_empirical": s.mean_qv_empirical,
            "mean_qv_predicted": s.mean_qv_predicted,
            "qv_ratio": s.qv_ratio,
            "isometry_ratio": isometry,
        }));
    }
    Ok(Outcome {
        experiment: cfg.experiment,
        checks,
        details: json!({ "replicates": cfg.replicates, "test_functions": details }),
        artifacts: vec![("replicates.csv".into(), csv)],
    })
}

/// Relative residuals at or below this count as exact (linear functionals).
const EXACT_RATIO: f64 = 1e-10;

fn ito(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let opts = options(cfg);
    let t = cfg.eval_time();
    let state = cfg.experiment == ExperimentKind::ItoState;
    let family = cfg.functional().family;
    let (sf, pf) = if state {
        (Some(build_state_functional(cfg)?), None)
    } else {
        (None, Some(build_functional(cfg)?))
    };
    let th = cfg.thresholds;
    let mut csv = String::from(ItoReport::<f64>::CSV_HEADER);
    csv.push('\n');
    let mut checks = Vec::new();
    let mut per_dt = Vec::new();
    let mut ratios = Vec::new();
    for dt in cfg.dts() {
        let params = cfg.sim.params_at(dt);
        let reports = map_replicates(&params, cfg.replicates, |path| match (&sf, &pf) {
            (Some(f), _) => ito_terms_state(f.as_ref(), &path, t, &opts),
            (_, Some(f)) => ito_terms_functional(f.as_ref(), &path, t, &opts),
            _ => unreachable!(),
        })
        .map_err(core_err)?;
        let lhs: Vec<f64> = reports.iter().map(|r| r.lhs).collect();
        let rms_lhs = rms(&lhs);
        for r in &reports {
            csv.push_str(&r.to_csv_row(rms_lhs));
            csv.push('\n');
        }
        let ratio = residual_ratio(&reports);
        ratios.push(ratio);
        checks.push(Check::below(format!("ito[dt={dt}].residual_ratio"), ratio, th.residual_ratio));
        let surviving: Vec<ItoReport<f64>> = reports.iter().filter(|r| !r.extinct_before_t).cloned().collect();
        let mut entry = json!({
            "dt": dt,
            "residual_ratio": ratio,
            "rms_lhs": rms_lhs,
            "extinct_before_t": reports.len() - surviving.len(),
            "residual_ratio_surviving": if surviving.is_empty() { None } else { Some(residual_ratio(&surviving)) },
            "numeric_fallback": reports.iter().any(|r| r.numeric_fallback),
        });
        if family == Family::ExpMartingale {
            let worst = reports.iter().map(|r| r.drift_ratio()).fold(0.0, f64::max);
            checks.push(Check::below(format!("ito[dt={dt}].max_drift_ratio"), worst, th.drift_ratio));
            entry["max_drift_ratio"] = json!(worst);
        }
        per_dt.push(entry);
    }
    if ratios.len() > 1 {
        let exact = ratios.iter().all(|r| *r <= EXACT_RATIO);
        let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
        checks.push(Check::holds("ito.refinement_decreases", exact || decreasing));
    }
    Ok(Outcome {
        experiment: cfg.experiment,
        checks,
        details: json!({
            "functional": cfg.functional(),
            "t": t,
            "replicates": cfg.replicates,
            "levels": per_dt,
        }),
        artifacts: vec![("replicates.csv".into(), csv)],
    })
}

/// `E F(T, X_T)` for the exp martingale: the Feller closed form when `φ` is
/// constant, otherwise `F(0, X_0)`.
fn exp_martingale_oracle(cfg: &ExperimentConfig, params: &SimParams<f64>, phi: &FourierField<f64>) -> Result<f64, CliError> {
    if phi.is_constant() {
        return Ok(constant_laplace_oracle(phi.a0(), params));
    }
    let f = exp_martingale(cfg, phi)?;
    Ok(f.eval(0.0, &initial_measure(params)))
}

fn representation(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let opts = options(cfg);
    let t = cfg.eval_time();
    let f = build_functional(cfg)?;
    let params = cfg.sim.params();
    let reports: Vec<RepresentationReport<f64>> =
        map_replicates(&params, cfg.replicates, |path| representation_residual(f.as_ref(), &path, t, &opts))
            .map_err(core_err)?;
    let th = cfg.thresholds;
    let res: Vec<f64> = reports.iter().map(|r| r.residual).collect();
    let lhs: Vec<f64> = reports.iter().map(|r| r.lhs).collect();
    let ends: Vec<f64> = reports.iter().map(|r| r.value_end).collect();
    let s = Summary::of(&res);
    let e = Summary::of(&ends);
    let phi = parse_field(&cfg.functional().phi)?;
    let oracle = exp_martingale_oracle(cfg, &params, &phi)?;
    let mut csv = String::from("replicate,functional,lhs,integral,residual,value_end\n");
    for r in &reports {
        csv_line(&mut csv, &[&r.replicate, &f.name(), &r.lhs, &r.integral, &r.residual, &r.value_end]);
    }
    let checks = vec![
        Check::within("representation.mean_residual", s.mean, 0.0, th.se_multiple * s.se),
        Check::below("representation.rms_ratio", rms(&res) / rms(&lhs), th.residual_ratio),
        Check::within("representation.laplace_crosscheck", e.mean, oracle, th.se_multiple * e.se),
    ];
    Ok(Outcome {
        experiment: cfg.experiment,
        checks,
        details: json!({
            "functional": cfg.functional(),
            "t": t,
            "replicates": cfg.replicates,
            "mean_residual": s.mean,
            "se_residual": s.se,
            "rms_residual": rms(&res),
            "rms_lhs": rms(&lhs),
            "mean_value_end": e.mean,
            "se_value_end": e.se,
            "oracle_value_end": oracle,
        }),
        artifacts: vec![("replicates.csv".into(), csv)],
    })
}

fn dyadic(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.sim.params();
    let t = cfg.eval_time();
    let levels = cfg.levels.clone();
    let rows = map_replicates(&params, cfg.replicates, |path| {
        let traj = path.trajectory();
        let base = stop(traj, t)?;
        let mut out = Vec::with_capacity(levels.len());
        for &n in &levels {
            let app = dyadic_approximation(traj, t, n)?;
            let d = path_distance(&base, &stop(&app, t)?);
            out.push((d, prestop_identity_holds(traj, t, n)?));
        }
        Ok(out)
    })
    .map_err(core_err)?;
    let mut csv = String::from("replicate,n,distance,prestop_identity\n");
    for (r, row) in rows.iter().enumerate() {
        for (n, (d, ok)) in levels.iter().zip(row) {
            csv_line(&mut csv, &[&r, n, d, ok]);
        }
    }
    let table: Vec<ConvergenceRow<f64>> = levels
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let d: Vec<f64> = rows.iter().map(|row| row[j].0).collect();
            ConvergenceRow {
                n,
                mean_distance: Summary::of(&d).mean,
                max_distance: d.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect();
    let mut conv = format!("{}\n", ConvergenceRow::<f64>::CSV_HEADER);
    for row in &table {
        let _ = writeln!(conv, "{}", row.to_csv_row());
    }
    let means: Vec<f64> = table.iter().map(|r| r.mean_distance).collect();
    let identity = rows.iter().all(|row| row.iter().all(|(_, ok)| *ok));
    let mut checks = vec![
        Check::holds("dyadic.non_increasing", means.windows(2).all(|w| w[1] <= w[0])),
        Check::holds("dyadic.prestop_identity", identity),
    ];
    if means.len() > 1 {
        checks.push(Check::below("dyadic.last_over_first", means[means.len() - 1] / means[0], 0.5));
    }
    Ok(Outcome {
        experiment: cfg.experiment,
        checks,
        details: json!({
            "t": t,
            "replicates": cfg.replicates,
            "levels": levels,
            "mean_distance": means,
        }),
        artifacts: vec![("replicates.csv".into(), csv), ("convergence.csv".into(), conv)],
    })
}

/// Monte Carlo Laplace functional and its oracle value.
pub fn laplace_oracle(cfg: &ExperimentConfig) -> Result<(LaplaceEstimate, f64), CliError> {
    let phi = parse_field(&cfg.functional().phi)?;
    let params = cfg.sim.params();
    let est = mean_laplace_functional(&params, &phi, cfg.replicates).map_err(core_err)?;
    Ok((est, exp_martingale_oracle(cfg, &params, &phi)?))
}

fn laplace(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (est, oracle) = laplace_oracle(cfg)?;
    let mut csv = String::from("replicate,value\n");
    for (r, v) in est.values.iter().enumerate() {
        csv_line(&mut csv, &[&r, v]);
    }
    Ok(Outcome {
        experiment: cfg.experiment,
        checks: vec![Check::within(
            "laplace.mean",
            est.mean,
            oracle,
            cfg.thresholds.se_multiple * est.se,
        )],
        details: json!({
            "phi": cfg.functional().phi,
            "replicates": cfg.replicates,
            "mean": est.mean,
            "se": est.se,
            "oracle": oracle,
        }),
        artifacts: vec![("replicates.csv".into(), csv)],
    })
}

fn feller_oracle(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.sim.params();
    let (c, t, m) = (params.c, params.horizon, params.initial_mass);
    let finals: Vec<f64> = map_total_masses(&params, cfg.replicates)
        .map_err(core_err)?
        .into_iter()
        .map(|v| *v.last().unwrap())
        .collect();
    let extinct: Vec<bool> = finals.iter().map(|z| *z == 0.0).collect();
    let s = Summary::of(&finals);
    let p = proportion(&extinct);
    let var_target = feller::variance(c, t, m);
    let ext_target = feller::extinction_probability(c, t, m);
    let euler = feller::euler_terminal_values(m, c, t, params.dt, cfg.replicates, params.seed ^ 0x5eed_f3113)
        .map_err(core_err)?;
    let euler_s = Summary::of(&euler);
    let euler_p = proportion(&euler.iter().map(|z| *z == 0.0).collect::<Vec<_>>());
    let th = cfg.thresholds;
    let mut csv = String::from("replicate,terminal_mass,extinct\n");
    for (r, (z, e)) in finals.iter().zip(&extinct).enumerate() {
        csv_line(&mut csv, &[&r, z, e]);
    }
    let checks = vec![
        Check::within("feller.mean", s.mean, m, th.se_multiple * s.se),
        Check::within("feller.variance", s.variance(), var_target, th.variance_tolerance * var_target),
        Check::within("feller.extinction", p.mean, ext_target, th.se_multiple * p.se),
    ];
    Ok(Outcome {
        experiment: cfg.experiment,
        checks,
        details: json!({
            "replicates": cfg.replicates,
            "mean": s.mean,
            "variance": s.variance(),
            "variance_oracle": var_target,
            "extinction_frequency": p.mean,
            "extinction_se": p.se,
            "extinction_oracle": ext_target,
            "euler_mean": euler_s.mean,
            "euler_variance": euler_s.variance(),
            "euler_extinction_frequency": euler_p.mean,
        }),
        artifacts: vec![("replicates.csv".into(), csv)],
    })
}

/// Validates `cfg` and computes the experiment without writing anything.
pub fn compute(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::Simulate => simulate(cfg),
        ExperimentKind::Mp => mp(cfg),
        ExperimentKind::ItoState | ExperimentKind::ItoFunctional => ito(cfg),
        ExperimentKind::Representation => representation(cfg),
        ExperimentKind::DyadicConvergence => dyadic(cfg),
        ExperimentKind::LaplaceOracle => laplace(cfg),
        ExperimentKind::FellerOracle => feller_oracle(cfg),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), contents).map_err(|e| CliError::Io(format!("{}: {e}", dir.join(name).display())))
}

fn mark_failed(dir: &Path, reason: &str) {
    let _ = fs::write(dir.join(FAILED_MARKER), format!("{reason}\n"));
}

/// Runs the experiment and writes its artifacts, `summary.json` and
/// `manifest.json` into the output directory. With `check_manifest`, the
/// hashes of the new files are compared against the manifest already there.
pub fn run_experiment(cfg: &ExperimentConfig, check_manifest: bool) -> Result<RunReport, CliError> {
    cfg.validate()?;
    let dir = cfg.resolved_output_dir();
    let previous = if check_manifest {
        Some(Manifest::read(&dir.join(MANIFEST_FILE))?)
    } else {
        None
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let outcome = match compute(cfg) {
        Ok(o) => o,
        Err(e) => {
            if !matches!(e, CliError::Config(_)) {
                mark_failed(&dir, &e.to_string());
            }
            return Err(e);
        }
    };
    let summary = outcome.summary_json();
    let mut files: Vec<(String, &[u8])> = outcome
        .artifacts
        .iter()
        .map(|(name, contents)| (name.clone(), contents.as_bytes()))
        .collect();
    files.push((SUMMARY_FILE.to_string(), summary.as_bytes()));
    let manifest = Manifest::new(cfg, &files);
    if let Some(prev) = previous {
        // compared before writing so the earlier outputs stay intact
        let diffs = manifest::compare(&prev, &manifest);
        if !diffs.is_empty() {
            let reason = format!("manifest mismatch: {}", diffs.join(", "));
            mark_failed(&dir, &reason);
            return Err(CliError::ManifestMismatch(reason));
        }
    }
    for (name, contents) in &outcome.artifacts {
        write(&dir, name, contents)?;
    }
    write(&dir, SUMMARY_FILE, &summary)?;
    write(&dir, MANIFEST_FILE, &manifest.to_json())?;
    if outcome.passed() {
        let _ = fs::remove_file(dir.join(FAILED_MARKER));
    } else {
        let failing: Vec<&str> = outcome.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        mark_failed(&dir, &format!("failed checks: {}", failing.join(", ")));
    }
    Ok(RunReport { outcome, dir, manifest })
}
