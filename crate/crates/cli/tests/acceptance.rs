//! Acceptance suite: one line per criterion at the desk-scale reference
//! (N = 2000, dt = 1/512, T = 1, c = 1, m = 1, R = 200).
//!
//! Runs as a plain binary (`harness = false`) so the per-criterion lines are
//! always printed; the process fails if any criterion fails.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use superito::calculus::{
    ito_terms_functional, ito_terms_state, representation_residual, residual_ratio, AssemblyOptions, ItoReport,
};
use superito::functionals::{
    solve_log_laplace, CylindricalPath, CylindricalState, ExpMartingale, Functional, NegExp, Power, Product,
    StateSlice,
};
use superito::pathspace::{
    bundle_project, bundle_vertical_derivative, bundle_vertical_field, default_vertical_eps,
    numeric_vertical_derivative, stop_at_index,
};
use superito::simulator::{map_replicates, simulate_replicate};
use superito::stats::{rms, Summary};
use superito::{CirclePoint, FourierField, SimParams};
use superito_cli::config::{ExperimentConfig, ExperimentKind, FunctionalConfig, Family};
use superito_cli::{compute, run_experiment, Outcome};

type Verdict = Result<String, String>;

fn reference() -> SimParams<f64> {
    SimParams::new(2000, 1.0, 1.0, 1.0 / 512.0).with_seed(42)
}

/// Turns an experiment outcome into a verdict listing every check.
fn from_outcome(o: &Outcome) -> Verdict {
    let text: Vec<String> = o
        .checks
        .iter()
        .map(|c| format!("{}={:.5}{}", c.name, c.value, if c.pass { "" } else { " FAIL" }))
        .collect();
    if o.passed() {
        Ok(text.join("; "))
    } else {
        Err(text.join("; "))
    }
}

fn verdict(ok: bool, text: String) -> Verdict {
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn martingale_problem() -> Verdict {
    let cfg = ExperimentConfig::new(ExperimentKind::Mp);
    from_outcome(&compute(&cfg).map_err(|e| e.to_string())?)
}

fn feller_oracles() -> Verdict {
    // the variance estimate needs R = 2000 to resolve 15% at 3 SE
    let mut cfg = ExperimentConfig::new(ExperimentKind::FellerOracle);
    cfg.replicates = 2000;
    let o = compute(&cfg).map_err(|e| e.to_string())?;
    let d = &o.details;
    let euler_var = d["euler_variance"].as_f64().unwrap_or(f64::NAN);
    let euler_ext = d["euler_extinction_frequency"].as_f64().unwrap_or(f64::NAN);
    let target = d["extinction_oracle"].as_f64().unwrap_or(f64::NAN);
    let se = (target * (1.0 - target) / 2000.0).sqrt();
    let euler_ok = (euler_var - 1.0).abs() <= 0.15 && (euler_ext - target).abs() <= 3.0 * se;
    let base = from_outcome(&o);
    let text = format!(
        "{}; euler variance={euler_var:.4} extinction={euler_ext:.4}",
        base.as_ref().unwrap_or_else(|e| e)
    );
    verdict(base.is_ok() && euler_ok, text)
}

fn laplace_functional() -> Verdict {
    let cfg = ExperimentConfig::new(ExperimentKind::LaplaceOracle);
    from_outcome(&compute(&cfg).map_err(|e| e.to_string())?)
}

/// Reports of every Itô-type computation on one path.
struct PathReports {
    neg_exp: ItoReport<f64>,
    linear_one: ItoReport<f64>,
    linear_cos: ItoReport<f64>,
    product: ItoReport<f64>,
    time_integral: ItoReport<f64>,
    exp_mart: Option<ItoReport<f64>>,
    representation: Option<(f64, f64, f64)>,
}

struct Functionals {
    neg_exp: CylindricalState<f64>,
    linear_one: CylindricalState<f64>,
    linear_cos: CylindricalState<f64>,
    product: CylindricalPath<f64>,
    time_integral: CylindricalPath<f64>,
    exp_mart: StateSlice<ExpMartingale<f64>>,
}

impl Functionals {
    fn new() -> Self {
        let sol = solve_log_laplace(&FourierField::constant(2.0), 1.0, 1.0, 1024, 16).expect("solver");
        Functionals {
            neg_exp: CylindricalState::neg_exp(FourierField::from_parts(1.0, vec![0.5], vec![])),
            linear_one: CylindricalState::linear(FourierField::constant(1.0)),
            linear_cos: CylindricalState::linear(FourierField::cosine(1, 1.0)),
            product: CylindricalPath::new(Product, FourierField::cosine(1, 1.0), FourierField::constant(1.0)),
            time_integral: CylindricalPath::time_integral(FourierField::from_parts(0.5, vec![1.0], vec![])),
            exp_mart: StateSlice(ExpMartingale::new(Arc::new(sol))),
        }
    }

    fn run(&self, params: &SimParams<f64>, replicates: usize, with_exp: bool) -> Result<Vec<PathReports>, String> {
        let opts = AssemblyOptions::default();
        map_replicates(params, replicates, |path| {
            let representation = if with_exp {
                let r = representation_residual(&self.exp_mart, &path, 1.0, &opts)?;
                Some((r.residual, r.lhs, r.value_end))
            } else {
                None
            };
            Ok(PathReports {
                neg_exp: ito_terms_state(&self.neg_exp, &path, 1.0, &opts)?,
                linear_one: ito_terms_state(&self.linear_one, &path, 1.0, &opts)?,
                linear_cos: ito_terms_state(&self.linear_cos, &path, 1.0, &opts)?,
                product: ito_terms_functional(&self.product, &path, 1.0, &opts)?,
                time_integral: ito_terms_functional(&self.time_integral, &path, 1.0, &opts)?,
                exp_mart: if with_exp {
                    Some(ito_terms_functional(&self.exp_mart, &path, 1.0, &opts)?)
                } else {
                    None
                },
                representation,
            })
        })
        .map_err(|e| e.to_string())
    }
}

/// Shared desk-scale paths for the Itô, functional Itô and representation criteria.
struct ItoStudy {
    coarse: Vec<PathReports>,
    fine: Vec<PathReports>,
}

/// Paths used for the refinement comparison (paired seeds at both steps).
const REFINEMENT_PATHS: usize = 100;

impl ItoStudy {
    fn run() -> Result<Self, String> {
        let f = Functionals::new();
        let coarse = f.run(&reference(), 200, true)?;
        let fine = f.run(&reference().with_dt(1.0 / 2048.0), REFINEMENT_PATHS, false)?;
        Ok(ItoStudy { coarse, fine })
    }

    fn ratio(reports: &[PathReports], pick: impl Fn(&PathReports) -> &ItoReport<f64>) -> f64 {
        let r: Vec<ItoReport<f64>> = reports.iter().take(REFINEMENT_PATHS).map(|p| pick(p).clone()).collect();
        residual_ratio(&r)
    }

    fn max_abs_residual(reports: &[PathReports], pick: impl Fn(&PathReports) -> &ItoReport<f64>) -> f64 {
        reports.iter().map(|p| pick(p).residual.abs()).fold(0.0, f64::max)
    }
}

/// Machine-precision bound for residuals that vanish identically.
const EXACT: f64 = 1e-12;

fn state_ito(study: &ItoStudy) -> Verdict {
    let lin = ItoStudy::max_abs_residual(&study.coarse, |p| &p.linear_one)
        .max(ItoStudy::max_abs_residual(&study.coarse, |p| &p.linear_cos))
        .max(ItoStudy::max_abs_residual(&study.fine, |p| &p.linear_one))
        .max(ItoStudy::max_abs_residual(&study.fine, |p| &p.linear_cos));
    let coarse = ItoStudy::ratio(&study.coarse, |p| &p.neg_exp);
    let fine = ItoStudy::ratio(&study.fine, |p| &p.neg_exp);
    verdict(
        lin <= EXACT && coarse < 0.1 && fine < coarse,
        format!("linear max|residual|={lin:.2e}; exp ratio dt=1/512 {coarse:.5}, dt=1/2048 {fine:.5}"),
    )
}

fn functional_ito(study: &ItoStudy) -> Verdict {
    let horizontal = ItoStudy::max_abs_residual(&study.coarse, |p| &p.time_integral)
        .max(ItoStudy::max_abs_residual(&study.fine, |p| &p.time_integral));
    let coarse = ItoStudy::ratio(&study.coarse, |p| &p.product);
    let fine = ItoStudy::ratio(&study.fine, |p| &p.product);
    let drift = study
        .coarse
        .iter()
        .filter_map(|p| p.exp_mart.as_ref())
        .map(|r| r.drift_ratio())
        .fold(0.0, f64::max);
    verdict(
        horizontal <= EXACT && coarse < 0.1 && fine < coarse && drift < 0.05,
        format!(
            "time-integral max|residual|={horizontal:.2e}; product ratio dt=1/512 {coarse:.5}, dt=1/2048 {fine:.5}; \
             max drift ratio {drift:.2e}"
        ),
    )
}

fn representation(study: &ItoStudy) -> Verdict {
    let rows: Vec<(f64, f64, f64)> = study.coarse.iter().filter_map(|p| p.representation).collect();
    let res: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let lhs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let ends: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let s = Summary::of(&res);
    let ratio = rms(&res) / rms(&lhs);
    let e = Summary::of(&ends);
    let oracle = superito::feller::laplace_transform(2.0, 1.0, 1.0, 1.0);
    verdict(
        s.within_se(0.0, 3.0) && ratio < 0.1 && e.within_se(oracle, 3.0),
        format!(
            "mean residual {:.2e} (se {:.2e}); rms ratio {ratio:.5}; E F(T) {:.5} ± {:.5} vs {oracle:.6}",
            s.mean, s.se, e.mean, e.se
        ),
    )
}

fn derivative_consistency() -> Verdict {
    let mut rng = superito::rng::stream(2024, 0);
    let params = SimParams::new(200, 1.0, 1.0, 1.0 / 64.0).with_seed(11);
    let paths: Vec<_> = (0..5).map(|r| simulate_replicate(&params, r)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let positive = FourierField::from_parts(1.5, vec![0.5], vec![0.25]);
    let exp_mart = StateSlice(ExpMartingale::new(Arc::new(
        solve_log_laplace(&positive, 1.0, 1.0, 1024, 16).map_err(|e| e.to_string())?,
    )));
    let mut worst_rel: f64 = 0.0;
    let mut symmetric = true;
    let mut bundle_gap: f64 = 0.0;
    for _ in 0..100 {
        let mut coeff = || rng.random_range(-1.0..1.0);
        let phi = FourierField::from_parts(coeff(), vec![coeff(), coeff()], vec![coeff()]);
        let psi = FourierField::from_parts(coeff(), vec![coeff()], vec![coeff(), coeff()]);
        let family = rng.random_range(0..5u32);
        let f: Box<dyn Functional<f64>> = match family {
            0 => Box::new(StateSlice(CylindricalState::new(NegExp::new(vec![0.5]), vec![phi]))),
            1 => Box::new(CylindricalPath::new(Product, phi, psi)),
            2 => Box::new(StateSlice(CylindricalState::new(Power::new(3), vec![phi]))),
            3 => Box::new(StateSlice(CylindricalState::time_weighted(phi))),
            _ => Box::new(exp_mart.clone()),
        };
        let path = &paths[rng.random_range(0..paths.len())];
        let mut sp = stop_at_index(path.trajectory(), rng.random_range(0..path.len()));
        if rng.random_bool(0.3) {
            sp = sp
                .vertical_bump(CirclePoint::new(rng.random()), 0.05)
                .map_err(|e| e.to_string())?;
        }
        let x = CirclePoint::new(rng.random());
        let y = CirclePoint::new(rng.random());
        let eps = default_vertical_eps(&sp);
        let analytic = f.vertical(&sp, x).ok_or("missing vertical derivative")?;
        let numeric = numeric_vertical_derivative(f.as_ref(), &sp, x, eps).map_err(|e| e.to_string())?;
        worst_rel = worst_rel.max((numeric - analytic).abs() / analytic.abs().max(1.0));
        let (a, b) = (f.vertical2(&sp, x, y), f.vertical2(&sp, y, x));
        symmetric &= a.is_some() && a == b;
        let bp = bundle_project(&sp);
        let via_bundle = bundle_vertical_derivative(f.as_ref(), &bp, x, eps).map_err(|e| e.to_string())?;
        let field_bundle = bundle_vertical_field(f.as_ref(), &bp).ok_or("missing bundle field")?.eval(x);
        bundle_gap = bundle_gap.max((via_bundle - numeric).abs()).max((field_bundle - analytic).abs());
    }
    verdict(
        worst_rel <= 1e-6 && symmetric && bundle_gap <= 1e-12,
        format!("max relative gap {worst_rel:.2e}; vertical2 symmetric {symmetric}; bundle gap {bundle_gap:.2e}"),
    )
}

fn dyadic_approximation() -> Verdict {
    let cfg = ExperimentConfig::new(ExperimentKind::DyadicConvergence);
    from_outcome(&compute(&cfg).map_err(|e| e.to_string())?)
}

fn small(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(kind);
    cfg.sim.n_particles = 300;
    cfg.sim.dt = 1.0 / 64.0;
    cfg.replicates = 32;
    cfg.sim.seed = 7;
    cfg
}

fn in_pool(threads: usize, cfg: &ExperimentConfig) -> Result<String, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    let o = pool.install(|| compute(cfg)).map_err(|e| e.to_string())?;
    let mut bytes = o.summary_json();
    for (name, contents) in &o.artifacts {
        bytes.push_str(name);
        bytes.push_str(contents);
    }
    Ok(bytes)
}

fn determinism() -> Verdict {
    let mut configs = vec![
        small(ExperimentKind::Simulate),
        small(ExperimentKind::Mp),
        small(ExperimentKind::ItoState),
        small(ExperimentKind::Representation),
        small(ExperimentKind::DyadicConvergence),
        small(ExperimentKind::FellerOracle),
    ];
    let mut f = small(ExperimentKind::ItoFunctional);
    f.functional = Some(FunctionalConfig {
        family: Family::Product,
        phi: "cos:1".into(),
        psi: "const:1".into(),
    });
    f.refinement = vec![1.0 / 32.0, 1.0 / 64.0];
    configs.push(f);
    let mut identical = 0;
    for cfg in &configs {
        let serial = in_pool(1, cfg)?;
        let again = in_pool(1, cfg)?;
        let parallel = in_pool(4, cfg)?;
        if serial != again || serial != parallel {
            return Err(format!("{} differs between runs", cfg.experiment.label()));
        }
        identical += 1;
    }
    // on-disk reruns must reproduce the manifest hashes
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = small(ExperimentKind::Mp);
    cfg.output_dir = Some(dir.path().to_path_buf());
    run_experiment(&cfg, false).map_err(|e| e.to_string())?;
    run_experiment(&cfg, true).map_err(|e| format!("manifest check: {e}"))?;
    Ok(format!("{identical} experiments byte-identical serial, repeated and on 4 threads; manifest rerun verified"))
}

fn main() {
    let started = Instant::now();
    let mut failures = 0;
    let mut report = |id: u32, name: &str, run: &dyn Fn() -> Verdict| {
        let t0 = Instant::now();
        let v = run();
        let secs = t0.elapsed().as_secs_f64();
        match &v {
            Ok(text) => println!("criterion {id} PASS {name}: {text} ({secs:.1}s)"),
            Err(text) => {
                failures += 1;
                println!("criterion {id} FAIL {name}: {text} ({secs:.1}s)");
            }
        }
    };
    report(1, "martingale problem", &martingale_problem);
    report(2, "Feller oracles", &feller_oracles);
    report(3, "Laplace functional", &laplace_functional);
    let t0 = Instant::now();
    let study = ItoStudy::run();
    println!("shared Itô study: 200 paths at dt=1/512, 100 at dt=1/2048 ({:.1}s)", t0.elapsed().as_secs_f64());
    let shared = |f: fn(&ItoStudy) -> Verdict| -> Verdict {
        match &study {
            Ok(s) => f(s),
            Err(e) => Err(e.clone()),
        }
    };
    report(4, "state Itô formula", &|| shared(state_ito));
    report(5, "functional Itô formula", &|| shared(functional_ito));
    report(6, "martingale representation", &|| shared(representation));
    report(7, "derivative consistency", &derivative_consistency);
    report(8, "dyadic approximation", &dyadic_approximation);
    report(9, "determinism", &determinism);
    println!(
        "acceptance: {} of 9 criteria passed in {:.0}s",
        9 - failures,
        started.elapsed().as_secs_f64()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
