use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use superito_cli::config::{Branching, ExperimentConfig, ExperimentKind, Family, FunctionalConfig};
use superito_cli::{run_experiment, CliError};

#[derive(Parser, Debug)]
#[command(name = "superito", version, about = "Superprocess simulation and Itô-formula residual checks")]
struct Cli {
    /// JSON config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $SUPERITO_OUT, then ./superito-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replicates. Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Compare the new outputs against the manifest already in the output directory.
    #[arg(long, global = true)]
    check_manifest: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate replicates and write total masses and full paths.
    Simulate(Flags),
    #[command(subcommand)]
    Verify(Verify),
    #[command(subcommand)]
    Oracle(Oracle),
}

#[derive(Subcommand, Debug)]
enum Verify {
    /// Martingale problem: means and quadratic variations.
    Mp(Flags),
    /// Itô formula for functions of the measure.
    ItoState(Flags),
    /// Functional Itô formula.
    ItoFunctional(Flags),
    /// Martingale representation of the exponential martingale.
    Representation(Flags),
    /// Distance between paths and their dyadic approximations.
    DyadicConvergence(Flags),
}

#[derive(Subcommand, Debug)]
enum Oracle {
    /// Monte Carlo `E exp(−⟨X_T, φ⟩)` against its closed form.
    Laplace(Flags),
    /// Total-mass variance and extinction against the Feller formulas.
    Feller(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    #[arg(long = "n")]
    n_particles: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Initial total mass.
    #[arg(long = "m")]
    initial_mass: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_particles: Option<usize>,
    #[arg(long, value_parser = parse_branching)]
    branching: Option<Branching>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Field spec, e.g. `const:1+cos:1:0.5`; repeatable for `verify mp`.
    #[arg(long)]
    phi: Vec<String>,
    #[arg(long)]
    psi: Option<String>,
    #[arg(long, value_parser = parse_family)]
    family: Option<Family>,
    /// Comma-separated time steps for refinement studies.
    #[arg(long, value_delimiter = ',')]
    refine: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    levels: Vec<u32>,
    /// Evaluation time (default: the horizon).
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    solver_steps: Option<usize>,
    #[arg(long)]
    solver_modes: Option<usize>,
    #[arg(long)]
    projection_modes: Option<usize>,
    #[arg(long)]
    numeric_fallback: bool,
    /// Full path CSVs written by `simulate`.
    #[arg(long)]
    paths: Option<usize>,
}

fn parse_branching(s: &str) -> Result<Branching, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown branching `{s}`"))
}

fn parse_family(s: &str) -> Result<Family, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown family `{s}`"))
}

impl Flags {
    fn apply(self, cfg: &mut ExperimentConfig) {
        let sim = &mut cfg.sim;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(sim.n_particles, self.n_particles);
        set!(sim.dt, self.dt);
        set!(sim.c, self.c);
        set!(sim.horizon, self.horizon);
        set!(sim.initial_mass, self.initial_mass);
        set!(sim.seed, self.seed);
        set!(sim.max_particles, self.max_particles);
        set!(sim.branching, self.branching);
        set!(cfg.replicates, self.replicates);
        set!(cfg.solver.steps, self.solver_steps);
        set!(cfg.solver.modes, self.solver_modes);
        set!(cfg.assembly.projection_modes, self.projection_modes);
        set!(cfg.path_csvs, self.paths);
        if self.numeric_fallback {
            cfg.assembly.numeric_fallback = true;
        }
        if self.t.is_some() {
            cfg.t = self.t;
        }
        if !self.refine.is_empty() {
            cfg.refinement = self.refine;
        }
        if !self.levels.is_empty() {
            cfg.levels = self.levels;
        }
        if cfg.experiment == ExperimentKind::Mp {
            if !self.phi.is_empty() {
                cfg.phi = self.phi;
            }
        } else if self.family.is_some() || !self.phi.is_empty() || self.psi.is_some() {
            let mut f = cfg.functional();
            if let Some(fam) = self.family {
                if fam != f.family && self.phi.is_empty() {
                    f = FunctionalConfig { family: fam, ..FunctionalConfig::default_for(cfg.experiment) };
                }
                f.family = fam;
            }
            if let Some(p) = self.phi.into_iter().last() {
                f.phi = p;
            }
            set!(f.psi, self.psi);
            cfg.functional = Some(f);
        }
    }
}

fn build_config(cli: Cli) -> Result<(ExperimentConfig, bool), CliError> {
    let (kind, flags) = match cli.command {
        Command::Simulate(f) => (ExperimentKind::Simulate, f),
        Command::Verify(Verify::Mp(f)) => (ExperimentKind::Mp, f),
        Command::Verify(Verify::ItoState(f)) => (ExperimentKind::ItoState, f),
        Command::Verify(Verify::ItoFunctional(f)) => (ExperimentKind::ItoFunctional, f),
        Command::Verify(Verify::Representation(f)) => (ExperimentKind::Representation, f),
        Command::Verify(Verify::DyadicConvergence(f)) => (ExperimentKind::DyadicConvergence, f),
        Command::Oracle(Oracle::Laplace(f)) => (ExperimentKind::LaplaceOracle, f),
        Command::Oracle(Oracle::Feller(f)) => (ExperimentKind::FellerOracle, f),
    };
    let mut cfg = match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::from_file(path)?;
            if cfg.experiment != kind {
                return Err(CliError::Config(format!(
                    "config is for `{}` but the command runs `{}`",
                    cfg.experiment.label(),
                    kind.label()
                )));
            }
            cfg
        }
        None => ExperimentConfig::new(kind),
    };
    flags.apply(&mut cfg);
    if cli.out.is_some() {
        cfg.output_dir = cli.out;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    Ok((cfg, cli.check_manifest))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_config(cli).and_then(|(cfg, check)| run_experiment(&cfg, check));
    match result {
        Ok(report) => {
            for c in &report.outcome.checks {
                println!(
                    "{} {}: value {} (target {}, bound {})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.target,
                    c.bound
                );
            }
            println!("outputs in {}", report.dir.display());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("superito: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
