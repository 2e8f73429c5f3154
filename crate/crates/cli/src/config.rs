//! Experiment configuration: a JSON file, overridden field by field by
//! command-line flags, validated as a whole before anything runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use superito::calculus::Thresholds;
use superito::{BranchingScheme, FourierField, SimParams};

use crate::fieldspec::parse_field;
use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "SUPERITO_OUT";
pub const DEFAULT_OUTPUT_DIR: &str = "superito-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Mp,
    ItoState,
    ItoFunctional,
    Representation,
    DyadicConvergence,
    LaplaceOracle,
    FellerOracle,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Mp => "mp",
            ExperimentKind::ItoState => "ito-state",
            ExperimentKind::ItoFunctional => "ito-functional",
            ExperimentKind::Representation => "representation",
            ExperimentKind::DyadicConvergence => "dyadic-convergence",
            ExperimentKind::LaplaceOracle => "laplace-oracle",
            ExperimentKind::FellerOracle => "feller-oracle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branching {
    BirthDeath,
    Binary,
}

impl From<Branching> for BranchingScheme {
    fn from(b: Branching) -> Self {
        match b {
            Branching::BirthDeath => BranchingScheme::BirthDeath,
            Branching::Binary => BranchingScheme::Binary,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_particles: usize,
    pub c: f64,
    pub horizon: f64,
    pub dt: f64,
    pub initial_mass: f64,
    pub seed: u64,
    pub max_particles: usize,
    pub branching: Branching,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_particles: 2000,
            c: 1.0,
            horizon: 1.0,
            dt: 1.0 / 512.0,
            initial_mass: 1.0,
            seed: 42,
            max_particles: superito::simulator::DEFAULT_PARTICLE_CAP,
            branching: Branching::BirthDeath,
        }
    }
}

impl SimConfig {
    pub fn params(&self) -> SimParams<f64> {
        self.params_at(self.dt)
    }

    pub fn params_at(&self, dt: f64) -> SimParams<f64> {
        SimParams::new(self.n_particles, self.c, self.horizon, dt)
            .with_seed(self.seed)
            .with_initial_mass(self.initial_mass)
            .with_max_particles(self.max_particles)
            .with_branching(self.branching.into())
    }
}

/// Functional families the front end can build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `⟨μ, φ⟩`
    Linear,
    /// `exp(−⟨μ, φ⟩)`
    NegExp,
    /// `t·⟨μ, φ⟩`
    TimeWeighted,
    /// `⟨ω(t), φ⟩ · ∫₀ᵗ⟨ω(s), ψ⟩ds`
    Product,
    /// `∫₀ᵗ⟨ω(s), ψ⟩ds`
    TimeIntegral,
    /// `exp(−⟨μ, u(T − t)⟩)` with `u` solving the log-Laplace equation from `φ`
    ExpMartingale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    pub family: Family,
    #[serde(default = "default_phi")]
    pub phi: String,
    #[serde(default = "default_psi")]
    pub psi: String,
}

fn default_phi() -> String {
    "const:1+cos:1:0.5".into()
}

fn default_psi() -> String {
    "const:1".into()
}

impl FunctionalConfig {
    /// The default functional for each experiment kind.
    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::ItoFunctional => FunctionalConfig {
                family: Family::Product,
                phi: "cos:1".into(),
                psi: default_psi(),
            },
            ExperimentKind::Representation | ExperimentKind::LaplaceOracle => FunctionalConfig {
                family: Family::ExpMartingale,
                phi: "const:2".into(),
                psi: default_psi(),
            },
            _ => FunctionalConfig {
                family: Family::NegExp,
                phi: default_phi(),
                psi: default_psi(),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub se_multiple: f64,
    pub qv_tolerance: f64,
    pub residual_ratio: f64,
    pub drift_ratio: f64,
    pub variance_tolerance: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        ThresholdConfig {
            se_multiple: t.se_multiple,
            qv_tolerance: t.qv_tolerance,
            residual_ratio: t.residual_ratio,
            drift_ratio: t.drift_ratio,
            variance_tolerance: 0.15,
        }
    }
}

impl ThresholdConfig {
    pub fn core(&self) -> Thresholds {
        Thresholds {
            se_multiple: self.se_multiple,
            qv_tolerance: self.qv_tolerance,
            residual_ratio: self.residual_ratio,
            drift_ratio: self.drift_ratio,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub steps: usize,
    pub modes: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            steps: superito::functionals::SOLVER_DEFAULT_STEPS,
            modes: superito::functionals::SOLVER_DEFAULT_MODES,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssemblyConfig {
    pub projection_modes: usize,
    pub numeric_fallback: bool,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig {
            projection_modes: 16,
            numeric_fallback: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub sim: SimConfig,
    /// `None` picks [`FunctionalConfig::default_for`].
    #[serde(default)]
    pub functional: Option<FunctionalConfig>,
    /// Test functions for `mp`; field specs.
    #[serde(default = "default_mp_phis")]
    pub phi: Vec<String>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Time steps for refinement studies; empty means `[sim.dt]`.
    #[serde(default)]
    pub refinement: Vec<f64>,
    #[serde(default = "default_levels")]
    pub levels: Vec<u32>,
    /// Evaluation time; `None` means the horizon.
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub assembly: AssemblyConfig,
    /// Full path CSVs written by `simulate`.
    #[serde(default = "default_path_csvs")]
    pub path_csvs: usize,
    /// Not part of the manifest: reruns in other directories must hash equal.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

fn default_mp_phis() -> Vec<String> {
    vec!["const:1".into(), "cos:1".into(), "sin:2".into()]
}

fn default_replicates() -> usize {
    200
}

fn default_levels() -> Vec<u32> {
    vec![2, 4, 6, 8]
}

fn default_path_csvs() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            sim: SimConfig::default(),
            functional: None,
            phi: default_mp_phis(),
            replicates: default_replicates(),
            refinement: Vec::new(),
            levels: default_levels(),
            t: None,
            thresholds: ThresholdConfig::default(),
            solver: SolverConfig::default(),
            assembly: AssemblyConfig::default(),
            path_csvs: default_path_csvs(),
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn functional(&self) -> FunctionalConfig {
        self.functional
            .clone()
            .unwrap_or_else(|| FunctionalConfig::default_for(self.experiment))
    }

    pub fn eval_time(&self) -> f64 {
        self.t.unwrap_or(self.sim.horizon)
    }

    pub fn dts(&self) -> Vec<f64> {
        if self.refinement.is_empty() {
            vec![self.sim.dt]
        } else {
            self.refinement.clone()
        }
    }

    pub fn mp_fields(&self) -> Result<Vec<(String, FourierField<f64>)>, CliError> {
        self.phi.iter().map(|s| Ok((s.clone(), parse_field(s)?))).collect()
    }

    /// Output directory: config, then the environment, then the default.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    /// Checks every field an experiment will touch. Runs before any simulation.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.replicates == 0 {
            return bad("replicates must be positive".into());
        }
        for dt in self.dts() {
            self.sim.params_at(dt).validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        let t = self.eval_time();
        if !(t >= 0.0 && t <= self.sim.horizon) {
            return bad(format!("t = {t} outside [0, {}]", self.sim.horizon));
        }
        let th = &self.thresholds;
        for (name, v) in [
            ("se_multiple", th.se_multiple),
            ("qv_tolerance", th.qv_tolerance),
            ("residual_ratio", th.residual_ratio),
            ("drift_ratio", th.drift_ratio),
            ("variance_tolerance", th.variance_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("threshold {name} must be positive"));
            }
        }
        if self.solver.steps == 0 || self.solver.modes == 0 {
            return bad("solver steps and modes must be positive".into());
        }
        if self.assembly.projection_modes == 0 {
            return bad("projection_modes must be positive".into());
        }
        match self.experiment {
            ExperimentKind::Mp => {
                if self.replicates < superito::calculus::MP_MIN_REPLICATES {
                    return bad(format!(
                        "mp needs at least {} replicates",
                        superito::calculus::MP_MIN_REPLICATES
                    ));
                }
                if self.phi.is_empty() {
                    return bad("mp needs at least one test function".into());
                }
                self.mp_fields()?;
            }
            ExperimentKind::DyadicConvergence => {
                if self.levels.is_empty() || self.levels.iter().any(|&n| n > 30) {
                    return bad("levels must be a nonempty list of integers ≤ 30".into());
                }
            }
            ExperimentKind::ItoState
            | ExperimentKind::ItoFunctional
            | ExperimentKind::Representation
            | ExperimentKind::LaplaceOracle => {
                let f = self.functional();
                let phi = parse_field(&f.phi)?;
                parse_field(&f.psi)?;
                let state_only = matches!(f.family, Family::Linear | Family::NegExp | Family::TimeWeighted | Family::ExpMartingale);
                if self.experiment == ExperimentKind::ItoState && !state_only {
                    return bad(format!("family {:?} is a path functional; use ito-functional", f.family));
                }
                if matches!(self.experiment, ExperimentKind::Representation | ExperimentKind::LaplaceOracle)
                    && f.family != Family::ExpMartingale
                {
                    return bad(format!(
                        "{} needs the exp-martingale family (the only martingale functional)",
                        self.experiment.label()
                    ));
                }
                if f.family == Family::ExpMartingale && phi.sampled_min(64 * phi.modes().max(1)) < 0.0 {
                    return bad("exp-martingale needs a nonnegative phi".into());
                }
            }
            ExperimentKind::Simulate | ExperimentKind::FellerOracle => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys() {
        assert!(ExperimentConfig::from_json(r#"{"experiment":"mp","bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment":"mp","sim":{"nn":1}}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"experiment":"mp","sim":{"c":0.5}}"#).unwrap();
        assert_eq!(c.sim.c, 0.5);
        assert_eq!(c.sim.n_particles, 2000);
        assert_eq!(c.replicates, 200);
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::new(ExperimentKind::Mp);
        assert!(c.validate().is_ok());
        c.replicates = 10;
        assert!(c.validate().is_err());
        let mut r = ExperimentConfig::new(ExperimentKind::Representation);
        assert!(r.validate().is_ok());
        r.functional = Some(FunctionalConfig::default_for(ExperimentKind::ItoFunctional));
        assert!(r.validate().is_err());
        let mut s = ExperimentConfig::new(ExperimentKind::Simulate);
        s.sim.dt = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn output_dir_is_not_serialized() {
        let mut c = ExperimentConfig::new(ExperimentKind::Simulate);
        c.output_dir = Some("/tmp/x".into());
        assert!(!serde_json::to_string(&c).unwrap().contains("/tmp/x"));
    }
}
