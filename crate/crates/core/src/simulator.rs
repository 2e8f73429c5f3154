//! Branching Brownian particle approximation of the B(A,c)-superprocess.
//!
//! `N` particles of mass `m/N` start on a uniform grid of the circle. Each
//! time step every particle first takes an independent Brownian step of
//! standard deviation `√dt`, then branches. Critical binary branching at
//! total event rate `c/w` per particle (`w` the particle weight) gives the
//! total mass the quadratic variation `c ⟨X, 1⟩ dt` of the limit.
//!
//! Two per-step offspring laws are available:
//!
//! * [`BranchingScheme::Binary`]: with probability `c·dt/w` the particle is
//!   replaced by 0 or 2 copies. Only valid while that probability is at most 1.
//! * [`BranchingScheme::BirthDeath`] (default): the exact law after time `dt`
//!   of a critical birth-death process with birth and death rates `c/(2w)`.
//!   Its mean is 1 and its variance `c·dt/w`, matching the binary scheme, but
//!   it stays valid for any step size.

use std::ops::Deref;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{FiniteMeasure, FourierField};
use crate::rng::{lane, StreamRng};
use crate::scalar::Scalar;
use crate::trajectory::Trajectory;

pub const DEFAULT_PARTICLE_CAP: usize = 10_000_000;

/// Branching-per-step load above which the binary scheme is flagged as coarse.
pub const COARSE_BRANCHING_LOAD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BranchingScheme {
    Binary,
    #[default]
    BirthDeath,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimParams<S> {
    pub n_particles: usize,
    pub c: S,
    pub horizon: S,
    pub dt: S,
    pub initial_mass: S,
    pub seed: u64,
    pub max_particles: usize,
    pub branching: BranchingScheme,
}

impl<S: Scalar> SimParams<S> {
    /// Parameters with unit initial mass, seed 0 and the default cap.
    pub fn new(n_particles: usize, c: S, horizon: S, dt: S) -> Self {
        SimParams {
            n_particles,
            c,
            horizon,
            dt,
            initial_mass: S::one(),
            seed: 0,
            max_particles: DEFAULT_PARTICLE_CAP,
            branching: BranchingScheme::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_initial_mass(mut self, m: S) -> Self {
        self.initial_mass = m;
        self
    }

    pub fn with_branching(mut self, scheme: BranchingScheme) -> Self {
        self.branching = scheme;
        self
    }

    pub fn with_max_particles(mut self, cap: usize) -> Self {
        self.max_particles = cap;
        self
    }

    pub fn with_c(mut self, c: S) -> Self {
        self.c = c;
        self
    }

    pub fn with_dt(mut self, dt: S) -> Self {
        self.dt = dt;
        self
    }

    /// Mass carried by each particle.
    pub fn particle_weight(&self) -> S {
        self.initial_mass / S::count(self.n_particles)
    }

    /// Expected branching events per particle per step, `c·dt/w` (= `c·N·dt` at unit mass).
    pub fn branching_load(&self) -> S {
        self.c * self.dt / self.particle_weight()
    }

    pub fn coarse_branching(&self) -> bool {
        self.branching_load() > S::lit(COARSE_BRANCHING_LOAD)
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().to_usize().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.n_particles == 0 {
            return bad("n_particles must be positive".into());
        }
        if !(self.c >= S::zero()) || !self.c.is_finite() {
            return bad(format!("c must be finite and non-negative, got {}", self.c));
        }
        if !(self.dt > S::zero()) || !(self.horizon > S::zero()) || !self.horizon.is_finite() {
            return bad(format!("need dt > 0 and T > 0, got dt = {}, T = {}", self.dt, self.horizon));
        }
        if !(self.initial_mass > S::zero()) || !self.initial_mass.is_finite() {
            return bad(format!("initial mass must be positive, got {}", self.initial_mass));
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > S::lit(1e-6) * ratio.max(S::one()) || ratio.round() < S::one() {
            return bad(format!("T/dt = {ratio} is not a positive integer"));
        }
        if self.branching == BranchingScheme::Binary && self.branching_load() > S::one() {
            return bad(format!(
                "binary branching probability c·dt/w = {} exceeds 1",
                self.branching_load()
            ));
        }
        if self.n_particles > self.max_particles {
            return bad(format!(
                "{} initial particles exceed the cap {}",
                self.n_particles, self.max_particles
            ));
        }
        Ok(())
    }
}

/// A simulated trajectory together with the parameters that produced it.
#[derive(Clone, Debug)]
pub struct MeasurePath<S> {
    trajectory: Arc<Trajectory<S>>,
    params: SimParams<S>,
    replicate: u64,
}

impl<S: Scalar> MeasurePath<S> {
    /// Wraps an existing trajectory (for hand-built paths).
    pub fn from_trajectory(trajectory: Trajectory<S>, params: SimParams<S>, replicate: u64) -> Self {
        MeasurePath {
            trajectory: Arc::new(trajectory),
            params,
            replicate,
        }
    }

    pub fn trajectory(&self) -> &Arc<Trajectory<S>> {
        &self.trajectory
    }

    pub fn params(&self) -> &SimParams<S> {
        &self.params
    }

    pub fn replicate(&self) -> u64 {
        self.replicate
    }

    pub fn total_masses(&self) -> Vec<S> {
        self.snapshots().iter().map(|m| m.total_mass()).collect()
    }

    pub fn final_mass(&self) -> S {
        self.snapshots().last().map(|m| m.total_mass()).unwrap_or_else(S::zero)
    }

    /// Rows `time,position,weight`, header included.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,position,weight\n");
        for (t, mu) in self.times().iter().zip(self.snapshots()) {
            for (p, w) in mu.atoms() {
                out.push_str(&format!("{t},{p},{w}\n"));
            }
        }
        out
    }
}

impl<S> Deref for MeasurePath<S> {
    type Target = Trajectory<S>;

    fn deref(&self) -> &Trajectory<S> {
        &self.trajectory
    }
}

fn offspring(rng: &mut StreamRng, scheme: BranchingScheme, load: f64, p_zero: f64, ln_p_zero: f64) -> usize {
    match scheme {
        BranchingScheme::Binary => {
            if rng.random::<f64>() < load {
                if rng.random::<bool>() {
                    2
                } else {
                    0
                }
            } else {
                1
            }
        }
        BranchingScheme::BirthDeath => {
            if rng.random::<f64>() < p_zero {
                0
            } else {
                // 1 + Geometric(1 − p0) by inversion; u in (0, 1]
                let u = 1.0 - rng.random::<f64>();
                1 + (u.ln() / ln_p_zero).floor() as usize
            }
        }
    }
}

fn initial_positions<S: Scalar>(n: usize) -> Vec<S> {
    (0..n).map(|i| S::count(i) / S::count(n)).collect()
}

/// `X(0)`: `n` atoms of weight `m/n` on the lattice `i/n`, the same for every replicate.
pub fn initial_measure<S: Scalar>(params: &SimParams<S>) -> FiniteMeasure<S> {
    FiniteMeasure::from_positions(&initial_positions(params.n_particles), params.particle_weight())
}

/// Simulates replicate 0 of `params`.
pub fn simulate_path<S: Scalar>(params: &SimParams<S>) -> Result<MeasurePath<S>> {
    simulate_replicate(params, 0)
}

/// Offspring sampler of one replicate. Branching draws come from their own
/// lane so a mass-only run reproduces the masses of the full run.
struct Brancher {
    rng: StreamRng,
    scheme: BranchingScheme,
    on: bool,
    load: f64,
    p_zero: f64,
    ln_p_zero: f64,
}

impl Brancher {
    fn new<S: Scalar>(params: &SimParams<S>, replicate: u64) -> Self {
        let load = params.branching_load().as_f64();
        // birth-death law over dt: P(0) = βdt / (1 + βdt), β = c/(2w)
        let half_load = 0.5 * load;
        let p_zero = half_load / (1.0 + half_load);
        Brancher {
            rng: lane(params.seed, replicate, BRANCHING_LANE),
            scheme: params.branching,
            on: params.c > S::zero(),
            load,
            p_zero,
            ln_p_zero: p_zero.ln(),
        }
    }

    fn next(&mut self) -> usize {
        if !self.on {
            return 1;
        }
        offspring(&mut self.rng, self.scheme, self.load, self.p_zero, self.ln_p_zero)
    }
}

const MOTION_LANE: u8 = 0;
const BRANCHING_LANE: u8 = 1;

fn check_cap<S: Scalar>(params: &SimParams<S>, step: usize, count: usize) -> Result<()> {
    if count > params.max_particles {
        return Err(Error::MassExplosion {
            step,
            count,
            cap: params.max_particles,
        });
    }
    Ok(())
}

/// Runs the particle system of one replicate and hands the particle
/// positions at every grid step (including step 0) to `observe`.
fn run_particles<S: Scalar>(
    params: &SimParams<S>,
    replicate: u64,
    mut observe: impl FnMut(usize, &[S]),
) -> Result<()> {
    params.validate()?;
    let mut motion = lane(params.seed, replicate, MOTION_LANE);
    let mut brancher = Brancher::new(params, replicate);
    let sd = params.dt.sqrt().as_f64();

    let mut positions: Vec<S> = initial_positions(params.n_particles);
    observe(0, &positions);

    let mut next = Vec::with_capacity(positions.len());
    for step in 1..=params.steps() {
        next.clear();
        for &x in &positions {
            let z: f64 = motion.sample(StandardNormal);
            let moved = x.as_f64() + sd * z;
            let wrapped = S::lit(moved - moved.floor());
            let y = if wrapped >= S::one() { S::zero() } else { wrapped };
            for _ in 0..brancher.next() {
                next.push(y);
            }
        }
        check_cap(params, step, next.len())?;
        std::mem::swap(&mut positions, &mut next);
        observe(step, &positions);
    }
    Ok(())
}

/// Simulates one replicate on its own random stream `(seed, replicate)`.
pub fn simulate_replicate<S: Scalar>(params: &SimParams<S>, replicate: u64) -> Result<MeasurePath<S>> {
    let steps = params.steps();
    let weight = params.particle_weight();
    let mut times = Vec::with_capacity(steps + 1);
    let mut snapshots = Vec::with_capacity(steps + 1);
    run_particles(params, replicate, |step, positions| {
        times.push(S::count(step) * params.dt);
        snapshots.push(FiniteMeasure::from_positions(positions, weight));
    })?;
    let trajectory = Trajectory::new(times, snapshots, params.horizon)?;
    Ok(MeasurePath {
        trajectory: Arc::new(trajectory),
        params: params.clone(),
        replicate,
    })
}

/// Total mass at every grid time of one replicate, from the branching
/// draws alone. Equal to the masses of [`simulate_replicate`].
pub fn simulate_total_masses<S: Scalar>(params: &SimParams<S>, replicate: u64) -> Result<Vec<S>> {
    params.validate()?;
    let weight = params.particle_weight();
    let mut brancher = Brancher::new(params, replicate);
    let mut count = params.n_particles;
    let mut masses = Vec::with_capacity(params.steps() + 1);
    masses.push(S::count(count) * weight);
    for step in 1..=params.steps() {
        count = (0..count).map(|_| brancher.next()).sum();
        check_cap(params, step, count)?;
        masses.push(S::count(count) * weight);
    }
    Ok(masses)
}

/// Runs `f` on every replicate `0..count` in parallel and returns the
/// results in replicate order.
pub fn map_replicates<S, R, F>(params: &SimParams<S>, count: usize, f: F) -> Result<Vec<R>>
where
    S: Scalar,
    R: Send,
    F: Fn(MeasurePath<S>) -> Result<R> + Sync + Send,
{
    (0..count as u64)
        .into_par_iter()
        .map(|r| simulate_replicate(params, r).and_then(&f))
        .collect()
}

/// Total-mass series of replicates `0..count`, in replicate order.
pub fn map_total_masses<S: Scalar>(params: &SimParams<S>, count: usize) -> Result<Vec<Vec<S>>> {
    (0..count as u64)
        .into_par_iter()
        .map(|r| simulate_total_masses(params, r))
        .collect()
}

/// Per-step increments `ΔM_k(φ)` of the martingale in the martingale problem.
#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleIncrements<S> {
    pub values: Vec<S>,
}

impl<S: Scalar> MartingaleIncrements<S> {
    /// `M(t_k)(φ)` for `k = 0..=L`.
    pub fn cumulative(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.values.len() + 1);
        let mut acc = S::zero();
        out.push(acc);
        for v in &self.values {
            acc = acc + *v;
            out.push(acc);
        }
        out
    }

    pub fn total(&self) -> S {
        self.values.iter().copied().sum()
    }
}

/// `ΔM_k(φ) = ⟨X(t_{k+1}),φ⟩ − ⟨X(t_k),φ⟩ − (t_{k+1} − t_k)⟨X(t_k), Aφ⟩`.
pub fn martingale_increments<S: Scalar>(path: &Trajectory<S>, phi: &FourierField<S>) -> MartingaleIncrements<S> {
    let a_phi = phi.apply_generator();
    let times = path.times();
    let values = (0..path.len() - 1)
        .map(|k| {
            let dt = times[k + 1] - times[k];
            path.integrate(k + 1, phi) - path.integrate(k, phi) - dt * path.integrate(k, &a_phi)
        })
        .collect();
    MartingaleIncrements { values }
}

/// `Σ_k ΔM_k(φ)²`.
pub fn quadratic_variation_empirical<S: Scalar>(incs: &MartingaleIncrements<S>) -> S {
    incs.values.iter().map(|v| *v * *v).sum()
}

/// First grid time at which the total mass is zero.
pub fn extinction_time<S: Scalar>(path: &Trajectory<S>) -> Option<S> {
    path.snapshots()
        .iter()
        .position(|m| m.is_empty())
        .map(|i| path.times()[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CirclePoint;
    use crate::stats::Summary;

    fn params(n: usize, c: f64, dt: f64) -> SimParams<f64> {
        SimParams::new(n, c, 1.0, dt).with_seed(11)
    }

    #[test]
    fn validation() {
        assert!(params(10, 1.0, 0.1).validate().is_ok());
        assert!(params(0, 1.0, 0.1).validate().is_err());
        assert!(params(10, -1.0, 0.1).validate().is_err());
        assert!(params(10, 1.0, 0.3).validate().is_err());
        let binary = params(100, 1.0, 0.1).with_branching(BranchingScheme::Binary);
        assert!(matches!(binary.validate(), Err(Error::InvalidParams(_))));
        assert!(params(200, 1.0, 0.001).coarse_branching());
        assert!(!params(10, 1.0, 0.001).coarse_branching());
        assert_eq!(params(10, 1.0, 0.25).steps(), 4);
    }

    #[test]
    fn deterministic_given_seed() {
        let p = params(50, 1.0, 1.0 / 64.0);
        let a = simulate_path(&p).unwrap();
        let b = simulate_path(&p).unwrap();
        assert_eq!(a.snapshots(), b.snapshots());
        let c = simulate_replicate(&p, 1).unwrap();
        assert_ne!(a.snapshots(), c.snapshots());
    }

    #[test]
    fn initial_state_and_absorption() {
        let p = params(20, 5.0, 1.0 / 32.0).with_initial_mass(2.0);
        for r in 0..20 {
            let path = simulate_replicate(&p, r).unwrap();
            assert!((path.snapshot(0).total_mass() - 2.0).abs() < 1e-12);
            assert_eq!(path.len(), 33);
            if let Some(t) = extinction_time(&path) {
                let i = path.index_at(t);
                assert!(path.snapshots()[i..].iter().all(|m| m.total_mass() == 0.0));
            }
        }
    }

    #[test]
    fn no_branching_keeps_mass_exact() {
        let p = params(30, 0.0, 1.0 / 16.0);
        let path = simulate_path(&p).unwrap();
        assert!(path.snapshots().iter().all(|m| m.len() == 30));
        let incs = martingale_increments(&path, &FourierField::constant(1.0));
        assert!(incs.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn particle_cap_aborts() {
        let p = params(1000, 1.0, 1.0 / 8.0).with_max_particles(1100);
        let outcomes: Vec<_> = (0..10).map(|r| simulate_replicate(&p, r)).collect();
        assert!(outcomes.iter().any(|o| matches!(o, Err(Error::MassExplosion { cap: 1100, .. }))));
        assert!(outcomes.iter().all(|o| o.is_ok() || matches!(o, Err(Error::MassExplosion { .. }))));
    }

    #[test]
    fn increments_of_constant_field_are_mass_differences() {
        let path = simulate_path(&params(40, 1.0, 1.0 / 16.0)).unwrap();
        let incs = martingale_increments(&path, &FourierField::constant(1.0));
        let masses = path.total_masses();
        for (k, v) in incs.values.iter().enumerate() {
            assert!((v - (masses[k + 1] - masses[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn increments_telescope() {
        let path = simulate_path(&params(40, 1.0, 1.0 / 16.0)).unwrap();
        let phi = FourierField::from_parts(0.3, vec![1.0], vec![0.0, -0.5]);
        let incs = martingale_increments(&path, &phi);
        let a_phi = phi.apply_generator();
        let drift: f64 = (0..path.len() - 1).map(|k| path.integrate(k, &a_phi)).sum::<f64>() / 16.0;
        let expected = path.snapshot(path.last_index()).integrate(&phi) - path.snapshot(0).integrate(&phi) - drift;
        assert!((incs.total() - expected).abs() < 1e-12);
        assert_eq!(*incs.cumulative().last().unwrap(), incs.total());
    }

    #[test]
    fn qv_and_extinction_basics() {
        assert_eq!(quadratic_variation_empirical(&MartingaleIncrements { values: vec![0.0; 5] }), 0.0);
        let mu = FiniteMeasure::dirac(CirclePoint::new(0.5), 1.0).unwrap();
        let tr = Trajectory::constant(mu.clone(), 0.25, 1.0).unwrap();
        assert_eq!(extinction_time(&tr), None);
        let mut snaps = vec![mu; 40];
        snaps.extend(vec![FiniteMeasure::zero(); 10]);
        let times: Vec<f64> = (0..50).map(|k| k as f64 / 49.0).collect();
        let tr = Trajectory::new(times.clone(), snaps, 1.0).unwrap();
        assert_eq!(extinction_time(&tr), Some(times[40]));
    }

    #[test]
    fn mass_only_run_matches_full_run() {
        let p = params(30, 2.0, 1.0 / 32.0);
        for r in 0..5 {
            let full = simulate_replicate(&p, r).unwrap();
            assert_eq!(simulate_total_masses(&p, r).unwrap(), full.total_masses());
        }
    }

    #[test]
    fn replicate_map_is_ordered() {
        let p = params(10, 1.0, 0.125);
        let masses = map_replicates(&p, 8, |path| Ok(path.final_mass())).unwrap();
        let serial: Vec<f64> = (0..8).map(|r| simulate_replicate(&p, r).unwrap().final_mass()).collect();
        assert_eq!(masses, serial);
    }

    #[test]
    fn mean_mass_stays_critical() {
        // criticality: mean mass at T within 3 SE of the initial mass
        let p = params(200, 1.0, 1.0 / 64.0);
        let finals = map_replicates(&p, 400, |path| Ok(path.final_mass())).unwrap();
        let s = Summary::of(&finals);
        assert!((s.mean - 1.0).abs() <= 3.0 * s.se, "{s:?}");
    }

    #[test]
    fn heat_flow_without_branching() {
        // E⟨X_t, cos 2π·⟩ = e^{-2π² t}⟨X_0, cos 2π·⟩ for a point mass at 0
        let mut p = params(1, 0.0, 1.0 / 16.0);
        p.horizon = 0.125;
        let phi = FourierField::cosine(1, 1.0);
        let vals = map_replicates(&p, 4000, |path| Ok(path.snapshot(path.last_index()).integrate(&phi))).unwrap();
        let s = Summary::of(&vals);
        let expected = (-2.0 * std::f64::consts::PI.powi(2) * 0.125).exp();
        assert!((s.mean - expected).abs() <= 3.5 * s.se, "{s:?} vs {expected}");
    }
}
