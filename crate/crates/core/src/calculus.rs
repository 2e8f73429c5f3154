//! Term-by-term assembly of the Itô formula for functions of the measure,
//! the functional Itô formula, and the martingale representation, on
//! simulated paths.
//!
//! Every time integral is a left Riemann sum on the simulation grid, and the
//! martingale-measure integral uses the predictable (left endpoint)
//! integrand. With those conventions the linear case reproduces the discrete
//! martingale problem exactly, so any residual is attributable to the
//! nonlinearity of `F`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::functionals::{Functional, StateFunctional};
use crate::geometry::{CirclePoint, FourierField};
use crate::pathspace::{
    bundle_project, bundle_vertical_derivative, bundle_vertical_field, default_horizontal_step,
    default_vertical_eps, numeric_horizontal_derivative, numeric_vertical2_diagonal, numeric_vertical_derivative,
    stop_at_index, StoppedPath,
};
use crate::scalar::Scalar;
use crate::simulator::{martingale_increments, quadratic_variation_empirical, MeasurePath};
use crate::stats::Summary;
use crate::trajectory::{BumpedState, MeasureState, PathState, Trajectory};

/// Pass/fail thresholds shared by the verification summaries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    /// Means must lie within this many standard errors of their target.
    pub se_multiple: f64,
    /// Allowed relative deviation of quadratic-variation ratios from 1.
    pub qv_tolerance: f64,
    /// Bound on `RMS(residual) / RMS(lhs)`.
    pub residual_ratio: f64,
    /// Bound on `|drift terms| / |martingale term|`.
    pub drift_ratio: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            se_multiple: 3.0,
            qv_tolerance: 0.1,
            residual_ratio: 0.1,
            drift_ratio: 0.05,
        }
    }
}

/// Which representation of the vertical derivative feeds the assembly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VerticalRoute {
    /// `𝒟ₓF` on the stopped path.
    #[default]
    Direct,
    /// `Δ_x f` on the bundle path `ω̃_t`, with `f = F ∘ φ`.
    Bundle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssemblyOptions<S> {
    /// Fourier modes used when a numeric derivative is projected to a field.
    pub projection_modes: usize,
    pub numeric_fallback: bool,
    /// Vertical step for numeric derivatives; `None` uses `1e-4·max(1, mass)`.
    pub eps: Option<S>,
    /// Largest admissible `sup |integrand|` for the martingale-measure integral.
    pub integrand_bound: S,
    pub route: VerticalRoute,
}

impl<S: Scalar> Default for AssemblyOptions<S> {
    fn default() -> Self {
        AssemblyOptions {
            projection_modes: 16,
            numeric_fallback: false,
            eps: None,
            integrand_bound: S::lit(1e6),
            route: VerticalRoute::Direct,
        }
    }
}

impl<S: Scalar> AssemblyOptions<S> {
    pub fn with_numeric_fallback(mut self, on: bool) -> Self {
        self.numeric_fallback = on;
        self
    }

    pub fn with_route(mut self, route: VerticalRoute) -> Self {
        self.route = route;
        self
    }

    pub fn with_projection_modes(mut self, modes: usize) -> Self {
        self.projection_modes = modes;
        self
    }

    pub fn with_eps(mut self, eps: S) -> Self {
        self.eps = Some(eps);
        self
    }

    pub fn with_integrand_bound(mut self, bound: S) -> Self {
        self.integrand_bound = bound;
        self
    }
}

/// All terms of one Itô expansion on one path.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoReport<S> {
    pub functional: String,
    pub replicate: u64,
    pub seed: u64,
    pub dt: S,
    pub t: S,
    /// `F(t, X_t) − F(0, X_0)`.
    pub lhs: S,
    /// `∫ 𝒟*F ds`.
    pub term_time: S,
    /// `∫∫ A^{(x)}𝒟ₓF X(s)(dx) ds`.
    pub term_generator: S,
    /// `½ ∫∫ c 𝒟ₓₓF X(s)(dx) ds`.
    pub term_quadratic: S,
    /// `∫∫ 𝒟ₓF M(ds, dx)`.
    pub term_martingale: S,
    /// `lhs − (term_time + term_generator + term_quadratic + term_martingale)`.
    pub residual: S,
    pub numeric_fallback: bool,
    /// Total mass reached zero at or before `t`.
    pub extinct_before_t: bool,
}

impl<S: Scalar> ItoReport<S> {
    pub const CSV_HEADER: &'static str =
        "replicate,functional,dt,lhs,term_time,term_gen,term_quad,term_mart,residual,residual_rel";

    /// Sum of the three drift terms.
    pub fn drift(&self) -> S {
        self.term_time + self.term_generator + self.term_quadratic
    }

    /// `|drift| / |term_martingale|`.
    pub fn drift_ratio(&self) -> S {
        self.drift().abs() / self.term_martingale.abs()
    }

    /// CSV row; `rms_lhs` normalises the residual across the replicate set.
    pub fn to_csv_row(&self, rms_lhs: S) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.replicate,
            self.functional,
            self.dt,
            self.lhs,
            self.term_time,
            self.term_generator,
            self.term_quadratic,
            self.term_martingale,
            self.residual,
            self.residual / rms_lhs
        )
    }
}

/// Grid index reached by `t` (nearest grid time).
fn grid_end<S: Scalar>(traj: &Trajectory<S>, t: S) -> Result<usize> {
    let tol = S::time_tolerance(traj.horizon());
    if !(t >= -tol) || t > traj.horizon() + tol {
        return Err(Error::TimeOutOfRange {
            time: t.as_f64(),
            lo: 0.0,
            hi: traj.horizon().as_f64(),
        });
    }
    Ok(traj.nearest_index(t))
}

fn martingale_step<S: Scalar>(traj: &Trajectory<S>, k: usize, g: &FourierField<S>, limit: S) -> Result<S> {
    let bound = g.sup_bound();
    if !(bound <= limit) {
        return Err(Error::UnboundedIntegrand {
            step: k,
            bound: bound.as_f64(),
            limit: limit.as_f64(),
        });
    }
    let dt = traj.times()[k + 1] - traj.times()[k];
    Ok(traj.integrate(k + 1, g) - traj.integrate(k, g) - dt * traj.integrate(k, &g.apply_generator()))
}

/// `∫₀ᵗ ∫ g(s, x) M(ds, dx)` as
/// `Σ_{t_k < t} [⟨X(t_{k+1}), g_k⟩ − ⟨X(t_k), g_k⟩ − Δt_k ⟨X(t_k), A g_k⟩]`,
/// with `g_k = integrand(k, t_k)`.
pub fn integrate_martingale_measure<S: Scalar>(
    traj: &Trajectory<S>,
    t: S,
    bound: S,
    mut integrand: impl FnMut(usize, S) -> Result<FourierField<S>>,
) -> Result<S> {
    let n = grid_end(traj, t)?;
    let mut acc = S::zero();
    for k in 0..n {
        let g = integrand(k, traj.times()[k])?;
        acc = acc + martingale_step(traj, k, &g, bound)?;
    }
    Ok(acc)
}

/// `c Σ_{t_k < t} Δt_k ⟨X(t_k), field²⟩`, the covariance measure `ν` applied to `field²`.
pub fn quadratic_variation_nu<S: Scalar>(traj: &Trajectory<S>, c: S, field: &FourierField<S>, t: S) -> Result<S> {
    let n = grid_end(traj, t)?;
    let sq = field.square();
    Ok(c * traj.running_integral(n, &sq))
}

/// Derivative data at one grid time.
struct StepSample<S> {
    horizontal: S,
    generator: S,
    quadratic: S,
    vertical: FourierField<S>,
}

fn missing(name: String, what: &'static str) -> Error {
    Error::MissingDerivative { name, what }
}

/// Finite-difference fields from a bumped evaluator `b(x, a) = F(μ + aδ_x)`.
fn numeric_fields<S: Scalar>(
    f0: S,
    eps: S,
    modes: usize,
    bumped: &dyn Fn(CirclePoint<S>, S) -> Result<S>,
    need_first: bool,
    need_diag: bool,
) -> Result<(Option<FourierField<S>>, Option<FourierField<S>>)> {
    let nodes = FourierField::<S>::collocation_nodes(4 * modes.max(1));
    let mut first = Vec::with_capacity(nodes.len());
    let mut diag = Vec::with_capacity(nodes.len());
    let (two, three, four, five) = (S::lit(2.0), S::lit(3.0), S::lit(4.0), S::lit(5.0));
    for x in &nodes {
        let f1 = bumped(*x, eps)?;
        let f2 = bumped(*x, two * eps)?;
        if need_first {
            first.push((four * f1 - three * f0 - f2) / (two * eps));
        }
        if need_diag {
            let f3 = bumped(*x, three * eps)?;
            diag.push((two * f0 - five * f1 + four * f2 - f3) / (eps * eps));
        }
    }
    Ok((
        need_first.then(|| FourierField::from_samples(&first, modes)),
        need_diag.then(|| FourierField::from_samples(&diag, modes)),
    ))
}

fn assemble<S: Scalar>(
    path: &MeasurePath<S>,
    t: S,
    name: String,
    limit: S,
    values: (S, S),
    mut sample: impl FnMut(usize) -> Result<(StepSample<S>, bool)>,
) -> Result<ItoReport<S>> {
    let traj = path.trajectory();
    let n = grid_end(traj, t)?;
    let c = path.params().c;
    let (mut time, mut generator, mut quadratic, mut mart) = (S::zero(), S::zero(), S::zero(), S::zero());
    let mut used_fallback = false;
    for k in 0..n {
        let dt = traj.times()[k + 1] - traj.times()[k];
        let (s, fallback) = sample(k)?;
        used_fallback |= fallback;
        time = time + dt * s.horizontal;
        generator = generator + dt * s.generator;
        quadratic = quadratic + dt * s.quadratic;
        mart = mart + martingale_step(traj, k, &s.vertical, limit)?;
    }
    let quadratic = S::lit(0.5) * c * quadratic;
    let lhs = values.1 - values.0;
    let extinct = traj.snapshots()[..=n].iter().any(|m| m.is_empty());
    Ok(ItoReport {
        functional: name,
        replicate: path.replicate(),
        seed: path.params().seed,
        dt: path.params().dt,
        t: traj.times()[n],
        lhs,
        term_time: time,
        term_generator: generator,
        term_quadratic: quadratic,
        term_martingale: mart,
        residual: lhs - (time + generator + quadratic + mart),
        numeric_fallback: used_fallback,
        extinct_before_t: extinct,
    })
}

/// Itô expansion of `F(t, X(t))` for a function of the current measure.
pub fn ito_terms_state<S: Scalar>(
    f: &dyn StateFunctional<S>,
    path: &MeasurePath<S>,
    t: S,
    opts: &AssemblyOptions<S>,
) -> Result<ItoReport<S>> {
    let traj: &Trajectory<S> = path.trajectory();
    let n = grid_end(traj, t)?;
    let times = traj.times();
    let f_start = f.eval(times[0], &PathState::new(traj, 0));
    let f_end = f.eval(times[n], &PathState::new(traj, n));
    assemble(path, t, f.name(), opts.integrand_bound, (f_start, f_end), |k| {
        let tk = times[k];
        let state = PathState::new(traj, k);
        let mu: &dyn MeasureState<S> = &state;
        let mut fallback = false;

        let horizontal = match f.time_derivative(tk, mu) {
            Some(v) => v,
            None if opts.numeric_fallback => {
                fallback = true;
                let h = times[k + 1] - tk;
                (f.eval(tk + h, mu) - f.eval(tk, mu)) / h
            }
            None => return Err(missing(f.name(), "time derivative")),
        };
        let mut vertical = f.vertical_field(tk, mu);
        let mut diag = f.vertical2_diag_field(tk, mu);
        let mut gen = f.generator_vertical_field(tk, mu);
        if vertical.is_none() || diag.is_none() {
            if !opts.numeric_fallback {
                return Err(missing(f.name(), if vertical.is_none() { "vertical derivative" } else { "second vertical derivative" }));
            }
            fallback = true;
            let eps = opts.eps.unwrap_or_else(|| S::lit(1e-4) * mu.total_mass().max(S::one()));
            let bumped = |x: CirclePoint<S>, a: S| -> Result<S> { Ok(f.eval(tk, &BumpedState::new(mu, x, a)?)) };
            let (first, second) = numeric_fields(
                f.eval(tk, mu),
                eps,
                opts.projection_modes,
                &bumped,
                vertical.is_none(),
                diag.is_none(),
            )?;
            if first.is_some() {
                gen = first.as_ref().map(|v| v.apply_generator());
                vertical = first;
            }
            if second.is_some() {
                diag = second;
            }
        }
        let vertical = vertical.expect("vertical field");
        let gen = gen.unwrap_or_else(|| vertical.apply_generator());
        Ok((
            StepSample {
                horizontal,
                generator: traj.integrate(k, &gen),
                quadratic: traj.integrate(k, &diag.expect("diagonal field")),
                vertical,
            },
            fallback,
        ))
    })
}

fn functional_vertical_field<S: Scalar>(
    f: &dyn Functional<S>,
    sp: &StoppedPath<S>,
    route: VerticalRoute,
) -> Option<FourierField<S>> {
    match route {
        VerticalRoute::Direct => f.vertical_field(sp),
        VerticalRoute::Bundle => bundle_vertical_field(f, &bundle_project(sp)),
    }
}

/// Functional Itô expansion of `F(t, X_t)` for a path functional.
pub fn ito_terms_functional<S: Scalar>(
    f: &dyn Functional<S>,
    path: &MeasurePath<S>,
    t: S,
    opts: &AssemblyOptions<S>,
) -> Result<ItoReport<S>> {
    let traj: &Arc<Trajectory<S>> = path.trajectory();
    let n = grid_end(traj, t)?;
    let f_start = f.eval(&stop_at_index(traj, 0));
    let f_end = f.eval(&stop_at_index(traj, n));
    assemble(path, t, f.name(), opts.integrand_bound, (f_start, f_end), |k| {
        let sp = stop_at_index(traj, k);
        let mut fallback = false;
        let horizontal = match f.horizontal(&sp) {
            Some(v) => v,
            None if opts.numeric_fallback => {
                fallback = true;
                numeric_horizontal_derivative(f, &sp, default_horizontal_step(&sp))?
            }
            None => return Err(missing(f.name(), "horizontal derivative")),
        };
        let mut vertical = functional_vertical_field(f, &sp, opts.route);
        let mut diag = f.vertical2_diag_field(&sp);
        let mut gen = match opts.route {
            VerticalRoute::Direct => f.generator_vertical_field(&sp),
            VerticalRoute::Bundle => vertical.as_ref().map(|v| v.apply_generator()),
        };
        if vertical.is_none() || diag.is_none() {
            if !opts.numeric_fallback {
                return Err(missing(f.name(), if vertical.is_none() { "vertical derivative" } else { "second vertical derivative" }));
            }
            fallback = true;
            let eps = opts.eps.unwrap_or_else(|| default_vertical_eps(&sp));
            let nodes = FourierField::<S>::collocation_nodes(4 * opts.projection_modes.max(1));
            if vertical.is_none() {
                let samples = nodes
                    .iter()
                    .map(|x| match opts.route {
                        VerticalRoute::Direct => numeric_vertical_derivative(f, &sp, *x, eps),
                        VerticalRoute::Bundle => bundle_vertical_derivative(f, &bundle_project(&sp), *x, eps),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let field = FourierField::from_samples(&samples, opts.projection_modes);
                gen = Some(field.apply_generator());
                vertical = Some(field);
            }
            if diag.is_none() {
                let samples = nodes
                    .iter()
                    .map(|x| numeric_vertical2_diagonal(f, &sp, *x, eps))
                    .collect::<Result<Vec<_>>>()?;
                diag = Some(FourierField::from_samples(&samples, opts.projection_modes));
            }
        }
        let vertical = vertical.expect("vertical field");
        let gen = gen.unwrap_or_else(|| vertical.apply_generator());
        Ok((
            StepSample {
                horizontal,
                generator: sp.integrate_current(&gen),
                quadratic: sp.integrate_current(&diag.expect("diagonal field")),
                vertical,
            },
            fallback,
        ))
    })
}

/// Residual of `F(t, X_t) = F(0, X_0) + ∫₀ᵗ ∫ 𝒟ₓF(s, X_s) M(ds, dx)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RepresentationReport<S> {
    pub replicate: u64,
    /// `F(t, X_t) − F(0, X_0)`.
    pub lhs: S,
    pub integral: S,
    pub residual: S,
    pub value_end: S,
}

pub fn representation_residual<S: Scalar>(
    f: &dyn Functional<S>,
    path: &MeasurePath<S>,
    t: S,
    opts: &AssemblyOptions<S>,
) -> Result<RepresentationReport<S>> {
    if !f.is_martingale() {
        return Err(Error::NotAMartingaleFunctional(f.name()));
    }
    let traj = path.trajectory();
    let n = grid_end(traj, t)?;
    let f0 = f.eval(&stop_at_index(traj, 0));
    let fn_ = f.eval(&stop_at_index(traj, n));
    let integral = integrate_martingale_measure(traj, traj.times()[n], opts.integrand_bound, |k, _| {
        let sp = stop_at_index(traj, k);
        match functional_vertical_field(f, &sp, opts.route) {
            Some(v) => Ok(v),
            None if opts.numeric_fallback => {
                let eps = opts.eps.unwrap_or_else(|| default_vertical_eps(&sp));
                let samples = FourierField::<S>::collocation_nodes(4 * opts.projection_modes.max(1))
                    .iter()
                    .map(|x| numeric_vertical_derivative(f, &sp, *x, eps))
                    .collect::<Result<Vec<_>>>()?;
                Ok(FourierField::from_samples(&samples, opts.projection_modes))
            }
            None => Err(missing(f.name(), "vertical derivative")),
        }
    })?;
    let lhs = fn_ - f0;
    Ok(RepresentationReport {
        replicate: path.replicate(),
        lhs,
        integral,
        residual: lhs - integral,
        value_end: fn_,
    })
}

/// Monte Carlo summary of the martingale problem for one test function.
#[derive(Clone, Debug, PartialEq)]
pub struct MpSummary {
    pub replicates: usize,
    /// Mean and standard error of `M(T)(φ)`.
    pub mean_martingale: f64,
    pub se_martingale: f64,
    pub mean_qv_empirical: f64,
    pub mean_qv_predicted: f64,
    /// `None` when the predicted quadratic variation vanishes.
    pub qv_ratio: Option<f64>,
    pub pass_mean: bool,
    pub pass_qv: Option<bool>,
    /// Per replicate `(M(T)(φ), Σ ΔM², ν-prediction)`.
    pub per_replicate: Vec<(f64, f64, f64)>,
}

impl MpSummary {
    pub fn passed(&self) -> bool {
        self.pass_mean && self.pass_qv.unwrap_or(true)
    }
}

pub const MP_MIN_REPLICATES: usize = 30;

/// Checks the martingale problem for `φ` over a collection of paths.
pub fn mp_verification<S: Scalar>(
    paths: &[MeasurePath<S>],
    phi: &FourierField<S>,
    thresholds: &Thresholds,
) -> Result<MpSummary> {
    if paths.len() < MP_MIN_REPLICATES {
        return Err(Error::TooFewReplicates {
            needed: MP_MIN_REPLICATES,
            got: paths.len(),
        });
    }
    let rows = paths
        .iter()
        .map(|p| mp_replicate(p, phi))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_mp(rows, thresholds))
}

/// `(M(T)(φ), Σ ΔM², ν-prediction)` for one path.
pub fn mp_replicate<S: Scalar>(path: &MeasurePath<S>, phi: &FourierField<S>) -> Result<(f64, f64, f64)> {
    let incs = martingale_increments(path, phi);
    let predicted = quadratic_variation_nu(path, path.params().c, phi, path.horizon())?;
    Ok((
        incs.total().as_f64(),
        quadratic_variation_empirical(&incs).as_f64(),
        predicted.as_f64(),
    ))
}

/// Reduces per-replicate rows (in replicate order) to an [`MpSummary`].
pub fn summarize_mp(rows: Vec<(f64, f64, f64)>, thresholds: &Thresholds) -> MpSummary {
    let m: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let s = Summary::of(&m);
    let qv_emp = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
    let qv_pred = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
    let qv_ratio = (qv_pred > 0.0).then(|| qv_emp / qv_pred);
    MpSummary {
        replicates: rows.len(),
        mean_martingale: s.mean,
        se_martingale: s.se,
        mean_qv_empirical: qv_emp,
        mean_qv_predicted: qv_pred,
        qv_ratio,
        pass_mean: s.mean.abs() <= thresholds.se_multiple * s.se,
        pass_qv: qv_ratio.map(|r| (r - 1.0).abs() <= thresholds.qv_tolerance),
        per_replicate: rows,
    }
}

/// Residual study over a replicate set: `RMS(residual) / RMS(lhs)`.
pub fn residual_ratio<S: Scalar>(reports: &[ItoReport<S>]) -> f64 {
    let res: Vec<S> = reports.iter().map(|r| r.residual).collect();
    let lhs: Vec<S> = reports.iter().map(|r| r.lhs).collect();
    crate::stats::rms(&res) / crate::stats::rms(&lhs)
}
