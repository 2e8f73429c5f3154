//! Stopped paths, the `d∞` path metric, vertical and horizontal
//! perturbations, finite-difference functional derivatives, the dyadic
//! approximation `Appⁿ`, and the bundle maps between `Λ_T` and `Λ̃_t`.
//!
//! A [`StoppedPath`] is the canonical representative `(t, ω_t)` with
//! `ω_t(u) = ω(t ∧ u)`. It shares the underlying [`Trajectory`] and records
//! vertical bumps as overlays, so perturbing a path never copies the grid.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::geometry::{CirclePoint, FiniteMeasure, FourierField, FourierMoments, WEAK_DISTANCE_MODES};
use crate::scalar::Scalar;
use crate::trajectory::{MeasureState, PathState, Trajectory};

/// Mass `weight·δ_position` present from time `from` onward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overlay<S> {
    pub from: S,
    pub position: CirclePoint<S>,
    pub weight: S,
}

#[derive(Clone, Debug)]
pub struct StoppedPath<S> {
    traj: Arc<Trajectory<S>>,
    t: S,
    /// Last grid index whose snapshot is visible; lookups past it are frozen.
    end: usize,
    overlays: Vec<Overlay<S>>,
}

fn check_time<S: Scalar>(t: S, horizon: S) -> Result<()> {
    let tol = S::time_tolerance(horizon);
    if !(t >= -tol) || !(t <= horizon + tol) {
        return Err(Error::TimeOutOfRange {
            time: t.as_f64(),
            lo: 0.0,
            hi: horizon.as_f64(),
        });
    }
    Ok(())
}

/// `ω_t`, with `t` snapped to the nearest grid time.
pub fn stop<S: Scalar>(traj: &Arc<Trajectory<S>>, t: S) -> Result<StoppedPath<S>> {
    check_time(t, traj.horizon())?;
    let end = traj.nearest_index(t);
    Ok(StoppedPath {
        traj: Arc::clone(traj),
        t: traj.times()[end],
        end,
        overlays: Vec::new(),
    })
}

/// Stopped path at grid index `index` (no snapping needed).
pub fn stop_at_index<S: Scalar>(traj: &Arc<Trajectory<S>>, index: usize) -> StoppedPath<S> {
    assert!(index < traj.len(), "grid index {index} out of range");
    StoppedPath {
        traj: Arc::clone(traj),
        t: traj.times()[index],
        end: index,
        overlays: Vec::new(),
    }
}

/// `ω_{t−}`: the path on `[0, t)` frozen at its left limit. `t` must be a
/// positive grid time; the left limit on the grid is the previous snapshot.
pub fn pre_stop<S: Scalar>(traj: &Arc<Trajectory<S>>, t: S) -> Result<StoppedPath<S>> {
    check_time(t, traj.horizon())?;
    let k = traj.nearest_index(t);
    let tk = traj.times()[k];
    if k == 0 || (tk - t).abs() > S::time_tolerance(traj.horizon()) {
        return Err(Error::TimeOutOfRange {
            time: t.as_f64(),
            lo: traj.times().get(1).map(|v| v.as_f64()).unwrap_or(f64::NAN),
            hi: traj.horizon().as_f64(),
        });
    }
    Ok(StoppedPath {
        traj: Arc::clone(traj),
        t: tk,
        end: k - 1,
        overlays: Vec::new(),
    })
}

impl<S: Scalar> StoppedPath<S> {
    pub fn t(&self) -> S {
        self.t
    }

    pub fn trajectory(&self) -> &Arc<Trajectory<S>> {
        &self.traj
    }

    pub fn end_index(&self) -> usize {
        self.end
    }

    pub fn overlays(&self) -> &[Overlay<S>] {
        &self.overlays
    }

    pub fn horizon(&self) -> S {
        self.traj.horizon()
    }

    /// Composition `stop(ω_t, s) = ω_{s ∧ t}`.
    pub fn stop(&self, s: S) -> Result<StoppedPath<S>> {
        check_time(s, self.horizon())?;
        if s >= self.t {
            return Ok(self.clone());
        }
        let idx = self.traj.nearest_index(s).min(self.end);
        let t = self.traj.times()[idx];
        let overlays = self.overlays.iter().copied().filter(|o| o.from <= t).collect();
        Ok(StoppedPath {
            traj: Arc::clone(&self.traj),
            t,
            end: idx,
            overlays,
        })
    }

    fn index_for(&self, u: S) -> usize {
        self.traj.index_at(u.min(self.t)).min(self.end)
    }

    fn visible_overlays(&self, u: S) -> impl Iterator<Item = &Overlay<S>> {
        let cut = u.min(self.t) + S::time_tolerance(self.horizon());
        self.overlays.iter().filter(move |o| o.from <= cut)
    }

    /// `ω(t ∧ u)` as a measure.
    pub fn lookup(&self, u: S) -> FiniteMeasure<S> {
        let base = self.traj.snapshot(self.index_for(u));
        let extra: Vec<_> = self.visible_overlays(u).map(|o| (o.position, o.weight)).collect();
        if extra.is_empty() {
            return base.clone();
        }
        let mut atoms = base.atoms().to_vec();
        atoms.extend(extra);
        FiniteMeasure::new(atoms).expect("positive weights")
    }

    /// Fourier moments of `ω(t ∧ u)` up to `modes`.
    pub fn lookup_moments(&self, u: S, modes: usize) -> FourierMoments<S> {
        let mut m = self.traj.moments(self.index_for(u), modes);
        for o in self.visible_overlays(u) {
            m.add_atom(o.position, o.weight);
        }
        m
    }

    /// `ω(t)` as a cheap state view.
    pub fn current_state(&self) -> PathState<'_, S> {
        PathState::with_extra(
            &self.traj,
            self.end,
            self.overlays.iter().map(|o| (o.position, o.weight)).collect(),
        )
    }

    /// `⟨ω(t), field⟩`.
    pub fn integrate_current(&self, field: &FourierField<S>) -> S {
        let base = self.traj.integrate(self.end, field);
        self.overlays
            .iter()
            .fold(base, |acc, o| acc + o.weight * field.eval(o.position))
    }

    /// `∫_0^t ⟨ω(s), field⟩ ds` for the right-continuous step path.
    pub fn time_integral(&self, field: &FourierField<S>) -> S {
        let grid = self.traj.running_integral(self.end, field);
        let tail = (self.t - self.traj.times()[self.end]) * self.traj.integrate(self.end, field);
        self.overlays.iter().fold(grid + tail, |acc, o| {
            acc + (self.t - o.from) * o.weight * field.eval(o.position)
        })
    }

    /// `ω_t + ε δ_x 1_{[t,T]}`.
    pub fn vertical_bump(&self, x: CirclePoint<S>, eps: S) -> Result<StoppedPath<S>> {
        if !(eps > S::zero()) || !eps.is_finite() {
            return Err(Error::NonPositiveEps(eps.as_f64()));
        }
        let mut out = self.clone();
        out.overlays.push(Overlay {
            from: self.t,
            position: x,
            weight: eps,
        });
        Ok(out)
    }

    /// `(t + h, ω_t)`: the same path held at `ω(t)` for `h` longer.
    pub fn horizontal_extend(&self, h: S) -> Result<StoppedPath<S>> {
        if !(h >= S::zero()) {
            return Err(Error::TimeOutOfRange {
                time: (self.t + h).as_f64(),
                lo: self.t.as_f64(),
                hi: self.horizon().as_f64(),
            });
        }
        self.extend_to(self.t + h)
    }

    /// Frozen extension to the later time `s`.
    pub fn extend_to(&self, s: S) -> Result<StoppedPath<S>> {
        let tol = S::time_tolerance(self.horizon());
        if !(s >= self.t - tol) || s > self.horizon() + tol {
            return Err(Error::TimeOutOfRange {
                time: s.as_f64(),
                lo: self.t.as_f64(),
                hi: self.horizon().as_f64(),
            });
        }
        let mut out = self.clone();
        out.t = s.max(self.t);
        Ok(out)
    }

    /// Times where some lookup of `self` may change.
    fn breakpoints(&self) -> Vec<S> {
        let mut v: Vec<S> = self.traj.times()[..=self.end].to_vec();
        v.push(self.t);
        v.extend(self.overlays.iter().map(|o| o.from));
        v
    }

    /// Whether both paths have the same lookups at every time, ignoring the
    /// stop times.
    pub fn same_path(&self, other: &StoppedPath<S>) -> bool {
        if Arc::ptr_eq(&self.traj, &other.traj) && self.end == other.end && self.overlays == other.overlays {
            return true;
        }
        merged_breakpoints(self, other).into_iter().all(|u| {
            self.lookup(u).canonical() == other.lookup(u).canonical()
        })
    }
}

fn merged_breakpoints<S: Scalar>(a: &StoppedPath<S>, b: &StoppedPath<S>) -> Vec<S> {
    let mut v = a.breakpoints();
    v.extend(b.breakpoints());
    v.sort_by(|x, y| x.partial_cmp(y).expect("finite times"));
    v.dedup();
    v
}

impl<S: Scalar> PartialEq for StoppedPath<S> {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.same_path(other)
    }
}

/// `sup_u d̃(a(u), b(u)) + |t_a − t_b|`. Both paths are step functions, so the
/// supremum is a maximum over the merged breakpoints.
pub fn path_distance<S: Scalar>(a: &StoppedPath<S>, b: &StoppedPath<S>) -> S {
    let spatial = merged_breakpoints(a, b)
        .into_iter()
        .map(|u| {
            a.lookup_moments(u, WEAK_DISTANCE_MODES)
                .weak_distance(&b.lookup_moments(u, WEAK_DISTANCE_MODES))
        })
        .fold(S::zero(), S::max);
    spatial + (a.t - b.t).abs()
}

/// Default vertical step `1e-4·max(1, mass)`.
pub fn default_vertical_eps<S: Scalar>(sp: &StoppedPath<S>) -> S {
    let mass = sp.current_state().total_mass();
    S::lit(1e-4) * mass.max(S::one())
}

/// Default horizontal step: the grid step after the stop time, or the last
/// grid step at the end of the grid.
pub fn default_horizontal_step<S: Scalar>(sp: &StoppedPath<S>) -> S {
    let times = sp.traj.times();
    let i = sp.end;
    if i + 1 < times.len() {
        times[i + 1] - times[i]
    } else if i > 0 {
        times[i] - times[i - 1]
    } else {
        sp.horizon()
    }
}

/// One-sided second-order vertical derivative
/// `(−3F(ω) + 4F(ω + εδ_x) − F(ω + 2εδ_x)) / (2ε)`.
pub fn numeric_vertical_derivative<S: Scalar>(
    f: &dyn Functional<S>,
    sp: &StoppedPath<S>,
    x: CirclePoint<S>,
    eps: S,
) -> Result<S> {
    let f0 = f.eval(sp);
    let f1 = f.eval(&sp.vertical_bump(x, eps)?);
    let f2 = f.eval(&sp.vertical_bump(x, eps + eps)?);
    Ok((S::lit(4.0) * f1 - S::lit(3.0) * f0 - f2) / (eps + eps))
}

/// One-sided second-order estimate of `𝒟ₓₓF` on the diagonal,
/// `(2F₀ − 5F₁ + 4F₂ − F₃) / ε²` with `F_j = F(ω + jεδ_x)`.
pub fn numeric_vertical2_diagonal<S: Scalar>(
    f: &dyn Functional<S>,
    sp: &StoppedPath<S>,
    x: CirclePoint<S>,
    eps: S,
) -> Result<S> {
    let fj = |j: f64| -> Result<S> {
        if j == 0.0 {
            Ok(f.eval(sp))
        } else {
            Ok(f.eval(&sp.vertical_bump(x, S::lit(j) * eps)?))
        }
    };
    let (f0, f1, f2, f3) = (fj(0.0)?, fj(1.0)?, fj(2.0)?, fj(3.0)?);
    Ok((S::lit(2.0) * f0 - S::lit(5.0) * f1 + S::lit(4.0) * f2 - f3) / (eps * eps))
}

/// Forward difference `(F(t + h, ω_t) − F(t, ω_t)) / h` on the frozen path.
pub fn numeric_horizontal_derivative<S: Scalar>(f: &dyn Functional<S>, sp: &StoppedPath<S>, h: S) -> Result<S> {
    if !(h > S::zero()) {
        return Err(Error::TimeOutOfRange {
            time: (sp.t + h).as_f64(),
            lo: sp.t.as_f64(),
            hi: sp.horizon().as_f64(),
        });
    }
    let ext = sp.horizontal_extend(h)?;
    Ok((f.eval(&ext) - f.eval(sp)) / h)
}

/// `{j/2ⁿ : j/2ⁿ < t} ∪ {t}`.
pub fn dyadic_mesh<S: Scalar>(n: u32, t: S) -> Vec<S> {
    let step = S::lit(0.5f64.powi(n as i32));
    let tol = S::time_tolerance(t);
    let mut mesh = Vec::new();
    let mut j = 0usize;
    loop {
        let tau = S::count(j) * step;
        if tau >= t - tol {
            break;
        }
        mesh.push(tau);
        j += 1;
    }
    mesh.push(t.max(S::zero()));
    mesh
}

/// `Appⁿ(ω_t) = Σ ω(τ_{i+1}) 1_{[τ_i, τ_{i+1})} + ω(t) 1_{[t,T]}` as a
/// trajectory on the dyadic mesh. Mesh times read the grid value in force.
pub fn dyadic_approximation<S: Scalar>(traj: &Trajectory<S>, t: S, n: u32) -> Result<Arc<Trajectory<S>>> {
    check_time(t, traj.horizon())?;
    let mesh = dyadic_mesh(n, t);
    let last = mesh.len() - 1;
    let snapshots = (0..mesh.len())
        .map(|i| traj.value_at(mesh[(i + 1).min(last)]).clone())
        .collect();
    Ok(Arc::new(Trajectory::new(mesh, snapshots, traj.horizon())?))
}

/// One mesh interval of the telescoping decomposition of
/// `F(t, Appⁿ_{t−}) − F(0, X(0))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DyadicLeg<S> {
    pub tau: S,
    /// `F(τ_i, Appⁿ_{τ_i}) − F(τ_i, Appⁿ_{τ_i−})`, with `Appⁿ_{0−} = X(0)`.
    pub vertical: S,
    /// `F(τ_{i+1}, Appⁿ_{τ_{i+1}−}) − F(τ_i, Appⁿ_{τ_i})`.
    pub horizontal: S,
}

/// Per-interval vertical and horizontal legs for `Appⁿ(X_t)`. Their sum
/// telescopes to `F(t, Appⁿ_{t−}) − F(0, X(0))`.
pub fn dyadic_decomposition<S: Scalar>(
    f: &dyn Functional<S>,
    traj: &Trajectory<S>,
    t: S,
    n: u32,
) -> Result<Vec<DyadicLeg<S>>> {
    let app = dyadic_approximation(traj, t, n)?;
    let mesh = app.times().to_vec();
    let start = Arc::new(Trajectory::new(vec![S::zero()], vec![traj.snapshot(0).clone()], traj.horizon())?);
    let mut previous_left = f.eval(&stop_at_index(&start, 0));
    let mut legs = Vec::with_capacity(mesh.len().saturating_sub(1));
    for i in 0..mesh.len() - 1 {
        let at = stop_at_index(&app, i);
        let value = f.eval(&at);
        // Appⁿ_{τ_{i+1}−} is Appⁿ_{τ_i} held until τ_{i+1}
        let left = f.eval(&at.extend_to(mesh[i + 1])?);
        legs.push(DyadicLeg {
            tau: mesh[i],
            vertical: value - previous_left,
            horizontal: left - value,
        });
        previous_left = left;
    }
    Ok(legs)
}

/// Checks `Appⁿ(X_t)_{τ_{i+1}−} = Appⁿ(X_t)_{τ_i}` on every mesh interval,
/// and that `Appⁿ` holds `X(τ_{i+1})` on `[τ_i, τ_{i+1})`. Comparisons are exact.
pub fn prestop_identity_holds<S: Scalar>(traj: &Trajectory<S>, t: S, n: u32) -> Result<bool> {
    let app = dyadic_approximation(traj, t, n)?;
    let mesh = app.times();
    for i in 0..mesh.len() - 1 {
        let left = pre_stop(&app, mesh[i + 1])?;
        let at = stop_at_index(&app, i);
        if !left.same_path(&at) || app.snapshot(i) != traj.value_at(mesh[i + 1]) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Row of a convergence study: distances between `X_t` and `Appⁿ(X_t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow<S> {
    pub n: u32,
    pub mean_distance: S,
    pub max_distance: S,
}

impl<S: Scalar> ConvergenceRow<S> {
    pub const CSV_HEADER: &'static str = "n,mean_distance,max_distance";

    pub fn to_csv_row(&self) -> String {
        format!("{},{},{}", self.n, self.mean_distance, self.max_distance)
    }
}

/// `path_distance(X_t, Appⁿ(X_t))` averaged over `paths` for every level.
pub fn dyadic_convergence<S: Scalar>(
    paths: &[Arc<Trajectory<S>>],
    t: S,
    levels: &[u32],
) -> Result<Vec<ConvergenceRow<S>>> {
    levels
        .iter()
        .map(|&n| {
            let mut sum = S::zero();
            let mut max = S::zero();
            for p in paths {
                let d = path_distance(&stop(p, t)?, &stop(&dyadic_approximation(p, t, n)?, t)?);
                sum = sum + d;
                max = max.max(d);
            }
            Ok(ConvergenceRow {
                n,
                mean_distance: sum / S::count(paths.len().max(1)),
                max_distance: max,
            })
        })
        .collect()
}

/// Element `ω̃_t` of the bundle fibre `Λ̃_t`: a path defined on `[0, t]` only.
#[derive(Clone, Debug)]
pub struct BundlePath<S> {
    inner: StoppedPath<S>,
}

impl<S: Scalar> BundlePath<S> {
    pub fn t(&self) -> S {
        self.inner.t
    }

    /// Value at `u`, or `None` beyond the domain `[0, t]`.
    pub fn lookup(&self, u: S) -> Option<FiniteMeasure<S>> {
        if u > self.inner.t + S::time_tolerance(self.inner.horizon()) || u < S::zero() {
            None
        } else {
            Some(self.inner.lookup(u))
        }
    }

    /// `ω̃_t + ε δ_x 1_{{t}}`: mass added at the final time slot only.
    pub fn final_bump(&self, x: CirclePoint<S>, eps: S) -> Result<BundlePath<S>> {
        Ok(BundlePath {
            inner: self.inner.vertical_bump(x, eps)?,
        })
    }
}

/// Restriction `Λ_T → Λ̃_t` of `ω_t` to `[0, t]`.
pub fn bundle_project<S: Scalar>(sp: &StoppedPath<S>) -> BundlePath<S> {
    BundlePath { inner: sp.clone() }
}

/// The map `φ`: extends `ω̃_t` to `[0, T]` by holding `ω(t)`.
pub fn bundle_restrict<S: Scalar>(bp: &BundlePath<S>) -> StoppedPath<S> {
    bp.inner.clone()
}

/// `Δ_x f(ω̃_t)` for `f = F ∘ φ`, by the same one-sided stencil as
/// [`numeric_vertical_derivative`] applied to final-slot bumps.
pub fn bundle_vertical_derivative<S: Scalar>(
    f: &dyn Functional<S>,
    bp: &BundlePath<S>,
    x: CirclePoint<S>,
    eps: S,
) -> Result<S> {
    let eval = |b: &BundlePath<S>| f.eval(&bundle_restrict(b));
    let f0 = eval(bp);
    let f1 = eval(&bp.final_bump(x, eps)?);
    let f2 = eval(&bp.final_bump(x, eps + eps)?);
    Ok((S::lit(4.0) * f1 - S::lit(3.0) * f0 - f2) / (eps + eps))
}

/// Analytic `𝒟ₓF` read through the bundle: `F`'s vertical field at `φ(ω̃_t)`.
pub fn bundle_vertical_field<S: Scalar>(f: &dyn Functional<S>, bp: &BundlePath<S>) -> Option<FourierField<S>> {
    f.vertical_field(&bundle_restrict(bp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{CylindricalPath, CylindricalState, NegExp, Power, Product, StateSlice};
    use approx::assert_abs_diff_eq;

    fn p(x: f64) -> CirclePoint<f64> {
        CirclePoint::new(x)
    }

    fn toy() -> Arc<Trajectory<f64>> {
        let snaps: Vec<_> = (0..9)
            .map(|i| {
                FiniteMeasure::new(vec![(p(0.1 * i as f64), 1.0 + 0.1 * i as f64), (p(0.5), 0.5)]).unwrap()
            })
            .collect();
        let times: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
        Arc::new(Trajectory::new(times, snaps, 1.0).unwrap())
    }

    fn constant_path() -> Arc<Trajectory<f64>> {
        let mu = FiniteMeasure::new(vec![(p(0.2), 1.0), (p(0.7), 0.5)]).unwrap();
        Arc::new(Trajectory::constant(mu, 0.125, 1.0).unwrap())
    }

    #[test]
    fn stop_examples() {
        let tr = toy();
        let full = stop(&tr, 1.0).unwrap();
        for (i, u) in tr.times().iter().enumerate() {
            assert_eq!(&full.lookup(*u), tr.snapshot(i));
        }
        let start = stop(&tr, 0.0).unwrap();
        for u in tr.times() {
            assert_eq!(&start.lookup(*u), tr.snapshot(0));
        }
        let a = stop(&tr, 0.75).unwrap().stop(0.25).unwrap();
        assert_eq!(a, stop(&tr, 0.25).unwrap());
        let b = stop(&tr, 0.25).unwrap().stop(0.75).unwrap();
        assert_eq!(b, stop(&tr, 0.25).unwrap());
        assert!(matches!(stop(&tr, 1.5), Err(Error::TimeOutOfRange { .. })));
        // snapping to the nearest grid time
        assert_eq!(stop(&tr, 0.26).unwrap().t(), 0.25);
    }

    #[test]
    fn pre_stop_examples() {
        let tr = toy();
        let ps = pre_stop(&tr, 0.5).unwrap();
        assert_eq!(&ps.lookup(1.0), tr.snapshot(3));
        assert_eq!(&ps.lookup(0.25), tr.snapshot(2));
        assert!(pre_stop(&tr, 0.0).is_err());
        assert!(pre_stop(&tr, 0.3).is_err());
        let c = constant_path();
        assert!(pre_stop(&c, 0.5).unwrap().same_path(&stop(&c, 0.5).unwrap()));
    }

    #[test]
    fn distance_examples() {
        let tr = toy();
        let a = stop(&tr, 0.5).unwrap();
        assert_eq!(path_distance(&a, &a), 0.0);
        let c = constant_path();
        let d = path_distance(&stop(&c, 0.25).unwrap(), &stop(&c, 0.75).unwrap());
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-15);
        let b = stop(&tr, 0.75).unwrap();
        assert!(path_distance(&a, &b) > 0.25);
        assert_eq!(path_distance(&a, &b), path_distance(&b, &a));
    }

    #[test]
    fn vertical_bump_examples() {
        let tr = toy();
        let sp = stop(&tr, 0.5).unwrap();
        let phi = FourierField::from_parts(0.1, vec![1.0], vec![0.3]);
        let b = sp.vertical_bump(p(0.3), 0.25).unwrap();
        assert_abs_diff_eq!(
            b.integrate_current(&phi) - sp.integrate_current(&phi),
            0.25 * phi.eval(p(0.3)),
            epsilon = 1e-14
        );
        for u in [0.0, 0.125, 0.375] {
            assert_eq!(b.lookup(u), sp.lookup(u));
        }
        assert_abs_diff_eq!(b.lookup(1.0).total_mass(), sp.lookup(1.0).total_mass() + 0.25, epsilon = 1e-14);
        assert!(matches!(sp.vertical_bump(p(0.3), 0.0), Err(Error::NonPositiveEps(_))));
        assert!(matches!(sp.vertical_bump(p(0.3), -1.0), Err(Error::NonPositiveEps(_))));
    }

    #[test]
    fn time_integral_matches_quadrature_of_lookups() {
        let tr = toy();
        let phi = FourierField::from_parts(0.5, vec![0.2], vec![-0.7]);
        let sp = stop(&tr, 0.625).unwrap().vertical_bump(p(0.9), 0.3).unwrap().horizontal_extend(0.1).unwrap();
        // fine midpoint rule on the step function
        let n = 7250;
        let h = sp.t() / n as f64;
        let direct: f64 = (0..n).map(|j| sp.lookup((j as f64 + 0.5) * h).integrate(&phi) * h).sum();
        assert_abs_diff_eq!(sp.time_integral(&phi), direct, epsilon = 1e-3);
    }

    #[test]
    fn numeric_vertical_examples() {
        let tr = toy();
        let sp = stop(&tr, 0.5).unwrap();
        let phi = FourierField::from_parts(0.2, vec![1.0], vec![0.0, 0.5]);
        let linear = StateSlice(CylindricalState::linear(phi.clone()));
        let d = numeric_vertical_derivative(&linear, &sp, p(0.3), 1e-3).unwrap();
        assert_abs_diff_eq!(d, phi.eval(p(0.3)), epsilon = 1e-10);

        // ⟨μ,1⟩² at the unit mass at 0: derivative 2
        let unit = Arc::new(Trajectory::constant(FiniteMeasure::dirac(p(0.0), 1.0).unwrap(), 0.5, 1.0).unwrap());
        let sq = StateSlice(CylindricalState::new(Power::new(2), vec![FourierField::constant(1.0)]));
        let d = numeric_vertical_derivative(&sq, &stop(&unit, 0.5).unwrap(), p(0.77), 1e-4).unwrap();
        assert_abs_diff_eq!(d, 2.0, epsilon = 1e-8);

        let konst = crate::functionals::Constant::new(3.0);
        assert_eq!(numeric_vertical_derivative(&konst, &sp, p(0.1), 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn numeric_second_vertical_matches_chain_rule() {
        let tr = toy();
        let sp = stop(&tr, 0.5).unwrap();
        let phi = FourierField::from_parts(0.3, vec![0.4], vec![0.2]);
        let f = StateSlice(CylindricalState::new(NegExp::new(vec![1.0]), vec![phi.clone()]));
        let x = p(0.4);
        let expected = phi.eval(x).powi(2) * f.eval(&sp);
        let got = numeric_vertical2_diagonal(&f, &sp, x, 1e-3).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-5);
    }

    #[test]
    fn numeric_horizontal_examples() {
        let tr = toy();
        let sp = stop(&tr, 0.5).unwrap();
        let one = FourierField::constant(1.0);
        let timed = StateSlice(CylindricalState::time_weighted(one.clone()));
        let d = numeric_horizontal_derivative(&timed, &sp, 0.125).unwrap();
        assert_abs_diff_eq!(d, sp.integrate_current(&one), epsilon = 1e-12);

        let phi = FourierField::cosine(1, 1.0);
        let lin = StateSlice(CylindricalState::linear(phi.clone()));
        assert_eq!(numeric_horizontal_derivative(&lin, &sp, 0.125).unwrap(), 0.0);

        let integral = CylindricalPath::time_integral(phi.clone());
        let d = numeric_horizontal_derivative(&integral, &sp, 1e-3).unwrap();
        assert_abs_diff_eq!(d, sp.integrate_current(&phi), epsilon = 1e-9);
        assert!(numeric_horizontal_derivative(&integral, &sp, 0.75).is_err());
        assert!(numeric_horizontal_derivative(&integral, &sp, 0.0).is_err());
    }

    #[test]
    fn dyadic_mesh_examples() {
        assert_eq!(dyadic_mesh(2, 1.0), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(dyadic_mesh(0, 1.0), vec![0.0, 1.0]);
        assert_eq!(dyadic_mesh(1, 0.6), vec![0.0, 0.5, 0.6]);
        assert_eq!(dyadic_mesh(3, 0.0), vec![0.0]);
    }

    #[test]
    fn dyadic_approximation_examples() {
        let c = constant_path();
        let app = dyadic_approximation(&c, 1.0, 2).unwrap();
        for u in [0.0, 0.1, 0.3, 0.6, 0.99, 1.0] {
            assert_eq!(app.value_at(u), c.value_at(u));
        }
        let tr = toy();
        let app = dyadic_approximation(&tr, 0.75, 2).unwrap();
        assert_eq!(app.value_at(0.1), tr.value_at(0.25));
        assert_eq!(app.value_at(0.6), tr.value_at(0.75));
        assert_eq!(app.value_at(0.9), tr.value_at(0.75));
        // pre-stop identity: Appⁿ_{τ_{i+1}−} = Appⁿ_{τ_i}
        let mesh = dyadic_mesh(2, 0.75);
        for i in 0..mesh.len() - 1 {
            let left = pre_stop(&app, mesh[i + 1]).unwrap();
            let at = stop(&app, mesh[i]).unwrap();
            assert!(left.same_path(&at));
        }
        assert!(prestop_identity_holds(&tr, 0.75, 2).unwrap());
        assert!(prestop_identity_holds(&tr, 1.0, 3).unwrap());
    }

    #[test]
    fn dyadic_legs_telescope() {
        let tr = toy();
        let phi = FourierField::from_parts(0.5, vec![0.3], vec![0.1]);
        let f = CylindricalPath::new(Product, phi.clone(), FourierField::constant(1.0));
        let legs = dyadic_decomposition(&f, &tr, 0.75, 2).unwrap();
        let total: f64 = legs.iter().map(|l| l.vertical + l.horizontal).sum();
        let app = dyadic_approximation(&tr, 0.75, 2).unwrap();
        let end = pre_stop(&app, 0.75).unwrap();
        let start = Arc::new(Trajectory::new(vec![0.0], vec![tr.snapshot(0).clone()], 1.0).unwrap());
        let expected = f.eval(&end) - f.eval(&stop(&start, 0.0).unwrap());
        assert_abs_diff_eq!(total, expected, epsilon = 1e-13);
    }

    #[test]
    fn bundle_round_trip_and_derivative_equivalence() {
        let tr = toy();
        let sp = stop(&tr, 0.5).unwrap();
        let bp = bundle_project(&sp);
        assert_eq!(bundle_restrict(&bp), sp);
        assert!(bp.lookup(0.75).is_none());
        assert!(bp.lookup(0.5).is_some());
        let phi = FourierField::from_parts(0.3, vec![0.4], vec![0.2]);
        let f = StateSlice(CylindricalState::new(NegExp::new(vec![1.0]), vec![phi]));
        let x = p(0.61);
        let a = bundle_vertical_derivative(&f, &bp, x, 1e-4).unwrap();
        let b = numeric_vertical_derivative(&f, &sp, x, 1e-4).unwrap();
        assert_eq!(a, b);
        let fa = bundle_vertical_field(&f, &bp).unwrap();
        let fb = f.vertical_field(&sp).unwrap();
        assert_eq!(fa, fb);
    }
}
