//! Time-gridded measure trajectories, read as right-continuous step functions.

use std::sync::RwLock;

use crate::error::{Error, Result};
use crate::geometry::{CirclePoint, FiniteMeasure, FourierField, FourierMoments, WEAK_DISTANCE_MODES};
use crate::scalar::Scalar;

#[derive(Debug)]
struct MomentCache<S> {
    modes: usize,
    snapshots: Vec<FourierMoments<S>>,
    /// `running[j] = Σ_{i<j} (t_{i+1} − t_i) · moments_i`
    running: Vec<FourierMoments<S>>,
}

/// Snapshots `ω(t_0), …, ω(t_L)` on a strictly increasing grid inside
/// `[0, horizon]`. Between grid times the value is the last snapshot; past
/// the final grid time it stays frozen.
#[derive(Debug)]
pub struct Trajectory<S> {
    times: Vec<S>,
    snapshots: Vec<FiniteMeasure<S>>,
    horizon: S,
    cache: RwLock<Option<MomentCache<S>>>,
}

impl<S: Scalar> Clone for Trajectory<S> {
    fn clone(&self) -> Self {
        Trajectory {
            times: self.times.clone(),
            snapshots: self.snapshots.clone(),
            horizon: self.horizon,
            cache: RwLock::new(None),
        }
    }
}

impl<S: Scalar> Trajectory<S> {
    pub fn new(times: Vec<S>, snapshots: Vec<FiniteMeasure<S>>, horizon: S) -> Result<Self> {
        if times.is_empty() || times.len() != snapshots.len() {
            return Err(Error::InvalidTrajectory(format!(
                "{} times for {} snapshots",
                times.len(),
                snapshots.len()
            )));
        }
        if times[0] < S::zero() || *times.last().unwrap() > horizon + S::time_tolerance(horizon) {
            return Err(Error::InvalidTrajectory(format!(
                "grid [{}, {}] not inside [0, {horizon}]",
                times[0],
                times.last().unwrap()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidTrajectory(
                "grid times must be strictly increasing".into(),
            ));
        }
        Ok(Trajectory {
            times,
            snapshots,
            horizon,
            cache: RwLock::new(None),
        })
    }

    /// A path that stays at `mu` on the grid `0, dt, …, horizon`.
    pub fn constant(mu: FiniteMeasure<S>, dt: S, horizon: S) -> Result<Self> {
        let steps = (horizon / dt).round().to_usize().unwrap_or(0);
        let times = (0..=steps).map(|k| S::count(k) * dt).collect();
        Self::new(times, vec![mu; steps + 1], horizon)
    }

    pub fn times(&self) -> &[S] {
        &self.times
    }

    pub fn snapshots(&self) -> &[FiniteMeasure<S>] {
        &self.snapshots
    }

    pub fn snapshot(&self, index: usize) -> &FiniteMeasure<S> {
        &self.snapshots[index]
    }

    pub fn horizon(&self) -> S {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_index(&self) -> usize {
        self.times.len() - 1
    }

    fn tol(&self) -> S {
        S::time_tolerance(self.horizon)
    }

    /// Largest grid index with `t_i ≤ u` (index 0 for `u` before the grid).
    pub fn index_at(&self, u: S) -> usize {
        let u = u + self.tol();
        let n = self.times.partition_point(|t| *t <= u);
        n.saturating_sub(1)
    }

    /// Grid index nearest to `u`.
    pub fn nearest_index(&self, u: S) -> usize {
        let i = self.index_at(u);
        if i + 1 < self.times.len() && (self.times[i + 1] - u).abs() < (u - self.times[i]).abs() {
            i + 1
        } else {
            i
        }
    }

    /// Snapshot in force at time `u`.
    pub fn value_at(&self, u: S) -> &FiniteMeasure<S> {
        &self.snapshots[self.index_at(u)]
    }

    fn ensure_moments(&self, modes: usize) {
        if let Some(c) = self.cache.read().unwrap().as_ref() {
            if c.modes >= modes {
                return;
            }
        }
        let mut guard = self.cache.write().unwrap();
        if guard.as_ref().is_some_and(|c| c.modes >= modes) {
            return;
        }
        // one build covers the common mode counts
        let modes = modes.max(WEAK_DISTANCE_MODES);
        let snapshots: Vec<_> = self.snapshots.iter().map(|m| m.moments(modes)).collect();
        let mut running = Vec::with_capacity(snapshots.len());
        let mut acc = FourierMoments::zero(modes);
        running.push(acc.clone());
        for i in 0..snapshots.len() - 1 {
            acc = acc.add_scaled(&snapshots[i], self.times[i + 1] - self.times[i]);
            running.push(acc.clone());
        }
        *guard = Some(MomentCache {
            modes,
            snapshots,
            running,
        });
    }

    fn with_cache<R>(&self, modes: usize, f: impl FnOnce(&MomentCache<S>) -> R) -> R {
        self.ensure_moments(modes);
        let guard = self.cache.read().unwrap();
        f(guard.as_ref().expect("moment cache populated"))
    }

    /// `⟨ω(t_index), field⟩` through the cached Fourier moments.
    pub fn integrate(&self, index: usize, field: &FourierField<S>) -> S {
        self.with_cache(field.modes(), |c| {
            c.snapshots[index].dot(field).expect("cache covers field")
        })
    }

    /// `∫_0^{t_index} ⟨ω(s), field⟩ ds` as a left Riemann sum on the grid.
    pub fn running_integral(&self, index: usize, field: &FourierField<S>) -> S {
        self.with_cache(field.modes(), |c| {
            c.running[index].dot(field).expect("cache covers field")
        })
    }

    /// Fourier moments of snapshot `index` up to `modes`.
    pub fn moments(&self, index: usize, modes: usize) -> FourierMoments<S> {
        self.with_cache(modes, |c| {
            c.snapshots[index].truncated(modes)
        })
    }
}

/// Read access to "a measure": a standalone [`FiniteMeasure`] or a snapshot
/// of a trajectory plus a few extra atoms.
pub trait MeasureState<S: Scalar> {
    fn integrate(&self, field: &FourierField<S>) -> S;
    fn total_mass(&self) -> S;
    fn for_each_atom(&self, f: &mut dyn FnMut(CirclePoint<S>, S));
    fn to_measure(&self) -> FiniteMeasure<S>;
    /// The same state with `eps·δ_x` added.
    fn bumped(&self, x: CirclePoint<S>, eps: S) -> Result<BumpedState<'_, S>>;
}

impl<S: Scalar> MeasureState<S> for FiniteMeasure<S> {
    fn integrate(&self, field: &FourierField<S>) -> S {
        FiniteMeasure::integrate(self, field)
    }
    fn total_mass(&self) -> S {
        FiniteMeasure::total_mass(self)
    }
    fn for_each_atom(&self, f: &mut dyn FnMut(CirclePoint<S>, S)) {
        for (p, w) in self.atoms() {
            f(*p, *w);
        }
    }
    fn to_measure(&self) -> FiniteMeasure<S> {
        self.clone()
    }
    fn bumped(&self, x: CirclePoint<S>, eps: S) -> Result<BumpedState<'_, S>> {
        BumpedState::new(self, x, eps)
    }
}

/// Snapshot `index` of a trajectory plus extra atoms (vertical bumps).
#[derive(Clone, Debug)]
pub struct PathState<'a, S> {
    traj: &'a Trajectory<S>,
    index: usize,
    extra: Vec<(CirclePoint<S>, S)>,
}

impl<'a, S: Scalar> PathState<'a, S> {
    pub fn new(traj: &'a Trajectory<S>, index: usize) -> Self {
        PathState {
            traj,
            index,
            extra: Vec::new(),
        }
    }

    pub(crate) fn with_extra(traj: &'a Trajectory<S>, index: usize, extra: Vec<(CirclePoint<S>, S)>) -> Self {
        PathState { traj, index, extra }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn extra_atoms(&self) -> &[(CirclePoint<S>, S)] {
        &self.extra
    }
}

impl<S: Scalar> MeasureState<S> for PathState<'_, S> {
    fn integrate(&self, field: &FourierField<S>) -> S {
        let base = self.traj.integrate(self.index, field);
        self.extra.iter().fold(base, |acc, (p, w)| acc + *w * field.eval(*p))
    }
    fn total_mass(&self) -> S {
        self.extra
            .iter()
            .fold(self.traj.snapshot(self.index).total_mass(), |acc, (_, w)| acc + *w)
    }
    fn for_each_atom(&self, f: &mut dyn FnMut(CirclePoint<S>, S)) {
        for (p, w) in self.traj.snapshot(self.index).atoms() {
            f(*p, *w);
        }
        for (p, w) in &self.extra {
            f(*p, *w);
        }
    }
    fn to_measure(&self) -> FiniteMeasure<S> {
        let mut atoms = self.traj.snapshot(self.index).atoms().to_vec();
        atoms.extend_from_slice(&self.extra);
        FiniteMeasure::new(atoms).expect("positive weights")
    }
    fn bumped(&self, x: CirclePoint<S>, eps: S) -> Result<BumpedState<'_, S>> {
        BumpedState::new(self, x, eps)
    }
}

/// Any [`MeasureState`] with one extra atom.
pub struct BumpedState<'a, S> {
    base: &'a dyn MeasureState<S>,
    atom: (CirclePoint<S>, S),
}

impl<'a, S: Scalar> BumpedState<'a, S> {
    pub fn new(base: &'a dyn MeasureState<S>, x: CirclePoint<S>, eps: S) -> Result<Self> {
        if !(eps > S::zero()) || !eps.is_finite() {
            return Err(Error::NonPositiveEps(eps.as_f64()));
        }
        Ok(BumpedState {
            base,
            atom: (x, eps),
        })
    }
}

impl<S: Scalar> MeasureState<S> for BumpedState<'_, S> {
    fn integrate(&self, field: &FourierField<S>) -> S {
        self.base.integrate(field) + self.atom.1 * field.eval(self.atom.0)
    }
    fn total_mass(&self) -> S {
        self.base.total_mass() + self.atom.1
    }
    fn for_each_atom(&self, f: &mut dyn FnMut(CirclePoint<S>, S)) {
        self.base.for_each_atom(f);
        f(self.atom.0, self.atom.1);
    }
    fn to_measure(&self) -> FiniteMeasure<S> {
        self.base
            .to_measure()
            .bump(self.atom.0, self.atom.1)
            .expect("positive bump")
    }
    fn bumped(&self, x: CirclePoint<S>, eps: S) -> Result<BumpedState<'_, S>> {
        BumpedState::new(self, x, eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p(x: f64) -> CirclePoint<f64> {
        CirclePoint::new(x)
    }

    fn sample() -> Trajectory<f64> {
        let snaps = vec![
            FiniteMeasure::dirac(p(0.1), 1.0).unwrap(),
            FiniteMeasure::dirac(p(0.2), 2.0).unwrap(),
            FiniteMeasure::new(vec![(p(0.3), 1.0), (p(0.6), 0.5)]).unwrap(),
        ];
        Trajectory::new(vec![0.0, 0.5, 1.0], snaps, 1.0).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        let m = FiniteMeasure::<f64>::zero();
        assert!(Trajectory::new(vec![0.0, 0.0], vec![m.clone(), m.clone()], 1.0).is_err());
        assert!(Trajectory::new(vec![0.0, 2.0], vec![m.clone(), m.clone()], 1.0).is_err());
        assert!(Trajectory::new(vec![0.0], vec![], 1.0).is_err());
    }

    #[test]
    fn index_lookup_is_right_continuous() {
        let tr = sample();
        assert_eq!(tr.index_at(0.0), 0);
        assert_eq!(tr.index_at(0.49), 0);
        assert_eq!(tr.index_at(0.5), 1);
        assert_eq!(tr.index_at(0.99), 1);
        assert_eq!(tr.index_at(1.0), 2);
        assert_eq!(tr.nearest_index(0.3), 1);
        assert_eq!(tr.nearest_index(0.2), 0);
    }

    #[test]
    fn cached_integrals_agree_with_direct_sums() {
        let tr = sample();
        let f = FourierField::from_parts(0.5, vec![1.0, 0.2], vec![0.0, -0.3]);
        for i in 0..3 {
            assert_abs_diff_eq!(tr.integrate(i, &f), tr.snapshot(i).integrate(&f), epsilon = 1e-14);
        }
        let direct = 0.5 * tr.snapshot(0).integrate(&f) + 0.5 * tr.snapshot(1).integrate(&f);
        assert_abs_diff_eq!(tr.running_integral(2, &f), direct, epsilon = 1e-14);
        assert_eq!(tr.running_integral(0, &f), 0.0);
    }

    #[test]
    fn path_state_adds_extra_atoms() {
        let tr = sample();
        let st = PathState::with_extra(&tr, 1, vec![(p(0.4), 0.25)]);
        let f = FourierField::cosine(1, 1.0);
        let expected = tr.snapshot(1).bump(p(0.4), 0.25).unwrap();
        assert_abs_diff_eq!(st.integrate(&f), expected.integrate(&f), epsilon = 1e-14);
        assert_eq!(st.total_mass(), 2.25);
        assert!(st.to_measure().approx_eq(&expected, 0.0));
        let b = st.bumped(p(0.9), 0.5).unwrap();
        assert_eq!(b.total_mass(), 2.75);
        assert!(st.bumped(p(0.9), 0.0).is_err());
    }
}
