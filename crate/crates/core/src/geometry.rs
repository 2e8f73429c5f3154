//! Atomic finite measures on the unit circle and trigonometric test functions.
//!
//! The state space is the circle `[0, 1)` with wraparound arithmetic and the
//! particle motion is Brownian, so the generator is `A = ½ d²/dx²`. On the
//! Fourier basis `cos(2πkx)`, `sin(2πkx)` it acts diagonally with eigenvalue
//! `-½(2πk)²`, which is what makes trigonometric polynomials a convenient
//! algebra of test functions: they are closed under products and under the
//! heat semigroup.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of Fourier modes probed by [`weak_distance`].
pub const WEAK_DISTANCE_MODES: usize = 16;

/// A point on the unit circle, stored as its coordinate in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub struct CirclePoint<S>(S);

impl<S: Scalar> CirclePoint<S> {
    /// Wraps any real coordinate onto the circle.
    pub fn new(x: S) -> Self {
        let mut y = x - x.floor();
        if y >= S::one() || y < S::zero() {
            y = S::zero();
        }
        CirclePoint(y)
    }

    #[inline]
    pub fn x(self) -> S {
        self.0
    }

    /// Moves the point by `dx` along the circle.
    #[inline]
    pub fn shifted(self, dx: S) -> Self {
        Self::new(self.0 + dx)
    }

    /// Arc distance, always in `[0, 0.5]`.
    pub fn distance(self, other: Self) -> S {
        let d = (self.0 - other.0).abs();
        d.min(S::one() - d)
    }
}

impl<S: Scalar> fmt::Display for CirclePoint<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Trigonometric polynomial `a0 + Σ_k a_k cos(2πkx) + b_k sin(2πkx)`.
///
/// The cosine and sine vectors always have the same length `K` and the
/// highest mode is kept nonzero, so `modes()` is the true degree.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierField<S> {
    a0: S,
    cos: Vec<S>,
    sin: Vec<S>,
}

impl<S: Scalar> FourierField<S> {
    pub fn zero() -> Self {
        Self::constant(S::zero())
    }

    pub fn constant(value: S) -> Self {
        FourierField {
            a0: value,
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    /// `amplitude · cos(2πkx)`.
    pub fn cosine(k: usize, amplitude: S) -> Self {
        if k == 0 {
            return Self::constant(amplitude);
        }
        let mut cos = vec![S::zero(); k];
        cos[k - 1] = amplitude;
        Self::from_parts(S::zero(), cos, vec![S::zero(); k])
    }

    /// `amplitude · sin(2πkx)`.
    pub fn sine(k: usize, amplitude: S) -> Self {
        if k == 0 {
            return Self::zero();
        }
        let mut sin = vec![S::zero(); k];
        sin[k - 1] = amplitude;
        Self::from_parts(S::zero(), vec![S::zero(); k], sin)
    }

    /// Builds a field from `a0`, the cosine coefficients `a_1..` and the sine
    /// coefficients `b_1..`. Shorter vectors are zero padded.
    pub fn from_parts(a0: S, mut cos: Vec<S>, mut sin: Vec<S>) -> Self {
        let k = cos.len().max(sin.len());
        cos.resize(k, S::zero());
        sin.resize(k, S::zero());
        let mut field = FourierField { a0, cos, sin };
        field.trim();
        field
    }

    fn trim(&mut self) {
        while let (Some(a), Some(b)) = (self.cos.last(), self.sin.last()) {
            if a.is_zero() && b.is_zero() {
                self.cos.pop();
                self.sin.pop();
            } else {
                break;
            }
        }
    }

    /// Highest mode `K`.
    #[inline]
    pub fn modes(&self) -> usize {
        self.cos.len()
    }

    #[inline]
    pub fn a0(&self) -> S {
        self.a0
    }

    /// Cosine coefficient of mode `k` (zero beyond `modes()`).
    pub fn cos_coeff(&self, k: usize) -> S {
        if k == 0 {
            self.a0
        } else {
            self.cos.get(k - 1).copied().unwrap_or_else(S::zero)
        }
    }

    /// Sine coefficient of mode `k` (zero beyond `modes()` and for `k = 0`).
    pub fn sin_coeff(&self, k: usize) -> S {
        if k == 0 {
            S::zero()
        } else {
            self.sin.get(k - 1).copied().unwrap_or_else(S::zero)
        }
    }

    pub fn cos_coeffs(&self) -> &[S] {
        &self.cos
    }

    pub fn sin_coeffs(&self) -> &[S] {
        &self.sin
    }

    pub fn is_constant(&self) -> bool {
        self.cos.is_empty()
    }

    /// Exact pointwise value.
    pub fn eval(&self, x: CirclePoint<S>) -> S {
        let mut acc = self.a0;
        if self.cos.is_empty() {
            return acc;
        }
        let theta = S::TAU() * x.x();
        let (s1, c1) = theta.sin_cos();
        let (mut ck, mut sk) = (c1, s1);
        for (a, b) in self.cos.iter().zip(&self.sin) {
            acc = acc + *a * ck + *b * sk;
            let next_c = ck * c1 - sk * s1;
            let next_s = sk * c1 + ck * s1;
            ck = next_c;
            sk = next_s;
        }
        acc
    }

    /// Applies `A = ½ d²/dx²`: mode `k` is scaled by `-½(2πk)²`.
    pub fn apply_generator(&self) -> Self {
        let scale = |k: usize| -> S {
            let w = S::TAU() * S::count(k);
            -S::lit(0.5) * w * w
        };
        let cos = self
            .cos
            .iter()
            .enumerate()
            .map(|(i, a)| *a * scale(i + 1))
            .collect();
        let sin = self
            .sin
            .iter()
            .enumerate()
            .map(|(i, b)| *b * scale(i + 1))
            .collect();
        Self::from_parts(S::zero(), cos, sin)
    }

    /// Eigenvalue of the generator on mode `k`.
    pub fn generator_eigenvalue(k: usize) -> S {
        let w = S::TAU() * S::count(k);
        -S::lit(0.5) * w * w
    }

    /// Exact product of two trigonometric polynomials (degree adds).
    pub fn product(&self, other: &Self) -> Self {
        // complex form: c_k = (a_k - i b_k)/2 for k > 0, c_0 = a0
        let to_complex = |f: &Self| -> Vec<(S, S)> {
            let half = S::lit(0.5);
            let mut v = Vec::with_capacity(f.modes() + 1);
            v.push((f.a0, S::zero()));
            for (a, b) in f.cos.iter().zip(&f.sin) {
                v.push((*a * half, -*b * half));
            }
            v
        };
        let p = to_complex(self);
        let q = to_complex(other);
        let kp = p.len() as isize - 1;
        let kq = q.len() as isize - 1;
        let coeff = |v: &Vec<(S, S)>, k: isize| -> (S, S) {
            let (re, im) = v[k.unsigned_abs()];
            if k >= 0 {
                (re, im)
            } else {
                (re, -im)
            }
        };
        let kmax = (kp + kq) as usize;
        let mut out = vec![(S::zero(), S::zero()); kmax + 1];
        for i in -kp..=kp {
            let (ar, ai) = coeff(&p, i);
            for j in -kq..=kq {
                let k = i + j;
                if k < 0 {
                    continue;
                }
                let (br, bi) = coeff(&q, j);
                let slot = &mut out[k as usize];
                slot.0 = slot.0 + ar * br - ai * bi;
                slot.1 = slot.1 + ar * bi + ai * br;
            }
        }
        let two = S::lit(2.0);
        let a0 = out[0].0;
        let cos = out[1..].iter().map(|(re, _)| two * *re).collect();
        let sin = out[1..].iter().map(|(_, im)| -two * *im).collect();
        Self::from_parts(a0, cos, sin)
    }

    pub fn square(&self) -> Self {
        self.product(self)
    }

    pub fn scale(&self, factor: S) -> Self {
        Self::from_parts(
            self.a0 * factor,
            self.cos.iter().map(|a| *a * factor).collect(),
            self.sin.iter().map(|b| *b * factor).collect(),
        )
    }

    /// Bound on `sup |f|`: the sum of absolute coefficients.
    pub fn sup_bound(&self) -> S {
        self.a0.abs()
            + self.cos.iter().map(|a| a.abs()).sum::<S>()
            + self.sin.iter().map(|b| b.abs()).sum::<S>()
    }

    /// Drops every mode above `k`.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.modes());
        Self::from_parts(self.a0, self.cos[..k].to_vec(), self.sin[..k].to_vec())
    }

    /// Minimum over `samples` equispaced points.
    pub fn sampled_min(&self, samples: usize) -> S {
        (0..samples.max(1))
            .map(|j| self.eval(CirclePoint::new(S::count(j) / S::count(samples.max(1)))))
            .fold(S::infinity(), S::min)
    }

    /// Equispaced collocation nodes `j/m`, `j = 0..m`.
    pub fn collocation_nodes(m: usize) -> Vec<CirclePoint<S>> {
        (0..m).map(|j| CirclePoint(S::count(j) / S::count(m))).collect()
    }

    /// Discrete Fourier projection onto modes `≤ modes` of values sampled at
    /// [`collocation_nodes`](Self::collocation_nodes). Exact for
    /// trigonometric polynomials of degree below `samples.len() − modes`.
    pub fn from_samples(samples: &[S], modes: usize) -> Self {
        let m = samples.len();
        assert!(m > 2 * modes, "{m} samples cannot resolve {modes} modes");
        let inv = S::one() / S::count(m);
        let a0 = samples.iter().copied().sum::<S>() * inv;
        let two = S::lit(2.0) * inv;
        let mut cos = Vec::with_capacity(modes);
        let mut sin = Vec::with_capacity(modes);
        for k in 1..=modes {
            let (mut a, mut b) = (S::zero(), S::zero());
            for (j, v) in samples.iter().enumerate() {
                // reduce k·j mod m first so the angle stays small
                let theta = S::TAU() * S::count((k * j) % m) * inv;
                let (sn, cs) = theta.sin_cos();
                a = a + *v * cs;
                b = b + *v * sn;
            }
            cos.push(a * two);
            sin.push(b * two);
        }
        Self::from_parts(a0, cos, sin)
    }

    /// Coefficients as a CSV row `a0,a1,...,aK,b1,...,bK`.
    pub fn to_csv_row(&self) -> String {
        let mut parts = Vec::with_capacity(2 * self.modes() + 1);
        parts.push(self.a0.to_string());
        parts.extend(self.cos.iter().map(|a| a.to_string()));
        parts.extend(self.sin.iter().map(|b| b.to_string()));
        parts.join(",")
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let values = row
            .trim()
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("coefficient `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() % 2 == 0 {
            return Err(Error::Parse(format!(
                "expected an odd number of coefficients, got {}",
                values.len()
            )));
        }
        let k = values.len() / 2;
        let lit = |v: &f64| S::lit(*v);
        Ok(Self::from_parts(
            S::lit(values[0]),
            values[1..=k].iter().map(lit).collect(),
            values[k + 1..].iter().map(lit).collect(),
        ))
    }
}

impl<S: Scalar> Add for &FourierField<S> {
    type Output = FourierField<S>;

    fn add(self, rhs: Self) -> FourierField<S> {
        let k = self.modes().max(rhs.modes());
        FourierField::from_parts(
            self.a0 + rhs.a0,
            (1..=k)
                .map(|m| self.cos_coeff(m) + rhs.cos_coeff(m))
                .collect(),
            (1..=k)
                .map(|m| self.sin_coeff(m) + rhs.sin_coeff(m))
                .collect(),
        )
    }
}

impl<S: Scalar> Add for FourierField<S> {
    type Output = FourierField<S>;

    fn add(self, rhs: Self) -> FourierField<S> {
        &self + &rhs
    }
}

impl<S: Scalar> Sub for &FourierField<S> {
    type Output = FourierField<S>;

    fn sub(self, rhs: Self) -> FourierField<S> {
        self + &(-rhs)
    }
}

impl<S: Scalar> Neg for &FourierField<S> {
    type Output = FourierField<S>;

    fn neg(self) -> FourierField<S> {
        self.scale(-S::one())
    }
}

impl<S: Scalar> Mul<S> for &FourierField<S> {
    type Output = FourierField<S>;

    fn mul(self, rhs: S) -> FourierField<S> {
        self.scale(rhs)
    }
}

/// Integrals of a measure against the Fourier basis up to some mode.
///
/// Any [`FourierField`] of degree at most `modes()` integrates to a dot
/// product with these moments, which is how trajectories avoid re-walking
/// their atoms for every test function.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierMoments<S> {
    mass: S,
    cos: Vec<S>,
    sin: Vec<S>,
}

impl<S: Scalar> FourierMoments<S> {
    pub fn zero(modes: usize) -> Self {
        FourierMoments {
            mass: S::zero(),
            cos: vec![S::zero(); modes],
            sin: vec![S::zero(); modes],
        }
    }

    pub fn of_atoms<'a, I>(atoms: I, modes: usize) -> Self
    where
        I: IntoIterator<Item = &'a (CirclePoint<S>, S)>,
    {
        let mut m = Self::zero(modes);
        for (p, w) in atoms {
            m.add_atom(*p, *w);
        }
        m
    }

    pub fn add_atom(&mut self, position: CirclePoint<S>, weight: S) {
        self.mass = self.mass + weight;
        if self.cos.is_empty() {
            return;
        }
        let (s1, c1) = (S::TAU() * position.x()).sin_cos();
        let (mut ck, mut sk) = (c1, s1);
        for (c, s) in self.cos.iter_mut().zip(self.sin.iter_mut()) {
            *c = *c + weight * ck;
            *s = *s + weight * sk;
            let next_c = ck * c1 - sk * s1;
            sk = sk * c1 + ck * s1;
            ck = next_c;
        }
    }

    pub fn modes(&self) -> usize {
        self.cos.len()
    }

    pub fn mass(&self) -> S {
        self.mass
    }

    /// `∫ cos(2πkx) μ(dx)` for `k ≥ 1`.
    pub fn cos_moment(&self, k: usize) -> S {
        self.cos[k - 1]
    }

    pub fn sin_moment(&self, k: usize) -> S {
        self.sin[k - 1]
    }

    /// `⟨μ, field⟩`, or `None` if the field has more modes than recorded.
    pub fn dot(&self, field: &FourierField<S>) -> Option<S> {
        if field.modes() > self.modes() {
            return None;
        }
        let mut acc = field.a0() * self.mass;
        for (k, (a, b)) in field.cos_coeffs().iter().zip(field.sin_coeffs()).enumerate() {
            acc = acc + *a * self.cos[k] + *b * self.sin[k];
        }
        Some(acc)
    }

    /// Keeps modes `1..=k`.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.modes());
        FourierMoments {
            mass: self.mass,
            cos: self.cos[..k].to_vec(),
            sin: self.sin[..k].to_vec(),
        }
    }

    /// `self + factor · other`, truncated to the smaller mode count.
    pub fn add_scaled(&self, other: &Self, factor: S) -> Self {
        let k = self.modes().min(other.modes());
        FourierMoments {
            mass: self.mass + factor * other.mass,
            cos: (0..k).map(|i| self.cos[i] + factor * other.cos[i]).collect(),
            sin: (0..k).map(|i| self.sin[i] + factor * other.sin[i]).collect(),
        }
    }

    /// Proxy weak distance between the measures these moments describe.
    pub fn weak_distance(&self, other: &Self) -> S {
        let k = WEAK_DISTANCE_MODES.min(self.modes()).min(other.modes());
        debug_assert_eq!(k, WEAK_DISTANCE_MODES, "moments too short for weak_distance");
        let mut acc = (self.mass - other.mass).abs();
        let mut w = S::one();
        let half = S::lit(0.5);
        for i in 0..k {
            w = w * half;
            acc = acc + w * ((self.cos[i] - other.cos[i]).abs() + (self.sin[i] - other.sin[i]).abs());
        }
        acc
    }
}

/// Finite atomic measure `Σ w_i δ_{x_i}` with strictly positive weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMeasure<S> {
    atoms: Vec<(CirclePoint<S>, S)>,
    total_mass: S,
}

impl<S: Scalar> Default for FiniteMeasure<S> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<S: Scalar> FiniteMeasure<S> {
    pub fn zero() -> Self {
        FiniteMeasure {
            atoms: Vec::new(),
            total_mass: S::zero(),
        }
    }

    pub fn new(atoms: Vec<(CirclePoint<S>, S)>) -> Result<Self> {
        for (p, w) in &atoms {
            if !(w.is_finite() && *w > S::zero()) {
                return Err(Error::InvalidMeasure(format!(
                    "atom at {p} has non-positive or non-finite weight {w}"
                )));
            }
        }
        let total_mass = atoms.iter().map(|(_, w)| *w).sum();
        Ok(FiniteMeasure { atoms, total_mass })
    }

    /// Equal-weight atoms at the given positions; `weight` must be positive.
    pub(crate) fn from_positions(positions: &[S], weight: S) -> Self {
        let atoms: Vec<_> = positions
            .iter()
            .map(|x| (CirclePoint(*x), weight))
            .collect();
        let total_mass = weight * S::count(atoms.len());
        FiniteMeasure { atoms, total_mass }
    }

    pub fn dirac(x: CirclePoint<S>, mass: S) -> Result<Self> {
        Self::new(vec![(x, mass)])
    }

    /// `n` atoms of mass `mass / n` at `i/n`: the discretised uniform measure.
    pub fn uniform(n: usize, mass: S) -> Result<Self> {
        if n == 0 || !(mass > S::zero()) {
            return Err(Error::InvalidMeasure(format!(
                "uniform measure needs n > 0 and positive mass (n = {n}, mass = {mass})"
            )));
        }
        let positions: Vec<S> = (0..n).map(|i| S::count(i) / S::count(n)).collect();
        Ok(Self::from_positions(&positions, mass / S::count(n)))
    }

    pub fn atoms(&self) -> &[(CirclePoint<S>, S)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> S {
        self.total_mass
    }

    /// `⟨μ, f⟩`.
    pub fn integrate(&self, field: &FourierField<S>) -> S {
        self.atoms.iter().map(|(p, w)| *w * field.eval(*p)).sum()
    }

    /// `μ + eps·δ_x` as a new measure.
    pub fn bump(&self, x: CirclePoint<S>, eps: S) -> Result<Self> {
        if !(eps > S::zero()) || !eps.is_finite() {
            return Err(Error::NonPositiveEps(eps.as_f64()));
        }
        let mut atoms = self.atoms.clone();
        atoms.push((x, eps));
        Ok(FiniteMeasure {
            atoms,
            total_mass: self.total_mass + eps,
        })
    }

    /// `factor · μ`; a zero factor gives the zero measure.
    pub fn scaled(&self, factor: S) -> Result<Self> {
        if factor < S::zero() || !factor.is_finite() {
            return Err(Error::InvalidMeasure(format!(
                "cannot scale a measure by {factor}"
            )));
        }
        if factor.is_zero() {
            return Ok(Self::zero());
        }
        Ok(FiniteMeasure {
            atoms: self.atoms.iter().map(|(p, w)| (*p, *w * factor)).collect(),
            total_mass: self.total_mass * factor,
        })
    }

    /// `μ + ν` (atoms concatenated).
    pub fn sum(&self, other: &Self) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        FiniteMeasure {
            atoms,
            total_mass: self.total_mass + other.total_mass,
        }
    }

    /// Sorted by position with coincident atoms merged.
    pub fn canonical(&self) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite positions"));
        let mut merged: Vec<(CirclePoint<S>, S)> = Vec::with_capacity(atoms.len());
        for (p, w) in atoms {
            match merged.last_mut() {
                Some((q, v)) if *q == p => *v = *v + w,
                _ => merged.push((p, w)),
            }
        }
        FiniteMeasure {
            atoms: merged,
            total_mass: self.total_mass,
        }
    }

    /// Equality up to atom order and merging, with a relative weight slack.
    pub fn approx_eq(&self, other: &Self, tol: S) -> bool {
        let a = self.canonical();
        let b = other.canonical();
        a.atoms.len() == b.atoms.len()
            && a.atoms.iter().zip(&b.atoms).all(|((p, v), (q, w))| {
                p == q && (*v - *w).abs() <= tol * v.abs().max(w.abs()).max(S::one())
            })
    }

    pub fn moments(&self, modes: usize) -> FourierMoments<S> {
        FourierMoments::of_atoms(&self.atoms, modes)
    }

    /// CSV with a `# mass=<total>` comment, a header and `position,weight` rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# mass={}\nposition,weight\n", self.total_mass);
        for (p, w) in &self.atoms {
            out.push_str(&format!("{},{}\n", p.x(), w));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut atoms = Vec::new();
        let mut declared = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line == "position,weight" {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("mass=") {
                    declared = Some(
                        v.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Parse(format!("mass header: {e}")))?,
                    );
                }
                continue;
            }
            let mut cols = line.split(',');
            let (Some(x), Some(w), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Parse(format!("expected `position,weight`, got `{line}`")));
            };
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
            };
            atoms.push((CirclePoint::new(S::lit(parse(x)?)), S::lit(parse(w)?)));
        }
        let mu = Self::new(atoms)?;
        if let Some(m) = declared {
            let slack = 1e-9 * m.abs().max(1.0);
            if (mu.total_mass.as_f64() - m).abs() > slack {
                return Err(Error::Parse(format!(
                    "mass header {m} disagrees with the atoms ({})",
                    mu.total_mass
                )));
            }
        }
        Ok(mu)
    }
}

/// Fourier-mode proxy for the Prokhorov metric:
/// `|μ(E) − ν(E)| + Σ_{k=1..16} 2^{-k} (|⟨μ−ν, cos 2πk·⟩| + |⟨μ−ν, sin 2πk·⟩|)`.
pub fn weak_distance<S: Scalar>(mu: &FiniteMeasure<S>, nu: &FiniteMeasure<S>) -> S {
    mu.moments(WEAK_DISTANCE_MODES)
        .weak_distance(&nu.moments(WEAK_DISTANCE_MODES))
}
