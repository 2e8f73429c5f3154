//! Spectral solver for the log-Laplace equation `∂_s u = Au − (c/2)u²`,
//! `u(0) = φ`, and the exponential martingale `exp(−⟨X_t, u(T − t)⟩)`.
//!
//! The linear part is diagonal in Fourier space, and for mode 16 it is stiff
//! (`|λ| ≈ 5000`), so the stepper is the integrating-factor form of RK4: the
//! heat semigroup is applied exactly and RK4 only sees the quadratic term.
//! That term is formed pointwise on `4·n_modes` collocation nodes and
//! projected back, which is exact for the retained modes.

use std::sync::Arc;

use super::{StateFunctional, StateSlice};
use crate::error::{Error, Result};
use crate::feller;
use crate::geometry::{CirclePoint, FourierField};
use crate::scalar::Scalar;
use crate::simulator::{map_replicates, map_total_masses, SimParams};
use crate::stats::Summary;
use crate::trajectory::MeasureState;

pub const SOLVER_DEFAULT_MODES: usize = 16;
pub const SOLVER_DEFAULT_STEPS: usize = 1024;

/// Samples used to check `φ ≥ 0`.
const POSITIVITY_SAMPLES: usize = 2048;
const NEGATIVITY_LIMIT: f64 = -1e-8;

/// Evaluation and projection tables on `m = 4n` equispaced nodes, acting on
/// coefficient vectors `(a0, a1..an, b1..bn)`.
struct Collocation<S> {
    n: usize,
    cos: Vec<Vec<S>>,
    sin: Vec<Vec<S>>,
}

impl<S: Scalar> Collocation<S> {
    fn new(n: usize) -> Self {
        let m = 4 * n.max(1);
        let angle = |k: usize, j: usize| S::TAU() * S::count((k * j) % m) / S::count(m);
        let cos = (1..=n).map(|k| (0..m).map(|j| angle(k, j).cos()).collect()).collect();
        let sin = (1..=n).map(|k| (0..m).map(|j| angle(k, j).sin()).collect()).collect();
        Collocation { n, cos, sin }
    }

    fn nodes(&self) -> usize {
        4 * self.n.max(1)
    }

    fn values(&self, c: &[S]) -> Vec<S> {
        let mut v = vec![c[0]; self.nodes()];
        for k in 0..self.n {
            let (a, b) = (c[1 + k], c[1 + self.n + k]);
            for (j, slot) in v.iter_mut().enumerate() {
                *slot = *slot + a * self.cos[k][j] + b * self.sin[k][j];
            }
        }
        v
    }

    fn project(&self, v: &[S]) -> Vec<S> {
        let m = S::count(self.nodes());
        let mut c = vec![S::zero(); 2 * self.n + 1];
        c[0] = v.iter().copied().sum::<S>() / m;
        let two = S::lit(2.0) / m;
        for k in 0..self.n {
            let (mut a, mut b) = (S::zero(), S::zero());
            for (j, x) in v.iter().enumerate() {
                a = a + *x * self.cos[k][j];
                b = b + *x * self.sin[k][j];
            }
            c[1 + k] = a * two;
            c[1 + self.n + k] = b * two;
        }
        c
    }

    /// `−(c/2)·Π(u²)` together with the minimum nodal value of `u`.
    fn nonlinear(&self, u: &[S], c: S) -> (Vec<S>, S) {
        let vals = self.values(u);
        let min = vals.iter().copied().fold(S::infinity(), S::min);
        let half_c = S::lit(0.5) * c;
        let sq: Vec<S> = vals.iter().map(|v| -half_c * *v * *v).collect();
        (self.project(&sq), min)
    }
}

fn to_coeffs<S: Scalar>(f: &FourierField<S>, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); 2 * n + 1];
    c[0] = f.a0();
    for k in 1..=n {
        c[k] = f.cos_coeff(k);
        c[n + k] = f.sin_coeff(k);
    }
    c
}

fn from_coeffs<S: Scalar>(c: &[S], n: usize) -> FourierField<S> {
    FourierField::from_parts(c[0], c[1..=n].to_vec(), c[n + 1..].to_vec())
}

/// `u(s, ·)` on the solver grid `s_j = j·T/n_steps`.
#[derive(Clone, Debug)]
pub struct LogLaplaceSolution<S> {
    phi: FourierField<S>,
    c: S,
    horizon: S,
    n_modes: usize,
    ds: S,
    slices: Vec<FourierField<S>>,
}

/// Solves `∂_s u = Au − (c/2)u²`, `u(0) = φ`, on `[0, T]`.
pub fn solve_log_laplace<S: Scalar>(
    phi: &FourierField<S>,
    horizon: S,
    c: S,
    n_steps: usize,
    n_modes: usize,
) -> Result<LogLaplaceSolution<S>> {
    if n_steps == 0 || !(horizon > S::zero()) || !(c >= S::zero()) {
        return Err(Error::InvalidParams(format!(
            "log-Laplace solver needs n_steps > 0, T > 0, c ≥ 0 (got {n_steps}, {horizon}, {c})"
        )));
    }
    if n_modes < phi.modes() {
        return Err(Error::InvalidParams(format!(
            "n_modes = {n_modes} is below the degree {} of φ",
            phi.modes()
        )));
    }
    let min = phi.sampled_min(POSITIVITY_SAMPLES.max(16 * n_modes));
    let slack = S::lit(64.0) * S::epsilon() * phi.sup_bound();
    if min < -slack {
        return Err(Error::NegativeInput(min.as_f64()));
    }

    let n = n_modes;
    let col = Collocation::new(n);
    let h = horizon / S::count(n_steps);
    let half = S::lit(0.5) * h;
    let lambda: Vec<S> = (0..=2 * n)
        .map(|i| if i == 0 { S::zero() } else { FourierField::<S>::generator_eigenvalue(if i <= n { i } else { i - n }) })
        .collect();
    let e_full: Vec<S> = lambda.iter().map(|l| (*l * h).exp()).collect();
    let e_half: Vec<S> = lambda.iter().map(|l| (*l * half).exp()).collect();

    let mut u = to_coeffs(phi, n);
    let mut slices = Vec::with_capacity(n_steps + 1);
    slices.push(from_coeffs(&u, n));
    let sixth = h / S::lit(6.0);
    let two = S::lit(2.0);
    for step in 1..=n_steps {
        let (k1, min) = col.nonlinear(&u, c);
        if min.as_f64() < NEGATIVITY_LIMIT {
            return Err(Error::NonConvergence {
                s: (S::count(step - 1) * h).as_f64(),
                value: min.as_f64(),
            });
        }
        let ua: Vec<S> = (0..u.len()).map(|i| e_half[i] * (u[i] + half * k1[i])).collect();
        let (k2, _) = col.nonlinear(&ua, c);
        let ub: Vec<S> = (0..u.len()).map(|i| e_half[i] * u[i] + half * k2[i]).collect();
        let (k3, _) = col.nonlinear(&ub, c);
        let uc: Vec<S> = (0..u.len()).map(|i| e_full[i] * u[i] + h * e_half[i] * k3[i]).collect();
        let (k4, _) = col.nonlinear(&uc, c);
        for i in 0..u.len() {
            u[i] = e_full[i] * u[i] + sixth * (e_full[i] * k1[i] + two * e_half[i] * (k2[i] + k3[i]) + k4[i]);
        }
        slices.push(from_coeffs(&u, n));
    }
    let (_, min) = col.nonlinear(&u, c);
    if min.as_f64() < NEGATIVITY_LIMIT {
        return Err(Error::NonConvergence {
            s: horizon.as_f64(),
            value: min.as_f64(),
        });
    }
    Ok(LogLaplaceSolution {
        phi: phi.clone(),
        c,
        horizon,
        n_modes,
        ds: h,
        slices,
    })
}

impl<S: Scalar> LogLaplaceSolution<S> {
    pub fn phi(&self) -> &FourierField<S> {
        &self.phi
    }

    pub fn c(&self) -> S {
        self.c
    }

    pub fn horizon(&self) -> S {
        self.horizon
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn slices(&self) -> &[FourierField<S>] {
        &self.slices
    }

    /// `u(s, ·)`, cubic Hermite in `s` between solver slices; `s` is clamped to `[0, T]`.
    pub fn at(&self, s: S) -> FourierField<S> {
        let s = s.max(S::zero()).min(self.horizon);
        let pos = s / self.ds;
        let j = pos.floor().to_usize().unwrap_or(0).min(self.slices.len() - 1);
        let frac = pos - S::count(j);
        if j + 1 >= self.slices.len() || frac <= S::time_tolerance(S::one()) {
            return self.slices[j].clone();
        }
        if frac >= S::one() - S::time_tolerance(S::one()) {
            return self.slices[j + 1].clone();
        }
        let (one, two, three) = (S::one(), S::lit(2.0), S::lit(3.0));
        let (f2, f3) = (frac * frac, frac * frac * frac);
        let h00 = two * f3 - three * f2 + one;
        let h10 = f3 - two * f2 + frac;
        let h01 = three * f2 - two * f3;
        let h11 = f3 - f2;
        let (u0, u1) = (&self.slices[j], &self.slices[j + 1]);
        let (r0, r1) = (self.rate_of(u0), self.rate_of(u1));
        let ends = &u0.scale(h00) + &u1.scale(h01);
        let slopes = &r0.scale(h10 * self.ds) + &r1.scale(h11 * self.ds);
        &ends + &slopes
    }

    fn rate_of(&self, u: &FourierField<S>) -> FourierField<S> {
        let quad = u.square().truncated(self.n_modes).scale(-S::lit(0.5) * self.c);
        &u.apply_generator() + &quad
    }

    /// `∂_s u(s, ·) = Au − (c/2)·Π(u²)` evaluated on `u(s, ·)`.
    pub fn rate(&self, s: S) -> FourierField<S> {
        self.rate_of(&self.at(s))
    }

    /// Rows `s,a0,a1..aK,b1..bK`, one per solver slice.
    pub fn to_csv(&self) -> String {
        let n = self.n_modes;
        let mut header = vec!["s".to_string(), "a0".to_string()];
        header.extend((1..=n).map(|k| format!("a{k}")));
        header.extend((1..=n).map(|k| format!("b{k}")));
        let mut out = header.join(",");
        out.push('\n');
        for (j, u) in self.slices.iter().enumerate() {
            let c = to_coeffs(u, n);
            let row: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{},{}\n", S::count(j) * self.ds, row.join(",")));
        }
        out
    }
}

/// `F(t, μ) = exp(−⟨μ, u(T − t, ·)⟩)`.
#[derive(Clone, Debug)]
pub struct ExpMartingale<S> {
    sol: Arc<LogLaplaceSolution<S>>,
}

impl<S: Scalar> ExpMartingale<S> {
    pub fn new(sol: Arc<LogLaplaceSolution<S>>) -> Self {
        ExpMartingale { sol }
    }

    pub fn solution(&self) -> &LogLaplaceSolution<S> {
        &self.sol
    }

    fn u(&self, t: S) -> FourierField<S> {
        self.sol.at(self.sol.horizon - t)
    }

    fn value_with(&self, u: &FourierField<S>, mu: &dyn MeasureState<S>) -> S {
        (-mu.integrate(u)).exp()
    }
}

impl<S: Scalar> StateFunctional<S> for ExpMartingale<S> {
    fn name(&self) -> String {
        "exp-martingale".into()
    }

    fn eval(&self, t: S, mu: &dyn MeasureState<S>) -> S {
        self.value_with(&self.u(t), mu)
    }

    fn time_derivative(&self, t: S, mu: &dyn MeasureState<S>) -> Option<S> {
        let f = self.eval(t, mu);
        Some(mu.integrate(&self.sol.rate(self.sol.horizon - t)) * f)
    }

    fn vertical_field(&self, t: S, mu: &dyn MeasureState<S>) -> Option<FourierField<S>> {
        let u = self.u(t);
        let f = self.value_with(&u, mu);
        Some(u.scale(-f))
    }

    fn vertical2(&self, t: S, mu: &dyn MeasureState<S>, x: CirclePoint<S>, y: CirclePoint<S>) -> Option<S> {
        let u = self.u(t);
        Some(self.value_with(&u, mu) * (u.eval(x) * u.eval(y)))
    }

    fn vertical2_diag_field(&self, t: S, mu: &dyn MeasureState<S>) -> Option<FourierField<S>> {
        let u = self.u(t);
        let f = self.value_with(&u, mu);
        Some(u.square().scale(f))
    }

    fn generator_vertical_field(&self, t: S, mu: &dyn MeasureState<S>) -> Option<FourierField<S>> {
        let u = self.u(t);
        let f = self.value_with(&u, mu);
        Some(u.apply_generator().scale(-f))
    }

    fn vertical3(
        &self,
        t: S,
        mu: &dyn MeasureState<S>,
        x: CirclePoint<S>,
        y: CirclePoint<S>,
        z: CirclePoint<S>,
    ) -> Option<S> {
        let u = self.u(t);
        Some(-self.value_with(&u, mu) * u.eval(x) * u.eval(y) * u.eval(z))
    }

    fn is_martingale(&self) -> bool {
        true
    }
}

/// The exponential martingale as a path functional.
pub fn exp_martingale_functional<S: Scalar>(sol: Arc<LogLaplaceSolution<S>>) -> StateSlice<ExpMartingale<S>> {
    StateSlice(ExpMartingale::new(sol))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceEstimate {
    pub mean: f64,
    pub se: f64,
    pub values: Vec<f64>,
}

/// Monte Carlo estimate of `E exp(−⟨X_T, φ⟩)` over replicates `0..replicates`.
pub fn mean_laplace_functional<S: Scalar>(
    params: &SimParams<S>,
    phi: &FourierField<S>,
    replicates: usize,
) -> Result<LaplaceEstimate> {
    let min = phi.sampled_min(POSITIVITY_SAMPLES);
    if min < S::zero() {
        return Err(Error::NegativeInput(min.as_f64()));
    }
    params.validate()?;
    let values: Vec<f64> = if phi.is_constant() {
        // only the total mass matters
        let a0 = phi.a0();
        map_total_masses(params, replicates)?
            .into_iter()
            .map(|m| (-a0 * *m.last().unwrap()).exp().as_f64())
            .collect()
    } else {
        map_replicates(params, replicates, |path| {
            Ok((-path.integrate(path.last_index(), phi)).exp().as_f64())
        })?
    };
    let s = Summary::of(&values);
    Ok(LaplaceEstimate {
        mean: s.mean,
        se: s.se,
        values,
    })
}

/// Closed-form check value for a constant `φ ≡ λ`.
pub fn constant_laplace_oracle<S: Scalar>(lambda: S, params: &SimParams<S>) -> S {
    feller::laplace_transform(lambda, params.c, params.horizon, params.initial_mass)
}
