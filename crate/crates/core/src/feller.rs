//! Closed forms for the total-mass process `Z_t = ⟨X_t, 1⟩`, a Feller
//! diffusion `dZ = √(cZ) dW`, and a one-dimensional Euler oracle for it.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::scalar::Scalar;

/// `Var(Z_T) = c·T·m`.
pub fn variance<S: Scalar>(c: S, t: S, m: S) -> S {
    c * t * m
}

/// `P(Z_T = 0) = exp(−2m/(cT))`.
pub fn extinction_probability<S: Scalar>(c: S, t: S, m: S) -> S {
    if c * t <= S::zero() {
        return S::zero();
    }
    (-S::lit(2.0) * m / (c * t)).exp()
}

/// `E exp(−λ Z_T) = exp(−mλ / (1 + cλT/2))`.
pub fn laplace_transform<S: Scalar>(lambda: S, c: S, t: S, m: S) -> S {
    (-m * riccati(lambda, c, t)).exp()
}

/// Solution of `u' = −(c/2)u²`, `u(0) = λ`, at time `s`.
pub fn riccati<S: Scalar>(lambda: S, c: S, s: S) -> S {
    lambda / (S::one() + S::lit(0.5) * c * lambda * s)
}

/// Terminal values of `replicates` Euler paths of `dZ = √(cZ) dW` started
/// at `m`, absorbed at 0. Replicate `r` uses stream `(seed, r)`.
pub fn euler_terminal_values<S: Scalar>(m: S, c: S, t: S, dt: S, replicates: usize, seed: u64) -> Result<Vec<S>> {
    if !(dt > S::zero()) || !(t > S::zero()) || !(c >= S::zero()) || !(m >= S::zero()) {
        return Err(Error::InvalidParams(format!("Feller oracle needs dt, T > 0 and c, m ≥ 0 (dt = {dt}, T = {t}, c = {c}, m = {m})")));
    }
    let steps = (t / dt).round().to_usize().unwrap_or(0).max(1);
    let h = (t / S::count(steps)).as_f64();
    let sq = h.sqrt();
    let c = c.as_f64();
    Ok((0..replicates as u64)
        .map(|r| {
            let mut rng = stream(seed, r);
            let mut z = m.as_f64();
            for _ in 0..steps {
                if z <= 0.0 {
                    z = 0.0;
                    break;
                }
                let w: f64 = rng.sample(StandardNormal);
                z = (z + (c * z).sqrt() * sq * w).max(0.0);
            }
            S::lit(z)
        })
        .collect())
}
