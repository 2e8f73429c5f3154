//! Replicate summaries. Reductions run serially in input order so results
//! do not depend on how replicates were scheduled.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: f64,
    /// Standard error of the mean.
    pub se: f64,
}

impl Summary {
    pub fn of<S: Scalar>(values: &[S]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary { n, mean: f64::NAN, sd: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let sd = var.sqrt();
        Summary { n, mean, sd, se: sd / (n as f64).sqrt() }
    }

    pub fn variance(&self) -> f64 {
        self.sd * self.sd
    }

    /// Whether `target` lies within `k` standard errors of the mean.
    pub fn within_se(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

pub fn mean<S: Scalar>(values: &[S]) -> f64 {
    Summary::of(values).mean
}

pub fn rms<S: Scalar>(values: &[S]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    (values.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Fraction of `true` entries with its binomial standard error.
pub fn proportion(flags: &[bool]) -> Summary {
    let n = flags.len();
    let p = flags.iter().filter(|f| **f).count() as f64 / n as f64;
    let sd = (p * (1.0 - p)).sqrt();
    Summary { n, mean: p, sd, se: sd / (n as f64).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_matches_hand_values() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance() - 5.0 / 3.0).abs() < 1e-15);
        assert!((s.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert!(s.within_se(2.5, 0.0));
        assert_eq!(rms(&[3.0f32, 4.0, 0.0, 0.0]), 2.5);
        let p = proportion(&[true, false, false, false]);
        assert_eq!(p.mean, 0.25);
        assert!(Summary::of::<f64>(&[]).mean.is_nan());
    }
}
