//! Outer functions `f(t, y₁, …, y_n)` with closed-form partial derivatives.

use std::fmt::Debug;

use crate::scalar::Scalar;

pub trait SmoothMap<S: Scalar>: Send + Sync + Debug {
    fn label(&self) -> String;
    fn arity(&self) -> usize;
    fn value(&self, t: S, y: &[S]) -> S;
    fn d_t(&self, t: S, y: &[S]) -> S;
    fn d_y(&self, t: S, y: &[S], i: usize) -> S;
    /// Must be symmetric in `(i, j)`.
    fn d_yy(&self, t: S, y: &[S], i: usize, j: usize) -> S;
    fn d_yyy(&self, t: S, y: &[S], i: usize, j: usize, k: usize) -> S;
}

/// `Σ a_i y_i + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<S> {
    pub coeffs: Vec<S>,
    pub constant: S,
}

impl<S: Scalar> Affine<S> {
    pub fn new(coeffs: Vec<S>, constant: S) -> Self {
        Affine { coeffs, constant }
    }
}

impl<S: Scalar> SmoothMap<S> for Affine<S> {
    fn label(&self) -> String {
        "affine".into()
    }
    fn arity(&self) -> usize {
        self.coeffs.len()
    }
    fn value(&self, _t: S, y: &[S]) -> S {
        self.coeffs.iter().zip(y).fold(self.constant, |acc, (a, v)| acc + *a * *v)
    }
    fn d_t(&self, _t: S, _y: &[S]) -> S {
        S::zero()
    }
    fn d_y(&self, _t: S, _y: &[S], i: usize) -> S {
        self.coeffs[i]
    }
    fn d_yy(&self, _t: S, _y: &[S], _i: usize, _j: usize) -> S {
        S::zero()
    }
    fn d_yyy(&self, _t: S, _y: &[S], _i: usize, _j: usize, _k: usize) -> S {
        S::zero()
    }
}

/// `exp(−Σ a_i y_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NegExp<S> {
    pub coeffs: Vec<S>,
}

impl<S: Scalar> NegExp<S> {
    pub fn new(coeffs: Vec<S>) -> Self {
        NegExp { coeffs }
    }
}

impl<S: Scalar> SmoothMap<S> for NegExp<S> {
    fn label(&self) -> String {
        "negexp".into()
    }
    fn arity(&self) -> usize {
        self.coeffs.len()
    }
    fn value(&self, _t: S, y: &[S]) -> S {
        let arg = self.coeffs.iter().zip(y).fold(S::zero(), |acc, (a, v)| acc + *a * *v);
        (-arg).exp()
    }
    fn d_t(&self, _t: S, _y: &[S]) -> S {
        S::zero()
    }
    fn d_y(&self, t: S, y: &[S], i: usize) -> S {
        -self.coeffs[i] * self.value(t, y)
    }
    fn d_yy(&self, t: S, y: &[S], i: usize, j: usize) -> S {
        (self.coeffs[i] * self.coeffs[j]) * self.value(t, y)
    }
    fn d_yyy(&self, t: S, y: &[S], i: usize, j: usize, k: usize) -> S {
        -(self.coeffs[i] * self.coeffs[j] * self.coeffs[k]) * self.value(t, y)
    }
}

/// `y₀·y₁`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Product;

impl<S: Scalar> SmoothMap<S> for Product {
    fn label(&self) -> String {
        "product".into()
    }
    fn arity(&self) -> usize {
        2
    }
    fn value(&self, _t: S, y: &[S]) -> S {
        y[0] * y[1]
    }
    fn d_t(&self, _t: S, _y: &[S]) -> S {
        S::zero()
    }
    fn d_y(&self, _t: S, y: &[S], i: usize) -> S {
        y[1 - i]
    }
    fn d_yy(&self, _t: S, _y: &[S], i: usize, j: usize) -> S {
        if i == j {
            S::zero()
        } else {
            S::one()
        }
    }
    fn d_yyy(&self, _t: S, _y: &[S], _i: usize, _j: usize, _k: usize) -> S {
        S::zero()
    }
}

/// `y^k` for a single argument.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Power {
    pub k: i32,
}

impl Power {
    pub fn new(k: i32) -> Self {
        Power { k }
    }
}

impl<S: Scalar> SmoothMap<S> for Power {
    fn label(&self) -> String {
        format!("pow{}", self.k)
    }
    fn arity(&self) -> usize {
        1
    }
    fn value(&self, _t: S, y: &[S]) -> S {
        y[0].powi(self.k)
    }
    fn d_t(&self, _t: S, _y: &[S]) -> S {
        S::zero()
    }
    fn d_y(&self, _t: S, y: &[S], _i: usize) -> S {
        if self.k == 0 {
            return S::zero();
        }
        S::lit(self.k as f64) * y[0].powi(self.k - 1)
    }
    fn d_yy(&self, _t: S, y: &[S], _i: usize, _j: usize) -> S {
        let k = self.k as f64;
        if self.k == 0 || self.k == 1 {
            return S::zero();
        }
        S::lit(k * (k - 1.0)) * y[0].powi(self.k - 2)
    }
    fn d_yyy(&self, _t: S, y: &[S], _i: usize, _j: usize, _k: usize) -> S {
        let k = self.k as f64;
        if (0..=2).contains(&self.k) {
            return S::zero();
        }
        S::lit(k * (k - 1.0) * (k - 2.0)) * y[0].powi(self.k - 3)
    }
}

/// `t·g(y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeWeighted<M> {
    pub inner: M,
}

impl<M> TimeWeighted<M> {
    pub fn new(inner: M) -> Self {
        TimeWeighted { inner }
    }
}

impl<S: Scalar, M: SmoothMap<S>> SmoothMap<S> for TimeWeighted<M> {
    fn label(&self) -> String {
        format!("t*{}", self.inner.label())
    }
    fn arity(&self) -> usize {
        self.inner.arity()
    }
    fn value(&self, t: S, y: &[S]) -> S {
        t * self.inner.value(t, y)
    }
    fn d_t(&self, t: S, y: &[S]) -> S {
        self.inner.value(t, y) + t * self.inner.d_t(t, y)
    }
    fn d_y(&self, t: S, y: &[S], i: usize) -> S {
        t * self.inner.d_y(t, y, i)
    }
    fn d_yy(&self, t: S, y: &[S], i: usize, j: usize) -> S {
        t * self.inner.d_yy(t, y, i, j)
    }
    fn d_yyy(&self, t: S, y: &[S], i: usize, j: usize, k: usize) -> S {
        t * self.inner.d_yyy(t, y, i, j, k)
    }
}
