//! Functionals of the measure and of the stopped path, with closed-form
//! derivatives where the family allows it.
//!
//! Derivatives in the direction `x` are returned as whole [`FourierField`]s
//! (`x ↦ 𝒟ₓF`) whenever they are trigonometric polynomials in `x`. That is
//! the case for every family here, and it is what lets the calculus module
//! integrate them against snapshots with cached moments.

mod log_laplace;
mod smooth;

use std::sync::Arc;

pub use log_laplace::{
    constant_laplace_oracle, exp_martingale_functional, mean_laplace_functional, solve_log_laplace, ExpMartingale, LaplaceEstimate,
    LogLaplaceSolution, SOLVER_DEFAULT_MODES, SOLVER_DEFAULT_STEPS,
};
pub use smooth::{Affine, NegExp, Power, Product, SmoothMap, TimeWeighted};

use crate::geometry::{CirclePoint, FourierField};
use crate::pathspace::StoppedPath;
use crate::scalar::Scalar;
use crate::trajectory::MeasureState;

/// `F(t, ω)` on stopped paths. Every derivative is optional; `None` means
/// "not available in closed form" and callers fall back to finite
/// differences when allowed.
pub trait Functional<S: Scalar>: Send + Sync {
    fn name(&self) -> String;

    fn eval(&self, sp: &StoppedPath<S>) -> S;

    /// `𝒟*F`.
    fn horizontal(&self, _sp: &StoppedPath<S>) -> Option<S> {
        None
    }

    /// `x ↦ 𝒟ₓF`.
    fn vertical_field(&self, _sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        None
    }

    fn vertical(&self, sp: &StoppedPath<S>, x: CirclePoint<S>) -> Option<S> {
        self.vertical_field(sp).map(|f| f.eval(x))
    }

    /// `𝒟_{xy}F`, symmetric in `(x, y)`.
    fn vertical2(&self, _sp: &StoppedPath<S>, _x: CirclePoint<S>, _y: CirclePoint<S>) -> Option<S> {
        None
    }

    /// `x ↦ 𝒟ₓₓF`, the diagonal of the second vertical derivative.
    fn vertical2_diag_field(&self, _sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        None
    }

    /// `x ↦ A^{(x)}𝒟ₓF`.
    fn generator_vertical_field(&self, sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        self.vertical_field(sp).map(|f| f.apply_generator())
    }

    fn generator_vertical(&self, sp: &StoppedPath<S>, x: CirclePoint<S>) -> Option<S> {
        self.generator_vertical_field(sp).map(|f| f.eval(x))
    }

    fn vertical3(
        &self,
        _sp: &StoppedPath<S>,
        _x: CirclePoint<S>,
        _y: CirclePoint<S>,
        _z: CirclePoint<S>,
    ) -> Option<S> {
        None
    }

    /// Whether `t ↦ F(t, X_t)` is known to be a martingale.
    fn is_martingale(&self) -> bool {
        false
    }
}

/// `F(t, μ)` on measures, with the directional derivatives
/// `D_xF(t, μ) = d/dε F(t, μ + εδ_x)|_{ε=0}`.
pub trait StateFunctional<S: Scalar>: Send + Sync {
    fn name(&self) -> String;

    fn eval(&self, t: S, mu: &dyn MeasureState<S>) -> S;

    /// `∂_t F`.
    fn time_derivative(&self, _t: S, _mu: &dyn MeasureState<S>) -> Option<S> {
        None
    }

    fn vertical_field(&self, _t: S, _mu: &dyn MeasureState<S>) -> Option<FourierField<S>> {
        None
    }

    fn vertical2(&self, _t: S, _mu: &dyn MeasureState<S>, _x: CirclePoint<S>, _y: CirclePoint<S>) -> Option<S> {
        None
    }

    fn vertical2_diag_field(&self, _t: S, _mu: &dyn MeasureState<S>) -> Option<FourierField<S>> {
        None
    }

    fn generator_vertical_field(&self, t: S, mu: &dyn MeasureState<S>) -> Option<FourierField<S>> {
        self.vertical_field(t, mu).map(|f| f.apply_generator())
    }

    fn vertical3(
        &self,
        _t: S,
        _mu: &dyn MeasureState<S>,
        _x: CirclePoint<S>,
        _y: CirclePoint<S>,
        _z: CirclePoint<S>,
    ) -> Option<S> {
        None
    }

    fn is_martingale(&self) -> bool {
        false
    }
}

/// Path functional `F(t, ω) = G(t, ω(t))` built from a state functional.
#[derive(Clone, Debug)]
pub struct StateSlice<G>(pub G);

impl<S: Scalar, G: StateFunctional<S>> Functional<S> for StateSlice<G> {
    fn name(&self) -> String {
        self.0.name()
    }
    fn eval(&self, sp: &StoppedPath<S>) -> S {
        self.0.eval(sp.t(), &sp.current_state())
    }
    fn horizontal(&self, sp: &StoppedPath<S>) -> Option<S> {
        self.0.time_derivative(sp.t(), &sp.current_state())
    }
    fn vertical_field(&self, sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        self.0.vertical_field(sp.t(), &sp.current_state())
    }
    fn vertical2(&self, sp: &StoppedPath<S>, x: CirclePoint<S>, y: CirclePoint<S>) -> Option<S> {
        self.0.vertical2(sp.t(), &sp.current_state(), x, y)
    }
    fn vertical2_diag_field(&self, sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        self.0.vertical2_diag_field(sp.t(), &sp.current_state())
    }
    fn generator_vertical_field(&self, sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        self.0.generator_vertical_field(sp.t(), &sp.current_state())
    }
    fn vertical3(&self, sp: &StoppedPath<S>, x: CirclePoint<S>, y: CirclePoint<S>, z: CirclePoint<S>) -> Option<S> {
        self.0.vertical3(sp.t(), &sp.current_state(), x, y, z)
    }
    fn is_martingale(&self) -> bool {
        self.0.is_martingale()
    }
}

fn weighted_sum<S: Scalar>(terms: impl Iterator<Item = (S, FourierField<S>)>) -> FourierField<S> {
    terms.fold(FourierField::zero(), |acc, (w, f)| &acc + &f.scale(w))
}

/// Finitely based functional `F(t, μ) = f(t, ⟨μ,φ₁⟩, …, ⟨μ,φ_n⟩)`.
#[derive(Clone, Debug)]
pub struct CylindricalState<S> {
    outer: Arc<dyn SmoothMap<S>>,
    fields: Vec<FourierField<S>>,
    generator_fields: Vec<FourierField<S>>,
    /// `pairs[i][j] = φ_i·φ_j` for `j ≥ i`.
    pairs: Vec<Vec<FourierField<S>>>,
}

impl<S: Scalar> CylindricalState<S> {
    pub fn new(outer: impl SmoothMap<S> + 'static, fields: Vec<FourierField<S>>) -> Self {
        Self::from_arc(Arc::new(outer), fields)
    }

    pub fn from_arc(outer: Arc<dyn SmoothMap<S>>, fields: Vec<FourierField<S>>) -> Self {
        assert_eq!(outer.arity(), fields.len(), "outer arity must match the number of fields");
        let generator_fields = fields.iter().map(|f| f.apply_generator()).collect();
        let pairs = (0..fields.len())
            .map(|i| (0..fields.len()).map(|j| if j >= i { fields[i].product(&fields[j]) } else { FourierField::zero() }).collect())
            .collect();
        CylindricalState {
            outer,
            fields,
            generator_fields,
            pairs,
        }
    }

    /// `⟨μ, φ⟩`.
    pub fn linear(phi: FourierField<S>) -> Self {
        Self::new(Affine::new(vec![S::one()], S::zero()), vec![phi])
    }

    /// `t·⟨μ, φ⟩`.
    pub fn time_weighted(phi: FourierField<S>) -> Self {
        Self::new(TimeWeighted::new(Affine::new(vec![S::one()], S::zero())), vec![phi])
    }

    /// `exp(−⟨μ, φ⟩)`.
    pub fn neg_exp(phi: FourierField<S>) -> Self {
        Self::new(NegExp::new(vec![S::one()]), vec![phi])
    }

    pub fn fields(&self) -> &[FourierField<S>] {
        &self.fields
    }

    fn arguments(&self, mu: &dyn MeasureState<S>) -> Vec<S> {
        self.fields.iter().map(|f| mu.integrate(f)).collect()
    }
}

impl<S: Scalar> StateFunctional<S> for CylindricalState<S> {
    fn name(&self) -> String {
        format!("cylindrical-{}", self.outer.label())
    }

    fn eval(&self, t: S, mu: &dyn MeasureState<S>) -> S {
        self.outer.value(t, &self.arguments(mu))
    }

    fn time_derivative(&self, t: S, mu: &dyn MeasureState<S>) -> Option<S> {
        Some(self.outer.d_t(t, &self.arguments(mu)))
    }

    fn vertical_field(&self, t: S, mu: &dyn MeasureState<S>) -> Option<FourierField<S>> {
        let y = self.arguments(mu);
        Some(weighted_sum(
            self.fields.iter().enumerate().map(|(i, f)| (self.outer.d_y(t, &y, i), f.clone())),
        ))
    }

    fn vertical2(&self, t: S, mu: &dyn MeasureState<S>, x: CirclePoint<S>, z: CirclePoint<S>) -> Option<S> {
        let y = self.arguments(mu);
        let a: Vec<S> = self.fields.iter().map(|f| f.eval(x)).collect();
        let b: Vec<S> = self.fields.iter().map(|f| f.eval(z)).collect();
        // symmetric pairing keeps the result bitwise symmetric in (x, z)
        let mut acc = S::zero();
        for i in 0..self.fields.len() {
            acc = acc + self.outer.d_yy(t, &y, i, i) * (a[i] * b[i]);
            for j in i + 1..self.fields.len() {
                acc = acc + self.outer.d_yy(t, &y, i, j) * (a[i] * b[j] + a[j] * b[i]);
            }
        }
        Some(acc)
    }

    fn vertical2_diag_field(&self, t: S, mu: &dyn MeasureState<S>) -> Option<FourierField<S>> {
        let y = self.arguments(mu);
        let n = self.fields.len();
        let two = S::lit(2.0);
        Some(weighted_sum((0..n).flat_map(|i| {
            let y = &y;
            (i..n).map(move |j| {
                let w = self.outer.d_yy(t, y, i, j);
                (if i == j { w } else { two * w }, self.pairs[i][j].clone())
            })
        })))
    }

    fn generator_vertical_field(&self, t: S, mu: &dyn MeasureState<S>) -> Option<FourierField<S>> {
        let y = self.arguments(mu);
        Some(weighted_sum(
            self.generator_fields.iter().enumerate().map(|(i, f)| (self.outer.d_y(t, &y, i), f.clone())),
        ))
    }

    fn vertical3(
        &self,
        t: S,
        mu: &dyn MeasureState<S>,
        x: CirclePoint<S>,
        y2: CirclePoint<S>,
        z: CirclePoint<S>,
    ) -> Option<S> {
        let y = self.arguments(mu);
        let n = self.fields.len();
        let mut acc = S::zero();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    acc = acc
                        + self.outer.d_yyy(t, &y, i, j, k)
                            * self.fields[i].eval(x)
                            * self.fields[j].eval(y2)
                            * self.fields[k].eval(z);
                }
            }
        }
        Some(acc)
    }
}

/// `F(t, ω) = g(t, ⟨ω(t), φ⟩, ∫₀ᵗ ⟨ω(s), ψ⟩ ds)` for an outer `g` of arity 2.
#[derive(Clone, Debug)]
pub struct CylindricalPath<S> {
    outer: Arc<dyn SmoothMap<S>>,
    phi: FourierField<S>,
    psi: FourierField<S>,
    generator_phi: FourierField<S>,
    phi_sq: FourierField<S>,
}

impl<S: Scalar> CylindricalPath<S> {
    pub fn new(outer: impl SmoothMap<S> + 'static, phi: FourierField<S>, psi: FourierField<S>) -> Self {
        Self::from_arc(Arc::new(outer), phi, psi)
    }

    pub fn from_arc(outer: Arc<dyn SmoothMap<S>>, phi: FourierField<S>, psi: FourierField<S>) -> Self {
        assert_eq!(outer.arity(), 2, "path family takes g(t, y, z)");
        CylindricalPath {
            generator_phi: phi.apply_generator(),
            phi_sq: phi.square(),
            outer,
            phi,
            psi,
        }
    }

    /// `∫₀ᵗ ⟨ω(s), ψ⟩ ds`, a purely horizontal functional.
    pub fn time_integral(psi: FourierField<S>) -> Self {
        Self::new(Affine::new(vec![S::zero(), S::one()], S::zero()), FourierField::zero(), psi)
    }

    fn arguments(&self, sp: &StoppedPath<S>) -> [S; 2] {
        [sp.integrate_current(&self.phi), sp.time_integral(&self.psi)]
    }
}

impl<S: Scalar> Functional<S> for CylindricalPath<S> {
    fn name(&self) -> String {
        format!("path-{}", self.outer.label())
    }

    fn eval(&self, sp: &StoppedPath<S>) -> S {
        self.outer.value(sp.t(), &self.arguments(sp))
    }

    fn horizontal(&self, sp: &StoppedPath<S>) -> Option<S> {
        let y = self.arguments(sp);
        let t = sp.t();
        Some(self.outer.d_t(t, &y) + self.outer.d_y(t, &y, 1) * sp.integrate_current(&self.psi))
    }

    fn vertical_field(&self, sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        Some(self.phi.scale(self.outer.d_y(sp.t(), &self.arguments(sp), 0)))
    }

    fn vertical2(&self, sp: &StoppedPath<S>, x: CirclePoint<S>, y: CirclePoint<S>) -> Option<S> {
        Some(self.outer.d_yy(sp.t(), &self.arguments(sp), 0, 0) * (self.phi.eval(x) * self.phi.eval(y)))
    }

    fn vertical2_diag_field(&self, sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        Some(self.phi_sq.scale(self.outer.d_yy(sp.t(), &self.arguments(sp), 0, 0)))
    }

    fn generator_vertical_field(&self, sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        Some(self.generator_phi.scale(self.outer.d_y(sp.t(), &self.arguments(sp), 0)))
    }

    fn vertical3(&self, sp: &StoppedPath<S>, x: CirclePoint<S>, y: CirclePoint<S>, z: CirclePoint<S>) -> Option<S> {
        Some(
            self.outer.d_yyy(sp.t(), &self.arguments(sp), 0, 0, 0)
                * self.phi.eval(x)
                * self.phi.eval(y)
                * self.phi.eval(z),
        )
    }
}

/// A constant functional; trivially a martingale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constant<S> {
    value: S,
}

impl<S: Scalar> Constant<S> {
    pub fn new(value: S) -> Self {
        Constant { value }
    }
}

impl<S: Scalar> Functional<S> for Constant<S> {
    fn name(&self) -> String {
        "constant".into()
    }
    fn eval(&self, _sp: &StoppedPath<S>) -> S {
        self.value
    }
    fn horizontal(&self, _sp: &StoppedPath<S>) -> Option<S> {
        Some(S::zero())
    }
    fn vertical_field(&self, _sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        Some(FourierField::zero())
    }
    fn vertical2(&self, _sp: &StoppedPath<S>, _x: CirclePoint<S>, _y: CirclePoint<S>) -> Option<S> {
        Some(S::zero())
    }
    fn vertical2_diag_field(&self, _sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        Some(FourierField::zero())
    }
    fn vertical3(&self, _sp: &StoppedPath<S>, _x: CirclePoint<S>, _y: CirclePoint<S>, _z: CirclePoint<S>) -> Option<S> {
        Some(S::zero())
    }
    fn is_martingale(&self) -> bool {
        true
    }
}

/// `Σ α_i F_i`. A derivative is available only when every term provides it.
#[derive(Clone)]
pub struct LinearCombination<S> {
    terms: Vec<(S, Arc<dyn Functional<S>>)>,
}

impl<S: Scalar> LinearCombination<S> {
    pub fn new(terms: Vec<(S, Arc<dyn Functional<S>>)>) -> Self {
        LinearCombination { terms }
    }

    fn combine(&self, part: impl Fn(&dyn Functional<S>) -> Option<S>) -> Option<S> {
        self.terms
            .iter()
            .try_fold(S::zero(), |acc, (a, f)| part(f.as_ref()).map(|v| acc + *a * v))
    }

    fn combine_fields(&self, part: impl Fn(&dyn Functional<S>) -> Option<FourierField<S>>) -> Option<FourierField<S>> {
        self.terms
            .iter()
            .try_fold(FourierField::zero(), |acc, (a, f)| part(f.as_ref()).map(|v| &acc + &v.scale(*a)))
    }
}

impl<S: Scalar> Functional<S> for LinearCombination<S> {
    fn name(&self) -> String {
        let names: Vec<_> = self.terms.iter().map(|(_, f)| f.name()).collect();
        format!("sum({})", names.join("+"))
    }
    fn eval(&self, sp: &StoppedPath<S>) -> S {
        self.combine(|f| Some(f.eval(sp))).expect("evaluation is total")
    }
    fn horizontal(&self, sp: &StoppedPath<S>) -> Option<S> {
        self.combine(|f| f.horizontal(sp))
    }
    fn vertical_field(&self, sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        self.combine_fields(|f| f.vertical_field(sp))
    }
    fn vertical2(&self, sp: &StoppedPath<S>, x: CirclePoint<S>, y: CirclePoint<S>) -> Option<S> {
        self.combine(|f| f.vertical2(sp, x, y))
    }
    fn vertical2_diag_field(&self, sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        self.combine_fields(|f| f.vertical2_diag_field(sp))
    }
    fn generator_vertical_field(&self, sp: &StoppedPath<S>) -> Option<FourierField<S>> {
        self.combine_fields(|f| f.generator_vertical_field(sp))
    }
    fn vertical3(&self, sp: &StoppedPath<S>, x: CirclePoint<S>, y: CirclePoint<S>, z: CirclePoint<S>) -> Option<S> {
        self.combine(|f| f.vertical3(sp, x, y, z))
    }
    fn is_martingale(&self) -> bool {
        self.terms.iter().all(|(_, f)| f.is_martingale())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FiniteMeasure;
    use crate::pathspace::{numeric_vertical2_diagonal, numeric_vertical_derivative, stop};
    use crate::trajectory::Trajectory;
    use approx::assert_abs_diff_eq;

    fn p(x: f64) -> CirclePoint<f64> {
        CirclePoint::new(x)
    }

    fn sample_path() -> StoppedPath<f64> {
        let snaps: Vec<_> = (0..5)
            .map(|i| FiniteMeasure::new(vec![(p(0.13 * i as f64), 0.6), (p(0.4), 0.3 + 0.1 * i as f64)]).unwrap())
            .collect();
        let tr = Arc::new(Trajectory::new(vec![0.0, 0.25, 0.5, 0.75, 1.0], snaps, 1.0).unwrap());
        stop(&tr, 0.5).unwrap()
    }

    #[test]
    fn linear_functional_reduces_to_the_martingale_problem() {
        let phi = FourierField::from_parts(0.2, vec![0.5], vec![0.0, 1.0]);
        let f = StateSlice(CylindricalState::linear(phi.clone()));
        let sp = sample_path();
        assert_eq!(f.horizontal(&sp), Some(0.0));
        assert_eq!(f.vertical_field(&sp).unwrap(), phi);
        assert_eq!(f.generator_vertical_field(&sp).unwrap(), phi.apply_generator());
        assert!(f.vertical2_diag_field(&sp).unwrap().sup_bound() == 0.0);
    }

    #[test]
    fn cylindrical_second_derivatives() {
        let phi1 = FourierField::from_parts(0.2, vec![0.5], vec![0.3]);
        let phi2 = FourierField::sine(2, 0.7);
        let f = StateSlice(CylindricalState::new(NegExp::new(vec![1.0, 0.5]), vec![phi1, phi2]));
        let sp = sample_path();
        let diag = f.vertical2_diag_field(&sp).unwrap();
        for x in [0.0, 0.21, 0.5, 0.93] {
            let x = p(x);
            assert_abs_diff_eq!(diag.eval(x), f.vertical2(&sp, x, x).unwrap(), epsilon = 1e-14);
            let numeric = numeric_vertical2_diagonal(&f, &sp, x, 1e-3).unwrap();
            assert_abs_diff_eq!(diag.eval(x), numeric, epsilon = 1e-5);
            let y = p(0.77);
            assert_eq!(f.vertical2(&sp, x, y), f.vertical2(&sp, y, x));
        }
    }

    #[test]
    fn cylindrical_path_derivatives_match_numeric() {
        let phi = FourierField::from_parts(0.4, vec![0.5], vec![0.3]);
        let psi = FourierField::cosine(1, 1.0);
        let f = CylindricalPath::new(Product, phi.clone(), psi.clone());
        let sp = sample_path();
        for x in [0.1, 0.6] {
            let x = p(x);
            let analytic = f.vertical(&sp, x).unwrap();
            let numeric = numeric_vertical_derivative(&f, &sp, x, 1e-4).unwrap();
            assert_abs_diff_eq!(analytic, numeric, epsilon = 1e-9);
        }
        // horizontal: y·⟨ω(t),ψ⟩ for g = y·z
        let expected = sp.integrate_current(&phi) * sp.integrate_current(&psi);
        assert_abs_diff_eq!(f.horizontal(&sp).unwrap(), expected, epsilon = 1e-14);
        let integral = CylindricalPath::time_integral(psi.clone());
        assert!(integral.vertical_field(&sp).unwrap().sup_bound() == 0.0);
        assert_abs_diff_eq!(integral.horizontal(&sp).unwrap(), sp.integrate_current(&psi), epsilon = 1e-15);
    }

    #[test]
    fn third_derivative_of_power() {
        let f = StateSlice(CylindricalState::new(Power::new(3), vec![FourierField::constant(1.0)]));
        let sp = sample_path();
        let v = f.vertical3(&sp, p(0.1), p(0.2), p(0.3)).unwrap();
        assert_eq!(v, 6.0);
    }

    #[test]
    fn linear_combination_combines_derivatives() {
        let phi = FourierField::cosine(1, 1.0);
        let a: Arc<dyn Functional<f64>> = Arc::new(StateSlice(CylindricalState::linear(phi.clone())));
        let b: Arc<dyn Functional<f64>> = Arc::new(StateSlice(CylindricalState::neg_exp(phi.clone())));
        let sum = LinearCombination::new(vec![(2.0, a.clone()), (-0.5, b.clone())]);
        let sp = sample_path();
        assert_abs_diff_eq!(sum.eval(&sp), 2.0 * a.eval(&sp) - 0.5 * b.eval(&sp), epsilon = 1e-15);
        let x = p(0.3);
        assert_abs_diff_eq!(
            sum.vertical(&sp, x).unwrap(),
            2.0 * a.vertical(&sp, x).unwrap() - 0.5 * b.vertical(&sp, x).unwrap(),
            epsilon = 1e-14
        );
        assert!(!sum.is_martingale());
        assert!(Constant::new(1.0).is_martingale());
    }
}
