//! Separable test functions `φ(y, v, r) = f(y) g(v) h(r)` and the linear
//! combinations, translations and transports built from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{MacroParams, PhaseFunction};

/// Gaussian-type profiles are cut to exactly zero beyond this many widths,
/// where `exp(-u^2/2) < 3e-18`.
const GAUSSIAN_RADIUS: f64 = 9.0;

/// Highest spatial derivative a term may carry.
pub const MAX_DERIVATIVE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    GaussianBump { center: f64, width: f64 },
    CosinePacket { center: f64, width: f64, wavenumber: f64 },
    /// `(1 - u^2)^3` on `|u| < 1`, `u = (y - center) / width`.
    PolyBump { center: f64, width: f64 },
}

impl Profile {
    pub fn validate(&self) -> Result<()> {
        let (center, width) = (self.center(), self.width());
        if !(center.is_finite() && width.is_finite() && width > 0.0) {
            return Err(Error::InvalidParameter(format!("profile {self:?} needs finite center and width > 0")));
        }
        if let Profile::CosinePacket { wavenumber, .. } = self {
            if !wavenumber.is_finite() {
                return Err(Error::InvalidParameter("wavenumber must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn center(&self) -> f64 {
        match *self {
            Profile::GaussianBump { center, .. }
            | Profile::CosinePacket { center, .. }
            | Profile::PolyBump { center, .. } => center,
        }
    }

    pub fn width(&self) -> f64 {
        match *self {
            Profile::GaussianBump { width, .. }
            | Profile::CosinePacket { width, .. }
            | Profile::PolyBump { width, .. } => width,
        }
    }

    /// Half-length of the support around the center.
    pub fn radius(&self) -> f64 {
        match self {
            Profile::GaussianBump { width, .. } | Profile::CosinePacket { width, .. } => GAUSSIAN_RADIUS * width,
            Profile::PolyBump { width, .. } => *width,
        }
    }

    /// Longest panel the composite spatial rule may use on this profile.
    pub fn max_panel(&self) -> f64 {
        match *self {
            Profile::GaussianBump { width, .. } => 0.5 * width,
            Profile::CosinePacket { width, wavenumber, .. } => {
                if wavenumber.abs() > 0.0 {
                    (0.5 * width).min(1.0 / wavenumber.abs())
                } else {
                    0.5 * width
                }
            }
            Profile::PolyBump { width, .. } => 0.25 * width,
        }
    }

    /// `order`-th derivative at `y`; zero outside the support radius.
    pub fn eval(&self, order: u8, y: f64) -> f64 {
        let dy = y - self.center();
        if dy.abs() >= self.radius() {
            return 0.0;
        }
        match *self {
            Profile::GaussianBump { width, .. } => gaussian(order, dy, width),
            Profile::CosinePacket { width, wavenumber: k, .. } => {
                let (s, c) = (k * dy).sin_cos();
                let g0 = gaussian(0, dy, width);
                match order {
                    0 => g0 * c,
                    1 => gaussian(1, dy, width) * c - k * g0 * s,
                    _ => gaussian(2, dy, width) * c - 2.0 * k * gaussian(1, dy, width) * s - k * k * g0 * c,
                }
            }
            Profile::PolyBump { width, .. } => {
                let u = dy / width;
                let s = 1.0 - u * u;
                match order {
                    0 => s * s * s,
                    1 => -6.0 * u * s * s / width,
                    _ => (-6.0 * s * s + 24.0 * u * u * s) / (width * width),
                }
            }
        }
    }
}

fn gaussian(order: u8, dy: f64, width: f64) -> f64 {
    let u = dy / width;
    let g = (-0.5 * u * u).exp();
    match order {
        0 => g,
        1 => -u * g / width,
        _ => (u * u - 1.0) * g / (width * width),
    }
}

/// Polynomial with ascending coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn constant(c: f64) -> Self {
        Polynomial(vec![c])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Product with `c0 + c1 x`.
    pub fn times_linear(&self, c0: f64, c1: f64) -> Self {
        let mut out = vec![0.0; self.0.len() + 1];
        for (k, &a) in self.0.iter().enumerate() {
            out[k] += a * c0;
            out[k + 1] += a * c1;
        }
        Polynomial(out)
    }
}

/// One separable piece `coeff · f^{(derivative)}(y + slope·v + offset) · g(v) · h(r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub profile: Profile,
    pub derivative: u8,
    pub slope: f64,
    pub offset: f64,
    pub velocity: Polynomial,
    pub length: Polynomial,
}

impl Term {
    fn eval(&self, y: f64, v: f64, r: f64) -> f64 {
        let f = self.profile.eval(self.derivative, y + self.slope * v + self.offset);
        if f == 0.0 {
            return 0.0;
        }
        self.coeff * f * self.velocity.eval(v) * self.length.eval(r)
    }

    fn support_at(&self, v: f64) -> (f64, f64) {
        let c = self.profile.center() - self.slope * v - self.offset;
        let rad = self.profile.radius();
        (c - rad, c + rad)
    }
}

/// Test function in phase space, stored as a finite sum of separable terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub id: String,
    pub terms: Vec<Term>,
}

/// Config-file form of a separable test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionSpec {
    pub id: String,
    pub profile: Profile,
    #[serde(default = "one")]
    pub velocity_poly: Polynomial,
    #[serde(default = "one")]
    pub length_poly: Polynomial,
}

fn one() -> Polynomial {
    Polynomial::constant(1.0)
}

impl TestFunctionSpec {
    pub fn build(&self) -> Result<TestFunction> {
        self.profile.validate()?;
        let finite = |p: &Polynomial| p.0.iter().all(|c| c.is_finite());
        if !finite(&self.velocity_poly) || !finite(&self.length_poly) {
            return Err(Error::InvalidParameter(format!("test function {}: non-finite coefficient", self.id)));
        }
        Ok(TestFunction::separable(
            &self.id,
            self.profile,
            self.velocity_poly.clone(),
            self.length_poly.clone(),
        ))
    }
}

impl TestFunction {
    pub fn separable(id: &str, profile: Profile, velocity: Polynomial, length: Polynomial) -> Self {
        TestFunction {
            id: id.to_string(),
            terms: vec![Term {
                coeff: 1.0,
                profile,
                derivative: 0,
                slope: 0.0,
                offset: 0.0,
                velocity,
                length,
            }],
        }
    }

    /// Mark-independent function `f(y)`.
    pub fn spatial(id: &str, profile: Profile) -> Self {
        Self::separable(id, profile, Polynomial::constant(1.0), Polynomial::constant(1.0))
    }

    pub fn zero(id: &str) -> Self {
        TestFunction { id: id.to_string(), terms: Vec::new() }
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = id.to_string();
        self
    }

    pub fn eval(&self, y: f64, v: f64, r: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(y, v, r)).sum()
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coeff *= a;
        }
        out
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &TestFunction, b: f64) -> Self {
        let mut out = self.scaled(a);
        out.terms.extend(other.scaled(b).terms);
        out.id = format!("{a}*{}+{b}*{}", self.id, other.id);
        out
    }

    /// `(y, v, r) ↦ φ(y + s, v, r)`.
    pub fn translated(&self, s: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.offset += s;
        }
        out
    }

    /// `(y, v, r) ↦ φ(y + v_eff(v)·t, v, r)` with `v_eff(v) = v(1+σ) − π`.
    pub fn transported(&self, t: f64, params: &MacroParams) -> Self {
        let mut out = self.clone();
        for term in &mut out.terms {
            term.slope += (1.0 + params.sigma) * t;
            term.offset -= params.pi * t;
        }
        out
    }

    /// `(y, v, r) ↦ v_eff(v) ∂_y φ(y, v, r)`, the generator of the transport.
    pub fn drift_derivative(&self, params: &MacroParams) -> Result<Self> {
        let mut out = self.clone();
        for term in &mut out.terms {
            if term.derivative >= MAX_DERIVATIVE {
                return Err(Error::InvalidParameter(format!(
                    "test function {}: derivative order above {MAX_DERIVATIVE}",
                    self.id
                )));
            }
            term.derivative += 1;
            term.velocity = term.velocity.times_linear(-params.pi, 1.0 + params.sigma);
        }
        out.id = format!("veff_d({})", self.id);
        Ok(out)
    }

    /// Spatial support of `y ↦ φ(y, v, r)`; `None` for the zero function.
    pub fn support_at(&self, v: f64) -> Option<(f64, f64)> {
        self.terms.iter().map(|t| t.support_at(v)).reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }

    /// Union of spatial supports over velocities in `[v_lo, v_hi]`.
    pub fn support_over(&self, v_lo: f64, v_hi: f64) -> Option<(f64, f64)> {
        match (self.support_at(v_lo), self.support_at(v_hi)) {
            (Some(a), Some(b)) => Some((a.0.min(b.0), a.1.max(b.1))),
            _ => None,
        }
    }

    /// Support endpoints of every term at velocity `v`.
    pub fn breakpoints_at(&self, v: f64) -> impl Iterator<Item = f64> + '_ {
        self.terms.iter().flat_map(move |t| {
            let (lo, hi) = t.support_at(v);
            [lo, hi]
        })
    }

    pub fn max_panel(&self) -> f64 {
        self.terms.iter().map(|t| t.profile.max_panel()).fold(f64::INFINITY, f64::min)
    }

    /// `φ(y, v, r)·ℓ(v)` with `ℓ` the Lagrange polynomial equal to 1 at `class`
    /// and 0 at every other velocity in `atoms`.
    pub fn restricted_to_class(&self, atoms: &[f64], class: f64) -> Self {
        let mut out = self.clone();
        for &a in atoms.iter().filter(|&&a| a != class) {
            let d = class - a;
            for term in &mut out.terms {
                term.velocity = term.velocity.times_linear(-a / d, 1.0 / d);
            }
        }
        out.id = format!("{}|v={class}", self.id);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coeff == 0.0)
    }
}

impl PhaseFunction for TestFunction {
    fn eval(&self, y: f64, v: f64, r: f64) -> f64 {
        TestFunction::eval(self, y, v, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(sigma: f64, pi: f64) -> MacroParams {
        MacroParams { rho: 1.0, sigma, pi, rho_bar: 1.0 / (1.0 + sigma) }
    }

    #[test]
    fn profiles_vanish_outside_radius() {
        let profiles = [
            Profile::GaussianBump { center: 1.0, width: 0.7 },
            Profile::CosinePacket { center: -2.0, width: 1.3, wavenumber: 3.0 },
            Profile::PolyBump { center: 0.5, width: 2.0 },
        ];
        for p in profiles {
            for order in 0..=2 {
                let rad = p.radius();
                assert_eq!(p.eval(order, p.center() + rad * 1.0001), 0.0);
                let inside = p.eval(0, p.center() + rad * (1.0 - 1e-6));
                assert!(inside.abs() < 1e-14, "{p:?} {inside}");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let profiles = [
            Profile::GaussianBump { center: 0.3, width: 0.8 },
            Profile::CosinePacket { center: 0.0, width: 1.1, wavenumber: 2.5 },
            Profile::PolyBump { center: -0.2, width: 1.5 },
        ];
        let h = 1e-5;
        for p in profiles {
            for &y in &[-0.9, -0.3, 0.1, 0.7] {
                for order in 0..2u8 {
                    let fd = (p.eval(order, y + h) - p.eval(order, y - h)) / (2.0 * h);
                    let exact = p.eval(order + 1, y);
                    assert!((fd - exact).abs() < 1e-6, "{p:?} order {order} y {y}: {fd} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn transport_is_a_flow() {
        let phi = TestFunction::separable(
            "p",
            Profile::CosinePacket { center: 0.2, width: 1.0, wavenumber: 1.5 },
            Polynomial(vec![1.0, 0.5]),
            Polynomial(vec![0.0, 1.0]),
        );
        let p = params(0.7, 0.3);
        let a = phi.transported(0.4, &p).transported(0.35, &p);
        let b = phi.transported(0.75, &p);
        for &(y, v) in &[(0.0, 1.0), (1.2, -0.5), (-0.7, 2.0), (0.3, 0.0)] {
            assert!((a.eval(y, v, 1.3) - b.eval(y, v, 1.3)).abs() < 1e-12);
        }
        assert_eq!(phi.transported(0.0, &p), phi);
    }

    #[test]
    fn free_gas_transport_shifts_by_velocity() {
        let phi = TestFunction::spatial("g", Profile::GaussianBump { center: 0.0, width: 1.0 });
        let p = params(0.0, 0.0);
        let moved = phi.transported(2.0, &p);
        for &v in &[-1.0, 0.5, 3.0] {
            let (lo, hi) = moved.support_at(v).unwrap();
            assert!((lo + 9.0 + 2.0 * v).abs() < 1e-12);
            assert!((hi - 9.0 + 2.0 * v).abs() < 1e-12);
            assert!((moved.eval(0.3 - 2.0 * v, v, 1.0) - phi.eval(0.3, v, 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn drift_derivative_is_time_derivative_of_transport() {
        let phi = TestFunction::separable(
            "p",
            Profile::GaussianBump { center: 0.0, width: 0.9 },
            Polynomial(vec![0.5, 0.5]),
            Polynomial::constant(1.0),
        );
        let p = params(1.0, 0.25);
        let t = 0.3;
        let h = 1e-5;
        let gen = phi.transported(t, &p).drift_derivative(&p).unwrap();
        for &(y, v) in &[(0.1, 1.0), (-0.4, -1.0), (0.8, 0.3)] {
            let fd = (phi.transported(t + h, &p).eval(y, v, 1.0) - phi.transported(t - h, &p).eval(y, v, 1.0)) / (2.0 * h);
            assert!((fd - gen.eval(y, v, 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn polynomial_helpers() {
        let p = Polynomial(vec![1.0, -2.0, 3.0]);
        assert_eq!(p.eval(2.0), 9.0);
        assert_eq!(p.times_linear(1.0, 1.0).0, vec![1.0, -1.0, 1.0, 3.0]);
    }

    #[test]
    fn spec_parses_from_toml() {
        let spec: TestFunctionSpec = toml::from_str(
            r#"
            id = "movers"
            profile = { kind = "poly_bump", center = 1.0, width = 3.0 }
            velocity_poly = [0.5, 0.5]
            "#,
        )
        .unwrap();
        let f = spec.build().unwrap();
        assert_eq!(f.eval(1.0, 1.0, 7.0), 1.0);
        assert_eq!(f.eval(1.0, -1.0, 7.0), 0.0);
    }

    #[test]
    fn class_restriction_selects_one_atom() {
        let phi = TestFunction::separable("f", Profile::PolyBump { center: 0.0, width: 1.0 }, Polynomial(vec![2.0, 1.0]), Polynomial::constant(1.0));
        let atoms = [-1.0, 0.5, 2.0];
        let only = phi.restricted_to_class(&atoms, 0.5);
        for &v in &atoms {
            let expected = if v == 0.5 { phi.eval(0.2, v, 1.0) } else { 0.0 };
            assert!((only.eval(0.2, v, 1.0) - expected).abs() < 1e-14);
        }
    }
}
