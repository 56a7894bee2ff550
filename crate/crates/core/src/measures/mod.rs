//! The mark measure `μ(v, r)` and the macroscopic constants derived from it.
//!
//! A measure is a finite mixture of product laws `velocity ⊗ length`. Every
//! law in the grammar has finite moments of all orders, and each one has an
//! exact sampler and a deterministic quadrature rule:
//!
//! | law          | quadrature                    |
//! |--------------|-------------------------------|
//! | atom         | exact point evaluation        |
//! | uniform      | 64-node Gauss–Legendre        |
//! | gaussian     | 64-node Gauss–Hermite         |
//! | exponential  | 64-node Gauss–Laguerre        |
//!
//! Integrands with a kink in the velocity variable (`|v - w|` in the
//! diffusivity) are integrated on a rule split at the kink.

pub mod covariance;
pub mod quadrature;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use quadrature::{hermite_64, laguerre_64, legendre_64};

pub use covariance::{bracket, covariance_matrix, theoretical_covariance};

/// Gaussian factors are integrated on `mean ± GAUSSIAN_CUTOFF·sd` when the
/// rule has to be split; the discarded mass is below 1e-38.
const GAUSSIAN_CUTOFF: f64 = 13.0;

/// Default tail probability for the velocity cutoff of unbounded laws.
pub const VELOCITY_TAIL: f64 = 1e-12;

/// One-dimensional law in the measure grammar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    Atom { value: f64 },
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, sd: f64 },
    Exponential { rate: f64 },
}

impl DistSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DistSpec::Atom { value } => value.is_finite(),
            DistSpec::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            DistSpec::Gaussian { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            DistSpec::Exponential { rate } => rate.is_finite() && rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidMeasure(format!("bad parameters in {self:?}")))
        }
    }

    /// True when the law is supported on `[0, ∞)`.
    pub fn is_nonnegative(&self) -> bool {
        match *self {
            DistSpec::Atom { value } => value >= 0.0,
            DistSpec::Uniform { lo, .. } => lo >= 0.0,
            DistSpec::Gaussian { mean, sd } => sd == 0.0 && mean >= 0.0,
            DistSpec::Exponential { .. } => true,
        }
    }

    /// Point mass location, if the law is degenerate.
    pub fn atom(&self) -> Option<f64> {
        match *self {
            DistSpec::Atom { value } => Some(value),
            DistSpec::Uniform { lo, hi } if lo == hi => Some(lo),
            DistSpec::Gaussian { mean, sd } if sd == 0.0 => Some(mean),
            _ => None,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistSpec::Atom { value } => value,
            DistSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
            DistSpec::Gaussian { mean, .. } => mean,
            DistSpec::Exponential { rate } => 1.0 / rate,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DistSpec::Atom { value } => value,
            DistSpec::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            DistSpec::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            DistSpec::Exponential { rate } => {
                let e: f64 = Exp1.sample(rng);
                e / rate
            }
        }
    }

    /// Bound on `|x|` exceeded with probability at most `tail`.
    pub fn abs_cap(&self, tail: f64) -> f64 {
        match *self {
            DistSpec::Atom { value } => value.abs(),
            DistSpec::Uniform { lo, hi } => lo.abs().max(hi.abs()),
            DistSpec::Gaussian { mean, sd } => {
                if sd == 0.0 {
                    return mean.abs();
                }
                let z = Normal::standard().inverse_cdf(1.0 - 0.5 * tail);
                mean.abs() + sd * z
            }
            DistSpec::Exponential { rate } => -tail.ln() / rate,
        }
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if let Some(a) = self.atom() {
            return if x >= a { 1.0 } else { 0.0 };
        }
        match *self {
            DistSpec::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            DistSpec::Gaussian { mean, sd } => Normal::standard().cdf((x - mean) / sd),
            DistSpec::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            DistSpec::Atom { .. } => unreachable!(),
        }
    }

    /// Quadrature nodes `(x, weight)` with weights summing to one.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        if let Some(a) = self.atom() {
            return vec![(a, 1.0)];
        }
        match *self {
            DistSpec::Uniform { lo, hi } => {
                let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                legendre_64().iter().map(|(x, w)| (mid + half * x, w)).collect()
            }
            DistSpec::Gaussian { mean, sd } => hermite_64().iter().map(|(x, w)| (mean + sd * x, w)).collect(),
            DistSpec::Exponential { rate } => laguerre_64().iter().map(|(x, w)| (x / rate, w)).collect(),
            DistSpec::Atom { .. } => unreachable!(),
        }
    }

    /// Quadrature nodes for integrands with a kink at `kink`.
    pub fn nodes_split(&self, kink: f64) -> Vec<(f64, f64)> {
        if self.atom().is_some() {
            return self.nodes();
        }
        match *self {
            DistSpec::Uniform { lo, hi } if lo < kink && kink < hi => {
                let len = hi - lo;
                let mut out = Vec::with_capacity(128);
                for (a, b) in [(lo, kink), (kink, hi)] {
                    out.extend(quadrature::legendre_on(legendre_64(), a, b).map(|(x, w)| (x, w / len)));
                }
                out
            }
            DistSpec::Gaussian { mean, sd } => {
                let (a, b) = (mean - GAUSSIAN_CUTOFF * sd, mean + GAUSSIAN_CUTOFF * sd);
                if !(a < kink && kink < b) {
                    return self.nodes();
                }
                let density = |x: f64| {
                    let u = (x - mean) / sd;
                    (-0.5 * u * u).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
                };
                let mut out = Vec::with_capacity(128);
                for (lo, hi) in [(a, kink), (kink, b)] {
                    out.extend(quadrature::legendre_on(legendre_64(), lo, hi).map(|(x, w)| (x, w * density(x))));
                }
                out
            }
            DistSpec::Exponential { rate } if kink > 0.0 => {
                let mut out: Vec<(f64, f64)> = quadrature::legendre_on(legendre_64(), 0.0, kink)
                    .map(|(x, w)| (x, w * rate * (-rate * x).exp()))
                    .collect();
                let tail = (-rate * kink).exp();
                out.extend(laguerre_64().iter().map(|(u, w)| (kink + u / rate, w * tail)));
                out
            }
            _ => self.nodes(),
        }
    }
}

/// One mixture component: independent velocity and length laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub velocity: DistSpec,
    pub length: DistSpec,
}

/// Quadrature node of the mark measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkNode {
    pub v: f64,
    pub r: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Component>", into = "Vec<Component>")]
pub struct VelocityLengthMeasure {
    components: Vec<Component>,
}

impl TryFrom<Vec<Component>> for VelocityLengthMeasure {
    type Error = Error;

    fn try_from(components: Vec<Component>) -> Result<Self> {
        Self::new(components)
    }
}

impl From<VelocityLengthMeasure> for Vec<Component> {
    fn from(m: VelocityLengthMeasure) -> Self {
        m.components
    }
}

impl VelocityLengthMeasure {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidMeasure("no components".into()));
        }
        let mut total = 0.0;
        for c in &components {
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(Error::InvalidMeasure(format!("weight {} is not a probability", c.weight)));
            }
            c.velocity.validate()?;
            c.length.validate()?;
            if !c.length.is_nonnegative() {
                return Err(Error::InvalidMeasure(format!("length law {:?} charges negative lengths", c.length)));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        Ok(VelocityLengthMeasure { components })
    }

    /// Product law `velocity ⊗ length`.
    pub fn product(velocity: DistSpec, length: DistSpec) -> Result<Self> {
        Self::new(vec![Component { weight: 1.0, velocity, length }])
    }

    /// Classical hard rods: every rod has length `a`, velocities from atoms.
    pub fn fixed_length(velocities: &[(f64, f64)], a: f64) -> Result<Self> {
        Self::new(
            velocities
                .iter()
                .map(|&(weight, v)| Component {
                    weight,
                    velocity: DistSpec::Atom { value: v },
                    length: DistSpec::Atom { value: a },
                })
                .collect(),
        )
    }

    /// `½(δ_{+1} + δ_{−1}) ⊗ δ_1`.
    pub fn benchmark() -> Self {
        Self::fixed_length(&[(0.5, 1.0), (0.5, -1.0)], 1.0).expect("benchmark measure is valid")
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    fn nodes_with(&self, split: Option<f64>) -> Vec<MarkNode> {
        let mut out = Vec::new();
        for c in &self.components {
            if c.weight == 0.0 {
                continue;
            }
            let vs = match split {
                Some(k) => c.velocity.nodes_split(k),
                None => c.velocity.nodes(),
            };
            let rs = c.length.nodes();
            for &(v, wv) in &vs {
                for &(r, wr) in &rs {
                    out.push(MarkNode { v, r, weight: c.weight * wv * wr });
                }
            }
        }
        out
    }

    pub fn mark_nodes(&self) -> Vec<MarkNode> {
        self.nodes_with(None)
    }

    /// Nodes for integrands with a kink in the velocity variable at `kink`.
    pub fn mark_nodes_split(&self, kink: f64) -> Vec<MarkNode> {
        self.nodes_with(Some(kink))
    }

    /// `∬ f(v, r) dμ(v, r)`.
    pub fn moment(&self, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
        integrate(&self.mark_nodes(), f)
    }

    /// Same as [`moment`](Self::moment) for integrands with a velocity kink at `kink`.
    pub fn moment_split(&self, kink: f64, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
        integrate(&self.mark_nodes_split(kink), f)
    }

    pub fn sample_mark<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let c = if self.components.len() == 1 {
            &self.components[0]
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = self.components.last().expect("nonempty");
            for c in &self.components {
                acc += c.weight;
                if u < acc {
                    chosen = c;
                    break;
                }
            }
            chosen
        };
        (c.velocity.sample(rng), c.length.sample(rng))
    }

    /// Velocity cutoff exceeded with probability at most `tail` per point.
    pub fn velocity_cap(&self, tail: f64) -> f64 {
        self.components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.velocity.abs_cap(tail))
            .fold(0.0, f64::max)
    }

    /// Velocities carried by atoms of the velocity law, in component order.
    pub fn velocity_atoms(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for c in &self.components {
            if let Some(v) = c.velocity.atom() {
                if c.weight > 0.0 && !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    /// `μ(|v − center| ≤ half_width)`.
    pub fn band_probability(&self, center: f64, half_width: f64) -> f64 {
        let (lo, hi) = (center - half_width, center + half_width);
        self.components
            .iter()
            .map(|c| {
                let below = if c.velocity.atom() == Some(lo) { 0.0 } else { c.velocity.cdf(lo) };
                c.weight * (c.velocity.cdf(hi) - below)
            })
            .sum()
    }

    pub fn has_velocity_atom(&self, v: f64) -> bool {
        self.velocity_atoms().contains(&v)
    }

    /// True if every length law is the point mass at zero.
    pub fn is_pointlike(&self) -> bool {
        self.components.iter().all(|c| c.length.atom() == Some(0.0))
    }
}

fn integrate(nodes: &[MarkNode], f: impl Fn(f64, f64) -> f64) -> Result<f64> {
    let value: f64 = nodes.iter().map(|n| n.weight * f(n.v, n.r)).sum();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("mark-measure integrand"))
    }
}

/// Free-function form of [`VelocityLengthMeasure::moment`].
pub fn moment(mu: &VelocityLengthMeasure, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
    mu.moment(f)
}

/// Number density `ρ`, volume density `σ`, momentum density `π` and rod density `ρ̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroParams {
    pub rho: f64,
    pub sigma: f64,
    pub pi: f64,
    pub rho_bar: f64,
}

impl MacroParams {
    /// Effective velocity `v(1+σ) − π`.
    pub fn v_eff(&self, v: f64) -> f64 {
        v * (1.0 + self.sigma) - self.pi
    }
}

pub fn macro_params(rho: f64, mu: &VelocityLengthMeasure) -> Result<MacroParams> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let sigma = rho * mu.moment(|_, r| r)?;
    let pi = rho * mu.moment(|v, r| r * v)?;
    Ok(MacroParams { rho, sigma, pi, rho_bar: rho / (1.0 + sigma) })
}

pub fn v_eff(v: f64, params: &MacroParams) -> f64 {
    params.v_eff(v)
}

/// `v + ρ ∬ r (v − w) dμ(w, r)`, the integral form of the effective velocity.
pub fn v_eff_integral(v: f64, rho: f64, mu: &VelocityLengthMeasure) -> Result<f64> {
    Ok(v + rho * mu.moment(|w, r| r * (v - w))?)
}

/// `𝒟(v) = ρ ∬ r² |v − w| dμ(w, r)`.
pub fn diffusivity(v: f64, rho: f64, mu: &VelocityLengthMeasure) -> Result<f64> {
    Ok(rho * mu.moment_split(v, |w, r| r * r * (v - w).abs())?)
}

/// Function of `(y, v, r)` that the projection and covariance can act on.
pub trait PhaseFunction {
    fn eval(&self, y: f64, v: f64, r: f64) -> f64;
}

impl<F: Fn(f64, f64, f64) -> f64> PhaseFunction for F {
    fn eval(&self, y: f64, v: f64, r: f64) -> f64 {
        self(y, v, r)
    }
}

/// `Pφ(y) = (ρ/σ) ∬ r φ(y, v', r') dμ(v', r')`; constant in the marks.
pub struct Projection<'a, F: ?Sized> {
    inner: &'a F,
    nodes: Vec<MarkNode>,
    scale: f64,
}

impl<F: PhaseFunction + ?Sized> Projection<'_, F> {
    pub fn at(&self, y: f64) -> f64 {
        self.scale * self.nodes.iter().map(|n| n.weight * n.r * self.inner.eval(y, n.v, n.r)).sum::<f64>()
    }
}

impl<F: PhaseFunction + ?Sized> PhaseFunction for Projection<'_, F> {
    fn eval(&self, y: f64, _v: f64, _r: f64) -> f64 {
        self.at(y)
    }
}

pub fn project<'a, F: PhaseFunction + ?Sized>(
    phi: &'a F,
    rho: f64,
    sigma: f64,
    mu: &VelocityLengthMeasure,
) -> Result<Projection<'a, F>> {
    if sigma <= 0.0 {
        return Err(Error::UndefinedProjection);
    }
    Ok(Projection { inner: phi, nodes: mu.mark_nodes(), scale: rho / sigma })
}

/// Intensity, mark measure and derived constants, bundled.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub rho: f64,
    pub mu: VelocityLengthMeasure,
    pub params: MacroParams,
}

impl Model {
    pub fn new(rho: f64, mu: VelocityLengthMeasure) -> Result<Self> {
        let params = macro_params(rho, &mu)?;
        Ok(Model { rho, mu, params })
    }

    pub fn benchmark() -> Self {
        Model::new(1.0, VelocityLengthMeasure::benchmark()).expect("benchmark model is valid")
    }

    pub fn v_eff(&self, v: f64) -> f64 {
        self.params.v_eff(v)
    }

    pub fn diffusivity(&self, v: f64) -> Result<f64> {
        diffusivity(v, self.rho, &self.mu)
    }

    /// `E_μ[r²]`.
    pub fn length_second_moment(&self) -> Result<f64> {
        self.mu.moment(|_, r| r * r)
    }
}

/// Random measure from the grammar, used by the randomized cross-checks.
pub fn random_measure<R: Rng + ?Sized>(rng: &mut R) -> VelocityLengthMeasure {
    let k = rng.random_range(1..=3);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut components: Vec<Component> = raw
        .iter()
        .map(|&w| {
            let velocity = match rng.random_range(0..4) {
                0 => DistSpec::Atom { value: rng.random_range(-2.0..2.0) },
                1 => {
                    let lo = rng.random_range(-2.0..1.0);
                    DistSpec::Uniform { lo, hi: lo + rng.random_range(0.1..2.0) }
                }
                2 => DistSpec::Gaussian { mean: rng.random_range(-1.0..1.0), sd: rng.random_range(0.1..1.5) },
                _ => DistSpec::Exponential { rate: rng.random_range(0.5..3.0) },
            };
            let length = match rng.random_range(0..3) {
                0 => DistSpec::Atom { value: rng.random_range(0.0..2.0) },
                1 => {
                    let lo = rng.random_range(0.0..1.0);
                    DistSpec::Uniform { lo, hi: lo + rng.random_range(0.1..1.0) }
                }
                _ => DistSpec::Exponential { rate: rng.random_range(0.5..3.0) },
            };
            Component { weight: w / total, velocity, length }
        })
        .collect();
    // Force an exact unit total.
    let head: f64 = components[..k - 1].iter().map(|c| c.weight).sum();
    components[k - 1].weight = 1.0 - head;
    VelocityLengthMeasure::new(components).expect("random measure is valid")
}
