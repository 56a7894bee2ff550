//! Rod fluctuation fields at time zero, under Euler scaling and under
//! diffusive scaling with recentering, plus tagged-pair statistics for the
//! rigid translation at diffusive times.
//!
//! Every field is `ε^{-1/2} [ε Σ r φ(y, v, r) − center]` over the rod
//! configuration at the relevant time. Only rods that can reach the support of
//! `φ` are evolved. Which rods those are is decided from the identity
//!
//! `y_t = b + M(b' < b) − M(x' ≤ 0)`,  `b = x + v t`,
//!
//! where `M` is rod volume and the primes run over the other points. The map
//! `b ↦ y_t` is nondecreasing, which also bounds the time-`t` position of any
//! rod outside the sampled window.

mod test_function;

pub use test_function::{Polynomial, Profile, Term, TestFunction, TestFunctionSpec, MAX_DERIVATIVE};

use serde::Serialize;

use crate::dynamics::{check_query, evolve_tagged, FluxQuery};
use crate::ensemble::{units_to_volume, Configuration};
use crate::error::{Error, Result};
use crate::measures::quadrature::hermite_64;
use crate::measures::{bracket, theoretical_covariance, Model};

/// Default velocity band half-width for tagging under continuous velocity laws.
pub const DEFAULT_BAND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scaling {
    Static,
    Euler { t: f64 },
    Diffusive { t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldSample {
    pub value: f64,
    pub phi_id: String,
    pub scaling: Scaling,
    pub replica_seed: Option<u64>,
}

/// What is subtracted from `ε Σ r φ` before scaling by `ε^{-1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Centering {
    /// `⟨φ⟩ / (1 + σ)`, computed by quadrature on each call.
    Asymptotic,
    /// A precomputed constant; `Value(0.0)` gives the uncentered sum scaled by `ε^{-1/2}`.
    Value(f64),
}

/// `⟨φ⟩ / (1 + σ)`, the limiting mean of `ε Σ r φ(y, v, r)`.
pub fn asymptotic_center(phi: &TestFunction, model: &Model) -> Result<f64> {
    Ok(bracket(phi, &model.params, &model.mu)? / (1.0 + model.params.sigma))
}

fn resolve(centering: Centering, phi: &TestFunction, model: &Model) -> Result<f64> {
    match centering {
        Centering::Asymptotic => asymptotic_center(phi, model),
        Centering::Value(c) => Ok(c),
    }
}

fn sample_of(config: &Configuration, phi: &TestFunction, scaling: Scaling, sum: f64, center: f64) -> Result<FieldSample> {
    let value = (sum - center) / config.epsilon().sqrt();
    if !value.is_finite() {
        return Err(Error::NonFinite("field value"));
    }
    Ok(FieldSample {
        value,
        phi_id: phi.id.clone(),
        scaling,
        replica_seed: match config.seed_info() {
            crate::ensemble::SeedInfo::Seeded(s) => Some(s),
            crate::ensemble::SeedInfo::Manual => None,
        },
    })
}

fn speed_range(config: &Configuration) -> (f64, f64) {
    (-config.max_speed(), config.max_speed())
}

/// `ε Σ r φ(y, v, r)` over the dilated configuration at time zero.
pub fn raw_static_sum(config: &Configuration, phi: &TestFunction) -> Result<f64> {
    let (v_lo, v_hi) = speed_range(config);
    let Some((s_lo, s_hi)) = phi.support_over(v_lo, v_hi) else {
        return Ok(0.0);
    };
    let w = config.dilated_window()?;
    if s_lo <= w.lo || s_hi >= w.hi {
        return Err(Error::Support(format!(
            "{}: support [{s_lo}, {s_hi}] not inside dilated window [{}, {}]",
            phi.id, w.lo, w.hi
        )));
    }
    let n = config.len();
    let first = partition(n, |i| config.dilated_position(i) < s_lo);
    let last = partition(n, |i| config.dilated_position(i) <= s_hi);
    let eps = config.epsilon();
    let points = config.points();
    let mut sum = 0.0;
    for i in first..last {
        let p = points[i];
        sum += eps * p.r * phi.eval(config.dilated_position(i), p.v, p.r);
    }
    Ok(sum)
}

fn partition(n: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Static field `ξ^ε(φ)`.
pub fn field_estimate(config: &Configuration, phi: &TestFunction, model: &Model, centering: Centering) -> Result<FieldSample> {
    let sum = raw_static_sum(config, phi)?;
    let center = resolve(centering, phi, model)?;
    sample_of(config, phi, Scaling::Static, sum, center)
}

/// Approximate time-`t` positions of every point from the sorted free positions.
fn sorted_positions(config: &Configuration, t: f64) -> Vec<f64> {
    let points = config.points();
    let b: Vec<f64> = points.iter().map(|p| p.x + p.v * t).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| b[i].total_cmp(&b[j]).then(i.cmp(&j)));
    let origin = config.prefix_units(config.count_le(0.0));
    let mut y = vec![0.0; points.len()];
    let mut below = 0i128;
    for &i in &order {
        let own = if points[i].x <= 0.0 { config.length_units(i) } else { 0 };
        y[i] = b[i] + units_to_volume(below - origin + own, config.epsilon());
        below += config.length_units(i);
    }
    y
}

/// `f(c) = c + M(x' > 0, b' < c) − M(x' ≤ 0, b' ≥ c)` over the sampled points.
fn reach(config: &Configuration, t: f64, c: f64) -> f64 {
    let mut units = 0i128;
    for (i, p) in config.points().iter().enumerate() {
        let b = p.x + p.v * t;
        if p.x > 0.0 && b < c {
            units += config.length_units(i);
        } else if p.x <= 0.0 && b >= c {
            units -= config.length_units(i);
        }
    }
    c + units_to_volume(units, config.epsilon())
}

/// Sampling half-width that keeps a field with support inside `[-extent, extent]`
/// away from the window edges at (micro) time `t`.
pub fn field_half_width(extent: f64, t: f64, recenter: bool, model: &Model, epsilon: f64, cap: f64) -> f64 {
    let sigma = model.params.sigma;
    let travel = if recenter { (2.0 + sigma) * cap * t } else { (4.0 + sigma) * cap * t };
    let r2 = model.length_second_moment().unwrap_or(0.0);
    let spread = 6.0 * (epsilon * model.rho * r2 * (extent + travel + 1.0)).sqrt();
    extent + travel + spread + 2.0
}

/// Rod positions of one configuration at one time, shared by every test
/// function evaluated on it.
pub struct EvolvedState<'a> {
    config: &'a Configuration,
    model: &'a Model,
    t: f64,
    recenter: bool,
    /// Exact `y_t` (recentered when requested) for rods whose crossing range
    /// lies inside the window.
    exact: Vec<Option<f64>>,
    /// Approximate `y_t` of every rod, used to locate rods that lack an exact value.
    approx: Vec<f64>,
    /// Bounds on `y_t` of rods left and right of the window.
    reach: (f64, f64),
}

impl<'a> EvolvedState<'a> {
    /// Evolve every rod for time `t`. With `recenter`, positions are reported
    /// as `y_t − v_eff(v) t`.
    pub fn new(config: &'a Configuration, t: f64, model: &'a Model, recenter: bool) -> Result<Self> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        let w = config.window();
        if !w.contains(0.0) {
            return Err(Error::OriginOutsideWindow { lo: w.lo, hi: w.hi });
        }
        let cap = config.velocity_cap();
        if w.lo + 2.0 * cap * t > w.hi {
            return Err(Error::Support(format!("window [{}, {}] too short for horizon {t}", w.lo, w.hi)));
        }
        let reach = (reach(config, t, w.lo + cap * t), reach(config, t, w.hi - cap * t));
        let points = config.points();
        let inside: Vec<usize> = (0..points.len())
            .filter(|&i| check_query(config, &FluxQuery { x: points[i].x, v: points[i].v, t }).is_ok())
            .collect();
        let mut exact = vec![None; points.len()];
        for rec in evolve_tagged(config, &inside, t, model)? {
            exact[rec.source_index] = Some(if recenter { rec.y0 + rec.recentered } else { rec.yt });
        }
        Ok(EvolvedState { config, model, t, recenter, exact, approx: sorted_positions(config, t), reach })
    }

    fn shift(&self, v: f64) -> f64 {
        if self.recenter {
            self.model.v_eff(v) * self.t
        } else {
            0.0
        }
    }

    /// `ε Σ r φ(position, v, r)` over the evolved rods.
    pub fn sum(&self, phi: &TestFunction) -> Result<f64> {
        let (v_lo, v_hi) = speed_range(self.config);
        let (Some(a), Some(b)) = (phi.support_at(v_lo), phi.support_at(v_hi)) else {
            return Ok(0.0);
        };
        // Support of φ in unrecentered coordinates, over all speeds present.
        let y_lo = (a.0 + self.shift(v_lo)).min(b.0 + self.shift(v_hi));
        let y_hi = (a.1 + self.shift(v_lo)).max(b.1 + self.shift(v_hi));
        if self.reach.0 >= y_lo || self.reach.1 <= y_hi {
            return Err(Error::Support(format!(
                "{}: rods outside the window can reach [{y_lo}, {y_hi}] by time {} (reach [{}, {}])",
                phi.id, self.t, self.reach.0, self.reach.1
            )));
        }
        let pad = 1e-9 * (1.0 + y_lo.abs().max(y_hi.abs()));
        let eps = self.config.epsilon();
        let mut sum = 0.0;
        for (i, p) in self.config.points().iter().enumerate() {
            match self.exact[i] {
                Some(y) => sum += eps * p.r * phi.eval(y, p.v, p.r),
                None => {
                    let y = self.approx[i];
                    if y >= y_lo - pad && y <= y_hi + pad {
                        let err = check_query(self.config, &FluxQuery { x: p.x, v: p.v, t: self.t })
                            .expect_err("rods without an exact position fail the buffer check");
                        return Err(Error::Tagged { index: i, source: Box::new(err) });
                    }
                }
            }
        }
        Ok(sum)
    }
}

/// Euler-scale field `ξ_t^ε(φ)`: rods evolved for macroscopic time `t`.
pub fn euler_field(config: &Configuration, phi: &TestFunction, t: f64, model: &Model, centering: Centering) -> Result<FieldSample> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let sum = if t == 0.0 { raw_static_sum(config, phi)? } else { EvolvedState::new(config, t, model, false)?.sum(phi)? };
    let center = resolve(centering, phi, model)?;
    sample_of(config, phi, Scaling::Euler { t }, sum, center)
}

/// Diffusive field `Ξ_t^ε(φ)`: rods evolved for time `t/ε` and recentered by `v_eff(v)·t/ε`.
pub fn diffusive_field(config: &Configuration, phi: &TestFunction, t: f64, model: &Model, centering: Centering) -> Result<FieldSample> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let sum = if t == 0.0 {
        raw_static_sum(config, phi)?
    } else {
        EvolvedState::new(config, t / config.epsilon(), model, true)?.sum(phi)?
    };
    let center = resolve(centering, phi, model)?;
    sample_of(config, phi, Scaling::Diffusive { t }, sum, center)
}

/// Field value from a precomputed sum, for callers that share an [`EvolvedState`].
pub fn field_from_sum(config: &Configuration, phi: &TestFunction, scaling: Scaling, sum: f64, center: f64) -> Result<FieldSample> {
    sample_of(config, phi, scaling, sum, center)
}

/// `φ_t(y, v, r) = φ(y + v_eff(v) t, v, r)`.
pub fn transported(phi: &TestFunction, t: f64, model: &Model) -> TestFunction {
    phi.transported(t, &model.params)
}

/// Limit variance of `Ξ_t(φ)` for `φ` carried by the velocity class `v`:
/// `E_W[Γ(φ(· + √𝒟(v) W), φ(· + √𝒟(v) W))]` with `W ~ N(0, t)`, by Hermite quadrature.
pub fn diffusive_variance_oracle(phi: &TestFunction, t: f64, v: f64, model: &Model) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let scale = (model.diffusivity(v)? * t).sqrt();
    let mut acc = 0.0;
    for (z, w) in hermite_64().iter() {
        let shifted = phi.translated(scale * z);
        acc += w * theoretical_covariance(&shifted, &shifted, &model.params, &model.mu)?;
    }
    Ok(acc)
}

/// Which rods count as tagged at velocity `v_tag`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tagging {
    /// Velocity exactly `v_tag`; for atoms of the velocity law.
    Exact,
    /// `|v − v_tag| ≤ half_width`; for continuous velocity laws.
    Band(f64),
}

impl Tagging {
    /// Exact tagging when `v_tag` is a velocity atom of `model`, otherwise a band.
    pub fn for_velocity(model: &Model, v_tag: f64, band: f64) -> Self {
        if model.mu.has_velocity_atom(v_tag) {
            Tagging::Exact
        } else {
            Tagging::Band(band)
        }
    }

    fn accepts(self, v: f64, v_tag: f64) -> bool {
        match self {
            Tagging::Exact => v == v_tag,
            Tagging::Band(h) => (v - v_tag).abs() <= h,
        }
    }

    /// Probability that a rod drawn from `model` is tagged.
    pub fn probability(self, model: &Model, v_tag: f64) -> f64 {
        match self {
            Tagging::Exact => model.mu.band_probability(v_tag, 0.0),
            Tagging::Band(h) => model.mu.band_probability(v_tag, h),
        }
    }
}

/// First tagged rod at or right of `anchor`.
pub fn first_tagged(config: &Configuration, v_tag: f64, tagging: Tagging, anchor: f64) -> Option<usize> {
    let points = config.points();
    (config.count_lt(anchor)..points.len()).find(|&i| tagging.accepts(points[i].v, v_tag))
}

/// Two tagged rods: the first at or right of `anchor` and the first at least
/// `separation` further right.
pub fn tagged_pair(config: &Configuration, v_tag: f64, tagging: Tagging, anchor: f64, separation: f64) -> Result<(usize, usize)> {
    let a = first_tagged(config, v_tag, tagging, anchor).ok_or(Error::TooFewTagged { found: 0 })?;
    let b = first_tagged(config, v_tag, tagging, config.points()[a].x + separation)
        .ok_or(Error::TooFewTagged { found: 1 })?;
    Ok((a, b))
}

/// Recentered displacements at micro time `t/ε` of the pair chosen by [`tagged_pair`].
pub fn pair_displacements(config: &Configuration, pair: (usize, usize), t: f64, model: &Model) -> Result<(f64, f64)> {
    let micro = t / config.epsilon();
    let recs = evolve_tagged(config, &[pair.0, pair.1], micro, model)?;
    Ok((recs[0].recentered, recs[1].recentered))
}

/// Buffer check for a single tagged rod at micro time `t/ε`, without evolving it.
pub fn check_tagged(config: &Configuration, index: usize, t: f64) -> Result<()> {
    let p = config.points()[index];
    check_query(config, &FluxQuery { x: p.x, v: p.v, t: t / config.epsilon() })
        .map_err(|e| Error::Tagged { index, source: Box::new(e) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RigidStats {
    pub n: usize,
    /// Unbiased variance of the first rod's recentered displacement.
    pub variance: f64,
    /// `None` when either displacement has zero variance.
    pub pair_correlation: Option<f64>,
}

/// Variance and cross-replica correlation of paired recentered displacements.
pub fn rigid_translation_stats(pairs: &[(f64, f64)]) -> Result<RigidStats> {
    if pairs.len() < 2 {
        return Err(Error::TooFewSamples { need: 2, got: pairs.len() });
    }
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let sa = crate::stats::ReplicaStats::from_samples(&a)?;
    Ok(RigidStats {
        n: pairs.len(),
        variance: sa.variance,
        pair_correlation: crate::stats::correlation(&a, &b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{derive_seed, sample, RodPoint, Window};
    use crate::measures::{DistSpec, VelocityLengthMeasure};
    use crate::stats::{correlation, ReplicaStats};

    fn bump(center: f64, width: f64) -> TestFunction {
        TestFunction::spatial("g", Profile::GaussianBump { center, width })
    }

    #[test]
    fn zero_function_and_zero_lengths() {
        let model = Model::benchmark();
        let c = sample(0.05, 1.0, &model.mu, Window::symmetric(20.0).unwrap(), 3).unwrap();
        let z = TestFunction::zero("z");
        assert_eq!(field_estimate(&c, &z, &model, Centering::Asymptotic).unwrap().value, 0.0);
        let pts = c.points().iter().map(|p| RodPoint { r: 0.0, ..*p }).collect();
        let free = Configuration::from_points(pts, 0.05, 1.0, c.window()).unwrap();
        let phi = bump(0.0, 1.0);
        assert_eq!(diffusive_field(&free, &phi, 0.1, &model, Centering::Value(0.0)).unwrap().value, 0.0);
    }

    #[test]
    fn support_outside_window_is_refused() {
        let model = Model::benchmark();
        let c = sample(0.05, 1.0, &model.mu, Window::symmetric(3.0).unwrap(), 3).unwrap();
        assert!(matches!(field_estimate(&c, &bump(0.0, 1.0), &model, Centering::Value(0.0)), Err(Error::Support(_))));
        assert!(matches!(euler_field(&c, &bump(0.0, 0.2), 3.0, &model, Centering::Value(0.0)), Err(Error::Support(_))));
    }

    #[test]
    fn linearity_on_one_replica() {
        let model = Model::benchmark();
        let c = sample(0.02, 1.0, &model.mu, Window::symmetric(25.0).unwrap(), 11).unwrap();
        let phi = bump(0.5, 1.0);
        let psi = TestFunction::separable("p", Profile::PolyBump { center: -1.0, width: 2.0 }, Polynomial(vec![0.5, 1.0]), Polynomial::constant(1.0));
        let comb = phi.combine(2.0, &psi, -0.7);
        for t in [0.0, 0.7] {
            let f = |g: &TestFunction| euler_field(&c, g, t, &model, Centering::Value(0.0)).unwrap().value;
            let (a, b, ab) = (f(&phi), f(&psi), f(&comb));
            assert!((ab - (2.0 * a - 0.7 * b)).abs() <= 1e-12 * (1.0 + ab.abs()));
        }
    }

    #[test]
    fn time_zero_reductions() {
        let model = Model::benchmark();
        let c = sample(0.02, 1.0, &model.mu, Window::symmetric(25.0).unwrap(), 12).unwrap();
        let phi = bump(0.0, 1.5);
        let s = field_estimate(&c, &phi, &model, Centering::Asymptotic).unwrap().value;
        assert_eq!(euler_field(&c, &phi, 0.0, &model, Centering::Asymptotic).unwrap().value, s);
        assert_eq!(diffusive_field(&c, &phi, 0.0, &model, Centering::Asymptotic).unwrap().value, s);
    }

    #[test]
    fn sorted_positions_agree_with_tagged_evolution() {
        let mu = VelocityLengthMeasure::product(DistSpec::Uniform { lo: -1.0, hi: 1.0 }, DistSpec::Exponential { rate: 1.0 }).unwrap();
        let model = Model::new(1.0, mu).unwrap();
        let c = sample(0.05, 1.0, &model.mu, Window::symmetric(12.0).unwrap(), 5).unwrap().with_velocity_cap(1.0);
        let t = 2.0;
        let approx = sorted_positions(&c, t);
        let tagged: Vec<usize> = (0..c.len()).filter(|&i| c.points()[i].x.abs() < 8.0).collect();
        for rec in evolve_tagged(&c, &tagged, t, &model).unwrap() {
            assert!((rec.yt - approx[rec.source_index]).abs() < 1e-12, "{} {}", rec.yt, approx[rec.source_index]);
        }
    }

    #[test]
    fn co_moving_gas_euler_field_is_transported_static_field() {
        let mu = VelocityLengthMeasure::product(DistSpec::Atom { value: 0.5 }, DistSpec::Atom { value: 1.0 }).unwrap();
        let model = Model::new(1.0, mu).unwrap();
        let c = sample(0.05, 1.0, &model.mu, Window::symmetric(20.0).unwrap(), 9).unwrap();
        let phi = bump(0.0, 1.0);
        // Co-moving gas: every rod is displaced by v t, and v_eff(v) = v here.
        let t = 1.3;
        let moved = euler_field(&c, &phi, t, &model, Centering::Value(0.0)).unwrap().value;
        let pulled = field_estimate(&c, &transported(&phi, t, &model), &model, Centering::Value(0.0)).unwrap().value;
        assert!((moved - pulled).abs() < 1e-12);
    }

    #[test]
    fn static_field_variance_matches_limit_covariance() {
        let model = Model::benchmark();
        let phi = bump(0.0, 2.0);
        let w = Window::symmetric(30.0).unwrap();
        let n = 10_000;
        let center = asymptotic_center(&phi, &model).unwrap();
        let vals: Vec<f64> = (0..n)
            .map(|k| {
                let c = sample(0.01, 1.0, &model.mu, w, derive_seed(77, k)).unwrap();
                field_estimate(&c, &phi, &model, Centering::Value(center)).unwrap().value
            })
            .collect();
        let stats = ReplicaStats::from_samples(&vals).unwrap();
        let target = theoretical_covariance(&phi, &phi, &model.params, &model.mu).unwrap();
        let verdict = crate::stats::test_against(&stats, target, crate::stats::TestKind::Variance).unwrap();
        assert!(verdict.pass, "{verdict:?}");
        let (skew, kurt) = crate::stats::skew_kurtosis(&vals).unwrap();
        let n = n as f64;
        assert!(skew.abs() < 4.0 * (6.0 / n).sqrt() && kurt.abs() < 4.0 * (24.0 / n).sqrt(), "{skew} {kurt}");
    }

    #[test]
    fn euler_transport_is_pathwise() {
        let model = Model::benchmark();
        let phi = bump(0.0, 1.5);
        let t = 0.5;
        let phi_t = transported(&phi, t, &model);
        let w = Window::symmetric(25.0).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for k in 0..1500 {
            let c = sample(0.01, 1.0, &model.mu, w, derive_seed(31, k)).unwrap();
            a.push(euler_field(&c, &phi, t, &model, Centering::Value(0.0)).unwrap().value);
            b.push(field_estimate(&c, &phi_t, &model, Centering::Value(0.0)).unwrap().value);
        }
        let r = correlation(&a, &b).unwrap().unwrap();
        assert!(r > 0.95, "{r}");
    }

    #[test]
    fn diffusive_oracle_is_static_covariance_for_one_class() {
        // Equilibrium covariances are translation invariant, so the Gaussian
        // mixture over shifts collapses to the unshifted value.
        let model = Model::benchmark();
        let phi = TestFunction::separable("plus", Profile::GaussianBump { center: 0.0, width: 1.0 }, Polynomial(vec![0.5, 0.5]), Polynomial::constant(1.0));
        let direct = theoretical_covariance(&phi, &phi, &model.params, &model.mu).unwrap();
        let mixed = diffusive_variance_oracle(&phi, 1.0, 1.0, &model).unwrap();
        assert!((direct - mixed).abs() < 1e-10 * direct);
    }

    #[test]
    fn rigid_stats_examples() {
        assert!(rigid_translation_stats(&[(1.0, 1.0)]).is_err());
        let s = rigid_translation_stats(&[(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]).unwrap();
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.pair_correlation, None);
        let s = rigid_translation_stats(&[(1.0, 2.0), (2.0, 4.0), (4.0, 8.5)]).unwrap();
        assert!(s.pair_correlation.unwrap() > 0.99);
    }

    #[test]
    fn tagged_pair_selection() {
        let pts = vec![
            RodPoint { x: -0.5, v: 1.0, r: 1.0 },
            RodPoint { x: 0.2, v: -1.0, r: 1.0 },
            RodPoint { x: 0.4, v: 1.0, r: 1.0 },
            RodPoint { x: 1.0, v: 1.0, r: 1.0 },
            RodPoint { x: 2.5, v: 1.0, r: 1.0 },
        ];
        let c = Configuration::from_points(pts, 0.1, 1.0, Window::symmetric(5.0).unwrap()).unwrap();
        assert_eq!(tagged_pair(&c, 1.0, Tagging::Exact, 0.0, 2.0).unwrap(), (2, 4));
        assert!(matches!(tagged_pair(&c, 1.0, Tagging::Exact, 0.0, 4.0), Err(Error::TooFewTagged { found: 1 })));
        assert!(matches!(tagged_pair(&c, 0.3, Tagging::Band(0.05), 0.0, 1.0), Err(Error::TooFewTagged { found: 0 })));
        assert_eq!(tagged_pair(&c, 0.9, Tagging::Band(0.1), -1.0, 1.0).unwrap(), (0, 3));
    }

    #[test]
    fn recentered_displacements_are_correlated_at_small_epsilon() {
        let model = Model::benchmark();
        let eps = 0.01;
        let w = Window::new(-1.0, 2.0 / eps + 4.0).unwrap();
        let pairs: Vec<(f64, f64)> = (0..400)
            .map(|k| {
                let c = sample(eps, 1.0, &model.mu, w, derive_seed(8, k)).unwrap();
                let pair = tagged_pair(&c, 1.0, Tagging::Exact, 0.0, 2.0).unwrap();
                pair_displacements(&c, pair, 1.0, &model).unwrap()
            })
            .collect();
        let s = rigid_translation_stats(&pairs).unwrap();
        assert!(s.pair_correlation.unwrap() > 0.95);
        assert_eq!(
            rigid_translation_stats(&[(0.0, 1.0), (0.0, 2.0)]).unwrap().pair_correlation,
            None
        );
    }
}
