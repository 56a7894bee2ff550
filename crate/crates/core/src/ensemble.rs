//! Marked Poisson configurations `X^ε`, the signed mass `m_a^b` and the
//! dilated rod configuration `Y^ε`.
//!
//! Rod lengths are stored on the dyadic grid `2^-40`, so every rod volume is
//! an integer number of units and all mass and flux accumulations are exact
//! `i128` sums. Conversion to a floating volume happens once per query.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::measures::{VelocityLengthMeasure, VELOCITY_TAIL};

const UNIT_BITS: i32 = 40;
/// Exclusive upper bound on a single rod-length mark.
pub const MAX_LENGTH: f64 = 4096.0;
/// Default refusal threshold on the expected point count.
pub const DEFAULT_MAX_EXPECTED: f64 = 1e8;

fn unit_scale() -> f64 {
    2f64.powi(UNIT_BITS)
}

/// Round a mark onto the length grid.
pub fn quantize_length(r: f64) -> Result<f64> {
    if !(r.is_finite() && (0.0..MAX_LENGTH).contains(&r)) {
        return Err(Error::LengthOutOfRange(r));
    }
    Ok((r * unit_scale()).round() / unit_scale())
}

fn length_units(r: f64) -> i128 {
    (r * unit_scale()) as i128
}

/// `ε · units · 2^-40`; the single rounding point for every volume.
pub fn units_to_volume(units: i128, epsilon: f64) -> f64 {
    epsilon * ((units as f64) / unit_scale())
}

/// Seed of replica `index` derived from `master` (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RodPoint {
    pub x: f64,
    pub v: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidParameter(format!("bad window [{lo}, {hi}]")));
        }
        Ok(Window { lo, hi })
    }

    pub fn symmetric(half_width: f64) -> Result<Self> {
        Self::new(-half_width, half_width)
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedInfo {
    /// ChaCha8 stream seeded from this value.
    Seeded(u64),
    /// Built from explicit points.
    Manual,
}

/// Position-sorted marked point set with cached mass prefix sums.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    points: Vec<RodPoint>,
    /// `prefix[i]` = total length units of `points[..i]`.
    prefix: Vec<i128>,
    epsilon: f64,
    rho: f64,
    window: Window,
    velocity_cap: f64,
    max_speed: f64,
    seed_info: SeedInfo,
}

impl Configuration {
    /// Build from explicit points. Points are stably sorted by position and
    /// lengths are snapped to the length grid. The velocity cap defaults to
    /// the largest speed present.
    pub fn from_points(mut points: Vec<RodPoint>, epsilon: f64, rho: f64, window: Window) -> Result<Self> {
        check_scale(epsilon, rho)?;
        for p in points.iter_mut() {
            if !(p.x.is_finite() && p.v.is_finite()) {
                return Err(Error::InvalidParameter(format!("non-finite point {p:?}")));
            }
            if !window.contains(p.x) {
                return Err(Error::InvalidParameter(format!("point x={} outside window", p.x)));
            }
            p.r = quantize_length(p.r)?;
        }
        points.sort_by(|a, b| a.x.total_cmp(&b.x));
        let max_speed = points.iter().map(|p| p.v.abs()).fold(0.0, f64::max);
        Ok(Self::assemble(points, epsilon, rho, window, max_speed, SeedInfo::Manual))
    }

    fn assemble(points: Vec<RodPoint>, epsilon: f64, rho: f64, window: Window, velocity_cap: f64, seed_info: SeedInfo) -> Self {
        let mut prefix = Vec::with_capacity(points.len() + 1);
        let mut acc = 0i128;
        prefix.push(0);
        for p in &points {
            acc += length_units(p.r);
            prefix.push(acc);
        }
        let max_speed = points.iter().map(|p| p.v.abs()).fold(velocity_cap, f64::max);
        Configuration { points, prefix, epsilon, rho, window, velocity_cap, max_speed, seed_info }
    }

    /// Override the velocity bound used by the flux buffer checks.
    pub fn with_velocity_cap(mut self, cap: f64) -> Self {
        self.velocity_cap = cap;
        self.max_speed = self.max_speed.max(cap);
        self
    }

    pub fn points(&self) -> &[RodPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn seed_info(&self) -> SeedInfo {
        self.seed_info
    }

    /// Velocity bound assumed for points outside the window.
    pub fn velocity_cap(&self) -> f64 {
        self.velocity_cap
    }

    /// Bound on every speed present in the configuration, at least the cap.
    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    /// Number of points with `x <= z`.
    pub fn count_le(&self, z: f64) -> usize {
        self.points.partition_point(|p| p.x <= z)
    }

    /// Number of points with `x < z`.
    pub fn count_lt(&self, z: f64) -> usize {
        self.points.partition_point(|p| p.x < z)
    }

    pub fn prefix_units(&self, i: usize) -> i128 {
        self.prefix[i]
    }

    pub fn length_units(&self, i: usize) -> i128 {
        self.prefix[i + 1] - self.prefix[i]
    }

    /// Signed mass in length units: `+Σ` over `(a, b]` for `b > a`, `−Σ` over `(b, a]` for `b < a`.
    pub fn mass_units(&self, a: f64, b: f64) -> i128 {
        if b >= a {
            self.prefix[self.count_le(b)] - self.prefix[self.count_le(a)]
        } else {
            -self.mass_units(b, a)
        }
    }

    /// Signed mass `m_a^b = ε Σ r` with the half-open convention `(a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        units_to_volume(self.mass_units(a, b), self.epsilon)
    }

    /// Units of `m_0^{x_i}` with point `i` itself excluded.
    pub fn anchor_units(&self, i: usize) -> i128 {
        let origin = self.count_le(0.0);
        if self.points[i].x > 0.0 {
            self.prefix[i] - self.prefix[origin]
        } else {
            -(self.prefix[origin] - self.prefix[i + 1])
        }
    }

    /// `y_i = x_i + m_0^{x_i}` with point `i` itself excluded.
    pub fn dilated_position(&self, i: usize) -> f64 {
        self.points[i].x + units_to_volume(self.anchor_units(i), self.epsilon)
    }

    fn check_origin(&self) -> Result<()> {
        if self.window.contains(0.0) {
            Ok(())
        } else {
            Err(Error::OriginOutsideWindow { lo: self.window.lo, hi: self.window.hi })
        }
    }

    /// Images of the window endpoints under the dilation map.
    pub fn dilated_window(&self) -> Result<Window> {
        self.check_origin()?;
        let lo = self.window.lo + self.mass(0.0, self.window.lo);
        let hi = self.window.hi + self.mass(0.0, self.window.hi);
        Window::new(lo, hi)
    }

    /// Total rod volume `ε Σ r`.
    pub fn total_volume(&self) -> f64 {
        units_to_volume(*self.prefix.last().expect("prefix is nonempty"), self.epsilon)
    }

    /// Write `x,v,r` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,v,r")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.x, p.v, p.r)?;
        }
        Ok(())
    }
}

fn check_scale(epsilon: f64, rho: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    Ok(())
}

/// Poisson process on `window × marks` with intensity `ε⁻¹ ρ dx dμ`.
pub fn sample(epsilon: f64, rho: f64, mu: &VelocityLengthMeasure, window: Window, seed: u64) -> Result<Configuration> {
    sample_with_cap(epsilon, rho, mu, window, seed, DEFAULT_MAX_EXPECTED)
}

/// [`sample`] with an explicit refusal threshold on the expected count.
///
/// Positions are generated left to right from exponential spacings, which
/// yields the Poisson law on the window already sorted.
pub fn sample_with_cap(
    epsilon: f64,
    rho: f64,
    mu: &VelocityLengthMeasure,
    window: Window,
    seed: u64,
    max_expected: f64,
) -> Result<Configuration> {
    check_scale(epsilon, rho)?;
    let rate = rho / epsilon;
    let expected = rate * window.len();
    if expected > max_expected {
        return Err(Error::TooManyPoints { expected, cap: max_expected });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity((expected + 6.0 * expected.sqrt() + 8.0) as usize);
    let mut x = window.lo;
    loop {
        let gap: f64 = Exp1.sample(&mut rng);
        x += gap / rate;
        if x > window.hi {
            break;
        }
        let (v, r) = mu.sample_mark(&mut rng);
        points.push(RodPoint { x, v, r: quantize_length(r)? });
    }
    let cap = mu.velocity_cap(VELOCITY_TAIL);
    Ok(Configuration::assemble(points, epsilon, rho, window, cap, SeedInfo::Seeded(seed)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DilatedEntry {
    pub y: f64,
    pub source_index: usize,
    pub v: f64,
    pub r: f64,
}

/// Rod configuration `Y^ε`, in the same order as its source points.
#[derive(Debug, Clone, PartialEq)]
pub struct DilatedConfiguration {
    pub entries: Vec<DilatedEntry>,
    pub epsilon: f64,
}

pub fn dilate(config: &Configuration) -> Result<DilatedConfiguration> {
    config.check_origin()?;
    let entries = config
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| DilatedEntry { y: config.dilated_position(i), source_index: i, v: p.v, r: p.r })
        .collect();
    Ok(DilatedConfiguration { entries, epsilon: config.epsilon() })
}
