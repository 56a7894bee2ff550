//! Gauss rules for the probability weights used by the mark measure.
//!
//! Every rule is normalized so its weights sum to one, i.e. it integrates
//! against a probability law rather than a raw weight function:
//!
//! * Legendre: uniform law on `[-1, 1]`
//! * Hermite: standard normal law
//! * Laguerre: unit-rate exponential law
//!
//! Nodes come from the eigenvalues of the Jacobi matrix and are polished by
//! Newton steps on the orthonormal recurrence. Weights use the Christoffel
//! form `1 / sum_k p_k(x)^2`, which stays accurate for the tiny tail weights.

use std::sync::OnceLock;

use nalgebra::DMatrix;

/// Node count used for every continuous factor of the mark measure.
pub const ORDER: usize = 64;

#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Sum of `w_i f(x_i)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Three-term recurrence `x p_k = b_{k+1} p_{k+1} + a_k p_k + b_k p_{k-1}`
/// for orthonormal polynomials of a probability law.
fn from_recurrence(n: usize, a: impl Fn(usize) -> f64, b: impl Fn(usize) -> f64) -> GaussRule {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jacobi[(k, k)] = a(k);
        if k + 1 < n {
            jacobi[(k, k + 1)] = b(k + 1);
            jacobi[(k + 1, k)] = b(k + 1);
        }
    }
    let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    nodes.sort_by(f64::total_cmp);

    // p_0..p_{n-1} at x, plus p_n and its derivative.
    let eval = |x: f64| -> (f64, f64, f64) {
        let (mut p_prev, mut p) = (0.0, 1.0);
        let (mut d_prev, mut d) = (0.0, 0.0);
        let mut sum_sq = 0.0;
        for k in 0..n {
            sum_sq += p * p;
            let bk = if k == 0 { 0.0 } else { b(k) };
            let next = ((x - a(k)) * p - bk * p_prev) / b(k + 1);
            let d_next = (p + (x - a(k)) * d - bk * d_prev) / b(k + 1);
            p_prev = p;
            p = next;
            d_prev = d;
            d = d_next;
        }
        (sum_sq, p, d)
    };

    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (_, p, d) = eval(*x);
            if d == 0.0 || !d.is_finite() {
                break;
            }
            let step = p / d;
            if !step.is_finite() {
                break;
            }
            *x -= step;
        }
        let (sum_sq, _, _) = eval(*x);
        weights.push(1.0 / sum_sq);
    }
    GaussRule { nodes, weights }
}

pub fn legendre(n: usize) -> GaussRule {
    from_recurrence(
        n,
        |_| 0.0,
        |k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        },
    )
}

pub fn hermite(n: usize) -> GaussRule {
    from_recurrence(n, |_| 0.0, |k| (k as f64).sqrt())
}

pub fn laguerre(n: usize) -> GaussRule {
    from_recurrence(n, |k| 2.0 * k as f64 + 1.0, |k| k as f64)
}

pub fn legendre_64() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| legendre(ORDER))
}

pub fn hermite_64() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| hermite(ORDER))
}

pub fn laguerre_64() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| laguerre(ORDER))
}

/// Short Legendre rule used for composite spatial integration.
pub fn legendre_20() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| legendre(20))
}

/// Map a probability-normalized Legendre rule onto `[lo, hi]` so that it
/// integrates `∫ f dx` (weights sum to `hi - lo`).
pub fn legendre_on(rule: &GaussRule, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    rule.iter().map(move |(x, w)| (mid + half * x, w * (hi - lo)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(k: u32) -> f64 {
        (1..=k).rev().step_by(2).map(f64::from).product()
    }

    #[test]
    fn weights_are_probabilities() {
        for rule in [legendre_64(), hermite_64(), laguerre_64(), legendre_20()] {
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-13, "{total}");
            assert!(rule.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn hermite_reproduces_normal_moments() {
        let rule = hermite_64();
        for k in 0..=24u32 {
            let even = rule.integrate(|x| x.powi(2 * k as i32));
            let odd = rule.integrate(|x| x.powi(2 * k as i32 + 1));
            let exact = if k == 0 { 1.0 } else { double_factorial(2 * k - 1) };
            assert!(((even - exact) / exact).abs() < 1e-11, "k={k} {even} {exact}");
            assert!(odd.abs() < 1e-9 * exact.max(1.0), "k={k} {odd}");
        }
    }

    #[test]
    fn laguerre_reproduces_exponential_moments() {
        let rule = laguerre_64();
        let mut factorial = 1.0;
        for k in 0..=30 {
            if k > 0 {
                factorial *= k as f64;
            }
            let m = rule.integrate(|x| x.powi(k));
            assert!(((m - factorial) / factorial).abs() < 1e-10, "k={k} {m}");
        }
    }

    #[test]
    fn legendre_reproduces_uniform_moments() {
        let rule = legendre_64();
        for k in 0..=60 {
            let m = rule.integrate(|x| x.powi(k));
            let exact = if k % 2 == 0 { 1.0 / (k as f64 + 1.0) } else { 0.0 };
            assert!((m - exact).abs() < 1e-14, "k={k} {m}");
        }
    }

    #[test]
    fn mapped_legendre_integrates_on_interval() {
        let v: f64 = legendre_on(legendre_20(), 1.0, 3.0).map(|(x, w)| w * x * x).sum();
        assert!((v - 26.0 / 3.0).abs() < 1e-13);
    }
}
