//! Exact tagged-rod evolution under the exchange dynamics.
//!
//! A rod started at `x` with velocity `v` sits at time `t` at
//! `x + m_0^x + v t + j(x, v, t)`, where the flux `j` is the signed rod volume
//! whose free trajectory crosses the free trajectory of the tagged point:
//!
//! * `+ε r'` when `x' > x` and `x' + v' t < x + v t` (overtaken),
//! * `−ε r'` when `x' < x` and `x' + v' t > x + v t` (overtaking).
//!
//! For `t > 0` this is the same set as the open-interval indicators
//! `1[v'<v] 1[x < x' < x + (v−v')t] − 1[v'>v] 1[x + (v−v')t < x' < x]`.
//! The batch kernel counts these weighted inversions between the initial and
//! the time-`t` free order with a Fenwick tree over final-position ranks.

mod fenwick;

use crate::ensemble::{units_to_volume, Configuration};
use crate::error::{Error, Result};
use crate::measures::{Model, VelocityLengthMeasure};

use fenwick::Fenwick;

/// Below this many queries a direct scan beats sorting.
const SCAN_THRESHOLD: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxQuery {
    pub x: f64,
    pub v: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub source_index: usize,
    pub y0: f64,
    pub yt: f64,
    /// `v t + flux`; `yt = y0 + displacement`.
    pub displacement: f64,
    /// `displacement − v_eff(v) t`.
    pub recentered: f64,
    pub flux: f64,
}

/// Positions that may cross the query trajectory when all speeds are at most `speed`.
fn crossing_range(q: &FluxQuery, speed: f64) -> (f64, f64) {
    (q.x + (q.v - speed) * q.t, q.x + (q.v + speed) * q.t)
}

/// Checks `t >= 0` and that every point able to cross the query trajectory
/// under the configuration's velocity cap lies inside the window.
pub fn check_query(config: &Configuration, q: &FluxQuery) -> Result<()> {
    if q.t < 0.0 {
        return Err(Error::NegativeTime(q.t));
    }
    if !(q.x.is_finite() && q.v.is_finite() && q.t.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite flux query {q:?}")));
    }
    let (lo, hi) = crossing_range(q, config.velocity_cap());
    let w = config.window();
    if lo < w.lo || hi > w.hi {
        return Err(Error::BufferViolation {
            x: q.x,
            v: q.v,
            t: q.t,
            lo,
            hi,
            window_lo: w.lo,
            window_hi: w.hi,
        });
    }
    Ok(())
}

#[inline]
fn crossing_sign(x: f64, b: f64, xp: f64, bp: f64) -> i128 {
    if xp > x && bp < b {
        1
    } else if xp < x && bp > b {
        -1
    } else {
        0
    }
}

/// Reference flux by enumeration over every point.
pub fn flux_naive(config: &Configuration, q: &FluxQuery) -> Result<f64> {
    check_query(config, q)?;
    let b = q.x + q.v * q.t;
    let mut units = 0i128;
    for (i, p) in config.points().iter().enumerate() {
        let bp = p.x + p.v * q.t;
        units += crossing_sign(q.x, b, p.x, bp) * config.length_units(i);
    }
    Ok(units_to_volume(units, config.epsilon()))
}

/// Index range of points that can cross any of `queries`.
fn relevant_slice(config: &Configuration, queries: &[FluxQuery]) -> (usize, usize) {
    let speed = config.max_speed();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for q in queries {
        let (a, b) = crossing_range(q, speed);
        lo = lo.min(a);
        hi = hi.max(b);
    }
    // Widen past rounding in the range endpoints; the crossing test decides.
    let pad = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    (config.count_lt(lo - pad), config.count_le(hi + pad))
}

fn flux_units_scan(config: &Configuration, q: &FluxQuery) -> i128 {
    let (start, end) = relevant_slice(config, std::slice::from_ref(q));
    let b = q.x + q.v * q.t;
    let points = config.points();
    (start..end)
        .map(|i| {
            let p = &points[i];
            crossing_sign(q.x, b, p.x, p.x + p.v * q.t) * config.length_units(i)
        })
        .sum()
}

fn flux_units_batch(config: &Configuration, queries: &[FluxQuery]) -> Vec<i128> {
    let t = queries[0].t;
    let (start, end) = relevant_slice(config, queries);
    let points = &config.points()[start..end];
    let m = points.len();

    let finals: Vec<f64> = points.iter().map(|p| p.x + p.v * t).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| finals[a].total_cmp(&finals[b]).then(a.cmp(&b)));
    let mut rank = vec![0usize; m];
    for (k, &i) in order.iter().enumerate() {
        rank[i] = k;
    }
    let sorted_finals: Vec<f64> = order.iter().map(|&i| finals[i]).collect();
    // suffix[k] = units of the points with final rank >= k.
    let mut suffix = vec![0i128; m + 1];
    for k in (0..m).rev() {
        suffix[k] = suffix[k + 1] + config.length_units(start + order[k]);
    }

    let mut by_x: Vec<usize> = (0..queries.len()).collect();
    by_x.sort_by(|&a, &b| queries[b].x.total_cmp(&queries[a].x));

    let mut tree = Fenwick::new(m);
    let mut inserted = 0i128;
    let mut next = m; // points[next..] are in the tree
    let mut out = vec![0i128; queries.len()];
    let mut g = 0;
    while g < by_x.len() {
        let x = queries[by_x[g]].x;
        let mut h = g;
        while h < by_x.len() && queries[by_x[h]].x == x {
            h += 1;
        }
        let mut insert_while = |pred: &dyn Fn(f64) -> bool, tree: &mut Fenwick, inserted: &mut i128| {
            while next > 0 && pred(points[next - 1].x) {
                next -= 1;
                let u = config.length_units(start + next);
                tree.add(rank[next], u);
                *inserted += u;
            }
        };
        // Overtaken: x' > x and final below.
        insert_while(&|xp| xp > x, &mut tree, &mut inserted);
        for &qi in &by_x[g..h] {
            let b = queries[qi].x + queries[qi].v * t;
            let below = sorted_finals.partition_point(|&f| f < b);
            out[qi] = tree.prefix(below);
        }
        // Overtaking: x' < x and final above, as (all above) − (x' >= x and above).
        insert_while(&|xp| xp >= x, &mut tree, &mut inserted);
        for &qi in &by_x[g..h] {
            let b = queries[qi].x + queries[qi].v * t;
            let upto = sorted_finals.partition_point(|&f| f <= b);
            let above_inserted = inserted - tree.prefix(upto);
            out[qi] -= suffix[upto] - above_inserted;
        }
        g = h;
    }
    out
}

fn flux_units(config: &Configuration, queries: &[FluxQuery]) -> Vec<i128> {
    if queries.is_empty() || queries[0].t == 0.0 {
        return vec![0; queries.len()];
    }
    if queries.len() <= SCAN_THRESHOLD {
        queries.iter().map(|q| flux_units_scan(config, q)).collect()
    } else {
        flux_units_batch(config, queries)
    }
}

/// Flux for many queries at one common time, in `O((N + M) log N)`.
///
/// Bit-identical to [`flux_naive`]: both accumulate the same integer units.
pub fn flux_batch(config: &Configuration, queries: &[FluxQuery]) -> Result<Vec<f64>> {
    if let Some(first) = queries.first() {
        if queries.iter().any(|q| q.t != first.t) {
            return Err(Error::MixedTimes);
        }
    }
    for q in queries {
        check_query(config, q)?;
    }
    if queries.is_empty() || queries[0].t == 0.0 {
        return Ok(vec![0.0; queries.len()]);
    }
    let eps = config.epsilon();
    Ok(flux_units_batch(config, queries).into_iter().map(|u| units_to_volume(u, eps)).collect())
}

/// Positions at time `t` of the tagged rods `tagged` (indices into the configuration).
pub fn evolve_tagged(config: &Configuration, tagged: &[usize], t: f64, model: &Model) -> Result<Vec<TrajectoryRecord>> {
    let mut queries = Vec::with_capacity(tagged.len());
    for &index in tagged {
        let p = config
            .points()
            .get(index)
            .ok_or_else(|| Error::InvalidParameter(format!("tagged index {index} out of range")))?;
        let q = FluxQuery { x: p.x, v: p.v, t };
        check_query(config, &q).map_err(|e| Error::Tagged { index, source: Box::new(e) })?;
        queries.push(q);
    }
    if tagged.is_empty() {
        return Ok(Vec::new());
    }
    if !config.window().contains(0.0) {
        let w = config.window();
        return Err(Error::OriginOutsideWindow { lo: w.lo, hi: w.hi });
    }
    let eps = config.epsilon();
    let fluxes = flux_units(config, &queries);
    Ok(tagged
        .iter()
        .zip(queries.iter().zip(fluxes))
        .map(|(&index, (q, units))| {
            let flux = units_to_volume(units, eps);
            let y0 = config.dilated_position(index);
            let displacement = q.v * t + flux;
            TrajectoryRecord {
                source_index: index,
                y0,
                yt: y0 + displacement,
                displacement,
                recentered: displacement - model.v_eff(q.v) * t,
                flux,
            }
        })
        .collect())
}

/// Exact variance of `j(x, v, t)` at a deterministic `x` under the Poisson law,
/// `ε ρ t ∬ r² |v − w| dμ`, evaluated from the lengths of the crossing intervals.
pub fn flux_variance_exact(rho: f64, mu: &VelocityLengthMeasure, v: f64, t_micro: f64, epsilon: f64) -> Result<f64> {
    if t_micro < 0.0 {
        return Err(Error::NegativeTime(t_micro));
    }
    let mut acc = 0.0;
    for n in mu.mark_nodes_split(v) {
        // Offsets x' - x whose trajectories cross the tagged one by time t.
        let (lo, hi) = if n.v < v {
            (0.0, (v - n.v) * t_micro)
        } else if n.v > v {
            ((v - n.v) * t_micro, 0.0)
        } else {
            (0.0, 0.0)
        };
        acc += n.weight * n.r * n.r * (hi - lo);
    }
    let value = epsilon * rho * acc;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("flux variance"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample, RodPoint, Window};
    use crate::measures::{diffusivity, random_measure, DistSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(x: f64, v: f64, r: f64) -> Configuration {
        Configuration::from_points(vec![RodPoint { x, v, r }], 1.0, 1.0, Window::symmetric(5.0).unwrap()).unwrap()
    }

    /// Eq.-(29) style open-interval indicators, summed in floating point.
    fn flux_interval_form(config: &Configuration, q: &FluxQuery) -> f64 {
        let mut s = 0.0;
        for p in config.points() {
            if p.v < q.v && q.x < p.x && p.x < q.x + (q.v - p.v) * q.t {
                s += config.epsilon() * p.r;
            } else if p.v > q.v && q.x + (q.v - p.v) * q.t < p.x && p.x < q.x {
                s -= config.epsilon() * p.r;
            }
        }
        s
    }

    fn random_config(rng: &mut ChaCha8Rng, max_n: usize, eps: f64) -> Configuration {
        let n = rng.random_range(0..=max_n);
        let pts = (0..n)
            .map(|_| RodPoint {
                x: rng.random_range(-5.0..5.0),
                v: rng.random_range(-1.0..1.0),
                r: rng.random_range(0.0..2.0),
            })
            .collect();
        Configuration::from_points(pts, eps, 1.0, Window::symmetric(20.0).unwrap())
            .unwrap()
            .with_velocity_cap(1.0)
    }

    #[test]
    fn hand_enumerated_examples() {
        assert_eq!(flux_naive(&single(0.5, 0.0, 1.0), &FluxQuery { x: 0.0, v: 1.0, t: 1.0 }).unwrap(), 1.0);
        assert_eq!(flux_naive(&single(-0.5, 2.0, 1.0), &FluxQuery { x: 0.0, v: 0.0, t: 1.0 }).unwrap(), -1.0);
        assert_eq!(flux_naive(&single(-0.5, 2.0, 1.0), &FluxQuery { x: 0.0, v: 0.0, t: 0.0 }).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let c = single(0.5, 0.0, 1.0);
        assert!(matches!(flux_naive(&c, &FluxQuery { x: 0.0, v: 1.0, t: -1.0 }), Err(Error::NegativeTime(_))));
        assert!(matches!(flux_naive(&c, &FluxQuery { x: 4.5, v: 1.0, t: 1.0 }), Err(Error::BufferViolation { .. })));
        let qs = [FluxQuery { x: 0.0, v: 0.0, t: 1.0 }, FluxQuery { x: 0.0, v: 0.0, t: 2.0 }];
        assert!(matches!(flux_batch(&c, &qs), Err(Error::MixedTimes)));
        let model = Model::benchmark();
        let far = Configuration::from_points(vec![RodPoint { x: 4.8, v: 1.0, r: 1.0 }], 1.0, 1.0, Window::symmetric(5.0).unwrap()).unwrap();
        assert!(matches!(evolve_tagged(&far, &[0], 1.0, &model), Err(Error::Tagged { index: 0, .. })));
    }

    #[test]
    fn batch_equals_naive_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..300 {
            let eps = if rng.random_bool(0.5) { 1.0 } else { 0.013 };
            let c = random_config(&mut rng, 50, eps);
            let t = rng.random_range(0.0..3.0);
            let mut qs: Vec<FluxQuery> = (0..rng.random_range(1..40))
                .map(|_| FluxQuery { x: rng.random_range(-6.0..6.0), v: rng.random_range(-1.0..1.0), t })
                .collect();
            // Queries sitting on points, and duplicated positions.
            for p in c.points().iter().take(5) {
                qs.push(FluxQuery { x: p.x, v: p.v, t });
                qs.push(FluxQuery { x: p.x, v: -p.v, t });
            }
            let batch = flux_batch(&c, &qs).unwrap();
            for (q, b) in qs.iter().zip(&batch) {
                let naive = flux_naive(&c, q).unwrap();
                assert_eq!(naive.to_bits(), b.to_bits(), "{q:?}");
                assert!((naive - flux_interval_form(&c, q)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn crafted_ties_are_excluded() {
        // Final positions coincide exactly: no crossing either way.
        let pts = vec![RodPoint { x: 1.0, v: -1.0, r: 1.0 }, RodPoint { x: -1.0, v: 1.0, r: 1.0 }];
        let c = Configuration::from_points(pts, 1.0, 1.0, Window::symmetric(10.0).unwrap()).unwrap();
        let q = FluxQuery { x: 0.0, v: 0.0, t: 1.0 };
        assert_eq!(flux_naive(&c, &q).unwrap(), 0.0);
        let qs = vec![q; 20];
        assert!(flux_batch(&c, &qs).unwrap().iter().all(|&f| f == 0.0));
    }

    #[test]
    fn co_moving_gas_has_no_flux() {
        let mu = crate::measures::VelocityLengthMeasure::product(DistSpec::Atom { value: 0.4 }, DistSpec::Exponential { rate: 1.0 }).unwrap();
        let c = sample(0.05, 1.0, &mu, Window::symmetric(10.0).unwrap(), 8).unwrap();
        let qs: Vec<FluxQuery> = (0..30).map(|i| FluxQuery { x: -3.0 + 0.2 * i as f64, v: 0.4, t: 2.0 }).collect();
        assert!(flux_batch(&c, &qs).unwrap().iter().all(|&f| f == 0.0));
    }

    #[test]
    fn fastest_rod_has_nonnegative_flux() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let c = random_config(&mut rng, 40, 0.1);
            let q = FluxQuery { x: rng.random_range(-3.0..3.0), v: 1.0 + 1e-9, t: rng.random_range(0.0..4.0) };
            assert!(flux_naive(&c, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn evolution_examples() {
        let model = Model::benchmark();
        let w = Window::symmetric(10.0).unwrap();
        let free = Configuration::from_points(
            vec![RodPoint { x: -1.0, v: 1.0, r: 0.0 }, RodPoint { x: 0.5, v: -1.0, r: 0.0 }, RodPoint { x: 1.0, v: 0.3, r: 0.0 }],
            0.1,
            1.0,
            w,
        )
        .unwrap();
        let recs = evolve_tagged(&free, &[0, 1, 2], 2.0, &model).unwrap();
        for (rec, p) in recs.iter().zip(free.points()) {
            assert_eq!(rec.yt, p.x + p.v * 2.0);
            assert_eq!(rec.flux, 0.0);
        }
        let one = Configuration::from_points(vec![RodPoint { x: 0.7, v: -0.6, r: 1.5 }], 0.1, 1.0, w).unwrap();
        let rec = evolve_tagged(&one, &[0], 3.0, &model).unwrap()[0];
        assert_eq!(rec.yt, rec.y0 + -0.6 * 3.0);
    }

    #[test]
    fn decomposition_and_volume_invariants() {
        let model = Model::benchmark();
        let c = sample(0.02, 1.0, &model.mu, Window::symmetric(8.0).unwrap(), 17).unwrap();
        let t = 1.5;
        let tagged: Vec<usize> = (0..c.len()).filter(|&i| c.points()[i].x.abs() < 4.0).collect();
        let volume_before = c.total_volume();
        let recs = evolve_tagged(&c, &tagged, t, &model).unwrap();
        let naive: Vec<f64> = tagged
            .iter()
            .map(|&i| flux_naive(&c, &FluxQuery { x: c.points()[i].x, v: c.points()[i].v, t }).unwrap())
            .collect();
        for (rec, f) in recs.iter().zip(naive) {
            let p = c.points()[rec.source_index];
            assert_eq!(rec.flux.to_bits(), f.to_bits());
            assert_eq!(rec.yt, rec.y0 + (p.v * t + rec.flux));
            assert_eq!(rec.recentered, rec.displacement - model.v_eff(p.v) * t);
        }
        assert_eq!(c.total_volume(), volume_before);
    }

    #[test]
    fn flux_variance_two_paths() {
        let mu = crate::measures::VelocityLengthMeasure::benchmark();
        let exact = flux_variance_exact(1.0, &mu, 1.0, 100.0, 0.01).unwrap();
        assert!((exact - 1.0).abs() < 1e-12);
        assert_eq!(flux_variance_exact(1.0, &mu, 1.0, 0.0, 0.01).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let mu = random_measure(&mut rng);
            let (rho, v, t, eps) = (rng.random_range(0.2..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..50.0), rng.random_range(0.001..1.0));
            let a = flux_variance_exact(rho, &mu, v, t, eps).unwrap();
            let b = eps * t * diffusivity(v, rho, &mu).unwrap();
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} {b}");
            let doubled = flux_variance_exact(rho, &mu, v, 2.0 * t, eps).unwrap();
            assert!((doubled - 2.0 * a).abs() <= 1e-12 * (1.0 + a));
        }
    }

    #[test]
    fn empirical_flux_variance_matches_campbell() {
        // Deterministic query point, benchmark gas, micro time ε⁻¹ with ε = 0.05.
        let mu = crate::measures::VelocityLengthMeasure::benchmark();
        let (eps, t) = (0.05, 20.0);
        let w = Window::symmetric(41.0).unwrap();
        let n = 10_000;
        let q = FluxQuery { x: 0.0, v: 1.0, t };
        let vals: Vec<f64> = (0..n)
            .map(|s| flux_naive(&sample(eps, 1.0, &mu, w, crate::ensemble::derive_seed(5, s)).unwrap(), &q).unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let target = flux_variance_exact(1.0, &mu, 1.0, t, eps).unwrap();
        let stats = crate::stats::ReplicaStats::from_samples(&vals).unwrap();
        let verdict = crate::stats::test_against(&stats, target, crate::stats::TestKind::Variance).unwrap();
        assert!(verdict.pass, "{var} vs {target}: {verdict:?}");
        // Mean flux is (σ v − π) t = 20.
        assert!((mean - 20.0).abs() < 4.0 * (target / n as f64).sqrt());
    }

    proptest! {
        #[test]
        fn batch_matches_naive_property(seed in 0u64..5000, t in 0.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_config(&mut rng, 50, 1.0);
            let qs: Vec<FluxQuery> = (0..10).map(|_| FluxQuery { x: rng.random_range(-5.0..5.0), v: rng.random_range(-1.0..1.0), t }).collect();
            let batch = flux_batch(&c, &qs).unwrap();
            for (q, b) in qs.iter().zip(batch) {
                prop_assert_eq!(flux_naive(&c, q).unwrap().to_bits(), b.to_bits());
            }
        }
    }
}
