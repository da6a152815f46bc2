//! Shared numerical building blocks: Gauss–Legendre rules, order-stable
//! summation, per-sample random streams and small statistics helpers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Gauss–Legendre rule on the reference interval [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds an `order`-point rule by Newton iteration on the Legendre
    /// three-term recurrence.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let n = order as f64;
        for i in 0..order.div_ceil(2) {
            // Tricomi initial guess for the i-th largest root.
            let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(order, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(order, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            weights[i] = w;
            nodes[order - 1 - i] = x;
            weights[order - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// (node, weight) pairs on [-1, 1].
    pub fn nodes_weights(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Integrates `f` over `[lo, hi]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, mut f: F) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .collect();
        half * pairwise_sum(&terms)
    }
}

fn legendre_with_derivative(order: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=order {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = order as f64;
    let p = if order == 0 { 1.0 } else { p1 };
    let dp = n * (x * p1 - p0) / (x * x - 1.0);
    (p, dp)
}

/// Result of an adaptively doubled Gauss–Legendre integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubledEstimate {
    pub value: f64,
    /// |I_{2m} - I_m| at the accepted order.
    pub error: f64,
    pub order: usize,
}

/// Integrates with `start_order` points, doubling the order until the
/// relative change drops below `rel_tol` (or `max_order` is reached).
pub fn gauss_doubling<F: Fn(f64) -> f64>(
    lo: f64,
    hi: f64,
    start_order: usize,
    max_order: usize,
    rel_tol: f64,
    f: F,
) -> DoubledEstimate {
    let mut order = start_order;
    let mut prev = GaussLegendre::new(order).integrate(lo, hi, &f);
    loop {
        let next_order = order * 2;
        let next = GaussLegendre::new(next_order).integrate(lo, hi, &f);
        let err = (next - prev).abs();
        if err <= rel_tol * next.abs().max(f64::MIN_POSITIVE) || next_order >= max_order {
            return DoubledEstimate {
                value: next,
                error: err,
                order: next_order,
            };
        }
        prev = next;
        order = next_order;
    }
}

/// Pairwise (cascade) summation over a fixed binary tree. The result
/// depends only on the input order, never on how the work was scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Evaluates `f(i)` for `i in 0..len` in parallel and reduces the results
/// with [`pairwise_sum`], so the total is bit-identical for any pool size.
pub fn par_sum_indexed<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let values: Vec<f64> = (0..len).into_par_iter().map(f).collect();
    pairwise_sum(&values)
}

/// Independent random stream for sample `index` under a master `seed`.
///
/// ChaCha's 64-bit stream id carries the sample index, so stream `i` is a
/// pure function of `(seed, i)`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Surface measure of the unit (n-1)-sphere, 2 pi^{n/2} / Gamma(n/2).
pub fn sphere_area(n: usize) -> f64 {
    assert!(n >= 1, "sphere dimension must be positive");
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half_integer(n)
}

/// Gamma(n/2) for positive integers n, by the exact recurrence.
fn gamma_half_integer(n: usize) -> f64 {
    let (mut value, mut k) = if n.is_multiple_of(2) {
        (1.0, 2usize)
    } else {
        (PI.sqrt(), 1usize)
    };
    // Gamma(x + 1) = x Gamma(x), stepping x = k/2 upward by one.
    while k < n {
        value *= k as f64 / 2.0;
        k += 2;
    }
    value
}

/// Wilson score interval for a binomial proportion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilsonInterval {
    pub center: f64,
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> WilsonInterval {
    if trials == 0 {
        return WilsonInterval {
            center: 0.5,
            half_width: 0.5,
            lower: 0.0,
            upper: 1.0,
        };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half_width = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    WilsonInterval {
        center,
        half_width,
        lower: (center - half_width).clamp(0.0, 1.0),
        upper: (center + half_width).clamp(0.0, 1.0),
    }
}

/// Least-squares slope of `ln y` against `ln x`. Points with non-positive
/// coordinates are skipped; returns `None` with fewer than two usable points.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0 && y.is_finite())
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(5);
        // degree 9 is the highest exact degree for 5 points
        let got = rule.integrate(-1.0, 2.0, |x| x.powi(9) - 3.0 * x.powi(4));
        let exact = (2f64.powi(10) - 1.0) / 10.0 - 3.0 * (2f64.powi(5) + 1.0) / 5.0;
        assert!((got - exact).abs() < 1e-10 * exact.abs());
    }

    #[test]
    fn gauss_legendre_weights_sum_to_two() {
        for order in [1, 2, 7, 64, 128, 256] {
            let rule = GaussLegendre::new(order);
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "order {order}: {s}");
            assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn doubling_converges_on_smooth_integrand() {
        let est = gauss_doubling(0.0, 1.0, 8, 1024, 1e-13, |x| (3.0 * x).exp());
        assert!((est.value - ((3f64).exp() - 1.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(1) - 2.0).abs() < 1e-15);
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-13);
    }

    #[test]
    fn pairwise_sum_is_independent_of_pool_size() {
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e-3 + 1.0 / (1.0 + i as f64);
        let a = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| par_sum_indexed(10_007, f));
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| par_sum_indexed(10_007, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn sample_streams_are_distinct_and_reproducible() {
        let x: f64 = sample_rng(7, 3).random();
        let y: f64 = sample_rng(7, 3).random();
        let z: f64 = sample_rng(7, 4).random();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn wilson_interval_clamps() {
        let w = wilson_interval(10, 10, 1.96);
        assert!(w.upper <= 1.0 && w.lower > 0.5);
        let w = wilson_interval(0, 10, 1.96);
        assert!(w.lower >= 0.0 && w.upper < 0.5);
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let xs: Vec<f64> = (1..10).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-1.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() + 1.5).abs() < 1e-12);
    }
}
