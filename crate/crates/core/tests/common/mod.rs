//! Reference computations that share no code with the library.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

/// Adaptive Simpson on [a, b] with absolute tolerance `tol`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// P(X ≤ h, Y ≤ k) for standard normals with correlation `rho`, by nested
/// adaptive integration of the joint density.
pub fn bvn_by_integration(h: f64, k: f64, rho: f64) -> f64 {
    const LOWER: f64 = -9.0;
    let s = 1.0 - rho * rho;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * s.sqrt());
    let h = h.clamp(LOWER, -LOWER);
    let k = k.clamp(LOWER, -LOWER);
    let outer = |x: f64| {
        let inner = |y: f64| norm * (-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * s)).exp();
        simpson(&inner, LOWER, k, 1e-11)
    };
    simpson(&outer, LOWER, h, 1e-10)
}

/// Standard normal quantile by bisection on the integrated density.
pub fn normal_quantile_by_bisection(p: f64) -> f64 {
    let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = |x: f64| {
        if x < 0.0 {
            simpson(&density, -12.0, x, 1e-13)
        } else {
            0.5 + simpson(&density, 0.0, x, 1e-13)
        }
    };
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Monte Carlo estimate and standard error of P(X > Y + delta) for
/// independent X ~ Beta(a_x, b_x), Y ~ Beta(a_y, b_y).
pub fn exceedance_by_sampling(
    (a_x, b_x): (f64, f64),
    (a_y, b_y): (f64, f64),
    delta: f64,
    draws: u32,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let x = Beta::new(a_x, b_x).unwrap();
    let y = Beta::new(a_y, b_y).unwrap();
    let hits = (0..draws)
        .filter(|_| x.sample(rng) > y.sample(rng) + delta)
        .count();
    let p = hits as f64 / draws as f64;
    (
        p,
        (p * (1.0 - p) / draws as f64)
            .sqrt()
            .max(1.0 / draws as f64),
    )
}

/// Fraction of `draws` uniforms for which `hit` is true.
pub fn frequency(draws: u32, rng: &mut ChaCha8Rng, mut hit: impl FnMut(f64) -> bool) -> f64 {
    (0..draws).filter(|_| hit(rng.random::<f64>())).count() as f64 / draws as f64
}

/// Largest deviation of the library's bivariate normal CDF from
/// [`bvn_by_integration`] on a grid of limits and correlations.
pub fn bvn_grid_deviation(points: &[f64], rhos: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for &h in points {
        for &k in points {
            for &rho in rhos {
                let rho_c = platsim::math::Correlation::new(rho).unwrap();
                let got = platsim::math::bvn_cdf(h, k, rho_c);
                worst = worst.max((got - bvn_by_integration(h, k, rho)).abs());
            }
        }
    }
    worst
}

/// Compares the library's exceedance probability with sampling on
/// `configs` random (shape, shape, margin) configurations and returns the
/// largest deviation in standard errors.
pub fn exceedance_deviation_in_se(configs: usize, draws: u32, seed: u64) -> f64 {
    use platsim::posterior::{prob_exceeds_margin, BetaDistribution};
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let mut shape = || rng.random_range(0.5..100.0);
        let x = (shape(), shape());
        let y = (shape(), shape());
        let delta = rng.random_range(-0.5..0.5);
        let (mc, se) = exceedance_by_sampling(x, y, delta, draws, &mut rng);
        let got = prob_exceeds_margin(
            BetaDistribution::new(x.0, x.1).unwrap(),
            BetaDistribution::new(y.0, y.1).unwrap(),
            delta,
        );
        worst = worst.max((got - mc).abs() / se);
    }
    worst
}
