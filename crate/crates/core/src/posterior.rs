//! Beta-Binomial posteriors and the exceedance probability
//! P(π_E > π_S + δ | data) that every decision rule is built from.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{MathError, ModelError};
use crate::math;

/// Observed responders out of observed participants for one arm and endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BinomialSummary {
    successes: u32,
    trials: u32,
}

impl BinomialSummary {
    pub fn new(successes: u32, trials: u32) -> Result<Self, ModelError> {
        if successes > trials {
            return Err(ModelError::CountsInconsistent { successes, trials });
        }
        Ok(BinomialSummary { successes, trials })
    }

    pub fn successes(&self) -> u32 {
        self.successes
    }

    pub fn trials(&self) -> u32 {
        self.trials
    }

    pub fn failures(&self) -> u32 {
        self.trials - self.successes
    }

    /// Adds one observation.
    pub fn record(&mut self, success: bool) {
        self.trials += 1;
        if success {
            self.successes += 1;
        }
    }

    pub fn merge(&self, other: &BinomialSummary) -> BinomialSummary {
        BinomialSummary {
            successes: self.successes + other.successes,
            trials: self.trials + other.trials,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaDistribution {
    alpha: f64,
    beta: f64,
}

impl BetaDistribution {
    /// The flat Beta(1, 1) prior.
    pub const UNIFORM: BetaDistribution = BetaDistribution {
        alpha: 1.0,
        beta: 1.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Result<Self, MathError> {
        if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() {
            Ok(BetaDistribution { alpha, beta })
        } else {
            Err(MathError::BetaShape { a: alpha, b: beta })
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        math::reg_inc_beta(x.clamp(0.0, 1.0), self.alpha, self.beta, self.ln_beta())
    }

    fn ln_beta(&self) -> f64 {
        math::ln_beta(self.alpha, self.beta)
    }
}

impl Default for BetaDistribution {
    fn default() -> Self {
        BetaDistribution::UNIFORM
    }
}

/// Conjugate update: Beta(α + s, β + n − s).
pub fn update(prior: BetaDistribution, data: BinomialSummary) -> BetaDistribution {
    BetaDistribution {
        alpha: prior.alpha + f64::from(data.successes),
        beta: prior.beta + f64::from(data.failures()),
    }
}

/// P(X ≥ target) for X ~ `post`.
pub fn prob_exceeds_threshold(post: BetaDistribution, target: f64) -> f64 {
    1.0 - post.cdf(target)
}

/// P(X > Y + δ) for independent X ~ `post_e`, Y ~ `post_s`.
///
/// Evaluates ∫ f_Y(y) (1 − F_X(y + δ)) dy. Outside the region where both
/// densities are non-negligible the integrand is 0 or f_Y, and the latter
/// part is taken from F_Y directly; the remainder is integrated by globally
/// adaptive Gauss–Kronrod quadrature.
pub fn prob_exceeds_margin(post_e: BetaDistribution, post_s: BetaDistribution, delta: f64) -> f64 {
    if delta <= -1.0 {
        return 1.0;
    }
    if delta >= 1.0 {
        return 0.0;
    }
    let x = Kernel::new(post_e);
    let y = Kernel::new(post_s);
    let (x_lo, x_hi) = x.window();
    let (y_lo, y_hi) = y.window();

    let below = y.cdf(x_lo - delta);
    let lo = y_lo.max(x_lo - delta).max(0.0);
    let hi = y_hi.min(x_hi - delta).min(1.0);
    let inner = if hi > lo {
        adaptive_quadrature(
            |v| y.pdf(v) * (1.0 - x.cdf(v + delta)),
            lo,
            hi,
            INTEGRATION_TOL,
        )
    } else {
        0.0
    };
    (below + inner).clamp(0.0, 1.0)
}

const INTEGRATION_TOL: f64 = 1e-9;
const MAX_PANELS: usize = 400;
/// Log-density drop defining a Beta's effective support.
const WINDOW_LOG_DROP: f64 = 32.0;

/// Beta density and CDF with the normalizing constant precomputed.
struct Kernel {
    a: f64,
    b: f64,
    ln_beta: f64,
}

impl Kernel {
    fn new(d: BetaDistribution) -> Self {
        Kernel {
            a: d.alpha,
            b: d.beta,
            ln_beta: d.ln_beta(),
        }
    }

    fn ln_pdf_unnormalized(&self, v: f64) -> f64 {
        (self.a - 1.0) * v.ln() + (self.b - 1.0) * (-v).ln_1p()
    }

    fn pdf(&self, v: f64) -> f64 {
        if v <= 0.0 || v >= 1.0 {
            return 0.0;
        }
        (self.ln_pdf_unnormalized(v) - self.ln_beta).exp()
    }

    fn cdf(&self, v: f64) -> f64 {
        math::reg_inc_beta(v.clamp(0.0, 1.0), self.a, self.b, self.ln_beta)
    }

    /// Interval outside which the density is below `exp(-WINDOW_LOG_DROP)`
    /// times its mode. Only log-concave shapes (both ≥ 1) are trimmed.
    fn window(&self) -> (f64, f64) {
        if self.a < 1.0 || self.b < 1.0 || (self.a == 1.0 && self.b == 1.0) {
            return (0.0, 1.0);
        }
        let mode = (self.a - 1.0) / (self.a + self.b - 2.0);
        let peak = self.ln_pdf_unnormalized(mode);
        let threshold = peak - WINDOW_LOG_DROP;
        let below = |v: f64| self.ln_pdf_unnormalized(v) < threshold;

        let lo = if self.a == 1.0 || !below(f64::MIN_POSITIVE) {
            0.0
        } else {
            bisect(f64::MIN_POSITIVE, mode, below)
        };
        let hi = if self.b == 1.0 || !below(1.0 - f64::EPSILON) {
            1.0
        } else {
            // `below` is false at the mode and true near 1.
            bisect(mode, 1.0 - f64::EPSILON, |v| !below(v))
        };
        (lo, hi)
    }
}

/// Boundary between `pred == true` at `lo` and `pred == false` at `hi`,
/// returning the side where `pred` holds.
fn bisect(mut lo: f64, mut hi: f64, pred: impl Fn(f64) -> bool) -> f64 {
    let keep_lo = pred(lo);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if pred(mid) == keep_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if keep_lo {
        lo
    } else {
        hi
    }
}

/// Kronrod 21-point nodes on [0, 1) in decreasing order; odd indices are
/// the nodes of the embedded 10-point Gauss rule.
#[allow(clippy::excessive_precision)]
const KRONROD21_NODES: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
#[allow(clippy::excessive_precision)]
const KRONROD21_WEIGHTS: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_600_901_459_436,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];
#[allow(clippy::excessive_precision)]
const GAUSS10_WEIGHTS: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl Panel {
    /// Kronrod 21-point estimate with the QUADPACK error estimate built
    /// from |K21 − G10| scaled by the panel's variation.
    fn new(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> Panel {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let center = f(mid);
        let mut values = [(0.0, 0.0); 10];
        let mut kronrod = KRONROD21_WEIGHTS[10] * center;
        let mut gauss = 0.0;
        for (i, v) in values.iter_mut().enumerate() {
            let dx = half * KRONROD21_NODES[i];
            *v = (f(mid - dx), f(mid + dx));
            let pair = v.0 + v.1;
            kronrod += KRONROD21_WEIGHTS[i] * pair;
            if i % 2 == 1 {
                gauss += GAUSS10_WEIGHTS[i / 2] * pair;
            }
        }
        let mean = 0.5 * kronrod;
        let mut spread = KRONROD21_WEIGHTS[10] * (center - mean).abs();
        for (i, v) in values.iter().enumerate() {
            spread += KRONROD21_WEIGHTS[i] * ((v.0 - mean).abs() + (v.1 - mean).abs());
        }
        spread *= half.abs();
        let mut err = ((kronrod - gauss) * half).abs();
        if spread > 0.0 && err > 0.0 {
            err = spread * (200.0 * err / spread).powf(1.5).min(1.0);
        }
        Panel {
            a,
            b,
            value: kronrod * half,
            err,
        }
    }
}

/// Globally adaptive Gauss–Kronrod (10/21): the panel with the largest
/// error estimate is bisected until the summed estimates fall below `tol`.
pub(crate) fn adaptive_quadrature(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let mut panels = vec![Panel::new(&f, a, b)];
    while panels.len() < MAX_PANELS {
        let total_err: f64 = panels.iter().map(|p| p.err).sum();
        if total_err <= tol {
            break;
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i)
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        panels.push(Panel::new(&f, p.a, m));
        panels.push(Panel::new(&f, m, p.b));
    }
    panels.iter().map(|p| p.value).sum()
}

/// Source of exceedance probabilities for decision evaluation.
pub trait MarginProbability {
    fn prob_exceeds_margin(
        &mut self,
        post_e: BetaDistribution,
        post_s: BetaDistribution,
        delta: f64,
    ) -> f64;
}

/// Evaluates every request afresh.
#[derive(Debug, Default, Clone, Copy)]
pub struct Direct;

impl MarginProbability for Direct {
    fn prob_exceeds_margin(
        &mut self,
        post_e: BetaDistribution,
        post_s: BetaDistribution,
        delta: f64,
    ) -> f64 {
        prob_exceeds_margin(post_e, post_s, delta)
    }
}

const MEMO_CAPACITY: usize = 1 << 20;

/// Memoizes exceedance probabilities by exact parameter bit patterns.
/// Results are identical to [`Direct`]; repeated count configurations are
/// common across replications.
#[derive(Debug, Default)]
pub struct Memoized {
    table: HashMap<[u64; 5], f64>,
}

impl Memoized {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl MarginProbability for Memoized {
    fn prob_exceeds_margin(
        &mut self,
        post_e: BetaDistribution,
        post_s: BetaDistribution,
        delta: f64,
    ) -> f64 {
        if self.table.len() >= MEMO_CAPACITY {
            self.table.clear();
        }
        let key = [
            post_e.alpha.to_bits(),
            post_e.beta.to_bits(),
            post_s.alpha.to_bits(),
            post_s.beta.to_bits(),
            delta.to_bits(),
        ];
        *self
            .table
            .entry(key)
            .or_insert_with(|| prob_exceeds_margin(post_e, post_s, delta))
    }
}
