//! Congestion-window law: a normal distribution truncated to `[0, ∞)`.
//!
//! Besides density and sampling, this module carries the two-step fitting
//! procedure used to parameterize the fluid sources from a packet-level
//! window histogram: the location is pinned to the empirical mode (mean of
//! the four most frequent values) and the scale is chosen by least squares
//! on the logarithm of the histogram.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("scale parameter must be finite and > 0, got {0}")]
    InvalidScale(f64),
    #[error("location parameter must be finite, got {0}")]
    InvalidLocation(f64),
    #[error("need at least 4 bins with nonzero count, found {found}")]
    TooFewBins { found: usize },
    #[error("scale fit left the search interval (0, {upper}], stopped at sigma = {sigma}")]
    FitDiverged { sigma: f64, upper: f64 },
    #[error("histogram is empty")]
    EmptyPmf,
}

/// Upper bound of the scale search, in packets.
pub const SIGMA_SEARCH_MAX: f64 = 1.0e4;
const SIGMA_SEARCH_MIN: f64 = 1.0e-3;

/// Standardized lower bound above which inverse-CDF sampling loses all
/// precision and exponential rejection takes over.
const REJECTION_THRESHOLD: f64 = 30.0;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// `ln Φ(x)`, usable far into the lower tail where `Φ` underflows.
fn ln_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        // asymptotic Mills-ratio expansion
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Normal(`mu`, `sigma`²) conditioned on `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormalParams {
    mu: f64,
    sigma: f64,
}

impl TruncatedNormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, DistributionError> {
        if !mu.is_finite() {
            return Err(DistributionError::InvalidLocation(mu));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(DistributionError::InvalidScale(sigma));
        }
        Ok(Self { mu, sigma })
    }

    /// Half-normal law: location 0.
    pub fn half_normal(sigma: f64) -> Result<Self, DistributionError> {
        Self::new(0.0, sigma)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Standardized truncation point `(0 - mu) / sigma`.
    fn lower(&self) -> f64 {
        -self.mu / self.sigma
    }

    /// Log of the retained mass `P(X >= 0)` of the parent normal.
    fn ln_mass(&self) -> f64 {
        ln_norm_cdf(self.mu / self.sigma)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.mu) / self.sigma;
        -0.5 * z * z - 0.5 * (2.0 * PI).ln() - self.sigma.ln() - self.ln_mass()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            self.ln_pdf(x).exp()
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let a = self.lower();
        let z = (x - self.mu) / self.sigma;
        // upper tails avoid cancellation when the bound is far out
        let tail_a = norm_cdf(-a);
        let tail_z = norm_cdf(-z);
        ((tail_a - tail_z) / tail_a).clamp(0.0, 1.0)
    }

    /// Closed-form mean `mu + sigma * φ(a) / (1 - Φ(a))`.
    pub fn mean(&self) -> f64 {
        let a = self.lower();
        let hazard = (ln_norm_pdf(a) - ln_norm_cdf(-a)).exp();
        self.mu + self.sigma * hazard
    }

    /// Draws one variate. Inverse-CDF in the bulk; exponential rejection
    /// once the truncation point is more than 30 standard deviations out.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let a = self.lower();
        let z = if a <= 0.0 {
            let lo = norm_cdf(a);
            let u = lo + open_unit(rng) * (1.0 - lo);
            norm_quantile(u.min(1.0 - f64::EPSILON / 2.0)).max(a)
        } else if a < REJECTION_THRESHOLD {
            let tail = norm_cdf(-a);
            (-norm_quantile(open_unit(rng) * tail)).max(a)
        } else {
            sample_tail_rejection(a, rng)
        };
        (self.mu + self.sigma * z).max(0.0)
    }
}

fn ln_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

/// Uniform on the open interval (0, 1).
pub(crate) fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard normal conditioned on `[a, ∞)` for large `a` (Robert 1995).
fn sample_tail_rejection<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - open_unit(rng).ln() / rate;
        let accept = (-0.5 * (z - rate) * (z - rate)).exp();
        if rng.random::<f64>() <= accept {
            return z;
        }
    }
}

/// Integer-binned histogram of window sizes, in packets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPmf {
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl EmpiricalPmf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts<I: IntoIterator<Item = (u64, u64)>>(counts: I) -> Self {
        let mut pmf = Self::new();
        for (bin, n) in counts {
            pmf.add_count(bin, n);
        }
        pmf
    }

    /// Rounds each value to the nearest nonnegative integer bin.
    pub fn from_samples<I: IntoIterator<Item = f64>>(samples: I) -> Self {
        let mut pmf = Self::new();
        for x in samples {
            pmf.add(x.round().max(0.0) as u64);
        }
        pmf
    }

    pub fn add(&mut self, bin: u64) {
        self.add_count(bin, 1);
    }

    pub fn add_count(&mut self, bin: u64, n: u64) {
        if n == 0 {
            return;
        }
        *self.counts.entry(bin).or_insert(0) += n;
        self.total += n;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn count(&self, bin: u64) -> u64 {
        self.counts.get(&bin).copied().unwrap_or(0)
    }

    /// Nonzero `(bin, count)` pairs in ascending bin order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&b, &n)| (b, n))
    }

    /// Count / total; unit-width bins make this directly comparable to a density.
    pub fn frequency(&self, bin: u64) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(bin) as f64 / self.total as f64
        }
    }

    pub fn mean(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let sum: f64 = self.iter().map(|(b, n)| b as f64 * n as f64).sum();
        sum / self.total as f64
    }

    pub fn merge(&mut self, other: &EmpiricalPmf) {
        for (b, n) in other.iter() {
            self.add_count(b, n);
        }
    }
}

/// Mean of the four bins with the highest counts; equal counts go to the
/// lower bin.
pub fn estimate_mode(pmf: &EmpiricalPmf) -> Result<f64, DistributionError> {
    let mut bins: Vec<(u64, u64)> = pmf.iter().collect();
    if bins.len() < 4 {
        return Err(DistributionError::TooFewBins { found: bins.len() });
    }
    bins.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(bins[..4].iter().map(|&(b, _)| b as f64).sum::<f64>() / 4.0)
}

/// Squared log-residual between the truncated normal at `(mu, sigma)` and the
/// empirical frequencies, over bins with nonzero count.
pub fn log_fit_objective(pmf: &EmpiricalPmf, mu: f64, sigma: f64) -> f64 {
    let params = TruncatedNormalParams { mu, sigma };
    let ln_total = (pmf.total() as f64).ln();
    pmf.iter()
        .map(|(b, n)| {
            let r = params.ln_pdf(b as f64) - ((n as f64).ln() - ln_total);
            r * r
        })
        .sum()
}

/// Pins `mu` to [`estimate_mode`] and picks `sigma` by least squares on the
/// log of the histogram.
pub fn fit_truncated_normal(pmf: &EmpiricalPmf) -> Result<TruncatedNormalParams, DistributionError> {
    if pmf.is_empty() {
        return Err(DistributionError::EmptyPmf);
    }
    let mu = estimate_mode(pmf)?;
    let f = |ln_sigma: f64| log_fit_objective(pmf, mu, ln_sigma.exp());

    // coarse scan in log-space to bracket the global minimum
    const GRID: usize = 240;
    let (lo, hi) = (SIGMA_SEARCH_MIN.ln(), SIGMA_SEARCH_MAX.ln());
    let step = (hi - lo) / GRID as f64;
    let (best, _) = (0..=GRID)
        .map(|i| (i, f(lo + step * i as f64)))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    if best == 0 || best == GRID {
        let sigma = (lo + step * best as f64).exp();
        return Err(DistributionError::FitDiverged {
            sigma,
            upper: SIGMA_SEARCH_MAX,
        });
    }
    let left = lo + step * (best - 1) as f64;
    let right = lo + step * (best + 1) as f64;
    let ln_sigma = golden_section(f, left, right, 1.0e-7);
    TruncatedNormalParams::new(mu, ln_sigma.exp())
}

/// Minimizes a unimodal function on `[a, b]` until the bracket is narrower
/// than `tol` (absolute, in the argument).
fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
