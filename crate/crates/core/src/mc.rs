//! Payoffs on realized variance, Monte Carlo estimates and distribution
//! diagnostics.

use std::fmt;
use std::io::Write;

use crate::error::{domain, Error, Result};
use crate::numeric::pairwise_sum;

/// Two-sided normal quantile for a 99% interval.
pub const Z_99: f64 = 2.576;

/// Asymptotic Kolmogorov–Smirnov constants `c(alpha)`.
pub const KS_C_01: f64 = 1.63;
pub const KS_C_05: f64 = 1.36;

/// A function of realized variance.
#[derive(Debug, Clone, PartialEq)]
pub enum Payoff {
    /// `f(v) = v`
    VarianceSwap,
    /// `f(v) = (v - strike)^+`
    VarianceCall { strike: f64 },
    /// `f(v) = sqrt(v)`
    VolSwap,
    /// Piecewise-linear interpolation through `(knots, values)`, extended
    /// linearly beyond the end knots.
    Tabulated { knots: Vec<f64>, values: Vec<f64> },
}

impl Payoff {
    pub fn variance_call(strike: f64) -> Result<Self> {
        if !(strike.is_finite() && strike >= 0.0) {
            return Err(domain(format!(
                "variance strike must be >= 0, got {strike}"
            )));
        }
        Ok(Payoff::VarianceCall { strike })
    }

    pub fn tabulated(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(domain(
                "tabulated payoff needs >= 2 knots with one value each",
            ));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("tabulated payoff knots must be strictly increasing"));
        }
        Ok(Payoff::Tabulated { knots, values })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Payoff::VarianceSwap => "varswap",
            Payoff::VarianceCall { .. } => "varcall",
            Payoff::VolSwap => "volswap",
            Payoff::Tabulated { .. } => "tabulated",
        }
    }

    pub fn strike(&self) -> Option<f64> {
        match self {
            Payoff::VarianceCall { strike } => Some(*strike),
            _ => None,
        }
    }

    pub fn apply(&self, v: f64) -> Result<f64> {
        Ok(match self {
            Payoff::VarianceSwap => v,
            Payoff::VarianceCall { strike } => (v - strike).max(0.0),
            Payoff::VolSwap => {
                if v < 0.0 {
                    return Err(domain(format!(
                        "volatility swap on negative realized variance {v}"
                    )));
                }
                v.sqrt()
            }
            Payoff::Tabulated { knots, values } => {
                let j = knots.partition_point(|&k| k <= v).clamp(1, knots.len() - 1);
                let (k0, k1) = (knots[j - 1], knots[j]);
                let (f0, f1) = (values[j - 1], values[j]);
                f0 + (f1 - f0) * (v - k0) / (k1 - k0)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl McEstimate {
    /// Sample mean and `sd / sqrt(n)` with a 99% normal interval.
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "{n} samples; need at least 2"
            )));
        }
        let mean = pairwise_sum(values) / n as f64;
        let sq: Vec<f64> = values.iter().map(|&v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        Ok(Self::from_moments(mean, (var / n as f64).sqrt(), n))
    }

    pub fn from_moments(mean: f64, stderr: f64, n: usize) -> Self {
        Self {
            mean,
            stderr,
            n,
            ci_lo: mean - Z_99 * stderr,
            ci_hi: mean + Z_99 * stderr,
        }
    }

    /// Number of standard errors by which `mean` exceeds `level`.
    pub fn z_above(&self, level: f64) -> f64 {
        (self.mean - level) / self.stderr
    }
}

/// Labelled estimate as emitted in reports.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub payoff: Payoff,
    pub estimate: McEstimate,
}

impl fmt::Display for EstimateRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.estimate;
        write!(f, "payoff={}", self.payoff.kind())?;
        match self.payoff.strike() {
            Some(k) => write!(f, " strike={k}")?,
            None => write!(f, " strike=NA")?,
        }
        write!(
            f,
            " mean={} stderr={} n={} ci99_lo={} ci99_hi={}",
            e.mean, e.stderr, e.n, e.ci_lo, e.ci_hi
        )
    }
}

pub fn estimate_payoff(samples: &[f64], payoff: &Payoff) -> Result<McEstimate> {
    let values = samples
        .iter()
        .map(|&v| payoff.apply(v))
        .collect::<Result<Vec<_>>>()?;
    McEstimate::from_samples(&values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub n: usize,
    pub critical_01: f64,
    pub critical_05: f64,
}

impl KsResult {
    pub fn passes_01(&self) -> bool {
        self.statistic < self.critical_01
    }

    pub fn passes_05(&self) -> bool {
        self.statistic < self.critical_05
    }
}

/// Minimum sample size for the asymptotic critical values.
pub const KS_MIN_N: usize = 100;

/// One-sample Kolmogorov–Smirnov distance between the empirical law of
/// `samples` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    let n = samples.len();
    if n < KS_MIN_N {
        return Err(Error::InsufficientData(format!(
            "KS test with {n} samples; asymptotic critical values need >= {KS_MIN_N}"
        )));
    }
    if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite sample {bad}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    Ok(KsResult {
        statistic: d,
        n,
        critical_01: KS_C_01 / nf.sqrt(),
        critical_05: KS_C_05 / nf.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub frequency: f64,
}

/// Equal-width histogram on `[lo, hi]` plus under/overflow counts.
/// Frequencies are relative to all samples, so bins plus overflow sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<HistBin>,
    pub underflow: usize,
    pub overflow: usize,
    pub total: usize,
}

impl Histogram {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin_lo,bin_hi,count,frequency")?;
        let tot = self.total.max(1) as f64;
        let lo = self.bins.first().map(|b| b.lo).unwrap_or(f64::NAN);
        let hi = self.bins.last().map(|b| b.hi).unwrap_or(f64::NAN);
        writeln!(
            out,
            "-inf,{lo},{},{}",
            self.underflow,
            self.underflow as f64 / tot
        )?;
        for b in &self.bins {
            writeln!(out, "{},{},{},{}", b.lo, b.hi, b.count, b.frequency)?;
        }
        writeln!(
            out,
            "{hi},inf,{},{}",
            self.overflow,
            self.overflow as f64 / tot
        )?;
        Ok(())
    }

    pub fn mass_below(&self, level: f64) -> usize {
        self.underflow
            + self
                .bins
                .iter()
                .filter(|b| b.hi <= level)
                .map(|b| b.count)
                .sum::<usize>()
    }

    pub fn mass_above(&self, level: f64) -> usize {
        self.overflow
            + self
                .bins
                .iter()
                .filter(|b| b.lo >= level)
                .map(|b| b.count)
                .sum::<usize>()
    }
}

pub fn histogram(samples: &[f64], n_bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(domain("histogram needs at least one bin"));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(domain(format!("invalid histogram range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    let (mut under, mut over) = (0, 0);
    for &v in samples {
        if v < lo {
            under += 1;
        } else if v > hi || v.is_nan() {
            over += 1;
        } else {
            counts[(((v - lo) / width) as usize).min(n_bins - 1)] += 1;
        }
    }
    let total = samples.len();
    let tot = total.max(1) as f64;
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == n_bins {
                hi
            } else {
                lo + width * (i + 1) as f64
            },
            count,
            frequency: count as f64 / tot,
        })
        .collect();
    Ok(Histogram {
        bins,
        underflow: under,
        overflow: over,
        total,
    })
}
