//! Double-local variance `sigma_dloc^2(t, x, a)`.
//!
//! The second state is the regularized running variance
//! `a_t = V_t + sqrt(eps) Z_t` with `Z` a Brownian motion independent of the
//! branch and of `B`. Given branch `i`, `X_t ~ N(-Sigma_i/2, Sigma_i)` and
//! `a_t ~ N(Sigma_i, eps t)` independently, hence
//!
//! ```text
//! sigma_dloc^2(t, x, a) = sum_i w_i r_i phi_i(x) psi_i(a) / sum_i w_i phi_i(x) psi_i(a).
//! ```
//!
//! The normalizing constant of `psi_i` is shared by all branches and drops
//! out of the ratio.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Error, Result};
use crate::localvol::{branch_states, weighted_rate, BranchState, LogWeightedMean, Side};
use crate::model::MixtureSpec;
use crate::parallel::map_indexed;
use crate::rng::{RngConfig, STREAM_B, STREAM_Z};

#[derive(Debug, Clone, PartialEq)]
pub enum DlocSlice {
    Flat(f64),
    Mixture {
        states: Vec<BranchState>,
        /// `eps * t`
        a_var: f64,
    },
}

impl DlocSlice {
    #[inline]
    fn log_weight(b: &BranchState, a_var: f64, x: f64, a: f64) -> f64 {
        let d = a - b.cum_var;
        b.log_density(x) - d * d / (2.0 * a_var)
    }

    #[inline]
    pub fn eval(&self, x: f64, a: f64) -> f64 {
        match self {
            DlocSlice::Flat(v) => *v,
            DlocSlice::Mixture { states, a_var } => {
                let mut acc = LogWeightedMean::new();
                for b in states {
                    acc.push(Self::log_weight(b, *a_var, x, a), b.rate);
                }
                acc.value()
            }
        }
    }

    /// Conditional mean and variance of the branch rate.
    pub fn moments(&self, x: f64, a: f64) -> (f64, f64) {
        match self {
            DlocSlice::Flat(v) => (*v, 0.0),
            DlocSlice::Mixture { states, a_var } => {
                let mut m1 = LogWeightedMean::new();
                let mut m2 = LogWeightedMean::new();
                for b in states {
                    let lw = Self::log_weight(b, *a_var, x, a);
                    m1.push(lw, b.rate);
                    m2.push(lw, b.rate * b.rate);
                }
                let mean = m1.value();
                (mean, (m2.value() - mean * mean).max(0.0))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleLocalSurface {
    spec: MixtureSpec,
    epsilon: f64,
}

impl DoubleLocalSurface {
    pub fn new(spec: MixtureSpec, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(domain(format!("epsilon must be >= 0, got {epsilon}")));
        }
        Ok(Self { spec, epsilon })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The surface at time `t`; at breakpoints, the rates of the interval
    /// ending there.
    pub fn slice(&self, t: f64) -> Result<DlocSlice> {
        self.slice_on(t, Side::Left)
    }

    /// Right-continuous version for forward time-stepping.
    pub fn step_slice(&self, t: f64) -> Result<DlocSlice> {
        self.slice_on(t, Side::Right)
    }

    fn slice_on(&self, t: f64, side: Side) -> Result<DlocSlice> {
        if !(0.0..=self.spec.horizon()).contains(&t) {
            return Err(domain(format!(
                "time {t} outside [0, {}]",
                self.spec.horizon()
            )));
        }
        let states = branch_states(&self.spec, t, side);
        if states.iter().all(|s| s.cum_var == states[0].cum_var) {
            return Ok(DlocSlice::Flat(weighted_rate(&self.spec, t, side)));
        }
        let a_var = self.epsilon * t;
        if a_var == 0.0 {
            return Err(Error::Degenerate(format!(
                "epsilon = 0 at t = {t}: the running variance reveals the branch"
            )));
        }
        Ok(DlocSlice::Mixture { states, a_var })
    }

    pub fn sigma_dloc_sq(&self, t: f64, x: f64, a: f64) -> Result<f64> {
        Ok(self.slice(t)?.eval(x, a))
    }
}

/// `3 sqrt(eps T / 2 pi)`: `E[(a_T - V_T)^+] + E|sqrt(eps) Z_T|` for
/// `a_T - V_T ~ N(0, eps T)`.
pub fn bound_constant(epsilon: f64, horizon: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(domain(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(domain(format!("horizon must be > 0, got {horizon}")));
    }
    Ok(3.0 * (epsilon * horizon / (2.0 * PI)).sqrt())
}

/// One draw of `(X_t, a_t, r_branch(t))` from the mixing model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlocSample {
    pub x: f64,
    pub a: f64,
    pub rate: f64,
}

/// Exact draws of `(X_t, a_t^eps)` together with the realized branch rate.
pub fn sample_dloc_inputs(
    spec: &MixtureSpec,
    epsilon: f64,
    t: f64,
    rng: RngConfig,
    n: usize,
    workers: usize,
) -> Result<Vec<DlocSample>> {
    if !(0.0..=spec.horizon()).contains(&t) {
        return Err(domain(format!("time {t} outside [0, {}]", spec.horizon())));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(domain(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let a_sd = (epsilon * t).sqrt();
    Ok(map_indexed(n, workers, |i| {
        let mut rb = rng.stream(i as u64, STREAM_B);
        let mut rz = rng.stream(i as u64, STREAM_Z);
        let branch = spec.pick_branch(rb.gen::<f64>());
        let c = &spec.components()[branch];
        let v = c.rate.integral(t);
        let zx: f64 = rb.sample(StandardNormal);
        let za: f64 = rz.sample(StandardNormal);
        DlocSample {
            x: -0.5 * v + v.sqrt() * zx,
            a: v + a_sd * za,
            rate: c.rate.rate_at(t),
        }
    }))
}

/// Equal-width bins on `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bins {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Bins {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(domain(format!("invalid bins [{lo}, {hi}) x {count}")));
        }
        Ok(Self { lo, hi, count })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.count as f64
    }

    pub fn index(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v < self.hi) {
            return None;
        }
        Some((((v - self.lo) / self.width()) as usize).min(self.count - 1))
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = self.width();
        (self.lo + w * i as f64, self.lo + w * (i + 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlocBinRow {
    pub x_lo: f64,
    pub x_hi: f64,
    pub a_lo: f64,
    pub a_hi: f64,
    pub n: usize,
    /// Bin average of the realized branch rate; `None` below the count floor.
    pub estimate: Option<f64>,
    /// Closed form at the bin centre.
    pub analytic: f64,
    /// Binomial standard error of the estimate under the closed-form
    /// conditional law at the bin centre.
    pub stderr: f64,
}

impl DlocBinRow {
    /// `|estimate - analytic| <= k * stderr`, or `None` for empty bins.
    pub fn agrees(&self, k: f64) -> Option<bool> {
        self.estimate
            .map(|e| (e - self.analytic).abs() <= k * self.stderr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlocCheck {
    pub t: f64,
    pub epsilon: f64,
    pub rows: Vec<DlocBinRow>,
}

impl DlocCheck {
    pub const HEADER: &'static str = "x_lo,x_hi,a_lo,a_hi,n,estimate,analytic,stderr";

    pub fn populated(&self) -> impl Iterator<Item = &DlocBinRow> {
        self.rows.iter().filter(|r| r.estimate.is_some())
    }

    /// Fraction of populated bins agreeing within `k` standard errors.
    pub fn agreement_rate(&self, k: f64) -> f64 {
        let (mut ok, mut total) = (0usize, 0usize);
        for r in self.populated() {
            total += 1;
            if r.agrees(k) == Some(true) {
                ok += 1;
            }
        }
        ok as f64 / total as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::HEADER)?;
        for r in &self.rows {
            match r.estimate {
                Some(e) => writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.x_lo, r.x_hi, r.a_lo, r.a_hi, r.n, e, r.analytic, r.stderr
                )?,
                None => writeln!(
                    out,
                    "{},{},{},{},{},,{},",
                    r.x_lo, r.x_hi, r.a_lo, r.a_hi, r.n, r.analytic
                )?,
            }
        }
        Ok(())
    }
}

/// Bins covering the bulk of `(X_t, a_t)`: 30 log-price bins spanning three
/// standard deviations around every branch mean, 40 variance bins padded by
/// five regularization standard deviations.
pub fn default_bins(spec: &MixtureSpec, epsilon: f64, t: f64) -> Result<(Bins, Bins)> {
    let (lo, hi) = (0..spec.n_branches())
        .map(|i| spec.cum_variance(i, t))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(v), h.max(v))
        });
    let pad = 5.0 * (epsilon * t).sqrt() + 0.05;
    let a_bins = Bins::new(lo - pad, hi + pad, 40)?;
    let x_bins = Bins::new(-0.5 * hi - 3.0 * hi.sqrt(), -0.5 * lo + 3.0 * lo.sqrt(), 30)?;
    Ok((x_bins, a_bins))
}

/// Minimum samples for a bin to be reported.
pub const MIN_BIN_COUNT: usize = 100;

/// Binned conditional means of the realized rate versus the closed form.
pub fn regression_check_dloc(
    surface: &DoubleLocalSurface,
    t: f64,
    samples: &[DlocSample],
    x_bins: Bins,
    a_bins: Bins,
) -> Result<DlocCheck> {
    let slice = surface.slice(t)?;
    let cells = x_bins.count * a_bins.count;
    let mut count = vec![0usize; cells];
    let mut sum = vec![0.0f64; cells];
    for s in samples {
        if let (Some(i), Some(j)) = (x_bins.index(s.x), a_bins.index(s.a)) {
            let c = i * a_bins.count + j;
            count[c] += 1;
            sum[c] += s.rate;
        }
    }
    let mut rows = Vec::with_capacity(cells);
    for i in 0..x_bins.count {
        let (x_lo, x_hi) = x_bins.edges(i);
        for j in 0..a_bins.count {
            let (a_lo, a_hi) = a_bins.edges(j);
            let c = i * a_bins.count + j;
            let n = count[c];
            let (analytic, var) = slice.moments(0.5 * (x_lo + x_hi), 0.5 * (a_lo + a_hi));
            let populated = n >= MIN_BIN_COUNT;
            rows.push(DlocBinRow {
                x_lo,
                x_hi,
                a_lo,
                a_hi,
                n,
                estimate: populated.then(|| sum[c] / n as f64),
                analytic,
                stderr: if populated {
                    (var / n as f64).sqrt()
                } else {
                    f64::NAN
                },
            });
        }
    }
    if rows.iter().all(|r| r.estimate.is_none()) {
        return Err(Error::InsufficientData(format!(
            "no bin holds at least {MIN_BIN_COUNT} samples"
        )));
    }
    Ok(DlocCheck {
        t,
        epsilon: surface.epsilon(),
        rows,
    })
}
