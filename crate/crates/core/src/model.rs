//! The regime-mixing stochastic volatility model.
//!
//! At time zero one of finitely many deterministic variance-rate scenarios is
//! drawn according to the branch weights; the log-price then follows
//! `dX = sigma_i(t) dB - sigma_i(t)^2 / 2 dt` with `X_0 = 0`. Given the branch,
//! `X_t ~ N(-Sigma_i(t)/2, Sigma_i(t))` where `Sigma_i(t)` is the integrated
//! variance rate, and realized variance over `[0, T]` is `Sigma_i(T)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{domain, Error, Result};
use crate::numeric::norm_cdf;
use crate::parallel::map_indexed;
use crate::rng::{RngConfig, STREAM_B};
use crate::sde::TimeGrid;

/// Tolerance used when comparing times against breakpoints.
pub const TIME_TOL: f64 = 1e-9;

/// A variance rate that is constant between consecutive breakpoints.
///
/// Intervals are `[b_0, b_1], (b_1, b_2], ..., (b_{n-1}, b_n]`: at an
/// interior breakpoint the rate of the interval ending there applies
/// ([`rate_at`](Self::rate_at)). [`rate_after`](Self::rate_after) gives the
/// right-continuous version used for stepping forward in time.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstRate {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstRate {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidModel(
                "need at least two breakpoints (0 and the horizon)".into(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidModel("first breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0]))
            || !breakpoints.iter().all(|b| b.is_finite())
        {
            return Err(Error::InvalidModel(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        if values.len() != breakpoints.len() - 1 {
            return Err(Error::InvalidModel(format!(
                "{} intervals but {} rates",
                breakpoints.len() - 1,
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidModel(
                "variance rates must be positive and finite".into(),
            ));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Rate at `t`, left-continuous at interior breakpoints.
    pub fn rate_at(&self, t: f64) -> f64 {
        // j with breakpoints[j] < t <= breakpoints[j + 1]
        let j = self.breakpoints.partition_point(|&b| b < t);
        self.values[j.saturating_sub(1).min(self.values.len() - 1)]
    }

    /// Rate in force on `[t, t + dt)` for small `dt` (right-continuous);
    /// at the horizon, the last rate.
    pub fn rate_after(&self, t: f64) -> f64 {
        let j = self.breakpoints.partition_point(|&b| b <= t);
        self.values[j.saturating_sub(1).min(self.values.len() - 1)]
    }

    /// `int_0^t rate(s) ds`, with `t` clamped to `[0, horizon]`.
    pub fn integral(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon());
        let mut acc = 0.0;
        for (j, &v) in self.values.iter().enumerate() {
            let (lo, hi) = (self.breakpoints[j], self.breakpoints[j + 1]);
            if t <= lo {
                break;
            }
            acc += v * (t.min(hi) - lo);
        }
        acc
    }

    pub fn min_rate(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_rate(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub rate: PiecewiseConstRate,
}

/// Branch weights plus one variance-rate scenario per branch.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    components: Vec<Component>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(default)]
    horizon: Option<f64>,
    breakpoints: Vec<f64>,
    branch: Vec<BranchEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchEntry {
    weight: f64,
    rates: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidModel("mixture has no components".into()));
        }
        if components
            .iter()
            .any(|c| !(c.weight.is_finite() && c.weight > 0.0))
        {
            return Err(Error::InvalidModel(
                "branch weights must be positive".into(),
            ));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!(
                "branch weights sum to {total}, not 1"
            )));
        }
        let bp = components[0].rate.breakpoints();
        if components.iter().any(|c| c.rate.breakpoints() != bp) {
            return Err(Error::InvalidModel(
                "all branches must share the same breakpoints".into(),
            ));
        }
        Ok(Self { components })
    }

    /// The two-branch example: rate 2 on `[0,1]`, then `(3, 1)` or `(1, 3)`
    /// on the next two unit intervals, chosen by a fair coin. Realized
    /// variance is 6 on both branches.
    pub fn toy3() -> Self {
        let bp = vec![0.0, 1.0, 2.0, 3.0];
        let plus = PiecewiseConstRate::new(bp.clone(), vec![2.0, 3.0, 1.0]).unwrap();
        let minus = PiecewiseConstRate::new(bp, vec![2.0, 1.0, 3.0]).unwrap();
        Self::new(vec![
            Component {
                weight: 0.5,
                rate: plus,
            },
            Component {
                weight: 0.5,
                rate: minus,
            },
        ])
        .unwrap()
    }

    /// Built-in presets by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy3" => Ok(Self::toy3()),
            other => Err(Error::Config(format!("unknown model preset '{other}'"))),
        }
    }

    /// Parses the TOML model schema:
    ///
    /// ```toml
    /// horizon = 3.0                      # optional; must equal the last breakpoint
    /// breakpoints = [0.0, 1.0, 2.0, 3.0]
    ///
    /// [[branch]]
    /// weight = 0.5
    /// rates = [2.0, 3.0, 1.0]            # one rate per interval
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ModelFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("model file: {e}")))?;
        let horizon = *file
            .breakpoints
            .last()
            .ok_or_else(|| Error::InvalidModel("empty breakpoint list".into()))?;
        if let Some(h) = file.horizon {
            if h != horizon {
                return Err(Error::InvalidModel(format!(
                    "horizon {h} differs from last breakpoint {horizon}"
                )));
            }
        }
        let components = file
            .branch
            .into_iter()
            .map(|b| {
                Ok(Component {
                    weight: b.weight,
                    rate: PiecewiseConstRate::new(file.breakpoints.clone(), b.rates)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    pub fn to_toml_string(&self) -> String {
        let file = ModelFile {
            horizon: Some(self.horizon()),
            breakpoints: self.breakpoints().to_vec(),
            branch: self
                .components
                .iter()
                .map(|c| BranchEntry {
                    weight: c.weight,
                    rates: c.rate.values().to_vec(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("model serializes")
    }

    /// Short hex digest of the canonical serialization.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn n_branches(&self) -> usize {
        self.components.len()
    }

    pub fn weight(&self, branch: usize) -> f64 {
        self.components[branch].weight
    }

    pub fn breakpoints(&self) -> &[f64] {
        self.components[0].rate.breakpoints()
    }

    pub fn horizon(&self) -> f64 {
        self.components[0].rate.horizon()
    }

    pub fn min_rate(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.rate.min_rate())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_rate(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.rate.max_rate())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon()).contains(&t) {
            return Err(domain(format!("time {t} outside [0, {}]", self.horizon())));
        }
        Ok(())
    }

    fn check_branch(&self, branch: usize) -> Result<()> {
        if branch >= self.components.len() {
            return Err(domain(format!(
                "branch {branch} out of range (model has {})",
                self.components.len()
            )));
        }
        Ok(())
    }

    /// Variance rate of `branch` at `t` (left-continuous at breakpoints).
    pub fn rate(&self, branch: usize, t: f64) -> Result<f64> {
        self.check_branch(branch)?;
        self.check_time(t)?;
        Ok(self.components[branch].rate.rate_at(t))
    }

    /// Integrated variance `Sigma_branch(t)`.
    pub fn cum_variance(&self, branch: usize, t: f64) -> Result<f64> {
        self.check_branch(branch)?;
        self.check_time(t)?;
        Ok(self.components[branch].rate.integral(t))
    }

    /// Distribution function of `X_t`: a weighted sum of
    /// `N(-Sigma_i(t)/2, Sigma_i(t))` laws.
    pub fn marginal_cdf_x(&self, t: f64, x: f64) -> Result<f64> {
        self.check_time(t)?;
        if t == 0.0 {
            return Err(Error::Degenerate("X_0 is a point mass at 0".into()));
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                let v = c.rate.integral(t);
                c.weight * norm_cdf((x + 0.5 * v) / v.sqrt())
            })
            .sum::<f64>()
            .clamp(0.0, 1.0))
    }

    /// Draws a branch index from a uniform variate in `[0, 1)`.
    pub(crate) fn pick_branch(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return i;
            }
        }
        self.components.len() - 1
    }
}

/// Paths of the mixing model (or its adapted-sign variant) sampled exactly on
/// a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPathBatch {
    pub times: Vec<f64>,
    /// Branch followed by each path.
    pub branch: Vec<usize>,
    /// Row-major `n_paths x times.len()` log-prices.
    pub log_prices: Vec<f64>,
    pub realized_variance: Vec<f64>,
}

impl BranchPathBatch {
    pub fn n_paths(&self) -> usize {
        self.branch.len()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let m = self.times.len();
        &self.log_prices[i * m..(i + 1) * m]
    }

    /// Log-prices of all paths at grid time `t`.
    pub fn at_time(&self, t: f64) -> Result<Vec<f64>> {
        let k = self
            .times
            .iter()
            .position(|&s| (s - t).abs() <= TIME_TOL)
            .ok_or_else(|| domain(format!("time {t} is not on the sampling grid")))?;
        let m = self.times.len();
        Ok((0..self.n_paths())
            .map(|i| self.log_prices[i * m + k])
            .collect())
    }
}

fn check_aligned(spec: &MixtureSpec, grid: &TimeGrid) -> Result<()> {
    if (grid.horizon() - spec.horizon()).abs() > TIME_TOL {
        return Err(Error::Config(format!(
            "grid horizon {} differs from model horizon {}",
            grid.horizon(),
            spec.horizon()
        )));
    }
    for &b in spec.breakpoints() {
        if !grid.contains(b) {
            return Err(Error::Config(format!(
                "grid does not contain breakpoint {b}"
            )));
        }
    }
    Ok(())
}

/// Advances `x` over `[t0, t1]` with the rate in force at `t0`, which is exact
/// when the grid is aligned to breakpoints.
fn exact_step<R: Rng>(rng: &mut R, x: f64, rate: f64, dt: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    x + (rate * dt).sqrt() * z - 0.5 * rate * dt
}

/// Exact simulation of the mixing model on `grid`.
pub fn sample_mixing_paths(
    spec: &MixtureSpec,
    grid: &TimeGrid,
    rng: RngConfig,
    n_paths: usize,
    workers: usize,
) -> Result<BranchPathBatch> {
    check_aligned(spec, grid)?;
    let times = grid.times();
    let rows = map_indexed(n_paths, workers, |i| {
        let mut r = rng.stream(i as u64, STREAM_B);
        let branch = spec.pick_branch(r.gen::<f64>());
        let rate = &spec.components[branch].rate;
        let mut xs = Vec::with_capacity(times.len());
        let mut x = 0.0;
        xs.push(x);
        for w in times.windows(2) {
            x = exact_step(&mut r, x, rate.rate_after(w[0]), w[1] - w[0]);
            xs.push(x);
        }
        (branch, xs)
    });
    Ok(collect_batch(spec, times, rows))
}

fn collect_batch(
    spec: &MixtureSpec,
    times: &[f64],
    rows: Vec<(usize, Vec<f64>)>,
) -> BranchPathBatch {
    let mut branch = Vec::with_capacity(rows.len());
    let mut log_prices = Vec::with_capacity(rows.len() * times.len());
    for (b, xs) in rows {
        branch.push(b);
        log_prices.extend_from_slice(&xs);
    }
    let terminal: Vec<f64> = spec
        .components
        .iter()
        .map(|c| c.rate.integral(spec.horizon()))
        .collect();
    let realized_variance = branch.iter().map(|&b| terminal[b]).collect();
    BranchPathBatch {
        times: times.to_vec(),
        branch,
        log_prices,
        realized_variance,
    }
}

/// Conditional median of `S_{t1/2}` given `S_{t1} = s` when the variance
/// rate is constant on `[0, t1]`.
///
/// Under the Brownian bridge, `X_{t1/2} | X_{t1} = y ~ N(y/2, rate * t1 / 4)`,
/// so the median of `exp(X_{t1/2})` is `exp(y/2) = sqrt(s)`.
pub fn adapted_sign_threshold(s: f64) -> f64 {
    s.sqrt()
}

/// Two-branch model whose branch is decided at the first breakpoint `t1` from
/// the path itself instead of by an independent coin.
///
/// The sign is `+1` (branch 0) iff `S_{t1/2} > m(S_{t1})`, otherwise branch 1
/// (ties included). The sign is independent of `S_{t1}`, so every fixed-time
/// marginal matches the mixing model while volatility is adapted to the
/// driving noise.
pub fn adapted_sign_simulate(
    spec: &MixtureSpec,
    grid: &TimeGrid,
    rng: RngConfig,
    n_paths: usize,
    workers: usize,
) -> Result<BranchPathBatch> {
    if spec.n_branches() != 2 {
        return Err(Error::InvalidModel(
            "adapted-sign construction needs exactly two branches".into(),
        ));
    }
    if (spec.weight(0) - 0.5).abs() > 1e-12 {
        return Err(Error::InvalidModel(
            "adapted-sign construction needs equal branch weights".into(),
        ));
    }
    let (r0, r1) = (&spec.components[0].rate, &spec.components[1].rate);
    let t1 = spec.breakpoints()[1];
    if r0.values()[0] != r1.values()[0] {
        return Err(Error::InvalidModel(format!(
            "branches differ on [0, {t1}]; the sign cannot be hidden in S_{t1}"
        )));
    }
    if t1 == spec.horizon() {
        return Err(Error::InvalidModel(
            "model has a single regime; nothing to switch".into(),
        ));
    }
    check_aligned(spec, grid)?;
    let half = 0.5 * t1;
    if !grid.contains(half) {
        return Err(Error::Config(format!("grid does not contain t = {half}")));
    }
    let times = grid.times();
    let k_half = grid.index_of(half).unwrap();
    let k_one = grid.index_of(t1).unwrap();
    let common = r0.values()[0];

    let rows = map_indexed(n_paths, workers, |i| {
        let mut r = rng.stream(i as u64, STREAM_B);
        let mut xs = Vec::with_capacity(times.len());
        let mut x = 0.0;
        xs.push(x);
        for w in times[..=k_one].windows(2) {
            x = exact_step(&mut r, x, common, w[1] - w[0]);
            xs.push(x);
        }
        // S_{t1/2} > sqrt(S_{t1})  <=>  X_{t1/2} > X_{t1} / 2
        let branch = if xs[k_half] > 0.5 * xs[k_one] { 0 } else { 1 };
        let rate = &spec.components[branch].rate;
        for w in times[k_one..].windows(2) {
            x = exact_step(&mut r, x, rate.rate_after(w[0]), w[1] - w[0]);
            xs.push(x);
        }
        (branch, xs)
    });
    Ok(collect_batch(spec, times, rows))
}
