//! Dupire local variance of the mixing model.
//!
//! Conditioning the branch rate on `X_t = x` gives
//!
//! ```text
//! sigma_loc^2(t, x) = sum_i w_i r_i(t) phi_i(x) / sum_i w_i phi_i(x),
//! phi_i = density of N(-Sigma_i(t)/2, Sigma_i(t)).
//! ```
//!
//! The call-price route (`call_price_mixture` + `dupire_sigma_sq`) computes
//! the same quantity from finite differences of prices and never touches the
//! densities above; it serves as an independent oracle.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{domain, Error, Result};
use crate::model::{MixtureSpec, TIME_TOL};
use crate::numeric::{linspace, norm_cdf};
use crate::parallel::map_indexed;

/// Streaming weighted mean over log-weights: no allocation, no overflow.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogWeightedMean {
    max: f64,
    num: f64,
    den: f64,
}

impl LogWeightedMean {
    pub(crate) fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            num: 0.0,
            den: 0.0,
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, log_w: f64, value: f64) {
        if log_w > self.max {
            let scale = (self.max - log_w).exp();
            self.num *= scale;
            self.den *= scale;
            self.max = log_w;
        }
        let w = (log_w - self.max).exp();
        self.num += w * value;
        self.den += w;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.num / self.den
    }
}

/// Per-branch quantities frozen at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchState {
    /// `ln w_i - ln(Sigma_i) / 2`
    pub log_scale: f64,
    pub cum_var: f64,
    pub rate: f64,
}

impl BranchState {
    #[inline]
    pub fn log_density(&self, x: f64) -> f64 {
        let z = x + 0.5 * self.cum_var;
        self.log_scale - z * z / (2.0 * self.cum_var)
    }
}

/// The surface restricted to a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalVolSlice {
    /// All branches share the same marginal law at this time, so `X_t`
    /// carries no information and the value is the weighted mean rate.
    Flat(f64),
    Mixture(Vec<BranchState>),
}

impl LocalVolSlice {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            LocalVolSlice::Flat(v) => *v,
            LocalVolSlice::Mixture(branches) => {
                let mut acc = LogWeightedMean::new();
                for b in branches {
                    acc.push(b.log_density(x), b.rate);
                }
                acc.value()
            }
        }
    }
}

/// Which one-sided rate applies at a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    /// Rate of the interval ending at `t`.
    Left,
    /// Rate of the interval starting at `t`.
    Right,
}

pub(crate) fn branch_rate(rate: &crate::model::PiecewiseConstRate, t: f64, side: Side) -> f64 {
    match side {
        Side::Left => rate.rate_at(t),
        Side::Right => rate.rate_after(t),
    }
}

pub(crate) fn branch_states(spec: &MixtureSpec, t: f64, side: Side) -> Vec<BranchState> {
    spec.components()
        .iter()
        .map(|c| {
            let v = c.rate.integral(t);
            BranchState {
                log_scale: c.weight.ln() - 0.5 * v.ln(),
                cum_var: v,
                rate: branch_rate(&c.rate, t, side),
            }
        })
        .collect()
}

pub(crate) fn weighted_rate(spec: &MixtureSpec, t: f64, side: Side) -> f64 {
    spec.components()
        .iter()
        .map(|c| c.weight * branch_rate(&c.rate, t, side))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalVolSurface {
    spec: MixtureSpec,
}

impl LocalVolSurface {
    pub fn new(spec: MixtureSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.spec.horizon()).contains(&t) {
            return Err(domain(format!(
                "time {t} outside [0, {}]",
                self.spec.horizon()
            )));
        }
        Ok(())
    }

    fn slice_on(&self, t: f64, side: Side) -> Result<LocalVolSlice> {
        self.check_time(t)?;
        let states = branch_states(&self.spec, t, side);
        if states.iter().all(|s| s.cum_var == states[0].cum_var) {
            Ok(LocalVolSlice::Flat(weighted_rate(&self.spec, t, side)))
        } else {
            Ok(LocalVolSlice::Mixture(states))
        }
    }

    /// The surface at time `t`; at a breakpoint, branch rates of the
    /// interval ending there.
    pub fn slice(&self, t: f64) -> Result<LocalVolSlice> {
        self.slice_on(t, Side::Left)
    }

    /// Coefficient in force on `[t, t + dt)`: identical to [`slice`](Self::slice)
    /// except at breakpoints, where the rates of the interval starting at `t`
    /// are used. Forward time-stepping evaluates this version.
    pub fn step_slice(&self, t: f64) -> Result<LocalVolSlice> {
        self.slice_on(t, Side::Right)
    }

    /// Local variance `sigma_loc^2(t, x)`.
    pub fn sigma_loc_sq(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.slice(t)?.eval(x))
    }

    /// Range `[min_i r_i(t), max_i r_i(t)]` that every value at `t` lies in.
    pub fn bounds_at(&self, t: f64) -> (f64, f64) {
        self.spec
            .components()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                let r = c.rate.rate_at(t);
                (lo.min(r), hi.max(r))
            })
    }

    /// `lim_{|x| -> inf} sigma_loc^2(t, x)`; both tails are dominated by the
    /// branches with the largest integrated variance.
    pub fn tail_limit(&self, t: f64) -> Result<f64> {
        let slice = self.slice(t)?;
        Ok(match slice {
            LocalVolSlice::Flat(v) => v,
            LocalVolSlice::Mixture(states) => {
                let vmax = states.iter().map(|s| s.cum_var).fold(0.0, f64::max);
                let (mut num, mut den) = (0.0, 0.0);
                for (s, c) in states.iter().zip(self.spec.components()) {
                    if s.cum_var == vmax {
                        num += c.weight * s.rate;
                        den += c.weight;
                    }
                }
                num / den
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallPrice {
    pub maturity: f64,
    pub strike: f64,
    pub price: f64,
}

/// Undiscounted call on a unit-spot lognormal asset with total variance `var`.
pub fn black_call(strike: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return (1.0 - strike).max(0.0);
    }
    let sd = var.sqrt();
    let d1 = (-strike.ln() + 0.5 * var) / sd;
    norm_cdf(d1) - strike * norm_cdf(d1 - sd)
}

/// European call price in the mixing model: the weight-average of lognormal
/// prices with total variance `Sigma_i(T)`.
pub fn call_price_mixture(spec: &MixtureSpec, maturity: f64, strike: f64) -> Result<CallPrice> {
    if !(strike.is_finite() && strike > 0.0) {
        return Err(domain(format!("strike must be positive, got {strike}")));
    }
    if !(0.0..=spec.horizon()).contains(&maturity) {
        return Err(domain(format!(
            "maturity {maturity} outside [0, {}]",
            spec.horizon()
        )));
    }
    let price = spec
        .components()
        .iter()
        .map(|c| c.weight * black_call(strike, c.rate.integral(maturity)))
        .sum();
    Ok(CallPrice {
        maturity,
        strike,
        price,
    })
}

/// Finite-difference steps for the Dupire oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DupireSteps {
    /// Absolute maturity step.
    pub h_t: f64,
    /// Strike step relative to the strike.
    pub h_k_rel: f64,
}

impl Default for DupireSteps {
    fn default() -> Self {
        Self {
            h_t: 1e-4,
            h_k_rel: 1e-4,
        }
    }
}

/// Denominator floor below which the Dupire ratio is refused.
pub const DUPIRE_GAMMA_FLOOR: f64 = 1e-12;

/// `2 dC/dT / (K^2 d^2C/dK^2)` by central differences of mixture call prices.
pub fn dupire_sigma_sq(
    spec: &MixtureSpec,
    maturity: f64,
    strike: f64,
    steps: DupireSteps,
) -> Result<f64> {
    let DupireSteps { h_t, h_k_rel } = steps;
    if !(h_t > 0.0 && h_k_rel > 0.0 && h_k_rel < 0.5) {
        return Err(domain(
            "finite-difference steps must be positive (relative strike step < 0.5)",
        ));
    }
    if !(strike.is_finite() && strike > 0.0) {
        return Err(domain(format!("strike must be positive, got {strike}")));
    }
    if maturity - h_t <= 0.0 || maturity + h_t > spec.horizon() {
        return Err(domain(format!(
            "maturity {maturity} too close to 0 or the horizon for step {h_t}"
        )));
    }
    let bps = spec.breakpoints();
    if let Some(b) = bps[1..bps.len() - 1]
        .iter()
        .find(|&&b| (maturity - b).abs() < h_t)
    {
        return Err(domain(format!(
            "maturity {maturity} within {h_t} of breakpoint {b}, where dC/dT jumps"
        )));
    }
    let c = |t: f64, k: f64| call_price_mixture(spec, t, k).map(|p| p.price);
    let dc_dt = (c(maturity + h_t, strike)? - c(maturity - h_t, strike)?) / (2.0 * h_t);
    let h_k = h_k_rel * strike;
    let d2c_dk2 = (c(maturity, strike + h_k)? - 2.0 * c(maturity, strike)?
        + c(maturity, strike - h_k)?)
        / (h_k * h_k);
    if !(d2c_dk2 > DUPIRE_GAMMA_FLOOR) {
        return Err(Error::IllConditioned(format!(
            "d2C/dK2 = {d2c_dk2:e} at (T={maturity}, K={strike}) is below the floor {DUPIRE_GAMMA_FLOOR:e}"
        )));
    }
    Ok(2.0 * dc_dt / (strike * strike * d2c_dk2))
}

/// Inclusive evenly spaced axis, written `start:end:count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(start: f64, end: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(domain("axis has no points"));
        }
        if !(start.is_finite() && end.is_finite()) || start > end {
            return Err(domain(format!("invalid axis range {start}:{end}")));
        }
        if count > 1 && start == end {
            return Err(domain(format!(
                "empty axis range {start}:{end} with {count} points"
            )));
        }
        Ok(Self { start, end, count })
    }

    pub fn points(&self) -> Vec<f64> {
        linspace(self.start, self.end, self.count)
    }
}

impl FromStr for GridAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("axis '{s}' is not start:end:count")));
        }
        let num = |p: &str| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("axis '{s}': {e}")))
        };
        let count = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Config(format!("axis '{s}': {e}")))?;
        GridAxis::new(num(parts[0])?, num(parts[1])?, count)
    }
}

impl fmt::Display for GridAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.end, self.count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub t: f64,
    pub x: f64,
    pub sigma2_loc: f64,
}

/// Row-major (time-major) table of surface values.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub points: Vec<SurfacePoint>,
}

impl SurfaceGrid {
    pub const HEADER: &'static str = "t,x,sigma2_loc";

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::HEADER)?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.t, p.x, p.sigma2_loc)?;
        }
        Ok(())
    }
}

pub fn surface_grid(
    surface: &LocalVolSurface,
    t_axis: GridAxis,
    x_axis: GridAxis,
) -> Result<SurfaceGrid> {
    let horizon = surface.spec().horizon();
    if t_axis.start < 0.0 || t_axis.end > horizon + TIME_TOL {
        return Err(domain(format!("time axis {t_axis} leaves [0, {horizon}]")));
    }
    let ts = t_axis.points();
    let xs = x_axis.points();
    let rows = map_indexed(ts.len(), 0, |i| -> Result<Vec<SurfacePoint>> {
        let t = ts[i].min(horizon);
        let slice = surface.slice(t)?;
        Ok(xs
            .iter()
            .map(|&x| SurfacePoint {
                t: ts[i],
                x,
                sigma2_loc: slice.eval(x),
            })
            .collect::<Vec<_>>())
    });
    let mut points = Vec::with_capacity(ts.len() * xs.len());
    for row in rows {
        points.extend(row?);
    }
    Ok(SurfaceGrid { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LocalVolSurface {
        LocalVolSurface::new(MixtureSpec::toy3())
    }

    // Independent transcription of the explicit toy formula on (1, 2]:
    // internal time s = t - 1.
    fn toy_second_regime(s: f64, x: f64) -> f64 {
        let a = 3.0 / (2.0 + 3.0 * s).sqrt()
            * (-(2.0 * x + 2.0 + 3.0 * s).powi(2) / (8.0 * (2.0 + 3.0 * s))).exp();
        let b = 1.0 / (2.0 + s).sqrt() * (-(2.0 * x + 2.0 + s).powi(2) / (8.0 * (2.0 + s))).exp();
        (a + b) / (a / 3.0 + b)
    }

    // Same on (2, 3].
    fn toy_third_regime(s: f64, x: f64) -> f64 {
        let a = 1.0 / (5.0 + s).sqrt() * (-(2.0 * x + 5.0 + s).powi(2) / (8.0 * (5.0 + s))).exp();
        let b = 3.0 / (3.0 + 3.0 * s).sqrt()
            * (-(2.0 * x + 3.0 + 3.0 * s).powi(2) / (8.0 * (3.0 + 3.0 * s))).exp();
        (a + b) / (a + b / 3.0)
    }

    #[test]
    fn first_regime_is_flat() {
        let s = toy();
        assert_eq!(s.sigma_loc_sq(0.5, 7.0).unwrap(), 2.0);
        assert_eq!(s.sigma_loc_sq(0.0, -3.0).unwrap(), 2.0);
        assert_eq!(s.sigma_loc_sq(1.0, 40.0).unwrap(), 2.0);
    }

    #[test]
    fn breakpoint_sides() {
        let s = toy();
        // at t = 2 the left value follows the (1, 2] rates, the step value the (2, 3] rates
        let left = s.sigma_loc_sq(2.0, 0.0).unwrap();
        let right = s.step_slice(2.0).unwrap().eval(0.0);
        assert!((left + right - 4.0).abs() < 1e-12);
        assert_eq!(s.step_slice(1.0).unwrap(), LocalVolSlice::Flat(2.0));
        assert_eq!(s.step_slice(0.3).unwrap(), s.slice(0.3).unwrap());
    }

    #[test]
    fn large_x_limit() {
        let v = toy().sigma_loc_sq(1.5, 50.0).unwrap();
        assert!((v - 3.0).abs() < 1e-6, "{v}");
        assert_eq!(toy().tail_limit(1.5).unwrap(), 3.0);
        assert_eq!(toy().tail_limit(2.5).unwrap(), 1.0);
    }

    #[test]
    fn frozen_high_precision_value() {
        // 40-digit evaluation of the explicit formula at internal time 1, x = 0
        let v = toy().sigma_loc_sq(2.0, 0.0).unwrap();
        assert!((v - 1.752_538_967_240_162).abs() < 1e-13, "{v}");
    }

    #[test]
    fn matches_explicit_toy_formulas() {
        let s = toy();
        for &x in &[-4.0, -1.0, 0.0, 0.3, 2.0, 8.0] {
            for &u in &[0.05, 0.4, 0.9, 1.0] {
                let a = s.sigma_loc_sq(1.0 + u, x).unwrap();
                assert!((a - toy_second_regime(u, x)).abs() < 1e-12);
                if u < 1.0 {
                    let b = s.sigma_loc_sq(2.0 + u, x).unwrap();
                    assert!((b - toy_third_regime(u, x)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn extreme_x_is_finite() {
        let s = toy();
        for &x in &[-1e3, -50.0, 50.0, 1e3] {
            for &t in &[1.2, 1.9, 2.1, 2.9, 3.0] {
                let v = s.sigma_loc_sq(t, x).unwrap();
                assert!(
                    v.is_finite() && (1.0..=3.0).contains(&v),
                    "t={t} x={x} v={v}"
                );
            }
        }
    }

    #[test]
    fn right_limit_at_first_breakpoint() {
        let s = toy();
        for &x in &[-5.0, -1.0, 0.0, 1.0, 5.0] {
            let v = s.sigma_loc_sq(1.0 + 1e-6, x).unwrap();
            assert!((v - 2.0).abs() < 1e-3, "x={x} v={v}");
        }
    }

    #[test]
    fn time_beyond_horizon_is_domain_error() {
        assert!(matches!(
            toy().sigma_loc_sq(3.01, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn call_price_examples() {
        let spec = MixtureSpec::toy3();
        let p = call_price_mixture(&spec, 1.0, 1e-12).unwrap().price;
        assert!((p - 1.0).abs() < 1e-10);
        assert_eq!(call_price_mixture(&spec, 0.0, 2.0).unwrap().price, 0.0);
        assert!(call_price_mixture(&spec, 1e-10, 2.0).unwrap().price < 1e-12);
        // 40-digit reference for the ATM lognormal call with total variance 6
        let atm = call_price_mixture(&spec, 3.0, 1.0).unwrap().price;
        assert!((atm - 0.779_328_638_080_153_2).abs() < 1e-14);
        assert!(call_price_mixture(&spec, 1.0, 0.0).is_err());
        assert!(call_price_mixture(&spec, 1.0, -1.0).is_err());
        assert!(call_price_mixture(&spec, 3.5, 1.0).is_err());
    }

    #[test]
    fn dupire_examples() {
        let spec = MixtureSpec::toy3();
        let s = toy();
        let d = dupire_sigma_sq(&spec, 0.5, 1.0, DupireSteps::default()).unwrap();
        assert!((d - 2.0).abs() < 1e-4, "{d}");
        for &(t, x) in &[(1.5f64, 0.5f64), (2.5, -1.0)] {
            let d = dupire_sigma_sq(&spec, t, x.exp(), DupireSteps::default()).unwrap();
            let a = s.sigma_loc_sq(t, x).unwrap();
            assert!(((d - a) / a).abs() < 1e-3, "t={t} x={x} {d} vs {a}");
        }
    }

    #[test]
    fn dupire_refuses_breakpoints_and_tiny_gamma() {
        let spec = MixtureSpec::toy3();
        let st = DupireSteps::default();
        assert!(matches!(
            dupire_sigma_sq(&spec, 1.0, 1.0, st),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            dupire_sigma_sq(&spec, 2.00005, 1.0, st),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            dupire_sigma_sq(&spec, 0.5, 1e4, st),
            Err(Error::IllConditioned(_))
        ));
    }

    #[test]
    fn axis_parsing() {
        let a: GridAxis = "-2:12:400".parse().unwrap();
        assert_eq!(
            a,
            GridAxis {
                start: -2.0,
                end: 12.0,
                count: 400
            }
        );
        assert!("1:0:10".parse::<GridAxis>().is_err());
        assert!("0:1:0".parse::<GridAxis>().is_err());
        assert!("0:1".parse::<GridAxis>().is_err());
        assert!("1:1:5".parse::<GridAxis>().is_err());
        assert!("1:1:1".parse::<GridAxis>().is_ok());
    }

    #[test]
    fn grid_over_first_regime_is_two() {
        let g = surface_grid(
            &toy(),
            "0:1:11".parse().unwrap(),
            "-5:5:21".parse().unwrap(),
        )
        .unwrap();
        assert_eq!(g.points.len(), 231);
        assert!(g.points.iter().all(|p| p.sigma2_loc == 2.0));
        assert!(
            surface_grid(&toy(), "0:3.5:5".parse().unwrap(), "0:1:2".parse().unwrap()).is_err()
        );
    }

    #[test]
    fn grid_near_horizon() {
        let g = surface_grid(
            &toy(),
            "2.99:2.99:1".parse().unwrap(),
            "0:40:81".parse().unwrap(),
        )
        .unwrap();
        // branch variances 5.99 (rate 1) and 5.97 (rate 3) are nearly equal,
        // so the surface sits close to 2 and only reaches the rate-1 tail
        // limit far out
        assert!(g.points.iter().all(|p| (1.0..=3.0).contains(&p.sigma2_loc)));
        let centre = toy().sigma_loc_sq(2.99, 0.0).unwrap();
        assert!((centre - 2.002_086_118_154_519).abs() < 1e-12);
        let far = toy().sigma_loc_sq(2.99, 400.0).unwrap();
        assert!((far - 1.0).abs() < 1e-6, "{far}");
        assert_eq!(toy().tail_limit(2.99).unwrap(), 1.0);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,sigma2_loc\n"));
        assert_eq!(text.lines().count(), 82);
    }
}
