//! Pathwise lower bounds on local-vol realized variance over space-time
//! corridors, and corridor hit frequencies.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::localvol::{LocalVolSlice, LocalVolSurface};
use crate::mc::McEstimate;
use crate::model::TIME_TOL;
use crate::numeric::{linspace, log_sum_exp, pairwise_sum};
use crate::parallel::map_indexed;
use crate::rng::RngConfig;
use crate::sde::{map_localvol_paths, LocalVolKernel, SimBatch, TimeGrid};

/// `x_lo <= X_t <= x_hi` for all `t` in `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraint {
    pub start: f64,
    pub end: f64,
    #[serde(default = "neg_inf")]
    pub x_lo: f64,
    #[serde(default = "pos_inf")]
    pub x_hi: f64,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

impl Constraint {
    pub fn covers(&self, t: f64) -> bool {
        t >= self.start - TIME_TOL && t <= self.end + TIME_TOL
    }

    pub fn admits(&self, x: f64) -> bool {
        x >= self.x_lo && x <= self.x_hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorridorSpec {
    constraints: Vec<Constraint>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorridorFile {
    #[serde(default)]
    constraint: Vec<Constraint>,
}

impl CorridorSpec {
    /// Constraints are sorted by start time; their time intervals may touch
    /// but not overlap.
    pub fn new(mut constraints: Vec<Constraint>) -> Result<Self> {
        for c in &constraints {
            if !(c.start < c.end) || !c.start.is_finite() || !c.end.is_finite() || c.start < 0.0 {
                return Err(Error::Config(format!(
                    "constraint time interval [{}, {}] is invalid",
                    c.start, c.end
                )));
            }
            if c.x_lo.is_nan() || c.x_hi.is_nan() || c.x_lo > c.x_hi {
                return Err(Error::Config(format!(
                    "constraint x interval [{}, {}] is invalid",
                    c.x_lo, c.x_hi
                )));
            }
        }
        constraints.sort_by(|a, b| a.start.total_cmp(&b.start));
        if constraints.windows(2).any(|w| w[1].start < w[0].end) {
            return Err(Error::Config("corridor time intervals overlap".into()));
        }
        Ok(Self { constraints })
    }

    pub fn unconstrained() -> Self {
        Self {
            constraints: Vec::new(),
        }
    }

    /// Large on `[1, 1.9]` (`X in [8, 10]`), small on `[2, 3]` (`|X| <= 1`).
    pub fn paper_corridor() -> Self {
        Self::new(vec![
            Constraint {
                start: 1.0,
                end: 1.9,
                x_lo: 8.0,
                x_hi: 10.0,
            },
            Constraint {
                start: 2.0,
                end: 3.0,
                x_lo: -1.0,
                x_hi: 1.0,
            },
        ])
        .unwrap()
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper_corridor" => Ok(Self::paper_corridor()),
            "none" => Ok(Self::unconstrained()),
            other => Err(Error::Config(format!("unknown corridor preset '{other}'"))),
        }
    }

    /// ```toml
    /// [[constraint]]
    /// start = 1.0
    /// end = 1.9
    /// x_lo = 8.0      # omitted bounds are infinite
    /// x_hi = 10.0
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let f: CorridorFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("corridor file: {e}")))?;
        Self::new(f.constraint)
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    fn at(&self, t: f64) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.start < t && t < c.end)
    }

    /// Every grid time inside every constraint window admits the path value.
    pub fn admits_path(&self, times: &[f64], xs: &[f64]) -> bool {
        self.constraints.iter().all(|c| {
            times
                .iter()
                .zip(xs)
                .all(|(&t, &x)| !c.covers(t) || c.admits(x))
        })
    }
}

impl fmt::Display for CorridorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.constraints.is_empty() {
            return write!(f, "none");
        }
        let parts: Vec<String> = self
            .constraints
            .iter()
            .map(|c| format!("[{},{}]x[{},{}]", c.start, c.end, c.x_lo, c.x_hi))
            .collect();
        write!(f, "{}", parts.join(";"))
    }
}

/// Points per unit time / unit log-price used by the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundResolution {
    pub t_per_unit: usize,
    pub x_per_unit: usize,
}

impl BoundResolution {
    pub const FLOOR: usize = 1000;

    pub fn new(t_per_unit: usize, x_per_unit: usize) -> Result<Self> {
        if t_per_unit < Self::FLOOR || x_per_unit < Self::FLOOR {
            return Err(Error::Config(format!(
                "bound resolution {t_per_unit}x{x_per_unit} below the floor of {} points per unit",
                Self::FLOOR
            )));
        }
        Ok(Self {
            t_per_unit,
            x_per_unit,
        })
    }

    pub fn doubled(&self) -> Self {
        Self {
            t_per_unit: 2 * self.t_per_unit,
            x_per_unit: 2 * self.x_per_unit,
        }
    }
}

impl Default for BoundResolution {
    fn default() -> Self {
        Self {
            t_per_unit: Self::FLOOR,
            x_per_unit: Self::FLOOR,
        }
    }
}

/// Finite search bracket standing in for the real line.
pub const X_BRACKET: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentContribution {
    pub start: f64,
    pub end: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub corridor: String,
    pub resolution: BoundResolution,
    pub value: f64,
    pub segments: Vec<SegmentContribution>,
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "corridor={}", self.corridor)?;
        writeln!(
            f,
            "t_resolution={} x_resolution={}",
            self.resolution.t_per_unit, self.resolution.x_per_unit
        )?;
        writeln!(f, "bound={}", self.value)?;
        for s in &self.segments {
            writeln!(
                f,
                "segment t=[{},{}] x=[{},{}] contribution={}",
                s.start, s.end, s.x_lo, s.x_hi, s.contribution
            )?;
        }
        Ok(())
    }
}

fn infimum(
    surface: &LocalVolSurface,
    slice: &LocalVolSlice,
    t: f64,
    lo: f64,
    hi: f64,
    per_unit: usize,
) -> Result<f64> {
    if let LocalVolSlice::Flat(v) = slice {
        return Ok(*v);
    }
    let mut best = f64::INFINITY;
    if lo.is_infinite() || hi.is_infinite() {
        best = surface.tail_limit(t)?;
    }
    let a = if lo.is_infinite() {
        (-X_BRACKET).min(hi - 1.0)
    } else {
        lo
    };
    let b = if hi.is_infinite() {
        X_BRACKET.max(lo + 1.0)
    } else {
        hi
    };
    let n = (((b - a) * per_unit as f64).ceil() as usize).max(1) + 1;
    for x in linspace(a, b, n) {
        best = best.min(slice.eval(x));
    }
    Ok(best)
}

/// `int_0^T inf { sigma_loc^2(t, x) : x admitted at t } dt`.
///
/// Between consecutive knots (breakpoints and constraint endpoints) the
/// integrand is continuous; each piece uses the midpoint rule, and the
/// infimum at each node is a dense grid search (tails included for
/// unbounded intervals).
pub fn corridor_lower_bound(
    surface: &LocalVolSurface,
    corridor: &CorridorSpec,
    resolution: BoundResolution,
) -> Result<BoundReport> {
    let BoundResolution {
        t_per_unit,
        x_per_unit,
    } = BoundResolution::new(resolution.t_per_unit, resolution.x_per_unit)?;
    let horizon = surface.spec().horizon();
    if let Some(c) = corridor
        .constraints()
        .iter()
        .find(|c| c.end > horizon + TIME_TOL)
    {
        return Err(Error::Config(format!(
            "constraint [{}, {}] extends past the horizon {horizon}",
            c.start, c.end
        )));
    }
    let mut knots: Vec<f64> = surface.spec().breakpoints().to_vec();
    for c in corridor.constraints() {
        knots.push(c.start);
        knots.push(c.end);
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);

    let mut segments = Vec::new();
    for w in knots.windows(2) {
        let (s, e) = (w[0], w[1]);
        let mid = 0.5 * (s + e);
        let (lo, hi) = corridor
            .at(mid)
            .map(|c| (c.x_lo, c.x_hi))
            .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        let cells = (((e - s) * t_per_unit as f64).ceil() as usize).max(1);
        let dt = (e - s) / cells as f64;
        let values = map_indexed(cells, 0, |j| {
            let t = s + (j as f64 + 0.5) * dt;
            let slice = surface.slice(t)?;
            infimum(surface, &slice, t, lo, hi, x_per_unit)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        segments.push(SegmentContribution {
            start: s,
            end: e,
            x_lo: lo,
            x_hi: hi,
            contribution: pairwise_sum(&values) * dt,
        });
    }
    let contributions: Vec<f64> = segments.iter().map(|s| s.contribution).collect();
    Ok(BoundReport {
        corridor: corridor.to_string(),
        resolution: BoundResolution {
            t_per_unit,
            x_per_unit,
        },
        value: pairwise_sum(&contributions),
        segments,
    })
}

/// Corridor hits among simulated paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorHits {
    pub n: usize,
    pub hits: usize,
    /// Hit frequency with binomial standard error.
    pub estimate: McEstimate,
    /// One-sided 99% upper confidence bound on the hit probability.
    pub upper_99: f64,
    /// `(path_index, realized variance)` for every hitting path.
    pub hit_paths: Vec<(usize, f64)>,
}

impl CorridorHits {
    fn new(n: usize, hit_paths: Vec<(usize, f64)>) -> Self {
        let hits = hit_paths.len();
        let p = hits as f64 / n as f64;
        let stderr = (p * (1.0 - p) / n as f64).sqrt();
        // exact binomial bound for zero hits, normal approximation otherwise
        let upper_99 = if hits == 0 {
            1.0 - 0.01f64.powf(1.0 / n as f64)
        } else {
            (p + 2.326 * stderr).min(1.0)
        };
        Self {
            n,
            hits,
            estimate: McEstimate::from_moments(p, stderr, n),
            upper_99,
            hit_paths,
        }
    }

    pub fn min_hit_variance(&self) -> Option<f64> {
        self.hit_paths.iter().map(|h| h.1).reduce(f64::min)
    }
}

fn check_grid_covers(grid: &TimeGrid, corridor: &CorridorSpec) -> Result<()> {
    for c in corridor.constraints() {
        for t in [c.start, c.end] {
            if !grid.contains(t) {
                return Err(Error::Config(format!(
                    "grid does not contain corridor endpoint {t}"
                )));
            }
        }
    }
    Ok(())
}

/// Fraction of stored paths satisfying every constraint at every grid time in
/// its window.
pub fn corridor_hit_probability(batch: &SimBatch, corridor: &CorridorSpec) -> Result<CorridorHits> {
    if batch.paths.is_none() {
        return Err(Error::Config(
            "batch was simulated without stored paths".into(),
        ));
    }
    check_grid_covers(&batch.grid, corridor)?;
    let times = batch.grid.times();
    let hit_paths = (0..batch.n_paths())
        .filter(|&i| corridor.admits_path(times, batch.path(i).unwrap()))
        .map(|i| (i, batch.realized_variance[i]))
        .collect();
    Ok(CorridorHits::new(batch.n_paths(), hit_paths))
}

/// Same as [`corridor_hit_probability`] for a batch too large to store:
/// paths are checked as they are generated.
pub fn count_corridor_hits(
    kernel: &LocalVolKernel,
    corridor: &CorridorSpec,
    rng: RngConfig,
    n_paths: usize,
    workers: usize,
) -> Result<CorridorHits> {
    check_grid_covers(kernel.grid(), corridor)?;
    let times = kernel.grid().times();
    let hit_paths = map_localvol_paths(kernel, rng, n_paths, workers, |i, xs, v| {
        corridor.admits_path(times, xs).then_some((i, v))
    })
    .into_iter()
    .flatten()
    .collect();
    Ok(CorridorHits::new(n_paths, hit_paths))
}

/// Importance-sampled corridor probability.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedHits {
    pub n: usize,
    pub hits: usize,
    /// `ln` of the likelihood-ratio estimate of the hit probability.
    pub log_probability: f64,
    /// Relative standard error of that estimate.
    pub rel_stderr: f64,
    pub hit_variances: Vec<f64>,
}

impl GuidedHits {
    pub fn min_hit_variance(&self) -> Option<f64> {
        self.hit_variances.iter().copied().reduce(f64::min)
    }
}

/// Piecewise-linear guide: constraint midpoints inside windows, linear
/// interpolation between windows, starting from `X_0 = 0`.
fn guide_path(corridor: &CorridorSpec, times: &[f64]) -> Vec<f64> {
    let mut anchors = vec![(0.0, 0.0)];
    let mut last = 0.0;
    for c in corridor.constraints() {
        let target = match (c.x_lo.is_finite(), c.x_hi.is_finite()) {
            (true, true) => 0.5 * (c.x_lo + c.x_hi),
            (true, false) => c.x_lo + 1.0,
            (false, true) => c.x_hi - 1.0,
            (false, false) => last,
        };
        anchors.push((c.start, target));
        anchors.push((c.end, target));
        last = target;
    }
    times
        .iter()
        .map(|&t| {
            let j = anchors.partition_point(|a| a.0 <= t);
            if j == anchors.len() {
                return anchors[j - 1].1;
            }
            let (t0, x0) = anchors[j - 1];
            let (t1, x1) = anchors[j];
            x0 + (x1 - x0) * (t - t0) / (t1 - t0)
        })
        .collect()
}

/// Substream reserved for guided sampling.
const STREAM_GUIDE: u64 = 2;

/// Simulates the local-vol Euler chain under a drift-shifted measure that
/// pulls paths toward the corridor, weighting each path by its exact
/// likelihood ratio. The shifted chain is equivalent to the original one, so
/// hits under the shift certify a positive hit probability for the original
/// chain, and the weighted hit frequency estimates it.
///
/// `pull` in `(0, 1]` is the fraction of the gap to the guide closed per step
/// in expectation.
pub fn guided_corridor_probability(
    kernel: &LocalVolKernel,
    corridor: &CorridorSpec,
    rng: RngConfig,
    n_paths: usize,
    workers: usize,
    pull: f64,
) -> Result<GuidedHits> {
    if !(pull > 0.0 && pull <= 1.0) {
        return Err(Error::Config(format!("pull must be in (0, 1], got {pull}")));
    }
    check_grid_covers(kernel.grid(), corridor)?;
    let times = kernel.grid().times();
    let guide = guide_path(corridor, times);
    let rows = map_indexed(n_paths, workers, |i| {
        let mut r = rng.stream(i as u64, STREAM_GUIDE);
        let mut xs = Vec::with_capacity(times.len());
        let (mut x, mut v, mut log_w) = (0.0f64, 0.0f64, 0.0f64);
        xs.push(x);
        for (k, w) in times.windows(2).enumerate() {
            let dt = w[1] - w[0];
            let s2 = kernel.sigma_sq(k, x);
            let sd = s2.sqrt();
            let shift = (pull * (guide[k + 1] - x) + 0.5 * s2 * dt) / sd;
            let z: f64 = r.sample(StandardNormal);
            let db = dt.sqrt() * z + shift;
            log_w += (shift * shift - 2.0 * shift * db) / (2.0 * dt);
            x += sd * db - 0.5 * s2 * dt;
            v += s2 * dt;
            xs.push(x);
        }
        corridor.admits_path(times, &xs).then_some((log_w, v))
    });
    let hits: Vec<(f64, f64)> = rows.into_iter().flatten().collect();
    let n = n_paths as f64;
    let (log_probability, rel_stderr) = if hits.is_empty() {
        (f64::NEG_INFINITY, f64::NAN)
    } else {
        let lw: Vec<f64> = hits.iter().map(|h| h.0).collect();
        let lw2: Vec<f64> = lw.iter().map(|w| 2.0 * w).collect();
        let log_mean = log_sum_exp(&lw) - n.ln();
        let log_second = log_sum_exp(&lw2) - n.ln();
        // Var(mean) / mean^2 = (E[w^2] / E[w]^2 - 1) / n
        let ratio = (log_second - 2.0 * log_mean).exp();
        (log_mean, ((ratio - 1.0).max(0.0) / n).sqrt())
    };
    Ok(GuidedHits {
        n: n_paths,
        hits: hits.len(),
        log_probability,
        rel_stderr,
        hit_variances: hits.iter().map(|h| h.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MixtureSpec;
    use crate::sde::{build_grid, simulate_localvol, SimOptions};

    fn toy() -> LocalVolSurface {
        LocalVolSurface::new(MixtureSpec::toy3())
    }

    #[test]
    fn corridor_validation() {
        let c = |s, e, lo, hi| Constraint {
            start: s,
            end: e,
            x_lo: lo,
            x_hi: hi,
        };
        assert!(CorridorSpec::new(vec![c(1.0, 1.0, 0.0, 1.0)]).is_err());
        assert!(CorridorSpec::new(vec![c(0.0, 1.0, 2.0, 1.0)]).is_err());
        assert!(CorridorSpec::new(vec![c(0.0, 1.5, 0.0, 1.0), c(1.0, 2.0, 0.0, 1.0)]).is_err());
        assert!(CorridorSpec::new(vec![c(1.0, 2.0, 0.0, 1.0), c(0.0, 1.0, 0.0, 1.0)]).is_ok());
        assert!(CorridorSpec::preset("nope").is_err());
    }

    #[test]
    fn corridor_toml() {
        let text = "[[constraint]]\nstart = 1.0\nend = 1.9\nx_lo = 8.0\nx_hi = 10.0\n\n[[constraint]]\nstart = 2.0\nend = 3.0\nx_lo = -1.0\nx_hi = 1.0\n";
        assert_eq!(
            CorridorSpec::from_toml_str(text).unwrap(),
            CorridorSpec::paper_corridor()
        );
        let half =
            CorridorSpec::from_toml_str("[[constraint]]\nstart = 0.5\nend = 1.0\nx_lo = 0.0\n")
                .unwrap();
        assert_eq!(half.constraints()[0].x_hi, f64::INFINITY);
    }

    #[test]
    fn resolution_floor_is_enforced() {
        let err = corridor_lower_bound(
            &toy(),
            &CorridorSpec::paper_corridor(),
            BoundResolution {
                t_per_unit: 100,
                x_per_unit: 1000,
            },
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn empty_corridor_bound_is_at_least_four() {
        let r = corridor_lower_bound(
            &toy(),
            &CorridorSpec::unconstrained(),
            BoundResolution::default(),
        )
        .unwrap();
        assert!(r.value >= 4.0, "{}", r.value);
        assert_eq!(r.segments.len(), 3);
        assert_eq!(r.segments[0].contribution, 2.0);
    }

    #[test]
    fn admits_path_checks_window_only() {
        let c = CorridorSpec::paper_corridor();
        let times = [0.0, 1.0, 1.5, 1.9, 1.95, 2.0, 3.0];
        assert!(c.admits_path(&times, &[0.0, 9.0, 9.0, 8.0, 4.0, 0.5, -1.0]));
        assert!(!c.admits_path(&times, &[0.0, 9.0, 9.0, 7.9, 4.0, 0.5, -1.0]));
        assert!(!c.admits_path(&times, &[0.0, 9.0, 9.0, 8.0, 4.0, 1.5, -1.0]));
    }

    #[test]
    fn guide_follows_windows() {
        let g = guide_path(
            &CorridorSpec::paper_corridor(),
            &[0.0, 0.5, 1.0, 1.5, 1.95, 2.0, 3.0],
        );
        assert_eq!(g, vec![0.0, 4.5, 9.0, 9.0, 4.5, 0.0, 0.0]);
    }

    #[test]
    fn hit_probability_requires_stored_paths_and_endpoints() {
        let spec = MixtureSpec::toy3();
        let grid = build_grid(&spec, 10).unwrap();
        let b = simulate_localvol(
            &toy(),
            &grid,
            RngConfig::new(1),
            100,
            &SimOptions::default(),
        )
        .unwrap();
        assert!(corridor_hit_probability(&b, &CorridorSpec::unconstrained()).is_err());
        let b = simulate_localvol(
            &toy(),
            &grid,
            RngConfig::new(1),
            100,
            &SimOptions::default().store_paths(true),
        )
        .unwrap();
        let all = corridor_hit_probability(&b, &CorridorSpec::unconstrained()).unwrap();
        assert_eq!(all.estimate.mean, 1.0);
        let odd = CorridorSpec::new(vec![Constraint {
            start: 0.0,
            end: 0.05,
            x_lo: 8.0,
            x_hi: 10.0,
        }])
        .unwrap();
        assert!(matches!(
            corridor_hit_probability(&b, &odd),
            Err(Error::Config(_))
        ));
    }
}
