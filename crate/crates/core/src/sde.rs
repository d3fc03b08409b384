//! Time grids and Euler–Maruyama simulation of the projected models.
//!
//! Both schemes use left-endpoint coefficients and accumulate realized
//! variance with the same left-endpoint rule,
//! `V = sum_k sigma^2(t_k, X_k) (t_{k+1} - t_k)`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dlocalvol::{DlocSlice, DoubleLocalSurface};
use crate::error::{Error, Result};
use crate::localvol::{LocalVolSlice, LocalVolSurface};
use crate::model::{MixtureSpec, TIME_TOL};
use crate::parallel::map_indexed;
use crate::rng::{RngConfig, STREAM_B, STREAM_Z};

/// Increasing simulation times starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::Config("grid must start at 0 and have a step".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || !times.iter().all(|t| t.is_finite()) {
            return Err(Error::Config(
                "grid times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times })
    }

    /// Each breakpoint interval `[b_j, b_{j+1}]` is split into
    /// `ceil((b_{j+1} - b_j) * steps_per_unit)` equal steps, so every
    /// breakpoint is a grid point and no step exceeds `1 / steps_per_unit`.
    pub fn for_model(spec: &MixtureSpec, steps_per_unit: usize) -> Self {
        let spu = steps_per_unit.max(1) as f64;
        let bps = spec.breakpoints();
        let mut times = vec![0.0];
        for w in bps.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let m = (((hi - lo) * spu) - 1e-9).ceil().max(1.0) as usize;
            for k in 1..m {
                times.push(lo + (hi - lo) * (k as f64 / m as f64));
            }
            times.push(hi);
        }
        Self { times }
    }

    /// Adds `extra` times (within the horizon) not already on the grid.
    pub fn with_times(&self, extra: &[f64]) -> Result<Self> {
        let mut times = self.times.clone();
        for &t in extra {
            if !(0.0..=self.horizon() + TIME_TOL).contains(&t) {
                return Err(Error::Config(format!(
                    "time {t} outside the grid horizon {}",
                    self.horizon()
                )));
            }
            if !self.contains(t) {
                times.push(t);
            }
        }
        times.sort_by(f64::total_cmp);
        Self::from_times(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn max_step(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&s| s < t - TIME_TOL);
        (k < self.times.len() && (self.times[k] - t).abs() <= TIME_TOL).then_some(k)
    }

    pub fn contains(&self, t: f64) -> bool {
        self.index_of(t).is_some()
    }
}

/// `TimeGrid::for_model` with the `steps_per_unit >= 1` precondition checked.
pub fn build_grid(spec: &MixtureSpec, steps_per_unit: usize) -> Result<TimeGrid> {
    if steps_per_unit == 0 {
        return Err(Error::Config("steps_per_unit must be at least 1".into()));
    }
    Ok(TimeGrid::for_model(spec, steps_per_unit))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimOptions {
    /// Worker threads; 0 selects the global pool. Never affects results.
    pub workers: usize,
    /// Grid times at which state values are kept for every path.
    pub observe: Vec<f64>,
    /// Keep every path at every grid time (memory: paths x grid points).
    pub store_paths: bool,
}

impl SimOptions {
    pub fn workers(workers: usize) -> Self {
        Self {
            workers,
            ..Self::default()
        }
    }

    pub fn observe(mut self, times: &[f64]) -> Self {
        self.observe = times.to_vec();
        self
    }

    pub fn store_paths(mut self, yes: bool) -> Self {
        self.store_paths = yes;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelKind {
    LocalVol,
    DoubleLocalVol,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchMeta {
    pub kind: ModelKind,
    pub seed: u64,
    pub model: String,
    pub epsilon: Option<f64>,
    pub grid_points: usize,
    pub max_step: f64,
}

/// Per-path outputs of a simulation run, in path-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimBatch {
    pub meta: BatchMeta,
    pub terminal_x: Vec<f64>,
    pub realized_variance: Vec<f64>,
    /// Terminal regularized variance state (two-factor model only).
    pub terminal_a: Option<Vec<f64>>,
    pub observation_times: Vec<f64>,
    /// Row-major `n_paths x observation_times.len()` log-prices.
    pub observed_x: Vec<f64>,
    /// Same layout for the variance state (two-factor model only).
    pub observed_a: Option<Vec<f64>>,
    pub grid: TimeGrid,
    /// Row-major `n_paths x grid.len()` log-prices when requested.
    pub paths: Option<Vec<f64>>,
}

impl SimBatch {
    pub fn n_paths(&self) -> usize {
        self.terminal_x.len()
    }

    fn observation_index(&self, t: f64) -> Result<usize> {
        self.observation_times
            .iter()
            .position(|&s| (s - t).abs() <= TIME_TOL)
            .ok_or_else(|| Error::Config(format!("time {t} was not observed")))
    }

    fn column(data: &[f64], width: usize, k: usize) -> Vec<f64> {
        data.chunks_exact(width).map(|row| row[k]).collect()
    }

    /// `X_t` across paths, from observations or stored paths.
    pub fn x_at(&self, t: f64) -> Result<Vec<f64>> {
        if let Ok(k) = self.observation_index(t) {
            return Ok(Self::column(
                &self.observed_x,
                self.observation_times.len(),
                k,
            ));
        }
        match (&self.paths, self.grid.index_of(t)) {
            (Some(p), Some(k)) => Ok(Self::column(p, self.grid.len(), k)),
            _ => Err(Error::Config(format!("time {t} was not observed"))),
        }
    }

    pub fn a_at(&self, t: f64) -> Result<Vec<f64>> {
        let k = self.observation_index(t)?;
        let a = self
            .observed_a
            .as_ref()
            .ok_or_else(|| Error::Config("batch has no variance state".into()))?;
        Ok(Self::column(a, self.observation_times.len(), k))
    }

    pub fn path(&self, i: usize) -> Option<&[f64]> {
        let m = self.grid.len();
        self.paths.as_ref().map(|p| &p[i * m..(i + 1) * m])
    }

    /// One record per path: `path_index,X_T,V_T[,a_T]`.
    pub fn write_records<W: Write>(&self, mut out: W) -> Result<()> {
        match &self.terminal_a {
            None => {
                writeln!(out, "path_index,X_T,V_T")?;
                for (i, (x, v)) in self
                    .terminal_x
                    .iter()
                    .zip(&self.realized_variance)
                    .enumerate()
                {
                    writeln!(out, "{i},{x},{v}")?;
                }
            }
            Some(a) => {
                writeln!(out, "path_index,X_T,V_T,a_T")?;
                let rows = self.terminal_x.iter().zip(&self.realized_variance).zip(a);
                for (i, ((x, v), a)) in rows.enumerate() {
                    writeln!(out, "{i},{x},{v},{a}")?;
                }
            }
        }
        Ok(())
    }
}

/// Precomputed local-variance slices for every step of a grid.
#[derive(Debug, Clone)]
pub struct LocalVolKernel {
    grid: TimeGrid,
    slices: Vec<LocalVolSlice>,
}

impl LocalVolKernel {
    pub fn new(surface: &LocalVolSurface, grid: &TimeGrid) -> Result<Self> {
        check_grid(surface.spec(), grid)?;
        let times = grid.times();
        let slices = times[..times.len() - 1]
            .iter()
            .map(|&t| surface.step_slice(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: grid.clone(),
            slices,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Local variance at grid step `k` (time `t_k`).
    #[inline]
    pub fn sigma_sq(&self, k: usize, x: f64) -> f64 {
        self.slices[k].eval(x)
    }

    /// Runs one Euler path, writing `X_{t_k}` into `xs`; returns realized
    /// variance.
    pub fn run_path(&self, rng: RngConfig, path_index: usize, xs: &mut Vec<f64>) -> f64 {
        let mut r = rng.stream(path_index as u64, STREAM_B);
        let times = self.grid.times();
        xs.clear();
        let mut x = 0.0;
        let mut v = 0.0;
        xs.push(x);
        for (k, w) in times.windows(2).enumerate() {
            let dt = w[1] - w[0];
            let s2 = self.slices[k].eval(x);
            let z: f64 = r.sample(StandardNormal);
            x += (s2 * dt).sqrt() * z - 0.5 * s2 * dt;
            v += s2 * dt;
            xs.push(x);
        }
        v
    }
}

fn check_grid(spec: &MixtureSpec, grid: &TimeGrid) -> Result<()> {
    if (grid.horizon() - spec.horizon()).abs() > TIME_TOL {
        return Err(Error::Config(format!(
            "grid horizon {} differs from model horizon {}",
            grid.horizon(),
            spec.horizon()
        )));
    }
    if let Some(b) = spec.breakpoints().iter().find(|&&b| !grid.contains(b)) {
        return Err(Error::Config(format!(
            "grid does not contain breakpoint {b}"
        )));
    }
    Ok(())
}

fn observation_indices(grid: &TimeGrid, observe: &[f64]) -> Result<Vec<usize>> {
    observe
        .iter()
        .map(|&t| {
            grid.index_of(t)
                .ok_or_else(|| Error::Config(format!("observation time {t} is not a grid time")))
        })
        .collect()
}

/// Applies `f(path_index, log_prices, realized_variance)` to every simulated
/// local-vol path without storing the batch.
pub fn map_localvol_paths<T, F>(
    kernel: &LocalVolKernel,
    rng: RngConfig,
    n_paths: usize,
    workers: usize,
    f: F,
) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &[f64], f64) -> T + Sync + Send,
{
    map_indexed(n_paths, workers, |i| {
        let mut xs = Vec::with_capacity(kernel.grid.len());
        let v = kernel.run_path(rng, i, &mut xs);
        f(i, &xs, v)
    })
}

struct PathOut {
    x_t: f64,
    v: f64,
    a_t: f64,
    obs_x: Vec<f64>,
    obs_a: Vec<f64>,
    full: Option<Vec<f64>>,
}

fn assemble(
    meta: BatchMeta,
    grid: &TimeGrid,
    opts: &SimOptions,
    two_factor: bool,
    rows: Vec<PathOut>,
) -> SimBatch {
    let n = rows.len();
    let mut b = SimBatch {
        meta,
        terminal_x: Vec::with_capacity(n),
        realized_variance: Vec::with_capacity(n),
        terminal_a: two_factor.then(|| Vec::with_capacity(n)),
        observation_times: opts.observe.clone(),
        observed_x: Vec::with_capacity(n * opts.observe.len()),
        observed_a: two_factor.then(|| Vec::with_capacity(n * opts.observe.len())),
        grid: grid.clone(),
        paths: opts.store_paths.then(|| Vec::with_capacity(n * grid.len())),
    };
    for r in rows {
        b.terminal_x.push(r.x_t);
        b.realized_variance.push(r.v);
        b.observed_x.extend_from_slice(&r.obs_x);
        if let Some(a) = b.terminal_a.as_mut() {
            a.push(r.a_t);
        }
        if let Some(a) = b.observed_a.as_mut() {
            a.extend_from_slice(&r.obs_a);
        }
        if let (Some(p), Some(full)) = (b.paths.as_mut(), r.full) {
            p.extend_from_slice(&full);
        }
    }
    b
}

/// Euler–Maruyama for `dX = sigma_loc dB - sigma_loc^2 / 2 dt`, `X_0 = 0`.
pub fn simulate_localvol(
    surface: &LocalVolSurface,
    grid: &TimeGrid,
    rng: RngConfig,
    n_paths: usize,
    opts: &SimOptions,
) -> Result<SimBatch> {
    let kernel = LocalVolKernel::new(surface, grid)?;
    let obs = observation_indices(grid, &opts.observe)?;
    let rows = map_localvol_paths(&kernel, rng, n_paths, opts.workers, |_, xs, v| PathOut {
        x_t: *xs.last().unwrap(),
        v,
        a_t: f64::NAN,
        obs_x: obs.iter().map(|&k| xs[k]).collect(),
        obs_a: Vec::new(),
        full: opts.store_paths.then(|| xs.to_vec()),
    });
    let meta = BatchMeta {
        kind: ModelKind::LocalVol,
        seed: rng.seed,
        model: surface.spec().fingerprint(),
        epsilon: None,
        grid_points: grid.len(),
        max_step: grid.max_step(),
    };
    Ok(assemble(meta, grid, opts, false, rows))
}

/// Joint Euler step for
/// `dX = sigma_dloc dB - sigma_dloc^2 / 2 dt`, `da = sigma_dloc^2 dt + sqrt(eps) dZ`
/// from `X_0 = a_0 = 0`, with `B` and `Z` on separate substreams.
pub fn simulate_double_localvol(
    surface: &DoubleLocalSurface,
    grid: &TimeGrid,
    rng: RngConfig,
    n_paths: usize,
    opts: &SimOptions,
) -> Result<SimBatch> {
    check_grid(surface.spec(), grid)?;
    let times = grid.times();
    let slices: Vec<DlocSlice> = times[..times.len() - 1]
        .iter()
        .map(|&t| surface.step_slice(t))
        .collect::<Result<_>>()?;
    let obs = observation_indices(grid, &opts.observe)?;
    let eps = surface.epsilon();
    let rows = map_indexed(n_paths, opts.workers, |i| {
        let mut rb = rng.stream(i as u64, STREAM_B);
        let mut rz = rng.stream(i as u64, STREAM_Z);
        let (mut x, mut a, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut obs_x = Vec::with_capacity(obs.len());
        let mut obs_a = Vec::with_capacity(obs.len());
        let mut full = opts.store_paths.then(|| Vec::with_capacity(times.len()));
        let mut record = |k: usize, x: f64, a: f64, full: &mut Option<Vec<f64>>| {
            for (j, &ko) in obs.iter().enumerate() {
                if ko == k {
                    debug_assert_eq!(obs_x.len(), j);
                    obs_x.push(x);
                    obs_a.push(a);
                }
            }
            if let Some(f) = full.as_mut() {
                f.push(x);
            }
        };
        record(0, x, a, &mut full);
        for (k, w) in times.windows(2).enumerate() {
            let dt = w[1] - w[0];
            let s2 = slices[k].eval(x, a);
            let zb: f64 = rb.sample(StandardNormal);
            let zz: f64 = rz.sample(StandardNormal);
            x += (s2 * dt).sqrt() * zb - 0.5 * s2 * dt;
            a += s2 * dt + (eps * dt).sqrt() * zz;
            v += s2 * dt;
            record(k + 1, x, a, &mut full);
        }
        PathOut {
            x_t: x,
            v,
            a_t: a,
            obs_x,
            obs_a,
            full,
        }
    });
    let meta = BatchMeta {
        kind: ModelKind::DoubleLocalVol,
        seed: rng.seed,
        model: surface.spec().fingerprint(),
        epsilon: Some(eps),
        grid_points: grid.len(),
        max_step: grid.max_step(),
    };
    Ok(assemble(meta, grid, opts, true, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let toy = MixtureSpec::toy3();
        let g = build_grid(&toy, 100).unwrap();
        assert_eq!(g.len(), 301);
        assert!(g.times().contains(&1.0) && g.times().contains(&2.0));
        let g7 = build_grid(&toy, 7).unwrap();
        assert!(g7.times().contains(&1.0) && g7.times().contains(&2.0));
        assert_eq!(g7.len(), 22);
        assert!(g7.max_step() <= 1.0 / 7.0 + 1e-15);
        assert_eq!(build_grid(&toy, 1).unwrap().times(), &[0.0, 1.0, 2.0, 3.0]);
        assert!(build_grid(&toy, 0).is_err());
    }

    #[test]
    fn grid_with_irregular_breakpoints() {
        let bp = vec![0.0, 0.3, 1.25];
        let r = crate::model::PiecewiseConstRate::new(bp, vec![1.0, 2.0]).unwrap();
        let spec = MixtureSpec::new(vec![crate::model::Component {
            weight: 1.0,
            rate: r,
        }])
        .unwrap();
        let g = build_grid(&spec, 10).unwrap();
        assert!(g.contains(0.3) && g.horizon() == 1.25);
        assert!(g.max_step() <= 0.1 + 1e-12);
        assert_eq!(g.len(), 14);
    }

    #[test]
    fn with_times_inserts_and_dedupes() {
        let toy = MixtureSpec::toy3();
        let g = build_grid(&toy, 4)
            .unwrap()
            .with_times(&[1.9, 2.0, 0.5])
            .unwrap();
        assert!(g.contains(1.9));
        assert_eq!(g.len(), 14);
        assert!(build_grid(&toy, 4).unwrap().with_times(&[3.5]).is_err());
    }

    #[test]
    fn localvol_paths_stay_in_variance_bounds() {
        let toy = MixtureSpec::toy3();
        let surface = LocalVolSurface::new(toy.clone());
        let grid = build_grid(&toy, 50).unwrap();
        let b = simulate_localvol(
            &surface,
            &grid,
            RngConfig::new(5),
            2000,
            &SimOptions::workers(0),
        )
        .unwrap();
        assert!(b
            .realized_variance
            .iter()
            .all(|&v| (3.0..=9.0).contains(&v)));
        assert_eq!(b.meta.kind, ModelKind::LocalVol);
    }

    #[test]
    fn observations_and_full_paths_agree() {
        let toy = MixtureSpec::toy3();
        let surface = LocalVolSurface::new(toy.clone());
        let grid = build_grid(&toy, 20).unwrap();
        let opts = SimOptions::workers(2)
            .observe(&[1.0, 3.0])
            .store_paths(true);
        let b = simulate_localvol(&surface, &grid, RngConfig::new(9), 50, &opts).unwrap();
        let k = grid.index_of(1.0).unwrap();
        let x1 = b.x_at(1.0).unwrap();
        for (i, (&x, &xt)) in x1.iter().zip(&b.terminal_x).enumerate() {
            let p = b.path(i).unwrap();
            assert_eq!(p[k], x);
            assert_eq!(*p.last().unwrap(), xt);
        }
        assert_eq!(b.x_at(3.0).unwrap(), b.terminal_x);
        assert!(b.x_at(0.05).is_ok());
        assert!(simulate_localvol(
            &surface,
            &grid,
            RngConfig::new(9),
            5,
            &SimOptions::default().observe(&[0.01])
        )
        .is_err());
    }

    #[test]
    fn double_localvol_state_identity() {
        // a_T = V + sqrt(eps) Z_T holds pathwise for the Euler scheme, so
        // a_T - V_T must be N(0, eps T)
        let toy = MixtureSpec::toy3();
        let eps = 1e-2;
        let s = DoubleLocalSurface::new(toy.clone(), eps).unwrap();
        let grid = build_grid(&toy, 50).unwrap();
        let b =
            simulate_double_localvol(&s, &grid, RngConfig::new(2), 4000, &SimOptions::workers(0))
                .unwrap();
        let a = b.terminal_a.as_ref().unwrap();
        let d: Vec<f64> = a
            .iter()
            .zip(&b.realized_variance)
            .map(|(a, v)| a - v)
            .collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        assert!(m.abs() < 4.0 * (eps * 3.0 / 4000.0f64).sqrt(), "{m}");
        assert!((var / (eps * 3.0) - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn records_format() {
        let toy = MixtureSpec::toy3();
        let s = DoubleLocalSurface::new(toy.clone(), 1e-3).unwrap();
        let grid = build_grid(&toy, 5).unwrap();
        let b = simulate_double_localvol(&s, &grid, RngConfig::new(2), 3, &SimOptions::default())
            .unwrap();
        let mut buf = Vec::new();
        b.write_records(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "path_index,X_T,V_T,a_T");
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(3).unwrap().starts_with("2,"));
    }
}
