//! Executable acceptance criteria.
//!
//! Each criterion runs at pinned sizes and tolerances and reports an observed
//! value next to its threshold. Simulation batches shared between criteria
//! are built once per [`Context`].

use std::f64::consts::E;
use std::fmt;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use crate::bounds::{
    corridor_lower_bound, count_corridor_hits, guided_corridor_probability, BoundResolution,
    CorridorSpec,
};
use crate::dlocalvol::{
    bound_constant, default_bins, regression_check_dloc, sample_dloc_inputs, DoubleLocalSurface,
};
use crate::localvol::{dupire_sigma_sq, DupireSteps, LocalVolSurface};
use crate::mc::{estimate_payoff, ks_statistic, McEstimate, Payoff};
use crate::model::{adapted_sign_simulate, sample_mixing_paths, MixtureSpec};
use crate::numeric::linspace;
use crate::rng::RngConfig;
use crate::sde::{
    build_grid, map_localvol_paths, simulate_double_localvol, simulate_localvol, LocalVolKernel,
    SimBatch, SimOptions,
};
use crate::Result;

/// Sizes, seeds and settings of a suite run. `Default` is the documented
/// configuration the thresholds were pinned against.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Paths for the local-vol and double-local-vol runs.
    pub paths: usize,
    /// Paths for exact mixing-model and adapted-sign sampling.
    pub exact_paths: usize,
    /// Simulations for the corridor-hit criterion.
    pub corridor_paths: usize,
    /// Local-vol simulations for the volatility-swap criterion.
    pub volswap_paths: usize,
    /// Mixing-model draws for the binned conditional-expectation check.
    pub regression_samples: usize,
    pub steps_per_unit: usize,
    pub epsilon: f64,
    /// Regularization used by the binned conditional-expectation check.
    pub regression_epsilon: f64,
    pub workers: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: 200_000,
            exact_paths: 100_000,
            corridor_paths: 1_000_000,
            volswap_paths: 3_000_000,
            regression_samples: 1_000_000,
            steps_per_unit: 200,
            epsilon: 1e-5,
            regression_epsilon: 1e-4,
            workers: 1,
        }
    }
}

impl SuiteConfig {
    /// Every path count scaled to `paths` (for quick, under-powered runs).
    pub fn with_paths(mut self, paths: usize) -> Self {
        let d = Self::default();
        let scale = |n: usize| {
            ((n as f64) * paths as f64 / d.paths as f64)
                .round()
                .max(1.0) as usize
        };
        self.paths = paths;
        self.exact_paths = scale(d.exact_paths);
        self.corridor_paths = scale(d.corridor_paths);
        self.volswap_paths = scale(d.volswap_paths);
        self.regression_samples = scale(d.regression_samples);
        self
    }

    fn underpowered(&self) -> bool {
        let d = Self::default();
        self.paths < d.paths
            || self.exact_paths < d.exact_paths
            || self.corridor_paths < d.corridor_paths
            || self.volswap_paths < d.volswap_paths
            || self.regression_samples < d.regression_samples
    }
}

/// Seed tags, one per independent experiment.
mod tag {
    pub const MIXING: u64 = 1;
    pub const LOCALVOL: u64 = 2;
    pub const CORRIDOR: u64 = 7;
    pub const GUIDED: u64 = 70;
    pub const DLOCALVOL: u64 = 8;
    pub const REGRESSION: u64 = 10;
    pub const ADAPTED: u64 = 11;
    pub const VOLSWAP: u64 = 4;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub observed: String,
    pub tolerance: String,
    pub pass: bool,
    pub elapsed: Duration,
    pub hint: Option<String>,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] C{:02} {}: observed {} | required {} ({:.2}s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.observed,
            self.tolerance,
            self.elapsed.as_secs_f64()
        )?;
        if let Some(h) = &self.hint {
            write!(f, " hint: {h}")?;
        }
        Ok(())
    }
}

pub struct Criterion {
    pub id: u8,
    pub title: &'static str,
    run: fn(&Context) -> Result<Outcome>,
}

struct Outcome {
    observed: String,
    tolerance: String,
    pass: bool,
    stochastic: bool,
}

/// Run state: configuration plus lazily built shared batches.
pub struct Context {
    pub cfg: SuiteConfig,
    spec: MixtureSpec,
    lv: OnceLock<std::result::Result<SimBatch, String>>,
    dl: OnceLock<std::result::Result<SimBatch, String>>,
}

const OBSERVE: [f64; 3] = [1.0, 2.0, 3.0];

impl Context {
    pub fn new(cfg: SuiteConfig) -> Self {
        Self {
            cfg,
            spec: MixtureSpec::toy3(),
            lv: OnceLock::new(),
            dl: OnceLock::new(),
        }
    }

    fn rng(&self, tag: u64) -> RngConfig {
        RngConfig::new(self.cfg.seed).derive(tag)
    }

    fn localvol_batch_with(&self, workers: usize) -> Result<SimBatch> {
        let surface = LocalVolSurface::new(self.spec.clone());
        let grid = build_grid(&self.spec, self.cfg.steps_per_unit)?;
        simulate_localvol(
            &surface,
            &grid,
            self.rng(tag::LOCALVOL),
            self.cfg.paths,
            &SimOptions::workers(workers).observe(&OBSERVE),
        )
    }

    fn dlocalvol_batch_with(&self, workers: usize) -> Result<SimBatch> {
        let surface = DoubleLocalSurface::new(self.spec.clone(), self.cfg.epsilon)?;
        let grid = build_grid(&self.spec, self.cfg.steps_per_unit)?;
        simulate_double_localvol(
            &surface,
            &grid,
            self.rng(tag::DLOCALVOL),
            self.cfg.paths,
            &SimOptions::workers(workers).observe(&OBSERVE),
        )
    }

    fn cached(
        cell: &OnceLock<std::result::Result<SimBatch, String>>,
        build: impl FnOnce() -> Result<SimBatch>,
    ) -> Result<&SimBatch> {
        cell.get_or_init(|| build().map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| crate::Error::Data(e.clone()))
    }

    pub fn localvol_batch(&self) -> Result<&SimBatch> {
        Self::cached(&self.lv, || self.localvol_batch_with(self.cfg.workers))
    }

    pub fn dlocalvol_batch(&self) -> Result<&SimBatch> {
        Self::cached(&self.dl, || self.dlocalvol_batch_with(self.cfg.workers))
    }

    fn varcall(&self, batch: &SimBatch) -> Result<McEstimate> {
        estimate_payoff(&batch.realized_variance, &Payoff::variance_call(6.0)?)
    }

    pub fn run(&self, c: &Criterion) -> CriterionResult {
        let start = Instant::now();
        let outcome = (c.run)(self);
        let elapsed = start.elapsed();
        match outcome {
            Ok(o) => {
                let hint = (!o.pass && o.stochastic && self.cfg.underpowered()).then(|| {
                    format!(
                        "insufficient n: ran with {} paths, thresholds are pinned for {}",
                        self.cfg.paths,
                        SuiteConfig::default().paths
                    )
                });
                CriterionResult {
                    id: c.id,
                    title: c.title,
                    observed: o.observed,
                    tolerance: o.tolerance,
                    pass: o.pass,
                    elapsed,
                    hint,
                }
            }
            Err(e) => CriterionResult {
                id: c.id,
                title: c.title,
                observed: format!("error: {e}"),
                tolerance: "-".into(),
                pass: false,
                elapsed,
                hint: self
                    .cfg
                    .underpowered()
                    .then(|| "insufficient n: sample sizes below the pinned defaults".into()),
            },
        }
    }

    pub fn run_all(&self) -> Vec<CriterionResult> {
        criteria().iter().map(|c| self.run(c)).collect()
    }
}

pub fn criteria() -> &'static [Criterion] {
    &CRITERIA
}

pub fn criterion(id: u8) -> Option<&'static Criterion> {
    CRITERIA.iter().find(|c| c.id == id)
}

static CRITERIA: [Criterion; 12] = [
    Criterion {
        id: 1,
        title: "mixing model has deterministic realized variance",
        run: c01_mixing,
    },
    Criterion {
        id: 2,
        title: "local-vol variance call exceeds the mixing price",
        run: c02_headline,
    },
    Criterion {
        id: 3,
        title: "local-vol variance swap matches",
        run: c03_varswap,
    },
    Criterion {
        id: 4,
        title: "local-vol volatility swap is cheaper",
        run: c04_volswap,
    },
    Criterion {
        id: 5,
        title: "finite-difference Dupire matches the closed form",
        run: c05_dupire,
    },
    Criterion {
        id: 6,
        title: "corridor lower bound exceeds 6",
        run: c06_bound,
    },
    Criterion {
        id: 7,
        title: "simulated paths hit the corridor",
        run: c07_hits,
    },
    Criterion {
        id: 8,
        title: "double-local-vol log-price marginals match",
        run: c08_dloc_marginals,
    },
    Criterion {
        id: 9,
        title: "double-local-vol variance call under the bound",
        run: c09_separation,
    },
    Criterion {
        id: 10,
        title: "double-local variance closed form vs binned regression",
        run: c10_regression,
    },
    Criterion {
        id: 11,
        title: "adapted-sign variant: marginals and variance",
        run: c11_adapted,
    },
    Criterion {
        id: 12,
        title: "results independent of worker count",
        run: c12_reproducible,
    },
];

fn c01_mixing(ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let grid = build_grid(&ctx.spec, 2)?;
    let batch = sample_mixing_paths(
        &ctx.spec,
        &grid,
        ctx.rng(tag::MIXING),
        ctx.cfg.exact_paths,
        ctx.cfg.workers,
    )?;
    let all_six = batch.realized_variance.iter().all(|&v| v == 6.0);
    let est = estimate_payoff(&batch.realized_variance, &Payoff::variance_call(6.0)?)?;
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome {
        observed: format!(
            "all V = 6: {all_six}, E[(V-6)+] = {} (stderr {}), {secs:.3}s",
            est.mean, est.stderr
        ),
        tolerance: "every V exactly 6, price exactly 0, runtime < 1 s".into(),
        pass: all_six && est.mean == 0.0 && est.stderr == 0.0 && secs < 1.0,
        stochastic: false,
    })
}

fn c02_headline(ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let batch = ctx.localvol_batch()?;
    let secs = start.elapsed().as_secs_f64();
    let est = ctx.varcall(batch)?;
    let z = est.z_above(0.0);
    Ok(Outcome {
        observed: format!(
            "E[(V-6)+] = {:.5} (stderr {:.5}, z = {z:.1}, n = {}), {secs:.1}s",
            est.mean, est.stderr, est.n
        ),
        tolerance: "mean in [0.016, 0.036], > 0 by >= 5 stderr, runtime < 60 s".into(),
        pass: (0.016..=0.036).contains(&est.mean) && z >= 5.0 && secs < 60.0,
        stochastic: true,
    })
}

fn c03_varswap(ctx: &Context) -> Result<Outcome> {
    let est = estimate_payoff(
        &ctx.localvol_batch()?.realized_variance,
        &Payoff::VarianceSwap,
    )?;
    let z = est.z_above(6.0);
    Ok(Outcome {
        observed: format!(
            "E[V] = {:.5} (stderr {:.5}, z = {z:.2})",
            est.mean, est.stderr
        ),
        tolerance: "|E[V] - 6| <= 3 stderr".into(),
        pass: z.abs() <= 3.0,
        stochastic: true,
    })
}

fn c04_volswap(ctx: &Context) -> Result<Outcome> {
    let surface = LocalVolSurface::new(ctx.spec.clone());
    let kernel = LocalVolKernel::new(&surface, &build_grid(&ctx.spec, ctx.cfg.steps_per_unit)?)?;
    let v = map_localvol_paths(
        &kernel,
        ctx.rng(tag::VOLSWAP),
        ctx.cfg.volswap_paths,
        ctx.cfg.workers,
        |_, _, v| v,
    );
    let var = estimate_payoff(&v, &Payoff::VarianceSwap)?;
    let est = estimate_payoff(&v, &Payoff::VolSwap)?;
    let gap = (6.0f64.sqrt() - est.mean) / est.stderr;
    Ok(Outcome {
        observed: format!(
            "E[sqrt V] = {:.6} vs sqrt 6 = {:.6} (stderr {:.2e}, {gap:.1} stderr below, n = {}; E[V] = {:.5} +- {:.5})",
            est.mean,
            6.0f64.sqrt(),
            est.stderr,
            est.n,
            var.mean,
            var.stderr
        ),
        tolerance: "sqrt 6 - E[sqrt V] >= 3 stderr".into(),
        pass: gap >= 3.0,
        stochastic: true,
    })
}

/// Maturities and log-strikes of the Dupire cross-check.
pub const DUPIRE_MATURITIES: [f64; 6] = [0.3, 0.7, 1.3, 1.7, 2.3, 2.7];
pub const DUPIRE_LOG_STRIKES: usize = 81;

/// Largest relative gap between the finite-difference Dupire ratio and the
/// closed form over the cross-check grid; returns `(max, at_T, at_K)`.
pub fn dupire_max_deviation(spec: &MixtureSpec) -> Result<(f64, f64, f64)> {
    let surface = LocalVolSurface::new(spec.clone());
    let mut worst = (0.0, f64::NAN, f64::NAN);
    for &t in &DUPIRE_MATURITIES {
        for x in linspace(-2.0, 2.0, DUPIRE_LOG_STRIKES) {
            let k = x.exp();
            let fd = dupire_sigma_sq(spec, t, k, DupireSteps::default())?;
            let cf = surface.sigma_loc_sq(t, x)?;
            let rel = ((fd - cf) / cf).abs();
            if rel > worst.0 {
                worst = (rel, t, k);
            }
        }
    }
    Ok(worst)
}

fn c05_dupire(ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let (rel, t, k) = dupire_max_deviation(&ctx.spec)?;
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome {
        observed: format!(
            "max relative deviation {rel:.2e} at T = {t}, K = {k:.4} over K in [1/e^2, e^2] ({:.3}..{:.3}), {secs:.2}s",
            E.powi(-2),
            E.powi(2)
        ),
        tolerance: "<= 1e-3, runtime < 10 s".into(),
        pass: rel <= 1e-3 && secs < 10.0,
        stochastic: false,
    })
}

fn c06_bound(ctx: &Context) -> Result<Outcome> {
    let surface = LocalVolSurface::new(ctx.spec.clone());
    let corridor = CorridorSpec::paper_corridor();
    let base = BoundResolution::default();
    let b1 = corridor_lower_bound(&surface, &corridor, base)?.value;
    let b2 = corridor_lower_bound(&surface, &corridor, base.doubled())?.value;
    Ok(Outcome {
        observed: format!("bound {b1:.5} (doubled resolution {b2:.5})"),
        tolerance: "in [6.4, 6.9], > 6, |change| <= 1e-2 under doubling".into(),
        pass: (6.4..=6.9).contains(&b1) && b1 > 6.0 && (b1 - b2).abs() <= 1e-2,
        stochastic: false,
    })
}

fn c07_hits(ctx: &Context) -> Result<Outcome> {
    let surface = LocalVolSurface::new(ctx.spec.clone());
    let corridor = CorridorSpec::paper_corridor();
    let ends: Vec<f64> = corridor
        .constraints()
        .iter()
        .flat_map(|c| [c.start, c.end])
        .collect();
    let grid = build_grid(&ctx.spec, ctx.cfg.steps_per_unit)?.with_times(&ends)?;
    let kernel = LocalVolKernel::new(&surface, &grid)?;
    let hits = count_corridor_hits(
        &kernel,
        &corridor,
        ctx.rng(tag::CORRIDOR),
        ctx.cfg.corridor_paths,
        ctx.cfg.workers,
    )?;
    let min_v = hits.min_hit_variance();
    // drift-shifted companion run: shows the event is reachable and checks
    // the pathwise variance floor on paths that do reach it
    let guided = guided_corridor_probability(
        &kernel,
        &corridor,
        ctx.rng(tag::GUIDED),
        10_000,
        ctx.cfg.workers,
        0.5,
    )?;
    let guided_min = guided.min_hit_variance().unwrap_or(f64::NAN);
    Ok(Outcome {
        observed: format!(
            "{} of {} paths hit (99% upper bound on probability {:.2e}), min hit V = {}; \
             guided run: {} of {} hits, ln P = {:.1}, min hit V = {guided_min:.4}",
            hits.hits,
            hits.n,
            hits.upper_99,
            min_v.map_or("n/a".to_string(), |v| format!("{v:.4}")),
            guided.hits,
            guided.n,
            guided.log_probability,
        ),
        tolerance: ">= 1 hit among the plain simulations, every hit has V >= 6.4".into(),
        pass: hits.hits >= 1 && min_v.is_some_and(|v| v >= 6.4),
        stochastic: true,
    })
}

fn c08_dloc_marginals(ctx: &Context) -> Result<Outcome> {
    let batch = ctx.dlocalvol_batch()?;
    let mut parts = Vec::new();
    let mut pass = true;
    for &t in &OBSERVE {
        let ks = ks_statistic(&batch.x_at(t)?, |x| ctx.spec.marginal_cdf_x(t, x).unwrap())?;
        pass &= ks.passes_01();
        parts.push(format!("t={t}: D={:.5}", ks.statistic));
    }
    let crit = crate::mc::KS_C_01 / (batch.n_paths() as f64).sqrt();
    Ok(Outcome {
        observed: parts.join(", "),
        tolerance: format!(
            "each D < {crit:.5} (1% critical value, n = {})",
            batch.n_paths()
        ),
        pass,
        stochastic: true,
    })
}

fn c09_separation(ctx: &Context) -> Result<Outcome> {
    let dl = ctx.varcall(ctx.dlocalvol_batch()?)?;
    let lv = ctx.varcall(ctx.localvol_batch()?)?;
    let bound = bound_constant(ctx.cfg.epsilon, ctx.spec.horizon())?;
    let lv_floor = lv.mean - 3.0 * lv.stderr;
    let under = dl.mean <= bound + 3.0 * dl.stderr;
    let separated = dl.mean.max(bound) < lv_floor;
    Ok(Outcome {
        observed: format!(
            "E[(V_eps-6)+] = {:.5} (stderr {:.5}), bound {bound:.5}, local-vol floor {lv_floor:.5}",
            dl.mean, dl.stderr
        ),
        tolerance: "mean <= bound + 3 stderr and max(mean, bound) < local-vol mean - 3 stderr"
            .into(),
        pass: under && separated,
        stochastic: true,
    })
}

/// Binned regression of the realized rate at time `t`; returns the fraction
/// of populated bins within 3 standard errors and their number.
pub fn dloc_regression_agreement(
    spec: &MixtureSpec,
    epsilon: f64,
    t: f64,
    samples: usize,
    rng: RngConfig,
    workers: usize,
) -> Result<(f64, usize)> {
    let surface = DoubleLocalSurface::new(spec.clone(), epsilon)?;
    let draws = sample_dloc_inputs(spec, epsilon, t, rng, samples, workers)?;
    let (x_bins, a_bins) = default_bins(spec, epsilon, t)?;
    let check = regression_check_dloc(&surface, t, &draws, x_bins, a_bins)?;
    Ok((check.agreement_rate(3.0), check.populated().count()))
}

fn c10_regression(ctx: &Context) -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut pass = true;
    for (j, &t) in [1.5, 2.5].iter().enumerate() {
        let (rate, bins) = dloc_regression_agreement(
            &ctx.spec,
            ctx.cfg.regression_epsilon,
            t,
            ctx.cfg.regression_samples,
            ctx.rng(tag::REGRESSION + 100 * j as u64),
            ctx.cfg.workers,
        )?;
        pass &= rate >= 0.95;
        parts.push(format!("t={t}: {:.1}% of {bins} bins", 100.0 * rate));
    }
    Ok(Outcome {
        observed: format!(
            "{} (eps = {})",
            parts.join(", "),
            ctx.cfg.regression_epsilon
        ),
        tolerance: ">= 95% of populated bins within 3 binomial stderr".into(),
        pass,
        stochastic: true,
    })
}

fn c11_adapted(ctx: &Context) -> Result<Outcome> {
    let grid = build_grid(&ctx.spec, 2)?;
    let batch = adapted_sign_simulate(
        &ctx.spec,
        &grid,
        ctx.rng(tag::ADAPTED),
        ctx.cfg.exact_paths,
        ctx.cfg.workers,
    )?;
    let all_six = batch.realized_variance.iter().all(|&v| v == 6.0);
    let mut pass = all_six;
    let mut parts = Vec::new();
    for t in [1.5, 2.0, 3.0] {
        let ks = ks_statistic(&batch.at_time(t)?, |x| {
            ctx.spec.marginal_cdf_x(t, x).unwrap()
        })?;
        pass &= ks.passes_01();
        parts.push(format!("t={t}: D={:.5}", ks.statistic));
    }
    let n = batch.n_paths() as f64;
    let plus = batch.branch.iter().filter(|&&b| b == 0).count() as f64 / n;
    Ok(Outcome {
        observed: format!(
            "{}, all V = 6: {all_six}, P(sign = +1) = {plus:.4}",
            parts.join(", ")
        ),
        tolerance: format!(
            "each D < {:.5}, V exactly 6 on every path",
            crate::mc::KS_C_01 / n.sqrt()
        ),
        pass,
        stochastic: true,
    })
}

/// Worker counts compared by the reproducibility criterion.
pub const WORKER_COUNTS: [usize; 3] = [1, 4, 16];

fn same_bits(a: &SimBatch, b: &SimBatch) -> bool {
    let eq = |x: &[f64], y: &[f64]| {
        x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
    };
    eq(&a.terminal_x, &b.terminal_x)
        && eq(&a.realized_variance, &b.realized_variance)
        && eq(&a.observed_x, &b.observed_x)
        && match (&a.terminal_a, &b.terminal_a) {
            (Some(p), Some(q)) => eq(p, q),
            (None, None) => true,
            _ => false,
        }
}

fn c12_reproducible(ctx: &Context) -> Result<Outcome> {
    let lv_ref = ctx.localvol_batch()?;
    let dl_ref = ctx.dlocalvol_batch()?;
    let mut pass = true;
    let mut parts = Vec::new();
    for &w in &WORKER_COUNTS {
        if w == ctx.cfg.workers {
            continue;
        }
        let lv = ctx.localvol_batch_with(w)?;
        let dl = ctx.dlocalvol_batch_with(w)?;
        let ok = same_bits(lv_ref, &lv) && same_bits(dl_ref, &dl);
        // criterion 9's statistic is a function of the double-local batch
        let e_ref = ctx.varcall(dl_ref)?;
        let e_w = ctx.varcall(&dl)?;
        let ok = ok && e_ref.mean.to_bits() == e_w.mean.to_bits();
        pass &= ok;
        parts.push(format!(
            "{w} workers: {}",
            if ok { "identical" } else { "DIFFERENT" }
        ));
    }
    Ok(Outcome {
        observed: format!(
            "reference {} workers; {}",
            ctx.cfg.workers,
            parts.join(", ")
        ),
        tolerance: format!("bit-identical batches for workers {WORKER_COUNTS:?}"),
        pass,
        stochastic: false,
    })
}
