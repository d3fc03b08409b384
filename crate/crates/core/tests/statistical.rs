//! Monte Carlo checks of marginal laws, projection identities and payoff
//! ordering at fixed seeds.

use varbound::bounds::{count_corridor_hits, guided_corridor_probability, Constraint};
use varbound::dlocalvol::sample_dloc_inputs;
use varbound::mc::{histogram, ks_statistic};
use varbound::model::{adapted_sign_simulate, sample_mixing_paths};
use varbound::numeric::norm_cdf;
use varbound::sde::LocalVolKernel;
use varbound::{
    build_grid, corridor_lower_bound, estimate_payoff, simulate_double_localvol, simulate_localvol,
    BoundResolution, CorridorSpec, DoubleLocalSurface, LocalVolSurface, MixtureSpec, Payoff,
    RngConfig, SimOptions,
};

fn spec() -> MixtureSpec {
    MixtureSpec::toy3()
}

#[test]
fn mixing_marginals_match_closed_form() {
    let spec = spec();
    let grid = build_grid(&spec, 2).unwrap();
    let batch = sample_mixing_paths(&spec, &grid, RngConfig::new(101), 100_000, 1).unwrap();
    assert!(batch.realized_variance.iter().all(|&v| v == 6.0));
    for t in [1.0, 2.0, 3.0] {
        let ks = ks_statistic(&batch.at_time(t).unwrap(), |x| {
            spec.marginal_cdf_x(t, x).unwrap()
        })
        .unwrap();
        assert!(
            ks.passes_01(),
            "t={t} D={} crit={}",
            ks.statistic,
            ks.critical_01
        );
    }
}

#[test]
fn adapted_sign_marginals_match_closed_form() {
    let spec = spec();
    let grid = build_grid(&spec, 2).unwrap();
    let n = 100_000;
    let batch = adapted_sign_simulate(&spec, &grid, RngConfig::new(102), n, 1).unwrap();
    assert!(batch.realized_variance.iter().all(|&v| v == 6.0));
    for t in [1.5, 2.0, 3.0] {
        let ks = ks_statistic(&batch.at_time(t).unwrap(), |x| {
            spec.marginal_cdf_x(t, x).unwrap()
        })
        .unwrap();
        assert!(ks.passes_01(), "t={t} D={}", ks.statistic);
    }
    let plus = batch.branch.iter().filter(|&&b| b == 0).count() as f64 / n as f64;
    assert!(
        (plus - 0.5).abs() <= 3.0 * (0.25 / n as f64).sqrt(),
        "{plus}"
    );
}

#[test]
fn localvol_marginals_match_closed_form() {
    let spec = spec();
    let surface = LocalVolSurface::new(spec.clone());
    let grid = build_grid(&spec, 100).unwrap();
    let opts = SimOptions::workers(1).observe(&[1.0, 2.0, 3.0]);
    let batch = simulate_localvol(&surface, &grid, RngConfig::new(103), 50_000, &opts).unwrap();
    for t in [1.0, 2.0, 3.0] {
        let ks = ks_statistic(&batch.x_at(t).unwrap(), |x| {
            spec.marginal_cdf_x(t, x).unwrap()
        })
        .unwrap();
        assert!(ks.passes_01(), "t={t} D={}", ks.statistic);
    }
}

fn variance_state_ks(eps: f64, steps_per_unit: usize, n: usize, t: f64) -> (f64, f64) {
    let spec = spec();
    let surface = DoubleLocalSurface::new(spec.clone(), eps).unwrap();
    let grid = build_grid(&spec, steps_per_unit).unwrap();
    let opts = SimOptions::workers(1).observe(&[t]);
    let batch = simulate_double_localvol(&surface, &grid, RngConfig::new(104), n, &opts).unwrap();
    let sd = (eps * t).sqrt();
    let cdf = |a: f64| {
        (0..spec.n_branches())
            .map(|b| spec.weight(b) * norm_cdf((a - spec.cum_variance(b, t).unwrap()) / sd))
            .sum::<f64>()
    };
    let ks = ks_statistic(&batch.a_at(t).unwrap(), cdf).unwrap();
    (ks.statistic, ks.critical_01)
}

#[test]
fn variance_state_law_is_smoothed_mixture() {
    // the a-equation is stiff on the scale sqrt(eps t); the grid must resolve it
    for t in [2.0, 3.0] {
        let (d, crit) = variance_state_ks(1e-2, 1000, 50_000, t);
        assert!(d < crit, "t={t} D={d} crit={crit}");
    }
}

#[test]
fn variance_state_error_shrinks_with_step() {
    let (coarse, _) = variance_state_ks(1e-5, 200, 20_000, 2.0);
    let (fine, _) = variance_state_ks(1e-5, 2000, 20_000, 2.0);
    assert!(fine < coarse / 4.0, "D(200) = {coarse}, D(2000) = {fine}");
}

#[test]
fn double_local_projects_onto_local_variance() {
    // E[sigma_dloc^2(t, X, a) - sigma_loc^2(t, X) | X in bin] = 0 bin by bin
    let spec = spec();
    let eps = 1e-4;
    let dl = DoubleLocalSurface::new(spec.clone(), eps).unwrap();
    let lv = LocalVolSurface::new(spec.clone());
    for (t, seed) in [(1.5, 105), (2.5, 106)] {
        let samples = sample_dloc_inputs(&spec, eps, t, RngConfig::new(seed), 200_000, 1).unwrap();
        let (dslice, lslice) = (dl.slice(t).unwrap(), lv.slice(t).unwrap());
        let (lo, hi, nb) = (-8.0, 5.0, 26usize);
        let mut diffs = vec![Vec::new(); nb];
        for s in &samples {
            let k = ((s.x - lo) / (hi - lo) * nb as f64).floor();
            if (0.0..nb as f64).contains(&k) {
                diffs[k as usize].push(dslice.eval(s.x, s.a) - lslice.eval(s.x));
            }
        }
        let (mut tested, mut ok) = (0, 0);
        for d in diffs.iter().filter(|d| d.len() >= 100) {
            let est = varbound::McEstimate::from_samples(d).unwrap();
            tested += 1;
            if est.mean.abs() <= 3.0 * est.stderr.max(1e-12) {
                ok += 1;
            }
        }
        assert!(
            tested >= 10 && ok as f64 >= 0.95 * tested as f64,
            "t={t}: {ok}/{tested}"
        );
    }
}

#[test]
fn localvol_payoffs_and_distribution() {
    let spec = spec();
    let surface = LocalVolSurface::new(spec.clone());
    let grid = build_grid(&spec, 100).unwrap();
    let batch = simulate_localvol(
        &surface,
        &grid,
        RngConfig::new(107),
        100_000,
        &SimOptions::workers(1),
    )
    .unwrap();
    let v = &batch.realized_variance;

    let swap = estimate_payoff(v, &Payoff::VarianceSwap).unwrap();
    // mixing-model swap is exactly 6 with zero stderr
    assert!((swap.mean - 6.0).abs() <= 3.0 * swap.stderr, "{swap:?}");
    assert!(6.0 >= swap.ci_lo && 6.0 <= swap.ci_hi);

    let call = estimate_payoff(v, &Payoff::variance_call(6.0).unwrap()).unwrap();
    assert!(call.mean >= 3.0 * call.stderr, "{call:?}");

    let h = histogram(v, 40, 5.0, 7.0).unwrap();
    assert_eq!(
        h.bins.iter().map(|b| b.count).sum::<usize>() + h.underflow + h.overflow,
        v.len()
    );
    assert!(h.mass_below(6.0) > 0 && h.mass_above(6.0) > 0);
}

#[test]
fn variance_call_converges_in_step_size() {
    let spec = spec();
    let surface = LocalVolSurface::new(spec.clone());
    let payoff = Payoff::variance_call(6.0).unwrap();
    let run = |spu: usize| {
        let grid = build_grid(&spec, spu).unwrap();
        let b = simulate_localvol(
            &surface,
            &grid,
            RngConfig::new(108 + spu as u64),
            60_000,
            &SimOptions::workers(1),
        )
        .unwrap();
        estimate_payoff(&b.realized_variance, &payoff).unwrap()
    };
    let (coarse, fine) = (run(100), run(400));
    let pooled = (coarse.stderr.powi(2) + fine.stderr.powi(2)).sqrt();
    assert!(
        (coarse.mean - fine.mean).abs() <= 2.0 * pooled,
        "{coarse:?} vs {fine:?}"
    );
}

#[test]
fn corridor_hits_respect_the_bound() {
    let spec = spec();
    let surface = LocalVolSurface::new(spec.clone());
    let grid = build_grid(&spec, 200).unwrap();
    let kernel = LocalVolKernel::new(&surface, &grid).unwrap();
    let corridor = CorridorSpec::paper_corridor();
    let bound = corridor_lower_bound(&surface, &corridor, BoundResolution::default())
        .unwrap()
        .value;
    let allowance = 2.0 * grid.max_step() * spec.max_rate();
    let guided =
        guided_corridor_probability(&kernel, &corridor, RngConfig::new(109), 2_000, 1, 0.5)
            .unwrap();
    assert!(guided.hits > 0);
    assert!(guided.hit_variances.iter().all(|&v| v >= bound - allowance));
}

#[test]
fn corridor_edge_cases() {
    let spec = spec();
    let surface = LocalVolSurface::new(spec.clone());
    let grid = build_grid(&spec, 200).unwrap().with_times(&[0.01]).unwrap();
    let kernel = LocalVolKernel::new(&surface, &grid).unwrap();

    let all = CorridorSpec::unconstrained();
    let hits = count_corridor_hits(&kernel, &all, RngConfig::new(110), 1_000, 1).unwrap();
    assert_eq!(hits.estimate.mean, 1.0);

    let early = CorridorSpec::new(vec![Constraint {
        start: 0.0,
        end: 0.01,
        x_lo: 8.0,
        x_hi: 10.0,
    }])
    .unwrap();
    let hits = count_corridor_hits(&kernel, &early, RngConfig::new(111), 10_000, 1).unwrap();
    assert_eq!(hits.hits, 0);
    assert!(hits.upper_99 > 0.0 && hits.upper_99 < 1e-3);
}
