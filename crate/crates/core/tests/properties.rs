use proptest::prelude::*;
use varbound::localvol::black_call;
use varbound::model::Component;
use varbound::{
    call_price_mixture, DoubleLocalSurface, LocalVolSurface, MixtureSpec, PiecewiseConstRate,
};

fn toy() -> MixtureSpec {
    MixtureSpec::toy3()
}

/// Random two- or three-branch models on a shared breakpoint grid.
fn arb_spec() -> impl Strategy<Value = MixtureSpec> {
    (1usize..4, 2usize..4).prop_flat_map(|(intervals, branches)| {
        (
            prop::collection::vec(0.1f64..2.0, intervals),
            prop::collection::vec(
                (0.05f64..1.0, prop::collection::vec(0.1f64..5.0, intervals)),
                branches,
            ),
        )
            .prop_map(|(lengths, raw)| {
                let mut bps = vec![0.0];
                for l in lengths {
                    bps.push(bps.last().unwrap() + l);
                }
                let total: f64 = raw.iter().map(|r| r.0).sum();
                let comps = raw
                    .into_iter()
                    .map(|(w, rates)| Component {
                        weight: w / total,
                        rate: PiecewiseConstRate::new(bps.clone(), rates).unwrap(),
                    })
                    .collect();
                MixtureSpec::new(comps).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn local_variance_within_rates(t in 0.0f64..3.0, x in -40.0f64..40.0) {
        let s = LocalVolSurface::new(toy());
        let (lo, hi) = s.bounds_at(t);
        let v = s.sigma_loc_sq(t, x).unwrap();
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn local_variance_within_rates_any_model(spec in arb_spec(), u in 0.0f64..1.0, x in -30.0f64..30.0) {
        let t = u * spec.horizon();
        let s = LocalVolSurface::new(spec);
        let (lo, hi) = s.bounds_at(t);
        let v = s.sigma_loc_sq(t, x).unwrap();
        prop_assert!(v.is_finite() && v >= lo - 1e-9 && v <= hi + 1e-9, "v={} in [{}, {}]", v, lo, hi);
    }

    #[test]
    fn double_local_within_rates(t in 0.0f64..3.0, x in -20.0f64..20.0, a in -1.0f64..10.0, log_eps in -8.0f64..0.0) {
        let spec = toy();
        let d = DoubleLocalSurface::new(spec.clone(), 10f64.powf(log_eps)).unwrap();
        let (r0, r1) = (spec.rate(0, t).unwrap(), spec.rate(1, t).unwrap());
        let v = d.sigma_dloc_sq(t, x, a).unwrap();
        prop_assert!(v >= r0.min(r1) - 1e-12 && v <= r0.max(r1) + 1e-12);
    }

    #[test]
    fn marginal_cdf_monotone(spec in arb_spec(), u in 0.01f64..1.0, x in -20.0f64..10.0, dx in 0.0f64..5.0) {
        let t = u * spec.horizon();
        let f0 = spec.marginal_cdf_x(t, x).unwrap();
        let f1 = spec.marginal_cdf_x(t, x + dx).unwrap();
        prop_assert!((0.0..=1.0).contains(&f0) && f1 >= f0);
    }

    #[test]
    fn cum_variance_in_envelope(spec in arb_spec(), u in 0.0f64..1.0) {
        let t = u * spec.horizon();
        for b in 0..spec.n_branches() {
            let v = spec.cum_variance(b, t).unwrap();
            prop_assert!(v >= spec.min_rate() * t - 1e-12 && v <= spec.max_rate() * t + 1e-12);
        }
    }

    #[test]
    fn call_price_within_static_bounds(t in 0.0f64..3.0, k in 0.01f64..20.0) {
        let c = call_price_mixture(&toy(), t, k).unwrap().price;
        prop_assert!(c >= (1.0 - k).max(0.0) - 1e-12 && c <= 1.0 + 1e-12);
    }

    #[test]
    fn black_call_increases_with_variance(k in 0.1f64..5.0, v in 0.01f64..5.0, dv in 0.0f64..2.0) {
        prop_assert!(black_call(k, v + dv) >= black_call(k, v) - 1e-14);
    }

    #[test]
    fn toml_round_trip(spec in arb_spec()) {
        let back = MixtureSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        prop_assert_eq!(back.fingerprint(), spec.fingerprint());
    }
}
