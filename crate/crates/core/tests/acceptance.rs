//! Acceptance criteria, one test per criterion.
//!
//! Each test prints a single `[PASS]`/`[FAIL]` line. Run with
//! `cargo test -p varbound-core --test acceptance -- --nocapture --test-threads 1`
//! to see them in order.

use std::sync::OnceLock;

use varbound::checks::{criterion, Context, SuiteConfig};

fn context() -> &'static Context {
    static CTX: OnceLock<Context> = OnceLock::new();
    CTX.get_or_init(|| Context::new(SuiteConfig::default()))
}

fn check(id: u8) {
    let c = criterion(id).expect("criterion exists");
    let result = context().run(c);
    println!("{result}");
    assert!(result.pass, "{result}");
}

macro_rules! criteria {
    ($($name:ident => $id:expr),* $(,)?) => {
        $(#[test] fn $name() { check($id); })*
    };
}

criteria! {
    c01_mixing_variance_is_deterministic => 1,
    c02_localvol_variance_call_exceeds_mixing => 2,
    c03_localvol_variance_swap_matches => 3,
    c04_localvol_vol_swap_is_cheaper => 4,
    c05_dupire_matches_closed_form => 5,
    c06_corridor_bound_exceeds_six => 6,
    c07_paths_hit_corridor => 7,
    c08_dlocalvol_marginals_match => 8,
    c09_dlocalvol_variance_call_under_bound => 9,
    c10_dlocalvol_regression => 10,
    c11_adapted_sign_variant => 11,
    c12_worker_count_reproducible => 12,
}
