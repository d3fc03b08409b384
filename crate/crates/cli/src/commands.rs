use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use varbound::checks::{criteria, Context, SuiteConfig};
use varbound::dlocalvol::{default_bins, regression_check_dloc, sample_dloc_inputs, Bins};
use varbound::localvol::{surface_grid, GridAxis};
use varbound::mc::{histogram, EstimateRecord};
use varbound::model::sample_mixing_paths;
use varbound::{
    build_grid, corridor_lower_bound, estimate_payoff, simulate_double_localvol, simulate_localvol,
    BoundResolution, CorridorSpec, DoubleLocalSurface, LocalVolSurface, MixtureSpec, Payoff,
    RngConfig, SimOptions, TimeGrid,
};

use crate::config::{load_spec, pick, pick_opt, FileConfig, Resolved};
use crate::{
    BoundArgs, CliError, Common, DlocArgs, ModelKind, PayoffKind, PriceArgs, SelftestArgs,
    SurfaceArgs,
};

type CliResult<T = ()> = Result<T, CliError>;

/// Writes `name` under `dir`, or to stdout when no directory is set.
fn emit(
    dir: Option<&Path>,
    name: &str,
    write: impl FnOnce(&mut dyn Write) -> CliResult,
) -> CliResult {
    match dir {
        Some(dir) => {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
            let path = dir.join(name);
            let file = fs::File::create(&path)
                .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
            let mut out = io::BufWriter::new(file);
            write(&mut out)?;
            out.flush()?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            let stdout = io::stdout();
            let mut out = io::BufWriter::new(stdout.lock());
            write(&mut out)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn parse_axis(text: &str) -> CliResult<GridAxis> {
    Ok(text.parse::<GridAxis>()?)
}

fn parse_bins(text: &str) -> CliResult<Bins> {
    let axis = parse_axis(text)?;
    Ok(Bins::new(axis.start, axis.end, axis.count)?)
}

fn parse_enum<T: ValueEnum>(text: &str, what: &str) -> CliResult<T> {
    T::from_str(text, true).map_err(|_| CliError::usage(format!("unknown {what} '{text}'")))
}

fn require_seed(flag: Option<u64>, file: Option<u64>) -> CliResult<u64> {
    flag.or(file).ok_or_else(|| {
        CliError::usage("a seed is required: pass --seed or set `seed` in the config file")
    })
}

fn spec_and_file(common: &Common) -> CliResult<(MixtureSpec, FileConfig)> {
    let file = FileConfig::load(common.config.as_deref())?;
    let spec = load_spec(
        pick_opt(&common.preset, &file.preset),
        pick_opt(&common.spec_file, &file.spec_file),
    )?;
    Ok((spec, file))
}

fn out_dir(common: &Common, file: &FileConfig) -> Option<PathBuf> {
    pick_opt(&common.out_dir, &file.out_dir)
}

pub(crate) fn surface(args: SurfaceArgs) -> CliResult {
    let (spec, file) = spec_and_file(&args.common)?;
    let t_axis = parse_axis(&pick(&args.t_axis, &file.t_axis, "0:3:300".into()))?;
    let x_axis = parse_axis(&pick(&args.x_axis, &file.x_axis, "-2:12:400".into()))?;
    let mut resolved = Resolved::new("surface", &spec, None);
    resolved
        .set("t_axis", t_axis.to_string())
        .set("x_axis", x_axis.to_string());
    let grid = surface_grid(&LocalVolSurface::new(spec), t_axis, x_axis)?;
    emit(
        out_dir(&args.common, &file).as_deref(),
        "surface.csv",
        |out| {
            writeln!(out, "{}", resolved.header())?;
            grid.write_csv(out)?;
            Ok(())
        },
    )
}

fn payoffs(kind: PayoffKind, strike: f64) -> CliResult<Vec<Payoff>> {
    let call = || Payoff::variance_call(strike);
    Ok(match kind {
        PayoffKind::Varswap => vec![Payoff::VarianceSwap],
        PayoffKind::Varcall => vec![call()?],
        PayoffKind::Volswap => vec![Payoff::VolSwap],
        PayoffKind::All => vec![Payoff::VarianceSwap, call()?, Payoff::VolSwap],
    })
}

pub(crate) fn price(args: PriceArgs) -> CliResult {
    let (spec, file) = spec_and_file(&args.common)?;
    let seed = require_seed(args.seed, file.seed)?;
    let model = match (&args.model, &file.model) {
        (Some(m), _) => *m,
        (None, Some(text)) => parse_enum(text, "model")?,
        (None, None) => ModelKind::Localvol,
    };
    let payoff = match (&args.payoff, &file.payoff) {
        (Some(p), _) => *p,
        (None, Some(text)) => parse_enum(text, "payoff")?,
        (None, None) => PayoffKind::All,
    };
    let strike = pick(&args.strike, &file.strike, 6.0);
    let paths = pick(&args.paths, &file.paths, 200_000);
    let steps = pick(&args.steps_per_unit, &file.steps_per_unit, 200);
    let epsilon = pick(&args.epsilon, &file.epsilon, 1e-5);
    let hist = parse_axis(&pick(&args.hist, &file.hist, "4:8:80".into()))?;
    let records = args.records || file.records.unwrap_or(false);
    let workers = pick(&args.workers, &file.workers, 1);
    let dir = out_dir(&args.common, &file);
    if records && dir.is_none() {
        return Err(CliError::usage("--records needs --out-dir"));
    }
    if paths < 2 {
        return Err(CliError::usage("need at least 2 paths"));
    }
    let payoffs = payoffs(payoff, strike)?;

    let mut resolved = Resolved::new("price", &spec, Some(seed));
    resolved
        .set("model_kind", model.to_string())
        .set("payoff", payoff.to_string())
        .set("strike", strike)
        .set("paths", paths as i64)
        .set("steps_per_unit", steps as i64)
        .set("hist", hist.to_string());
    if model == ModelKind::Dlocalvol {
        resolved.set("epsilon", epsilon);
    }

    let rng = RngConfig::new(seed);
    let opts = SimOptions::workers(workers);
    let (variance, batch) = match model {
        ModelKind::Mixing => {
            // realized variance only depends on the branch, so breakpoints suffice
            let grid = TimeGrid::for_model(&spec, 1);
            let b = sample_mixing_paths(&spec, &grid, rng, paths, workers)?;
            (b.realized_variance, None)
        }
        ModelKind::Localvol => {
            let grid = build_grid(&spec, steps)?;
            let b = simulate_localvol(
                &LocalVolSurface::new(spec.clone()),
                &grid,
                rng,
                paths,
                &opts,
            )?;
            (b.realized_variance.clone(), Some(b))
        }
        ModelKind::Dlocalvol => {
            let grid = build_grid(&spec, steps)?;
            let surface = DoubleLocalSurface::new(spec.clone(), epsilon)?;
            let b = simulate_double_localvol(&surface, &grid, rng, paths, &opts)?;
            (b.realized_variance.clone(), Some(b))
        }
    };

    let lines = payoffs
        .into_iter()
        .map(|p| {
            let estimate = estimate_payoff(&variance, &p)?;
            Ok(EstimateRecord {
                payoff: p,
                estimate,
            }
            .to_string())
        })
        .collect::<CliResult<Vec<_>>>()?;
    let header = resolved.header();
    let report = |out: &mut dyn Write| -> CliResult {
        writeln!(out, "{header}")?;
        writeln!(out, "model={model} n={paths}")?;
        for l in &lines {
            writeln!(out, "{l}")?;
        }
        Ok(())
    };
    emit(None, "", report)?;
    if let Some(dir) = dir.as_deref() {
        emit(Some(dir), "estimates.txt", report)?;
        let h = histogram(&variance, hist.count, hist.start, hist.end)?;
        emit(Some(dir), "histogram.csv", |out| {
            writeln!(out, "{header}")?;
            h.write_csv(out)?;
            Ok(())
        })?;
        if records {
            emit(Some(dir), "records.csv", |out| {
                writeln!(out, "{header}")?;
                match &batch {
                    Some(b) => b.write_records(out)?,
                    None => {
                        writeln!(out, "path_index,V_T")?;
                        for (i, v) in variance.iter().enumerate() {
                            writeln!(out, "{i},{v}")?;
                        }
                    }
                }
                Ok(())
            })?;
        }
    }
    Ok(())
}

fn load_corridor(name: &str) -> CliResult<CorridorSpec> {
    let path = Path::new(name);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::usage(format!("cannot read corridor {}: {e}", path.display()))
        })?;
        return Ok(CorridorSpec::from_toml_str(&text)?);
    }
    Ok(CorridorSpec::preset(name)?)
}

pub(crate) fn bound(args: BoundArgs) -> CliResult {
    let (spec, file) = spec_and_file(&args.common)?;
    let corridor = load_corridor(&pick(
        &args.corridor,
        &file.corridor,
        "paper_corridor".into(),
    ))?;
    let resolution = BoundResolution::new(
        pick(
            &args.t_resolution,
            &file.t_resolution,
            BoundResolution::FLOOR,
        ),
        pick(
            &args.x_resolution,
            &file.x_resolution,
            BoundResolution::FLOOR,
        ),
    )?;
    let mut resolved = Resolved::new("bound", &spec, None);
    resolved
        .set("corridor", corridor.to_string())
        .set("t_resolution", resolution.t_per_unit as i64)
        .set("x_resolution", resolution.x_per_unit as i64);
    let report = corridor_lower_bound(&LocalVolSurface::new(spec), &corridor, resolution)?;
    emit(
        out_dir(&args.common, &file).as_deref(),
        "bound.txt",
        |out| {
            writeln!(out, "{}", resolved.header())?;
            write!(out, "{report}")?;
            Ok(())
        },
    )
}

/// Share of populated bins that must agree within 3 standard errors.
const DLOC_AGREEMENT: f64 = 0.95;

pub(crate) fn dloc_check(args: DlocArgs) -> CliResult {
    let (spec, file) = spec_and_file(&args.common)?;
    let seed = require_seed(args.seed, file.seed)?;
    let t = pick(&args.time, &file.time, 1.5);
    let epsilon = pick(&args.epsilon, &file.epsilon, 1e-4);
    let samples = pick(&args.samples, &file.samples, 1_000_000);
    let workers = pick(&args.workers, &file.workers, 1);
    let surface = DoubleLocalSurface::new(spec.clone(), epsilon)?;
    let (auto_x, auto_a) = default_bins(&spec, epsilon, t)?;
    let x_bins = match pick_opt(&args.x_bins, &file.x_bins) {
        Some(text) => parse_bins(&text)?,
        None => auto_x,
    };
    let a_bins = match pick_opt(&args.a_bins, &file.a_bins) {
        Some(text) => parse_bins(&text)?,
        None => auto_a,
    };
    let bins_text = |b: &Bins| format!("{}:{}:{}", b.lo, b.hi, b.count);
    let mut resolved = Resolved::new("dloc-check", &spec, Some(seed));
    resolved
        .set("t", t)
        .set("epsilon", epsilon)
        .set("samples", samples as i64)
        .set("x_bins", bins_text(&x_bins))
        .set("a_bins", bins_text(&a_bins));

    let draws = sample_dloc_inputs(&spec, epsilon, t, RngConfig::new(seed), samples, workers)?;
    let check = regression_check_dloc(&surface, t, &draws, x_bins, a_bins)?;
    let rate = check.agreement_rate(3.0);
    let populated = check.populated().count();
    let dir = out_dir(&args.common, &file);
    emit(dir.as_deref(), "dloc_check.csv", |out| {
        writeln!(out, "{}", resolved.header())?;
        check.write_csv(out)?;
        Ok(())
    })?;
    let summary = format!(
        "t={t} epsilon={epsilon} populated_bins={populated} agreement={rate:.4} required={DLOC_AGREEMENT}"
    );
    if dir.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    if rate < DLOC_AGREEMENT {
        return Err(CliError::Failed(format!(
            "only {:.1}% of populated bins agree within 3 standard errors",
            100.0 * rate
        )));
    }
    Ok(())
}

pub(crate) fn selftest(args: SelftestArgs) -> CliResult {
    if args.list {
        for c in criteria() {
            println!("C{:02} {}", c.id, c.title);
        }
        return Ok(());
    }
    let file = FileConfig::load(args.config.as_deref())?;
    let mut cfg = SuiteConfig::default();
    if let Some(paths) = pick_opt(&args.paths, &file.paths) {
        if paths < 2 {
            return Err(CliError::usage("need at least 2 paths"));
        }
        cfg = cfg.with_paths(paths);
    }
    cfg.seed = pick(&args.seed, &file.seed, cfg.seed);
    cfg.workers = pick(&args.workers, &file.workers, cfg.workers);

    let selected: Vec<_> = criteria()
        .iter()
        .filter(|c| args.only.is_empty() || args.only.contains(&c.id))
        .collect();
    if selected.is_empty() {
        return Err(CliError::usage(format!(
            "no criterion matches {:?}",
            args.only
        )));
    }
    println!(
        "# varbound {} selftest seed={} paths={}",
        varbound::VERSION,
        cfg.seed,
        cfg.paths
    );
    let ctx = Context::new(cfg);
    let mut failed = Vec::new();
    for c in &selected {
        let r = ctx.run(c);
        println!("{r}");
        if !r.pass {
            failed.push(format!("C{:02}", r.id));
        }
    }
    println!(
        "passed {}/{}",
        selected.len() - failed.len(),
        selected.len()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "failed criteria: {}",
            failed.join(", ")
        )))
    }
}
