use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::CommandFactory;
use mkhawkes_core::analysis::{attribute_causes, responsiveness, Shares};
use mkhawkes_core::diagnostics::{diagnose, scan_conditional_max, success_rate_experiment, ExperimentConfig, ScanGrid};
use mkhawkes_core::estimate::{
    default_beta_range, fit, summarize_fits, FitResult, GridSpec, Method, ModelSelection, ParameterSummary,
};
use mkhawkes_core::ingest::ingest_path;
use mkhawkes_core::moments::MomentReport;
use mkhawkes_core::simulate::{simulate_n_events, simulate_path, EnsembleSummary, InitMode, SimConfig};
use mkhawkes_core::{ConstraintProfile, EventStream, HawkesError, ModelParams, SCHEMA_VERSION};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::*;
use crate::error::{kind, usage, CliError, CliResult};

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Simulate(a) => simulate(a),
        Command::Moments(a) => moments(a),
        Command::Estimate(a) => estimate(a),
        Command::Scan(a) => scan(a),
        Command::Diagnose(a) => diagnose_cmd(a),
        Command::Respond(a) => respond(a),
        Command::Attribute(a) => attribute(a),
        Command::Experiment(ExperimentCommand::SuccessRate(a)) => success_rate(a),
        Command::Batch(a) => batch(a),
        Command::Manual => {
            print!("{}", manual());
            Ok(())
        }
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("input file not found: {}", path.display())))
    }
}

fn require_out(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(usage(format!("output directory does not exist: {}", dir.display())))
        }
        _ => Ok(()),
    }
}

fn require_outs<'a>(paths: impl IntoIterator<Item = Option<&'a PathBuf>>) -> CliResult<()> {
    paths.into_iter().flatten().try_for_each(|p| require_out(p))
}

fn writer(out: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let mut w = writer(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn csv_writer(out: Option<&Path>) -> CliResult<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(writer(out)?))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn load_model(src: &ModelSource) -> CliResult<ModelParams> {
    match (&src.params, &src.fit) {
        (Some(p), _) => {
            require_file(p)?;
            Ok(ModelParams::from_json(&std::fs::read_to_string(p)?)?)
        }
        (None, Some(f)) => {
            require_file(f)?;
            let text = std::fs::read_to_string(f)?;
            match FitResult::from_json(&text) {
                Ok(fit) => Ok(fit.params_hat),
                // a multi-kernel `estimate` writes a ranked selection; use its best fit
                Err(e) => match serde_json::from_str::<ModelSelection>(&text) {
                    Ok(sel) if !sel.fits.is_empty() => Ok(sel.best().params_hat.clone()),
                    _ => Err(e.into()),
                },
            }
        }
        (None, None) => Err(usage("one of --params or --fit is required")),
    }
}

fn load_params(path: &Path) -> CliResult<ModelParams> {
    require_file(path)?;
    Ok(ModelParams::from_json(&std::fs::read_to_string(path)?)?)
}

fn load_events(input: &EventsInput, model_dim: Option<usize>) -> CliResult<EventStream> {
    require_file(&input.events)?;
    let m = match (input.types, model_dim) {
        (Some(t), Some(d)) if t != d => {
            return Err(usage(format!("--types {t} does not match the model's {d} types")));
        }
        (Some(t), _) => Some(t),
        (None, d) => d,
    };
    Ok(EventStream::read_csv_path(&input.events, m, input.session)?)
}

fn profile_dim(profile: ConstraintProfile) -> Option<usize> {
    (profile == ConstraintProfile::SymmetricBivariate).then_some(2)
}

fn grid_spec(g: &GridArgs) -> CliResult<GridSpec> {
    if g.grid_points == 0 {
        return Err(usage("--grid-points must be at least 1"));
    }
    let mut spec = GridSpec { points: g.grid_points, range: None, refine: !g.no_refine, polish: !g.no_polish };
    if let Some((lo, hi)) = g.beta_range {
        spec = spec.with_range(lo, hi);
    }
    Ok(spec)
}

fn ingest(a: IngestArgs) -> CliResult<()> {
    require_file(&a.quotes)?;
    require_outs([Some(&a.out), a.report.as_ref()])?;
    let (stream, report) = ingest_path(&a.quotes, a.session)?;
    stream.write_csv_path(&a.out)?;
    if let Some(p) = &a.report {
        write_json(&report, Some(p))?;
    }
    write_json(&report, None)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let params = load_params(&a.params)?;
    require_out(&a.out)?;
    if a.paths == 0 {
        return Err(usage("--paths must be at least 1"));
    }
    let csv_out = is_csv(&a.out);
    if csv_out && a.paths != 1 {
        return Err(usage("an event CSV holds one path; use --paths 1 or --events-dir"));
    }
    if let Some(h) = a.horizon {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(usage(format!("--horizon must be a finite number >= 0, got {h}")));
        }
    }
    if let Some(dir) = &a.events_dir {
        std::fs::create_dir_all(dir)?;
    }
    let init = match a.init {
        InitArg::Stationary => InitMode::StationaryMean,
        InitArg::BurnIn(s) => InitMode::ZeroWithBurnIn(s),
    };
    let config = SimConfig::new(a.horizon.unwrap_or(0.0), a.paths, a.seed)
        .with_init(init)
        .with_max_events(a.max_events);
    let one = |p: u64| -> mkhawkes_core::Result<EventStream> {
        let s = match a.n_events {
            Some(n) => simulate_n_events(&params, n, init, a.seed, p)?,
            None => simulate_path(&params, &config, p)?,
        };
        if let Some(dir) = &a.events_dir {
            s.write_csv_path(dir.join(format!("path_{p:05}.csv")))?;
        }
        Ok(s)
    };
    if csv_out {
        one(0)?.write_csv_path(&a.out)?;
        return Ok(());
    }
    let streams: Vec<(Vec<usize>, f64)> = (0..a.paths as u64)
        .into_par_iter()
        .map(|p| one(p).map(|s| (s.counts(), s.horizon())))
        .collect::<mkhawkes_core::Result<_>>()?;
    let counts: Vec<Vec<usize>> = streams.iter().map(|s| s.0.clone()).collect();
    // with --n-events the window length varies; report its mean
    let horizon = streams.iter().map(|s| s.1).sum::<f64>() / streams.len() as f64;
    write_json(&EnsembleSummary::from_counts(&counts, horizon, a.seed), Some(&a.out))
}

fn moments(a: MomentsArgs) -> CliResult<()> {
    let params = load_params(&a.params)?;
    require_outs([a.out.as_ref(), a.csv.as_ref()])?;
    if let Some(t) = a.t {
        if !(t > 0.0 && t.is_finite()) {
            return Err(usage(format!("--t must be positive, got {t}")));
        }
    }
    let report = MomentReport::compute(&params, a.t)?;
    if let (Some(path), Some(TGrid(ts))) = (&a.csv, &a.t_grid) {
        let m = params.dim();
        let mut w = csv_writer(Some(path))?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("E_N_{i}")));
        for i in 1..=m {
            header.extend((1..=m).map(|j| format!("E_NN_{i}_{j}")));
        }
        if m == 2 {
            header.push("var_diff".into());
        }
        w.write_record(&header)?;
        for &t in ts {
            let h = report.horizon_moments(t)?;
            let mut row = vec![fmt(t)];
            row.extend(h.mean_counts.iter().map(|&v| fmt(v)));
            row.extend(h.second_moment_counts.iter().flatten().map(|&v| fmt(v)));
            if let Some(v) = h.var_diff {
                row.push(fmt(v));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    write_json(&report, a.out.as_deref())
}

fn write_surface(fit: &FitResult, path: &Path) -> CliResult<()> {
    let surface = fit
        .profile_surface
        .as_ref()
        .ok_or_else(|| usage("the fit has no profile surface; use --method profile"))?;
    let mut w = csv_writer(Some(path))?;
    let mut header: Vec<String> = (1..=fit.kernels).map(|k| format!("beta_{k}")).collect();
    header.push("lstar".into());
    w.write_record(&header)?;
    for (betas, l) in surface.kernel_betas.iter().zip(&surface.lstar) {
        let mut row: Vec<String> = betas.iter().map(|&b| fmt(b)).collect();
        row.push(l.map(fmt).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn estimate(a: EstimateArgs) -> CliResult<()> {
    let profile: ConstraintProfile = a.profile.into();
    let method: Method = a.method.into();
    if a.kernels.is_empty() || a.kernels.contains(&0) {
        return Err(usage("--kernels needs counts of at least 1"));
    }
    if a.surface_csv.is_some() && (method != Method::Profile || a.kernels.len() != 1) {
        return Err(usage("--surface-csv needs --method profile and a single kernel count"));
    }
    require_outs([a.out.as_ref(), a.surface_csv.as_ref()])?;
    let grid = grid_spec(&a.grid)?;
    let stream = load_events(&a.input, profile_dim(profile))?;
    if let [k] = a.kernels[..] {
        let f = fit(&stream, k, profile, method, &grid)?;
        if let Some(p) = &a.surface_csv {
            write_surface(&f, p)?;
        }
        return write_json(&f, a.out.as_deref());
    }
    let mut fits = a
        .kernels
        .iter()
        .map(|&k| fit(&stream, k, profile, method, &grid))
        .collect::<mkhawkes_core::Result<Vec<_>>>()?;
    fits.sort_by(|x, y| x.aic.total_cmp(&y.aic));
    write_json(&ModelSelection { schema_version: SCHEMA_VERSION, fits }, a.out.as_deref())
}

#[derive(Serialize)]
struct BestCell {
    betas: Vec<f64>,
    lstar: f64,
}

#[derive(Serialize)]
struct ScanSummary {
    schema_version: u32,
    kernels: usize,
    beta_range: (f64, f64),
    points: usize,
    cells: usize,
    evaluated: usize,
    skipped: usize,
    failures: usize,
    local_maxima: usize,
    best: Option<BestCell>,
}

fn scan(a: ScanArgs) -> CliResult<()> {
    if !(1..=2).contains(&a.kernels) {
        return Err(usage(format!("scan supports 1 or 2 kernels, got {}", a.kernels)));
    }
    if a.points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    require_outs([Some(&a.out), a.summary.as_ref()])?;
    let profile: ConstraintProfile = a.profile.into();
    let stream = load_events(&a.input, profile_dim(profile))?;
    let (lo, hi) = match a.beta_range {
        Some(r) => r,
        None => default_beta_range(&stream)?,
    };
    let surface = scan_conditional_max(&stream, a.kernels, profile, &ScanGrid::log_spaced(lo, hi, a.points, a.kernels))?;
    let mut w = csv_writer(Some(&a.out))?;
    let mut header: Vec<String> = (1..=a.kernels).map(|k| format!("beta_{k}")).collect();
    header.push("lstar".into());
    w.write_record(&header)?;
    let rows = surface.rows();
    for (betas, l) in &rows {
        let mut row: Vec<String> = betas.iter().map(|&b| fmt(b)).collect();
        row.push(l.map(fmt).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    let best = rows
        .iter()
        .filter_map(|(b, l)| l.map(|l| (b, l)))
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(b, l)| BestCell { betas: b.clone(), lstar: l });
    let summary = ScanSummary {
        schema_version: SCHEMA_VERSION,
        kernels: a.kernels,
        beta_range: (lo, hi),
        points: a.points,
        cells: surface.skipped.len(),
        evaluated: rows.len(),
        skipped: surface.skipped.iter().filter(|&&s| s).count(),
        failures: surface.failures,
        local_maxima: surface.local_maxima,
        best,
    };
    write_json(&summary, a.summary.as_deref())
}

fn diagnose_cmd(a: DiagnoseArgs) -> CliResult<()> {
    require_outs([a.out.as_ref(), a.qq_csv.as_ref(), a.residuals_csv.as_ref()])?;
    let params = load_model(&a.model)?;
    let stream = load_events(&a.input, Some(params.dim()))?;
    let (report, res, qq) = diagnose(&params, &stream)?;
    if let Some(p) = &a.qq_csv {
        let mut w = csv_writer(Some(p))?;
        w.write_record(["theoretical", "empirical"])?;
        for q in &qq {
            w.write_record([fmt(q.theoretical), fmt(q.empirical)])?;
        }
        w.flush()?;
    }
    if let Some(p) = &a.residuals_csv {
        let mut w = csv_writer(Some(p))?;
        w.write_record(["type", "index", "residual"])?;
        for (i, r) in res.per_type.iter().enumerate() {
            for (n, v) in r.iter().enumerate() {
                w.write_record([(i + 1).to_string(), n.to_string(), fmt(*v)])?;
            }
        }
        w.flush()?;
    }
    write_json(&report, a.out.as_deref())
}

fn respond(a: RespondArgs) -> CliResult<()> {
    require_outs([a.out.as_ref(), a.json.as_ref()])?;
    let params = load_model(&a.model)?;
    let report = responsiveness(&params, a.normalized)?;
    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(["kernel", "kind", "target", "source", "alpha", "beta", "p_finite", "e_tau_s", "e_tau_us"])?;
    for e in &report.entries {
        let kernel = if e.kernel == 0 { "base".to_string() } else { e.kernel.to_string() };
        let source = if e.source == 0 { String::new() } else { e.source.to_string() };
        w.write_record([
            kernel,
            e.kind.clone(),
            e.target.to_string(),
            source,
            fmt(e.alpha),
            fmt(e.beta),
            fmt(e.p_finite),
            e.e_tau.map(fmt).unwrap_or_default(),
            e.e_tau.map(|v| fmt(v * 1e6)).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    if let Some(p) = &a.json {
        write_json(&report, Some(p))?;
    }
    Ok(())
}

fn share_row(label: String, s: &Shares) -> Vec<String> {
    let mut row = vec![label, s.n_events.to_string(), fmt(100.0 * s.base)];
    row.extend(s.kernels.iter().map(|&k| fmt(100.0 * k)));
    row
}

fn attribute(a: AttributeArgs) -> CliResult<()> {
    require_outs([a.out.as_ref(), a.json.as_ref()])?;
    let params = load_model(&a.model)?;
    let stream = load_events(&a.input, Some(params.dim()))?;
    let report = attribute_causes(&params, &stream)?;
    let mut w = csv_writer(a.out.as_deref())?;
    let mut header = vec!["type".to_string(), "n_events".into(), "base_pct".into()];
    header.extend((1..=params.kernels()).map(|k| format!("kernel_{k}_pct")));
    w.write_record(&header)?;
    for (i, s) in report.per_type.iter().enumerate() {
        w.write_record(share_row((i + 1).to_string(), s))?;
    }
    w.write_record(share_row("all".into(), &report.pooled))?;
    w.flush()?;
    if let Some(p) = &a.json {
        write_json(&report, Some(p))?;
    }
    Ok(())
}

fn success_rate(a: SuccessRateArgs) -> CliResult<()> {
    if a.branching.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
        return Err(usage("--branching values must lie in (0, 1)"));
    }
    if a.sizes.iter().any(|&n| n < 2) || a.reps == 0 || a.scan_points < 3 {
        return Err(usage("--sizes must be >= 2, --reps >= 1 and --scan-points >= 3"));
    }
    if !(a.mu > 0.0 && a.beta > 0.0) {
        return Err(usage("--mu and --beta must be positive"));
    }
    require_outs([a.out.as_ref()])?;
    let config = ExperimentConfig { mu: a.mu, beta: a.beta, scan_range: a.scan_range, scan_points: a.scan_points };
    let rows = success_rate_experiment(&a.branching, &a.sizes, a.reps, a.seed, &config)?;
    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(["branching", "n", "rate", "successes", "reps"])?;
    for r in &rows {
        w.write_record([fmt(r.branching), r.n.to_string(), fmt(r.rate), r.successes.to_string(), r.reps.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BatchFit {
    file: String,
    output: String,
    n_events: usize,
    loglik: f64,
    aic: f64,
    converged: bool,
}

#[derive(Serialize)]
struct BatchFailure {
    file: String,
    kind: String,
    message: String,
}

#[derive(Serialize)]
struct BatchReport {
    schema_version: u32,
    files: usize,
    fits: Vec<BatchFit>,
    failures: Vec<BatchFailure>,
    summary: Vec<ParameterSummary>,
}

type FileOutcome = Result<(FitResult, PathBuf), HawkesError>;

fn batch(a: BatchArgs) -> CliResult<()> {
    let files: Vec<PathBuf> = glob::glob(&a.glob)
        .map_err(|e| usage(format!("bad glob '{}': {e}", a.glob)))?
        .filter_map(|r| r.ok())
        .filter(|p| p.is_file())
        .collect();
    if files.is_empty() {
        return Err(usage(format!("no files match '{}'", a.glob)));
    }
    if a.kernels == 0 {
        return Err(usage("--kernels must be at least 1"));
    }
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut seen = HashSet::new();
    if let Some(dup) = files.iter().find(|p| !seen.insert(stem(p))) {
        return Err(usage(format!("two inputs share the file stem of {}", dup.display())));
    }
    require_outs([a.summary.as_ref(), a.out.as_ref()])?;
    std::fs::create_dir_all(&a.out_dir)?;
    let grid = grid_spec(&a.grid)?;
    let profile: ConstraintProfile = a.profile.into();
    let method: Method = a.method.into();
    let m = a.types.or(profile_dim(profile));
    let outcomes: Vec<(PathBuf, FileOutcome)> = files
        .par_iter()
        .map(|path| {
            let out = a.out_dir.join(format!("{}.fit.json", stem(path)));
            let r = EventStream::read_csv_path(path, m, None)
                .and_then(|s| fit(&s, a.kernels, profile, method, &grid))
                .and_then(|f| {
                    std::fs::write(&out, f.to_json()?)?;
                    Ok((f, out))
                });
            (path.clone(), r)
        })
        .collect();
    let mut fits = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (path, r) in outcomes {
        match r {
            Ok((f, out)) => {
                rows.push(BatchFit {
                    file: path.display().to_string(),
                    output: out.display().to_string(),
                    n_events: f.n_events,
                    loglik: f.loglik,
                    aic: f.aic,
                    converged: f.converged,
                });
                fits.push(f);
            }
            Err(e) => {
                log::warn!("{}: {e}", path.display());
                failures.push(BatchFailure { file: path.display().to_string(), kind: kind(&e).into(), message: e.to_string() });
            }
        }
    }
    let summary = if fits.is_empty() { Vec::new() } else { summarize_fits(&fits)? };
    let summary_path = a.summary.clone().unwrap_or_else(|| a.out_dir.join("summary.csv"));
    let mut w = csv_writer(Some(&summary_path))?;
    w.write_record(["parameter", "n", "mean", "median", "sd"])?;
    for s in &summary {
        w.write_record([s.name.clone(), s.n.to_string(), fmt(s.mean), fmt(s.median), fmt(s.sd)])?;
    }
    w.flush()?;
    let n_files = files.len();
    let report = BatchReport { schema_version: SCHEMA_VERSION, files: n_files, fits: rows, failures, summary };
    write_json(&report, a.out.as_deref())?;
    if fits.is_empty() {
        return Err(CliError::Compute(HawkesError::InsufficientData(format!("all {n_files} files failed"))));
    }
    Ok(())
}

/// Long help of the root command and every subcommand, as Markdown.
pub fn manual() -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let mut out = String::from("# mkhawkes manual\n\n");
    fn walk(cmd: &clap::Command, out: &mut String) {
        let name = cmd.get_bin_name().unwrap_or(cmd.get_name()).to_string();
        out.push_str(&format!("## {name}\n\n```text\n{}\n```\n\n", cmd.clone().render_long_help().to_string().trim_end()));
        for sub in cmd.get_subcommands().filter(|s| s.get_name() != "help") {
            walk(sub, out);
        }
    }
    walk(&cmd, &mut out);
    out
}
