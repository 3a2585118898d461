use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mkhawkes_core::estimate::Method;
use mkhawkes_core::ConstraintProfile;

/// Multi-kernel exponential Hawkes models for mid-price event streams.
///
/// Exit status: 0 on success, 2 on a usage error, 1 when a computation
/// fails. Failures print a JSON object `{"schema_version", "error": {kind,
/// message, exit_code}}` on stderr.
#[derive(Debug, Parser)]
#[command(name = "mkhawkes", version, propagate_version = true)]
pub struct Cli {
    /// Worker threads for grids, paths and files (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a quote file into up/down mid-price events.
    Ingest(IngestArgs),
    /// Simulate event paths by thinning.
    Simulate(SimulateArgs),
    /// Stationary moments of the intensity and the counts.
    Moments(MomentsArgs),
    /// Fit a model to an event file.
    Estimate(EstimateArgs),
    /// Evaluate the profile likelihood over a decay grid.
    Scan(ScanArgs),
    /// Time-rescaled residuals, Q-Q points and KS statistics.
    Diagnose(DiagnoseArgs),
    /// Arrival probabilities and expected response times per kernel.
    Respond(RespondArgs),
    /// Share of events caused by the baseline and by each kernel.
    Attribute(AttributeArgs),
    /// Simulation experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Fit every file matching a glob and summarize the estimates.
    Batch(BatchArgs),
    /// Print the manual for every subcommand as Markdown.
    Manual,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Fraction of univariate paths whose profile likelihood has one local maximum.
    SuccessRate(SuccessRateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Sym2,
    Markov,
    Full,
    Scalar,
}

impl From<ProfileArg> for ConstraintProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Sym2 => ConstraintProfile::SymmetricBivariate,
            ProfileArg::Markov => ConstraintProfile::MarkovRow,
            ProfileArg::Full => ConstraintProfile::Full,
            ProfileArg::Scalar => ConstraintProfile::ScalarPerKernel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Profile,
    Direct,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Profile => Method::Profile,
            MethodArg::Direct => Method::Direct,
        }
    }
}

/// Parses `a:b` into a pair.
fn pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String>
where
    T::Err: std::fmt::Display,
{
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got '{s}'"))?;
    let a = a.trim().parse::<T>().map_err(|e| format!("'{a}': {e}"))?;
    let b = b.trim().parse::<T>().map_err(|e| format!("'{b}': {e}"))?;
    Ok((a, b))
}

pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = pair::<f64>(s)?;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(format!("need 0 < LO < HI, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

pub fn parse_session(s: &str) -> Result<(i64, i64), String> {
    let (a, b) = pair::<i64>(s)?;
    if b <= a {
        return Err(format!("session end {b} must be after start {a}"));
    }
    Ok((a, b))
}

/// Horizons for the moments CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TGrid(pub Vec<f64>);

/// `LO:HI:N`, N ≥ 1 points spaced evenly.
pub fn parse_t_grid(s: &str) -> Result<TGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected LO:HI:N, got '{s}'"));
    }
    let lo: f64 = parts[0].trim().parse().map_err(|e| format!("'{}': {e}", parts[0]))?;
    let hi: f64 = parts[1].trim().parse().map_err(|e| format!("'{}': {e}", parts[1]))?;
    let n: usize = parts[2].trim().parse().map_err(|e| format!("'{}': {e}", parts[2]))?;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || n == 0 {
        return Err(format!("need 0 < LO <= HI and N >= 1, got '{s}'"));
    }
    if n == 1 {
        return Ok(TGrid(vec![lo]));
    }
    Ok(TGrid((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitArg {
    Stationary,
    BurnIn(f64),
}

pub fn parse_init(s: &str) -> Result<InitArg, String> {
    if s == "stationary" {
        return Ok(InitArg::Stationary);
    }
    if let Some(v) = s.strip_prefix("burn-in:") {
        let secs: f64 = v.parse().map_err(|e| format!("burn-in seconds '{v}': {e}"))?;
        if !(secs >= 0.0 && secs.is_finite()) {
            return Err(format!("burn-in seconds must be >= 0, got {secs}"));
        }
        return Ok(InitArg::BurnIn(secs));
    }
    Err(format!("expected 'stationary' or 'burn-in:SECONDS', got '{s}'"))
}

/// Where the model comes from: a params file or a fit result.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ModelSource {
    /// Model parameters JSON.
    #[arg(long, value_name = "PATH")]
    pub params: Option<PathBuf>,
    /// Fit JSON written by `estimate`; its fitted parameters are used (the lowest-AIC fit for a
    /// multi-kernel selection).
    #[arg(long, value_name = "PATH")]
    pub fit: Option<PathBuf>,
}

/// Event file and the observation window.
#[derive(Debug, Args)]
pub struct EventsInput {
    /// Event CSV with header `timestamp_ns,type`.
    #[arg(long, value_name = "PATH")]
    pub events: PathBuf,
    /// Observation window START_NS:END_NS; defaults to the first and last event.
    #[arg(long, value_name = "START:END", value_parser = parse_session)]
    pub session: Option<(i64, i64)>,
    /// Number of event types; defaults to the model's, or the largest type seen.
    #[arg(long, value_name = "M")]
    pub types: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Grid points per kernel axis.
    #[arg(long, default_value_t = 15, value_name = "N")]
    pub grid_points: usize,
    /// Decay range LO:HI in 1/s; defaults to the inverse 0.9 and 0.01 quantiles of the gaps.
    #[arg(long, value_name = "LO:HI", value_parser = parse_range)]
    pub beta_range: Option<(f64, f64)>,
    /// Skip the local grid refinement around the best cell.
    #[arg(long)]
    pub no_refine: bool,
    /// Skip the final simplex polish in log decay.
    #[arg(long)]
    pub no_polish: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Quote CSV with header `timestamp_ns,bid,ask`.
    #[arg(long, value_name = "PATH")]
    pub quotes: PathBuf,
    /// Output event CSV (`timestamp_ns,type`; 1 = up, 2 = down).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Keep events in [START_NS, END_NS); earlier quotes still set the reference mid.
    #[arg(long, value_name = "START:END", value_parser = parse_session)]
    pub session: Option<(i64, i64)>,
    /// Also write the ingest report JSON here (it is always printed to stdout).
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model parameters JSON.
    #[arg(long, value_name = "PATH")]
    pub params: PathBuf,
    /// Horizon in seconds.
    #[arg(long, value_name = "SECONDS", required_unless_present = "n_events", conflicts_with = "n_events")]
    pub horizon: Option<f64>,
    /// Simulate until this many events instead of a fixed horizon; the window ends at the last event.
    #[arg(long, value_name = "N")]
    pub n_events: Option<usize>,
    /// Number of independent paths.
    #[arg(long, default_value_t = 1, value_name = "N")]
    pub paths: usize,
    /// Master seed; path p uses stream p of this seed.
    #[arg(long)]
    pub seed: u64,
    /// Initial state: `stationary` (mean intensity) or `burn-in:SECONDS` from zero excitation.
    #[arg(long, default_value = "stationary", value_parser = parse_init)]
    pub init: InitArg,
    /// Abort a path that exceeds this many events.
    #[arg(long, default_value_t = 50_000_000, value_name = "N")]
    pub max_events: usize,
    /// `*.csv` writes the events of a single path; anything else gets the ensemble summary JSON.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Also write each path's events to DIR/path_NNNNN.csv.
    #[arg(long, value_name = "DIR")]
    pub events_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    /// Model parameters JSON.
    #[arg(long, value_name = "PATH")]
    pub params: PathBuf,
    /// Horizon for the count moments, in seconds.
    #[arg(long, value_name = "SECONDS")]
    pub t: Option<f64>,
    /// Report JSON; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Write E[N], E[N Nᵀ] and Var(N1 - N2) over `--t-grid` to this CSV.
    #[arg(long, value_name = "PATH", requires = "t_grid")]
    pub csv: Option<PathBuf>,
    /// Horizons LO:HI:N for `--csv`.
    #[arg(long, value_name = "LO:HI:N", value_parser = parse_t_grid, requires = "csv")]
    pub t_grid: Option<TGrid>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: EventsInput,
    /// Kernel counts; several (e.g. 1,2,3) produce a ranking by AIC.
    #[arg(long, value_delimiter = ',', default_value = "1", value_name = "K[,K...]")]
    pub kernels: Vec<usize>,
    /// Constraint profile.
    #[arg(long, value_enum, default_value_t = ProfileArg::Sym2)]
    pub profile: ProfileArg,
    /// Profile likelihood over a decay grid, or BFGS over all parameters.
    #[arg(long, value_enum, default_value_t = MethodArg::Profile)]
    pub method: MethodArg,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Fit JSON; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Write the profile surface (beta_1..beta_K,lstar) to this CSV.
    #[arg(long, value_name = "PATH")]
    pub surface_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub input: EventsInput,
    /// 1 or 2 kernels.
    #[arg(long, default_value_t = 1, value_name = "K")]
    pub kernels: usize,
    #[arg(long, value_enum, default_value_t = ProfileArg::Sym2)]
    pub profile: ProfileArg,
    /// Decay range LO:HI in 1/s; defaults to the data's time scales.
    #[arg(long, value_name = "LO:HI", value_parser = parse_range)]
    pub beta_range: Option<(f64, f64)>,
    /// Log-spaced points per axis.
    #[arg(long, default_value_t = 31, value_name = "N")]
    pub points: usize,
    /// Surface CSV: beta_1[,beta_2],lstar (empty lstar where skipped or failed).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Summary JSON; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub model: ModelSource,
    #[command(flatten)]
    pub input: EventsInput,
    /// Report JSON; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Q-Q CSV: theoretical,empirical for the pooled residuals.
    #[arg(long, value_name = "PATH")]
    pub qq_csv: Option<PathBuf>,
    /// Residual CSV: type,index,residual.
    #[arg(long, value_name = "PATH")]
    pub residuals_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RespondArgs {
    #[command(flatten)]
    pub model: ModelSource,
    /// Divide the expected time by the arrival probability.
    #[arg(long)]
    pub normalized: bool,
    /// CSV; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub model: ModelSource,
    #[command(flatten)]
    pub input: EventsInput,
    /// Percentage CSV; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SuccessRateArgs {
    /// Branching ratios α/β.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,0.9", value_name = "B[,B...]")]
    pub branching: Vec<f64>,
    /// Events per path.
    #[arg(long, value_delimiter = ',', default_value = "150,500", value_name = "N[,N...]")]
    pub sizes: Vec<usize>,
    /// Paths per (branching, size) cell.
    #[arg(long, default_value_t = 20, value_name = "N")]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    /// Baseline rate.
    #[arg(long, default_value_t = 0.2)]
    pub mu: f64,
    /// True decay.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Scan range as multiples of the true decay.
    #[arg(long, default_value = "0.1:10", value_name = "LO:HI", value_parser = parse_range)]
    pub scan_range: (f64, f64),
    #[arg(long, default_value_t = 41, value_name = "N")]
    pub scan_points: usize,
    /// CSV branching,n,rate,successes,reps; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Event files, e.g. 'days/*.csv'.
    #[arg(long, value_name = "PATTERN")]
    pub glob: String,
    #[arg(long, default_value_t = 1, value_name = "K")]
    pub kernels: usize,
    #[arg(long, value_enum, default_value_t = ProfileArg::Sym2)]
    pub profile: ProfileArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Profile)]
    pub method: MethodArg,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Number of event types; defaults to 2 for sym2, else the largest type seen.
    #[arg(long, value_name = "M")]
    pub types: Option<usize>,
    /// Per-file fits go to DIR/<stem>.fit.json.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Summary CSV parameter,n,mean,median,sd; defaults to DIR/summary.csv.
    #[arg(long, value_name = "PATH")]
    pub summary: Option<PathBuf>,
    /// Batch report JSON; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}
