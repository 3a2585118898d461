//! Maximum-likelihood estimation.
//!
//! Two strategies share the same likelihood layer:
//!
//! * profile search: `L*(β) = max_{μ,α} L(μ, α | β)` is evaluated on a
//!   log-spaced grid of kernel decays (each inner problem is concave), the
//!   best cell is refined and finally polished with Nelder-Mead in `log β`;
//! * direct search: BFGS over `log` of every free parameter.
//!
//! Kernels are reported fastest first.

use std::sync::atomic::{AtomicUsize, Ordering};

use argmin::core::{CostFunction, Error as ArgminError, Executor, Gradient, State, TerminationStatus};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::neldermead::NelderMead;
use argmin::solver::quasinewton::BFGS;
use argmin_math::ArgminL2Norm;
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concave::{maximize, ConcaveFit, ConcaveOptions, MU_FLOOR};
use crate::error::{HawkesError, Result};
use crate::layout::ParamLayout;
use crate::likelihood::{log_likelihood, sufficient_stats, LinearDesign};
use crate::model::{ConstraintProfile, ModelParams};
use crate::simulate::path_rng;
use crate::stream::EventStream;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Profile,
    Direct,
}

impl std::str::FromStr for Method {
    type Err = HawkesError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "profile" => Ok(Method::Profile),
            "direct" => Ok(Method::Direct),
            other => Err(HawkesError::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// Grid used by the profile search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Points per kernel axis.
    pub points: usize,
    /// Decay range; defaults to the data's time scales.
    pub range: Option<(f64, f64)>,
    pub refine: bool,
    pub polish: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { points: 15, range: None, refine: true, polish: true }
    }
}

impl GridSpec {
    pub fn with_points(mut self, points: usize) -> Self {
        self.points = points;
        self
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.range = Some((lo, hi));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeParameter {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
}

/// Standard errors laid out like [`ModelParams`]; tied entries share a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapedErrors {
    pub mu: Vec<Option<f64>>,
    pub alpha: Vec<Vec<Vec<Option<f64>>>>,
    pub beta: Vec<Vec<Vec<Option<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub objective_evaluations: usize,
    pub iterations: usize,
    pub restarts: usize,
    pub grid_points: usize,
    pub grid_failures: usize,
    pub inner_converged: bool,
    pub termination: String,
}

/// `(β, L*(β))` pairs visited by a profile search, one decay per kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSurface {
    pub kernel_betas: Vec<Vec<f64>>,
    pub lstar: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub schema_version: u32,
    pub method: Method,
    pub kernels: usize,
    pub params_hat: ModelParams,
    pub parameters: Vec<FreeParameter>,
    pub std_errors: ShapedErrors,
    pub information_positive_definite: bool,
    pub loglik: f64,
    pub aic: f64,
    pub n_free: usize,
    pub n_events: usize,
    pub converged: bool,
    /// Largest eigenvalue of the inner (μ, α) Hessian over its spectral norm.
    pub concavity_ratio: f64,
    pub trace: OptimizerTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_surface: Option<ProfileSurface>,
}

impl FitResult {
    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).and_then(|p| p.std_error)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.estimate)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn aic(loglik: f64, n_free: usize) -> f64 {
    2.0 * n_free as f64 - 2.0 * loglik
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// `[1/q₀.₉, 1/q₀.₀₁]` of the pooled inter-event times.
pub fn default_beta_range(stream: &EventStream) -> Result<(f64, f64)> {
    if stream.len() < 3 {
        return Err(HawkesError::InsufficientData("need at least 3 events for a decay range".into()));
    }
    let t = stream.times_ns();
    let mut gaps: Vec<f64> = t.windows(2).map(|w| (w[1] - w[0]) as f64 * 1e-9).collect();
    gaps.sort_by(f64::total_cmp);
    let lo = 1.0 / quantile_sorted(&gaps, 0.9);
    let hi = 1.0 / quantile_sorted(&gaps, 0.01);
    if hi / lo < 4.0 {
        let mid = (lo * hi).sqrt();
        return Ok((mid / 2.0, mid * 2.0));
    }
    Ok((lo, hi))
}

/// `n` log-spaced points from `hi` down to `lo`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo * hi).sqrt()];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn check_data(stream: &EventStream, layout: &ParamLayout) -> Result<()> {
    if stream.dim() != layout.dim() {
        return Err(HawkesError::DimensionMismatch(format!(
            "stream has {} types, layout expects {}",
            stream.dim(),
            layout.dim()
        )));
    }
    if let Some((i, c)) = stream.counts().iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(HawkesError::InsufficientData(format!("type {} has {c} events, need >= 2", i + 1)));
    }
    Ok(())
}

/// Conditional problem at fixed decays.
pub struct ProfileProblem<'a> {
    stream: &'a EventStream,
    layout: ParamLayout,
    rates: Vec<f64>,
    options: ConcaveOptions,
}

impl<'a> ProfileProblem<'a> {
    pub fn new(stream: &'a EventStream, profile: ConstraintProfile, kernels: usize) -> Result<Self> {
        let layout = ParamLayout::new(profile, stream.dim(), kernels)?;
        check_data(stream, &layout)?;
        let t = stream.horizon();
        let rates = stream.counts().iter().map(|&c| c as f64 / t).collect();
        Ok(ProfileProblem { stream, layout, rates, options: ConcaveOptions::default() })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn stream(&self) -> &EventStream {
        self.stream
    }

    /// Half the empirical rate for μ and `0.5·β/(mK)` per α entry.
    pub fn default_linear(&self, betas: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let m = l.dim();
        let mut lin = vec![0.0; l.n_linear()];
        let mut n = vec![0usize; l.n_linear()];
        for (i, &ix) in l.mu_index().iter().enumerate() {
            lin[ix] += 0.5 * self.rates[i];
            n[ix] += 1;
        }
        let beta = l.beta_flat(betas);
        for (flat, &ix) in l.alpha_index().iter().enumerate() {
            lin[ix] += 0.5 * beta[flat] / (m * l.kernels()) as f64;
            n[ix] += 1;
        }
        lin.iter_mut().zip(&n).for_each(|(v, &c)| *v /= c as f64);
        lin
    }

    fn lower(&self) -> Vec<f64> {
        (0..self.layout.n_linear())
            .map(|j| if self.layout.is_mu(j) { MU_FLOOR } else { 0.0 })
            .collect()
    }

    pub fn design(&self, betas: &[f64]) -> Result<LinearDesign> {
        if betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(HawkesError::InvalidArgument(format!("decays must be positive: {betas:?}")));
        }
        let dummy = self.layout.to_params(&self.default_linear(betas), betas)?;
        let stats = sufficient_stats(&dummy, self.stream)?;
        let l = &self.layout;
        Ok(LinearDesign::new(&stats, l.n_linear(), l.mu_index(), l.alpha_index()))
    }

    /// Maximizes the concave conditional likelihood; `None` if the inner solve fails.
    pub fn solve(&self, betas: &[f64]) -> Option<ConcaveFit> {
        let design = self.design(betas).ok()?;
        let fit = maximize(&design, &self.default_linear(betas), &self.lower(), &self.options)?;
        fit.converged.then_some(fit)
    }

    pub fn lstar(&self, betas: &[f64]) -> Option<f64> {
        self.solve(betas).map(|f| f.value)
    }

    /// Decay block with every decay of kernel `k` set to `speeds[k]`.
    pub fn kernel_betas(&self, speeds: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.layout.n_beta()];
        for (k, &s) in speeds.iter().enumerate() {
            for ix in self.layout.beta_index_of_kernel(k) {
                b[ix] = s;
            }
        }
        b
    }
}

fn decreasing_tuples(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

struct NmObjective<'p, 'a> {
    problem: &'p ProfileProblem<'a>,
    evals: AtomicUsize,
}

impl CostFunction for NmObjective<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, ArgminError> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let betas: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        Ok(self.problem.lstar(&betas).map_or(f64::INFINITY, |v| -v))
    }
}

/// Profile-likelihood estimation.
pub fn fit_profile(
    stream: &EventStream,
    kernels: usize,
    profile: ConstraintProfile,
    grid: &GridSpec,
) -> Result<FitResult> {
    if grid.points == 0 {
        return Err(HawkesError::InvalidArgument("empty decay grid".into()));
    }
    let problem = ProfileProblem::new(stream, profile, kernels)?;
    let (lo, hi) = match grid.range {
        Some(r) => r,
        None => default_beta_range(stream)?,
    };
    if !(lo > 0.0 && hi >= lo) {
        return Err(HawkesError::InvalidArgument(format!("bad decay range [{lo}, {hi}]")));
    }
    let axis = log_grid(lo, hi, grid.points);
    let step = if grid.points > 1 { (hi / lo).ln() / (grid.points - 1) as f64 } else { 0.5 };
    let mut speeds: Vec<Vec<f64>> = decreasing_tuples(axis.len(), kernels)
        .into_iter()
        .map(|ix| ix.iter().map(|&i| axis[i]).collect())
        .collect();
    if speeds.is_empty() {
        return Err(HawkesError::InvalidArgument(format!(
            "{} grid points cannot hold {kernels} distinct kernel decays",
            grid.points
        )));
    }
    let mut values: Vec<Option<f64>> =
        speeds.par_iter().map(|s| problem.lstar(&problem.kernel_betas(s))).collect();
    let argbest = |values: &[Option<f64>]| {
        values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((i, v)),
            })
    };
    let (mut best, _) = argbest(&values)
        .ok_or_else(|| HawkesError::Optimizer("conditional maximization failed at every grid point".into()))?;
    if grid.refine && grid.points > 1 {
        let centre = speeds[best].clone();
        let offsets = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let mut extra = Vec::new();
        let total = offsets.len().pow(kernels as u32);
        for code in 0..total {
            let mut c = code;
            let mut s = Vec::with_capacity(kernels);
            for k in 0..kernels {
                s.push(centre[k] * (offsets[c % offsets.len()] * step).exp());
                c /= offsets.len();
            }
            if s.windows(2).all(|w| w[0] > w[1]) && s != centre {
                extra.push(s);
            }
        }
        let vals: Vec<Option<f64>> = extra.par_iter().map(|s| problem.lstar(&problem.kernel_betas(s))).collect();
        speeds.extend(extra);
        values.extend(vals);
        best = argbest(&values).map(|(i, _)| i).unwrap_or(best);
    }
    let grid_failures = values.iter().filter(|v| v.is_none()).count();
    let mut betas = problem.kernel_betas(&speeds[best]);
    let mut evaluations = values.len();
    let mut iterations = 0;
    let mut termination = "grid".to_string();
    if grid.polish {
        let x0: Vec<f64> = betas.iter().map(|b| b.ln()).collect();
        let delta = 0.25 * step.max(0.05);
        let mut simplex = vec![x0.clone()];
        for b in 0..x0.len() {
            let mut v = x0.clone();
            v[b] += delta;
            simplex.push(v);
        }
        let objective = NmObjective { problem: &problem, evals: AtomicUsize::new(0) };
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-10)
            .map_err(|e| HawkesError::Optimizer(e.to_string()))?;
        let res = Executor::new(objective, solver)
            .configure(|s| s.max_iters(300 * x0.len() as u64))
            .run()
            .map_err(|e| HawkesError::Optimizer(e.to_string()))?;
        let state = res.state();
        if let Some(x) = state.get_best_param() {
            let cand: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            let gridbest = values[best].unwrap_or(f64::NEG_INFINITY);
            if problem.lstar(&cand).is_some_and(|v| v >= gridbest) {
                betas = cand;
            }
        }
        iterations = state.get_iter() as usize;
        termination = termination_label(state.get_termination_status());
        evaluations += res.problem.problem.as_ref().map_or(0, |o| o.evals.load(Ordering::Relaxed));
    }
    let inner = problem
        .solve(&betas)
        .ok_or_else(|| HawkesError::Optimizer("inner solve failed at the selected decays".into()))?;
    let params = problem.layout.to_params(&inner.theta, &betas)?;
    let trace = OptimizerTrace {
        objective_evaluations: evaluations,
        iterations,
        restarts: 0,
        grid_points: values.len(),
        grid_failures,
        inner_converged: inner.converged,
        termination,
    };
    let surface = ProfileSurface { kernel_betas: speeds, lstar: values };
    finish(stream, &params, Method::Profile, trace, Some(surface), inner.converged)
}

fn termination_label(t: &TerminationStatus) -> String {
    match t {
        TerminationStatus::Terminated(r) => format!("{r:?}"),
        TerminationStatus::NotTerminated => "not terminated".into(),
    }
}

struct DirectObjective<'p, 'a> {
    problem: &'p ProfileProblem<'a>,
    evals: AtomicUsize,
}

impl DirectObjective<'_, '_> {
    fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nl = self.problem.layout.n_linear();
        (x[..nl].iter().map(|v| v.exp()).collect(), x[nl..].iter().map(|v| v.exp()).collect())
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let (lin, bet) = self.split(x);
        let d = self.problem.design(&bet)?;
        d.value(&lin)
            .map(|v| -v)
            .ok_or_else(|| HawkesError::InvalidParameters("non-positive intensity".into()))
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let nl = self.problem.layout.n_linear();
        let (lin, bet) = self.split(x);
        let d = self.problem.design(&bet)?;
        let (_, g, _) = d
            .derivatives(&lin)
            .ok_or_else(|| HawkesError::InvalidParameters("non-positive intensity".into()))?;
        let mut out: Vec<f64> = (0..nl).map(|j| -g[j] * lin[j]).collect();
        let h = 1e-5;
        for b in nl..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[b] += h;
            xm[b] -= h;
            out.push((self.value(&xp)? - self.value(&xm)?) / (2.0 * h));
        }
        Ok(out)
    }
}

impl CostFunction for DirectObjective<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, ArgminError> {
        Ok(self.value(x)?)
    }
}

impl Gradient for DirectObjective<'_, '_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Vec<f64>) -> std::result::Result<Vec<f64>, ArgminError> {
        Ok(self.grad(x)?)
    }
}

/// Quasi-Newton estimation over the log of every free parameter.
///
/// Without `init`, decays are log-spaced over [`default_beta_range`] and
/// the linear block uses [`ProfileProblem::default_linear`].
pub fn fit_direct(
    stream: &EventStream,
    kernels: usize,
    profile: ConstraintProfile,
    init: Option<&ModelParams>,
) -> Result<FitResult> {
    let problem = ProfileProblem::new(stream, profile, kernels)?;
    let layout = problem.layout().clone();
    let (lin0, bet0) = match init {
        Some(p) => {
            if p.profile() != profile {
                return Err(HawkesError::InvalidArgument(format!(
                    "initial parameters use profile {}, fit requests {}",
                    p.profile(),
                    profile
                )));
            }
            layout.from_params(p)?
        }
        None => {
            let (lo, hi) = default_beta_range(stream)?;
            let bet = problem.kernel_betas(&log_grid(lo, hi, kernels));
            (problem.default_linear(&bet), bet)
        }
    };
    let x0: Vec<f64> = lin0.iter().chain(&bet0).map(|v| v.max(1e-12).ln()).collect();
    let n_events = stream.len() as f64;
    let mut restarts = 0;
    let mut evaluations = 0;
    let mut start = x0.clone();
    loop {
        let objective = DirectObjective { problem: &problem, evals: AtomicUsize::new(0) };
        let attempt = (|| -> Result<(Vec<f64>, f64, usize, String)> {
            let f0 = objective.value(&start)?;
            let inv_h = initial_inverse_hessian(&problem, &start, n_events)?;
            let solver = BFGS::new(MoreThuenteLineSearch::new())
                .with_tolerance_grad(1e-7 * f0.abs().max(1.0))
                .and_then(|s| s.with_tolerance_cost(1e-15))
                .map_err(|e| HawkesError::Optimizer(e.to_string()))?;
            let res = Executor::new(objective, solver)
                .configure(|s| s.param(start.clone()).inv_hessian(inv_h).max_iters(500))
                .run()
                .map_err(|e| HawkesError::Optimizer(e.to_string()))?;
            let state = res.state();
            let x = state
                .get_best_param()
                .cloned()
                .ok_or_else(|| HawkesError::Optimizer("no iterate".into()))?;
            let evals = res.problem.problem.as_ref().map_or(0, |o| o.evals.load(Ordering::Relaxed));
            if !state.get_best_cost().is_finite() {
                return Err(HawkesError::Optimizer("non-finite objective".into()));
            }
            Ok((x, evals as f64, state.get_iter() as usize, termination_label(state.get_termination_status())))
        })();
        match attempt {
            Ok((x, evals, iters, term)) => {
                evaluations += evals as usize;
                let probe = DirectObjective { problem: &problem, evals: AtomicUsize::new(0) };
                let f = probe.value(&x)?;
                let g = probe.grad(&x)?;
                let gnorm: f64 = g.l2_norm();
                let converged = gnorm < 1e-6 * f.abs().max(1.0);
                let (lin, bet) = probe.split(&x);
                let params = layout.to_params(&lin, &bet)?;
                let trace = OptimizerTrace {
                    objective_evaluations: evaluations,
                    iterations: iters,
                    restarts,
                    grid_points: 0,
                    grid_failures: 0,
                    inner_converged: true,
                    termination: term,
                };
                return finish(stream, &params, Method::Direct, trace, None, converged);
            }
            Err(e) => {
                if restarts == 3 {
                    return Err(HawkesError::Optimizer(format!("direct fit failed after 3 restarts: {e}")));
                }
                restarts += 1;
                log::warn!("direct fit attempt {restarts} failed ({e}); restarting from a perturbed start");
                let mut rng = path_rng(0x5eed, restarts as u64);
                start = x0.iter().map(|v| v + rng.random_range(-0.2..0.2)).collect();
            }
        }
    }
}

fn initial_inverse_hessian(problem: &ProfileProblem, x: &[f64], n_events: f64) -> Result<Vec<Vec<f64>>> {
    let nl = problem.layout.n_linear();
    let lin: Vec<f64> = x[..nl].iter().map(|v| v.exp()).collect();
    let bet: Vec<f64> = x[nl..].iter().map(|v| v.exp()).collect();
    let d = problem.design(&bet)?;
    let (_, _, h) = d
        .derivatives(&lin)
        .ok_or_else(|| HawkesError::InvalidParameters("non-positive intensity".into()))?;
    let n = x.len();
    let mut out = vec![vec![0.0; n]; n];
    for j in 0..n {
        let curv = if j < nl { -h[(j, j)] * lin[j] * lin[j] } else { n_events };
        out[j][j] = 1.0 / curv.max(1e-3);
    }
    Ok(out)
}

/// Standard errors from the inverse observed information.
#[derive(Debug, Clone)]
pub struct StdErrors {
    /// Free-parameter order of [`ParamLayout::names`].
    pub values: Vec<Option<f64>>,
    pub information_positive_definite: bool,
    pub information: DMatrix<f64>,
}

/// Observed information in the free parameters (linear block, then decays).
///
/// The (μ, α) block is analytic, mixed terms difference the analytic
/// gradient, and the decay block uses second differences of `L`.
pub fn observed_information(params: &ModelParams, stream: &EventStream) -> Result<DMatrix<f64>> {
    let layout = ParamLayout::new(params.profile(), params.dim(), params.kernels())?;
    if stream.dim() != layout.dim() {
        return Err(HawkesError::DimensionMismatch(format!(
            "stream has {} types, model has {}",
            stream.dim(),
            layout.dim()
        )));
    }
    let (lin, bet) = layout.from_params(params)?;
    let nl = lin.len();
    let nb = bet.len();
    let design_at = |b: &[f64]| -> Result<LinearDesign> {
        let dummy = layout.to_params(&lin, b)?;
        let stats = sufficient_stats(&dummy, stream)?;
        Ok(LinearDesign::new(&stats, nl, layout.mu_index(), layout.alpha_index()))
    };
    let bad = || HawkesError::InvalidParameters("non-positive intensity".into());
    let (f0, _, h_ll) = design_at(&bet)?.derivatives(&lin).ok_or_else(bad)?;
    let p = nl + nb;
    let mut h = DMatrix::zeros(p, p);
    h.view_mut((0, 0), (nl, nl)).copy_from(&h_ll);
    let rel = 1e-3;
    let shifted = |b: usize, s: f64| {
        let mut v = bet.clone();
        v[b] *= 1.0 + s * rel;
        v
    };
    let mut f_single = vec![(0.0, 0.0); nb];
    for b in 0..nb {
        let hb = rel * bet[b];
        let (fp, gp, _) = design_at(&shifted(b, 1.0))?.derivatives(&lin).ok_or_else(bad)?;
        let (fm, gm, _) = design_at(&shifted(b, -1.0))?.derivatives(&lin).ok_or_else(bad)?;
        for l in 0..nl {
            let v = (gp[l] - gm[l]) / (2.0 * hb);
            h[(l, nl + b)] = v;
            h[(nl + b, l)] = v;
        }
        h[(nl + b, nl + b)] = (fp - 2.0 * f0 + fm) / (hb * hb);
        f_single[b] = (fp, fm);
    }
    for a in 0..nb {
        for b in a + 1..nb {
            let eval = |sa: f64, sb: f64| -> Result<f64> {
                let mut v = bet.clone();
                v[a] *= 1.0 + sa * rel;
                v[b] *= 1.0 + sb * rel;
                design_at(&v)?.value(&lin).ok_or_else(bad)
            };
            let v = (eval(1.0, 1.0)? - eval(1.0, -1.0)? - eval(-1.0, 1.0)? + eval(-1.0, -1.0)?)
                / (4.0 * rel * bet[a] * rel * bet[b]);
            h[(nl + a, nl + b)] = v;
            h[(nl + b, nl + a)] = v;
        }
    }
    Ok(-h)
}

fn inverse_diag(info: &DMatrix<f64>) -> Option<Vec<f64>> {
    let ch = info.clone().cholesky()?;
    let inv = ch.inverse();
    let d: Vec<f64> = (0..info.nrows()).map(|i| inv[(i, i)]).collect();
    d.iter().all(|v| v.is_finite() && *v > 0.0).then_some(d)
}

/// Standard errors at a fitted model. When the full information is not
/// positive definite, decays are held fixed and only the (μ, α) block is
/// inverted; decay errors are then undefined.
pub fn standard_errors(params: &ModelParams, stream: &EventStream) -> Result<StdErrors> {
    let info = observed_information(params, stream)?;
    let layout = ParamLayout::new(params.profile(), params.dim(), params.kernels())?;
    let nl = layout.n_linear();
    if let Some(d) = inverse_diag(&info) {
        return Ok(StdErrors {
            values: d.into_iter().map(|v| Some(v.sqrt())).collect(),
            information_positive_definite: true,
            information: info,
        });
    }
    let block = info.view((0, 0), (nl, nl)).into_owned();
    let mut values = vec![None; info.nrows()];
    if let Some(d) = inverse_diag(&block) {
        for (j, v) in d.into_iter().enumerate() {
            values[j] = Some(v.sqrt());
        }
    }
    Ok(StdErrors { values, information_positive_definite: false, information: info })
}

fn shaped(layout: &ParamLayout, values: &[Option<f64>]) -> ShapedErrors {
    let m = layout.dim();
    let k = layout.kernels();
    let nl = layout.n_linear();
    let mu = layout.mu_index().iter().map(|&i| values[i]).collect();
    let cube = |f: &dyn Fn(usize) -> Option<f64>| -> Vec<Vec<Vec<Option<f64>>>> {
        (0..k)
            .map(|kk| (0..m).map(|i| (0..m).map(|j| f((kk * m + i) * m + j)).collect()).collect())
            .collect()
    };
    let alpha = cube(&|flat| values[layout.alpha_index()[flat]]);
    let beta = cube(&|flat| values[nl + layout.beta_param_index()[flat]]);
    ShapedErrors { mu, alpha, beta }
}

fn concavity_ratio(h: &DMatrix<f64>) -> f64 {
    let eig = h.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if norm == 0.0 {
        0.0
    } else {
        max / norm
    }
}

fn finish(
    stream: &EventStream,
    params: &ModelParams,
    method: Method,
    trace: OptimizerTrace,
    surface: Option<ProfileSurface>,
    converged: bool,
) -> Result<FitResult> {
    let params = params.canonicalize();
    params.warn_if_nonstationary("fitted model");
    let layout = ParamLayout::new(params.profile(), params.dim(), params.kernels())?;
    let (lin, bet) = layout.from_params(&params)?;
    let loglik = log_likelihood(&params, stream)?;
    let se = standard_errors(&params, stream)?;
    let h_ll = se.information.view((0, 0), (lin.len(), lin.len())).into_owned();
    let parameters = layout
        .names()
        .into_iter()
        .zip(lin.iter().chain(&bet))
        .zip(&se.values)
        .map(|((name, &estimate), &std_error)| FreeParameter { name, estimate, std_error })
        .collect();
    let n_free = layout.n_free();
    Ok(FitResult {
        schema_version: SCHEMA_VERSION,
        method,
        kernels: params.kernels(),
        std_errors: shaped(&layout, &se.values),
        information_positive_definite: se.information_positive_definite,
        loglik,
        aic: aic(loglik, n_free),
        n_free,
        n_events: stream.len(),
        converged,
        concavity_ratio: concavity_ratio(&(-h_ll)),
        trace,
        profile_surface: surface,
        parameters,
        params_hat: params,
    })
}

/// Fits with the chosen method.
pub fn fit(
    stream: &EventStream,
    kernels: usize,
    profile: ConstraintProfile,
    method: Method,
    grid: &GridSpec,
) -> Result<FitResult> {
    match method {
        Method::Profile => fit_profile(stream, kernels, profile, grid),
        Method::Direct => fit_direct(stream, kernels, profile, None),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSelection {
    pub schema_version: u32,
    /// Sorted by increasing AIC.
    pub fits: Vec<FitResult>,
}

impl ModelSelection {
    pub fn best(&self) -> &FitResult {
        &self.fits[0]
    }

    pub fn aic_of(&self, kernels: usize) -> Option<f64> {
        self.fits.iter().find(|f| f.kernels == kernels).map(|f| f.aic)
    }
}

/// Profile fits for each kernel count, ranked by AIC.
///
/// Gains usually level off after two or three kernels.
pub fn select_model(
    stream: &EventStream,
    kernel_counts: &[usize],
    profile: ConstraintProfile,
    grid: &GridSpec,
) -> Result<ModelSelection> {
    if kernel_counts.is_empty() {
        return Err(HawkesError::InvalidArgument("no kernel counts given".into()));
    }
    let mut fits = kernel_counts
        .iter()
        .map(|&k| fit_profile(stream, k, profile, grid))
        .collect::<Result<Vec<_>>>()?;
    fits.sort_by(|a, b| a.aic.total_cmp(&b.aic));
    Ok(ModelSelection { schema_version: SCHEMA_VERSION, fits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation; zero for a single fit.
    pub sd: f64,
}

/// Mean, median and SD of each free parameter across fits sharing a layout.
pub fn summarize_fits(fits: &[FitResult]) -> Result<Vec<ParameterSummary>> {
    let first = fits.first().ok_or_else(|| HawkesError::InsufficientData("no fits to summarize".into()))?;
    let names: Vec<&str> = first.parameters.iter().map(|p| p.name.as_str()).collect();
    if let Some(bad) = fits.iter().find(|f| f.parameters.iter().map(|p| p.name.as_str()).ne(names.iter().copied())) {
        return Err(HawkesError::DimensionMismatch(format!(
            "fits use different layouts ({} vs {} parameters)",
            first.parameters.len(),
            bad.parameters.len()
        )));
    }
    Ok(names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut v: Vec<f64> = fits.iter().map(|f| f.parameters[j].estimate).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
            let sd = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            ParameterSummary { name: name.to_string(), n, mean, median, sd }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_path, SimConfig};

    fn univariate_path(mu: f64, alpha: f64, beta: f64, horizon: f64, seed: u64) -> EventStream {
        let p = ModelParams::univariate(mu, &[alpha], &[beta]).unwrap();
        simulate_path(&p, &SimConfig::new(horizon, 1, seed), 0).unwrap()
    }

    #[test]
    fn summary_statistics() {
        let s = univariate_path(0.3, 0.5, 1.0, 300.0, 2);
        let fit = fit_profile(&s, 1, ConstraintProfile::ScalarPerKernel, &GridSpec::default().with_points(8)).unwrap();
        let mut fits = vec![fit.clone(), fit.clone(), fit];
        fits[1].parameters[0].estimate = 1.0;
        fits[2].parameters[0].estimate = 2.0;
        let mu0 = fits[0].parameters[0].estimate;
        let sum = summarize_fits(&fits).unwrap();
        assert_eq!(sum[0].median, 1.0);
        assert!((sum[0].mean - (mu0 + 3.0) / 3.0).abs() < 1e-12);
        assert_eq!(sum[1].sd, 0.0);
        assert!(summarize_fits(&[]).is_err());
    }

    #[test]
    fn aic_arithmetic() {
        assert_eq!(aic(100.0, 7), -186.0);
    }

    #[test]
    fn tuples_are_strictly_increasing_indices() {
        let t = decreasing_tuples(5, 2);
        assert_eq!(t.len(), 10);
        assert!(t.iter().all(|v| v[0] < v[1]));
        assert_eq!(decreasing_tuples(3, 1).len(), 3);
    }

    #[test]
    fn log_grid_is_descending() {
        let g = log_grid(0.1, 10.0, 3);
        assert!((g[0] - 10.0).abs() < 1e-12 && (g[1] - 1.0).abs() < 1e-12 && (g[2] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn profile_recovers_univariate_parameters() {
        let s = univariate_path(0.2, 0.9, 1.0, 1500.0, 11);
        let fit = fit_profile(&s, 1, ConstraintProfile::ScalarPerKernel, &GridSpec::default()).unwrap();
        assert!(fit.converged);
        for (name, truth) in [("mu", 0.2), ("alpha_1", 0.9), ("beta_1", 1.0)] {
            let est = fit.estimate(name).unwrap();
            let se = fit.std_error(name).unwrap();
            assert!((est - truth).abs() < 3.5 * se, "{name}: {est} ± {se}");
        }
        assert!(fit.concavity_ratio <= 1e-8);
        assert_eq!(fit.aic, 2.0 * 3.0 - 2.0 * fit.loglik);
    }

    #[test]
    fn poisson_data_gives_small_alpha() {
        let s = univariate_path(0.5, 0.0, 1.0, 2000.0, 3);
        let fit = fit_profile(&s, 1, ConstraintProfile::ScalarPerKernel, &GridSpec::default()).unwrap();
        let mu = fit.estimate("mu").unwrap();
        let se_mu = fit.std_error("mu").unwrap();
        assert!((mu - 0.5).abs() < 3.0 * se_mu);
        let a = fit.estimate("alpha_1").unwrap();
        let se_a = fit.std_error("alpha_1").unwrap();
        assert!(a < 3.0 * se_a, "alpha {a} se {se_a}");
    }

    #[test]
    fn direct_from_profile_optimum_does_not_improve() {
        let s = univariate_path(0.3, 0.6, 2.0, 1000.0, 5);
        let prof = fit_profile(&s, 1, ConstraintProfile::ScalarPerKernel, &GridSpec::default()).unwrap();
        let direct = fit_direct(&s, 1, ConstraintProfile::ScalarPerKernel, Some(&prof.params_hat)).unwrap();
        assert!(direct.loglik - prof.loglik < 1e-4, "{} vs {}", direct.loglik, prof.loglik);
        assert!((direct.loglik - prof.loglik).abs() < 1e-3);
    }

    #[test]
    fn direct_from_default_start_converges() {
        let s = univariate_path(0.3, 0.6, 2.0, 1000.0, 6);
        let direct = fit_direct(&s, 1, ConstraintProfile::ScalarPerKernel, None).unwrap();
        let prof = fit_profile(&s, 1, ConstraintProfile::ScalarPerKernel, &GridSpec::default()).unwrap();
        assert!(direct.converged, "{:?}", direct.trace);
        assert!((direct.loglik - prof.loglik).abs() < 1e-3);
    }

    #[test]
    fn poisson_information_matches_closed_form() {
        let s = univariate_path(0.5, 0.0, 1.0, 1000.0, 9);
        let n = s.len() as f64;
        let t = s.horizon();
        let p = ModelParams::univariate(n / t, &[0.0], &[1.0]).unwrap();
        let info = observed_information(&p, &s).unwrap();
        let se = 1.0 / info[(0, 0)].sqrt();
        assert!((se - (n / t / t).sqrt()).abs() < 1e-9 * se);
    }

    #[test]
    fn insufficient_data_is_rejected() {
        let s = EventStream::from_seconds(2, &[0.1, 0.2, 0.3], &[1, 1, 1], 1.0).unwrap();
        assert!(matches!(
            fit_profile(&s, 1, ConstraintProfile::ScalarPerKernel, &GridSpec::default()),
            Err(HawkesError::InsufficientData(_))
        ));
        let u = univariate_path(0.5, 0.2, 1.0, 100.0, 1);
        assert!(fit_profile(&u, 1, ConstraintProfile::ScalarPerKernel, &GridSpec::default().with_points(0)).is_err());
    }

    #[test]
    fn fit_result_json_round_trip() {
        let s = univariate_path(0.3, 0.5, 1.0, 300.0, 2);
        let fit = fit_profile(&s, 1, ConstraintProfile::ScalarPerKernel, &GridSpec::default().with_points(8)).unwrap();
        let back = FitResult::from_json(&fit.to_json().unwrap()).unwrap();
        assert_eq!(back.parameters, fit.parameters);
        assert_eq!(back.params_hat, fit.params_hat);
    }
}
