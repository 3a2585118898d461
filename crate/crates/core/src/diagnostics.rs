//! Goodness of fit and profile-likelihood diagnostics.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::estimate::{log_grid, ProfileProblem};
use crate::model::{ConstraintProfile, ModelParams};
use crate::simulate::{simulate_n_events, InitMode};
use crate::stream::EventStream;
use crate::SCHEMA_VERSION;

/// Compensator increments between consecutive events of each type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub per_type: Vec<Vec<f64>>,
    /// `∫₀ᵀ λ_i` per type.
    pub compensator_total: Vec<f64>,
}

impl ResidualSet {
    /// Union of all types' increments, in type order.
    pub fn pooled(&self) -> Vec<f64> {
        self.per_type.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.per_type.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_dims(params: &ModelParams, stream: &EventStream) -> Result<()> {
    if params.dim() != stream.dim() {
        return Err(HawkesError::DimensionMismatch(format!(
            "stream has {} types, model has {}",
            stream.dim(),
            params.dim()
        )));
    }
    Ok(())
}

/// Exact compensator increments of `params` along `stream`.
pub fn residuals(params: &ModelParams, stream: &EventStream) -> Result<ResidualSet> {
    check_dims(params, stream)?;
    let m = params.dim();
    let kk = params.kernels();
    let beta = params.beta_flat();
    let alpha = params.alpha_flat();
    let mu = params.mu();
    // state[(k*m+i)*m+j] = Σ_{past events of type j} e^{-β (t - t_l)}
    let mut state = vec![0.0; beta.len()];
    let mut acc = vec![0.0; m];
    let mut seen = vec![false; m];
    let mut total = vec![0.0; m];
    let mut per_type: Vec<Vec<f64>> = stream.counts().iter().map(|&c| Vec::with_capacity(c)).collect();
    let mut prev = 0.0;
    let advance = |state: &mut [f64], acc: &mut [f64], total: &mut [f64], dt: f64| {
        if dt <= 0.0 {
            return;
        }
        for i in 0..m {
            let mut inc = mu[i] * dt;
            for k in 0..kk {
                for j in 0..m {
                    let idx = (k * m + i) * m + j;
                    if alpha[idx] != 0.0 {
                        inc += alpha[idx] * state[idx] * -(-beta[idx] * dt).exp_m1() / beta[idx];
                    }
                }
            }
            acc[i] += inc;
            total[i] += inc;
        }
        for (s, b) in state.iter_mut().zip(beta) {
            *s *= (-b * dt).exp();
        }
    };
    for n in 0..stream.len() {
        let t = stream.time(n);
        advance(&mut state, &mut acc, &mut total, t - prev);
        prev = t;
        let j = stream.types()[n];
        if seen[j] {
            per_type[j].push(acc[j]);
        }
        seen[j] = true;
        acc[j] = 0.0;
        for k in 0..kk {
            for i in 0..m {
                state[(k * m + i) * m + j] += 1.0;
            }
        }
    }
    advance(&mut state, &mut acc, &mut total, stream.horizon() - prev);
    Ok(ResidualSet { per_type, compensator_total: total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Kolmogorov limiting survival function `Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test against the unit exponential.
pub fn ks_exponential(sample: &[f64]) -> Result<KsResult> {
    if sample.is_empty() {
        return Err(HawkesError::InsufficientData("empty residual set".into()));
    }
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = -(-x).exp_m1();
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    let p = kolmogorov_q((sn + 0.12 + 0.11 / sn) * d);
    Ok(KsResult { statistic: d, p_value: p, n: v.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub empirical: f64,
    pub theoretical: f64,
}

/// Sorted sample against Exp(1) quantiles at `(i - 0.5)/n`.
pub fn qq_exponential(sample: &[f64]) -> Result<Vec<QqPoint>> {
    if sample.is_empty() {
        return Err(HawkesError::InsufficientData("empty residual set".into()));
    }
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    Ok(v
        .into_iter()
        .enumerate()
        .map(|(i, e)| QqPoint { empirical: e, theoretical: -(-(i as f64 + 0.5) / n).ln_1p() })
        .collect())
}

/// Largest `|empirical - theoretical|` over the central `fraction` of points.
pub fn qq_max_deviation(qq: &[QqPoint], fraction: f64) -> f64 {
    let n = qq.len();
    let cut = ((1.0 - fraction) / 2.0 * n as f64).floor() as usize;
    qq[cut..n - cut]
        .iter()
        .map(|p| (p.empirical - p.theoretical).abs())
        .fold(0.0, f64::max)
}

/// Residual summary used by the `diagnose` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub schema_version: u32,
    pub n_residuals: usize,
    pub ks_pooled: KsResult,
    pub ks_per_type: Vec<Option<KsResult>>,
    pub qq_max_deviation: f64,
    pub compensator_total: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn diagnose(params: &ModelParams, stream: &EventStream) -> Result<(DiagnosticReport, ResidualSet, Vec<QqPoint>)> {
    let res = residuals(params, stream)?;
    let pooled = res.pooled();
    let qq = qq_exponential(&pooled)?;
    let report = DiagnosticReport {
        schema_version: SCHEMA_VERSION,
        n_residuals: pooled.len(),
        ks_pooled: ks_exponential(&pooled)?,
        ks_per_type: res.per_type.iter().map(|r| ks_exponential(r).ok()).collect(),
        qq_max_deviation: qq_max_deviation(&qq, 0.98),
        compensator_total: res.compensator_total.clone(),
        counts: stream.counts(),
    };
    Ok((report, res, qq))
}

/// Kernel-decay axes of a scan: one axis per kernel (at most two).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub axes: Vec<Vec<f64>>,
}

impl ScanGrid {
    pub fn log_spaced(lo: f64, hi: f64, points: usize, kernels: usize) -> Self {
        let mut axis = log_grid(lo, hi, points);
        axis.reverse();
        ScanGrid { axes: vec![axis; kernels] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSurface {
    pub schema_version: u32,
    pub axes: Vec<Vec<f64>>,
    /// Row-major over the axes; `None` where the cell is skipped or the
    /// inner solve failed.
    pub lstar: Vec<Option<f64>>,
    /// Cells skipped because the kernel ordering is violated.
    pub skipped: Vec<bool>,
    pub failures: usize,
    pub local_maxima: usize,
}

impl ScanSurface {
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    /// `(β₁[, β₂], L*)` rows for evaluated cells.
    pub fn rows(&self) -> Vec<(Vec<f64>, Option<f64>)> {
        let shape = self.shape();
        (0..self.lstar.len())
            .filter(|&c| !self.skipped[c])
            .map(|c| (cell_coords(&shape, c).iter().zip(&self.axes).map(|(&i, a)| a[i]).collect(), self.lstar[c]))
            .collect()
    }
}

fn cell_coords(shape: &[usize], mut c: usize) -> Vec<usize> {
    let mut out = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        out[d] = c % shape[d];
        c /= shape[d];
    }
    out
}

fn neighbours(shape: &[usize], c: usize) -> Vec<usize> {
    let coords = cell_coords(shape, c);
    let mut out = Vec::new();
    let strides: Vec<usize> = (0..shape.len()).map(|d| shape[d + 1..].iter().product()).collect();
    for d in 0..shape.len() {
        if coords[d] > 0 {
            out.push(c - strides[d]);
        }
        if coords[d] + 1 < shape[d] {
            out.push(c + strides[d]);
        }
    }
    out
}

/// Counts local maxima of a gridded surface. Adjacent cells within `tol`
/// form one plateau; a plateau is a maximum when every neighbour outside
/// it is lower. Missing cells are ignored.
pub fn count_local_maxima(shape: &[usize], values: &[Option<f64>], tol: f64) -> usize {
    let n = values.len();
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    for start in 0..n {
        if values[start].is_none() || label[start] != usize::MAX {
            continue;
        }
        let mut members = vec![start];
        let mut queue = VecDeque::from([start]);
        label[start] = start;
        while let Some(c) = queue.pop_front() {
            let vc = values[c].unwrap();
            for nb in neighbours(shape, c) {
                if let Some(vn) = values[nb] {
                    if label[nb] == usize::MAX && (vn - vc).abs() <= tol {
                        label[nb] = start;
                        members.push(nb);
                        queue.push_back(nb);
                    }
                }
            }
        }
        let is_max = members.iter().all(|&c| {
            let vc = values[c].unwrap();
            neighbours(shape, c)
                .into_iter()
                .filter(|&nb| label[nb] != start)
                .all(|nb| values[nb].is_none_or(|vn| vn < vc))
        });
        if is_max {
            count += 1;
        }
    }
    count
}

pub const PLATEAU_TOL: f64 = 1e-6;

/// `L*(β)` over a 1-D or 2-D grid of kernel decays. Two-kernel cells with
/// `β₁ ≤ β₂` are skipped since they duplicate relabelled cells.
pub fn scan_conditional_max(
    stream: &EventStream,
    kernels: usize,
    profile: ConstraintProfile,
    grid: &ScanGrid,
) -> Result<ScanSurface> {
    if grid.axes.len() != kernels || !(1..=2).contains(&kernels) {
        return Err(HawkesError::InvalidArgument(format!(
            "scan needs one axis per kernel and 1 or 2 kernels, got {} axes for K={kernels}",
            grid.axes.len()
        )));
    }
    if grid.axes.iter().any(|a| a.is_empty() || a.iter().any(|b| !(*b > 0.0))) {
        return Err(HawkesError::InvalidArgument("scan axes must be non-empty and positive".into()));
    }
    let problem = ProfileProblem::new(stream, profile, kernels)?;
    let shape: Vec<usize> = grid.axes.iter().map(Vec::len).collect();
    let cells: usize = shape.iter().product();
    let speeds: Vec<Vec<f64>> = (0..cells)
        .map(|c| cell_coords(&shape, c).iter().zip(&grid.axes).map(|(&i, a)| a[i]).collect())
        .collect();
    let skipped: Vec<bool> = speeds.iter().map(|s| s.windows(2).any(|w| w[0] <= w[1])).collect();
    let lstar: Vec<Option<f64>> = speeds
        .par_iter()
        .zip(&skipped)
        .map(|(s, &skip)| if skip { None } else { problem.lstar(&problem.kernel_betas(s)) })
        .collect();
    let failures = lstar.iter().zip(&skipped).filter(|(v, &s)| v.is_none() && !s).count();
    let local_maxima = count_local_maxima(&shape, &lstar, PLATEAU_TOL);
    Ok(ScanSurface {
        schema_version: SCHEMA_VERSION,
        axes: grid.axes.clone(),
        lstar,
        skipped,
        failures,
        local_maxima,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRow {
    pub branching: f64,
    pub n: usize,
    pub successes: usize,
    pub reps: usize,
    pub rate: f64,
}

/// Settings of the univariate uniqueness experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mu: f64,
    pub beta: f64,
    /// Scan range as multiples of the true decay.
    pub scan_range: (f64, f64),
    pub scan_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { mu: 0.2, beta: 1.0, scan_range: (0.1, 10.0), scan_points: 41 }
    }
}

/// Rate of paths whose `L*(β)` scan has exactly one local maximum.
pub fn success_rate_experiment(
    branching: &[f64],
    sizes: &[usize],
    reps: usize,
    seed: u64,
    config: &ExperimentConfig,
) -> Result<Vec<SuccessRow>> {
    let grid = ScanGrid::log_spaced(
        config.scan_range.0 * config.beta,
        config.scan_range.1 * config.beta,
        config.scan_points,
        1,
    );
    let mut rows = Vec::new();
    for (bi, &b) in branching.iter().enumerate() {
        if !(0.0..1.0).contains(&b) {
            return Err(HawkesError::InvalidArgument(format!("branching ratio {b} outside [0, 1)")));
        }
        let params = ModelParams::univariate(config.mu, &[b * config.beta], &[config.beta])?;
        for (si, &n) in sizes.iter().enumerate() {
            let outcomes: Vec<Result<bool>> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let path = ((bi * sizes.len() + si) * reps + r) as u64;
                    let s = simulate_n_events(&params, n, InitMode::StationaryMean, seed, path)?;
                    let surf = scan_conditional_max(&s, 1, ConstraintProfile::ScalarPerKernel, &grid)?;
                    Ok(surf.local_maxima == 1)
                })
                .collect();
            let mut successes = 0;
            for o in outcomes {
                match o {
                    Ok(true) => successes += 1,
                    Ok(false) => {}
                    Err(HawkesError::InsufficientData(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            rows.push(SuccessRow { branching: b, n, successes, reps, rate: successes as f64 / reps.max(1) as f64 });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_path, SimConfig};
    use approx::assert_relative_eq;

    #[test]
    fn poisson_increments_are_scaled_gaps() {
        let p = ModelParams::univariate(2.0, &[0.0], &[1.0]).unwrap();
        let s = EventStream::from_seconds(1, &[0.5, 1.25, 3.0], &[1, 1, 1], 4.0).unwrap();
        let r = residuals(&p, &s).unwrap();
        assert_relative_eq!(r.per_type[0][0], 1.5, epsilon = 1e-9);
        assert_relative_eq!(r.per_type[0][1], 3.5, epsilon = 1e-9);
        assert_relative_eq!(r.compensator_total[0], 8.0, epsilon = 1e-9);
    }

    #[test]
    fn compensator_total_matches_likelihood() {
        let p = ModelParams::univariate(0.4, &[0.8, 0.1], &[5.0, 0.5]).unwrap();
        let s = simulate_path(&p, &SimConfig::new(200.0, 1, 3), 0).unwrap();
        let r = residuals(&p, &s).unwrap();
        let direct: f64 = {
            let t = s.times_sec();
            let mut c = 0.4 * s.horizon();
            for &tj in &t {
                c += 0.8 / 5.0 * (1.0 - (-5.0 * (s.horizon() - tj)).exp());
                c += 0.1 / 0.5 * (1.0 - (-0.5 * (s.horizon() - tj)).exp());
            }
            c
        };
        assert_relative_eq!(r.compensator_total[0], direct, max_relative = 1e-10);
    }

    #[test]
    fn qq_single_point() {
        let q = qq_exponential(&[std::f64::consts::LN_2]).unwrap();
        assert_relative_eq!(q[0].theoretical, std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(qq_exponential(&[]).is_err());
    }

    #[test]
    fn ks_detects_wrong_scale() {
        let p = ModelParams::univariate(1.0, &[0.0], &[1.0]).unwrap();
        let s = simulate_path(&p, &SimConfig::new(3000.0, 1, 5), 0).unwrap();
        let good = residuals(&p, &s).unwrap();
        assert!(ks_exponential(&good.pooled()).unwrap().p_value > 0.01);
        let wrong = ModelParams::univariate(1.3, &[0.0], &[1.0]).unwrap();
        let bad = residuals(&wrong, &s).unwrap();
        assert!(ks_exponential(&bad.pooled()).unwrap().p_value < 0.01);
    }

    #[test]
    fn plateau_counting() {
        let v = |xs: &[f64]| xs.iter().map(|&x| Some(x)).collect::<Vec<_>>();
        assert_eq!(count_local_maxima(&[5], &v(&[0.0, 1.0, 0.0, 2.0, 1.0]), 1e-6), 2);
        assert_eq!(count_local_maxima(&[5], &v(&[0.0, 1.0, 1.0, 1.0, 0.0]), 1e-6), 1);
        assert_eq!(count_local_maxima(&[4], &v(&[1.0, 1.0, 2.0, 0.0]), 1e-6), 1);
        assert_eq!(count_local_maxima(&[2, 2], &v(&[0.0, 1.0, 1.0, 0.0]), 1e-6), 2);
        assert_eq!(count_local_maxima(&[3], &[Some(1.0), None, Some(1.0)], 1e-6), 2);
    }

    #[test]
    fn high_branching_scan_has_one_maximum() {
        let p = ModelParams::univariate(0.5, &[0.9], &[1.0]).unwrap();
        let s = simulate_n_events(&p, 2000, InitMode::StationaryMean, 2, 0).unwrap();
        let grid = ScanGrid::log_spaced(0.01, 100.0, 31, 1);
        let a = scan_conditional_max(&s, 1, ConstraintProfile::ScalarPerKernel, &grid).unwrap();
        assert_eq!(a.local_maxima, 1);
        let b = scan_conditional_max(&s, 1, ConstraintProfile::ScalarPerKernel, &grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_kernel_scan_skips_relabelled_cells() {
        let p = ModelParams::symmetric_bivariate(0.3, &[2.0, 0.05], &[1.0, 0.05], &[10.0, 0.3]).unwrap();
        let s = simulate_path(&p, &SimConfig::new(300.0, 1, 4), 0).unwrap();
        let grid = ScanGrid::log_spaced(0.1, 50.0, 6, 2);
        let surf = scan_conditional_max(&s, 2, ConstraintProfile::SymmetricBivariate, &grid).unwrap();
        assert_eq!(surf.skipped.iter().filter(|&&x| !x).count(), 15);
        assert_eq!(surf.rows().len(), 15);
    }
}
