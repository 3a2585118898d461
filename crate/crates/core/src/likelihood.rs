//! Exact log-likelihood through the exponential recursion.
//!
//! For fixed decays the intensity at an event is linear in (μ, α):
//! `λ_i(t_{i,n}) = μ_i + Σ_{j,k} α_ijk a_{ijk,n}` with
//! `a_{ijk,n} = Σ_{t_j < t_{i,n}} exp(-β_ijk (t_{i,n} - t_j))`, and the
//! compensator is `μ_i T + Σ_{j,k} α_ijk Σ_{n ∈ j} b_{ijk,n}` with
//! `b_{ijk,n} = (1 - exp(-β_ijk (T - t_{j,n}))) / β_ijk`. Jumps are taken
//! from events strictly before the evaluation time (left limits), and
//! the excitation of events before the window start is dropped.

use nalgebra::{DMatrix, DVector};

use crate::error::{HawkesError, Result};
use crate::model::ModelParams;
use crate::stream::EventStream;

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `(1 - exp(-β Δ)) / β`.
#[inline]
pub fn compensator_weight(beta: f64, remaining: f64) -> f64 {
    -(-beta * remaining).exp_m1() / beta
}

/// Decay-dependent quantities of a stream.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    m: usize,
    k: usize,
    horizon: f64,
    /// Per target i, row-major `n_i × (K·m)`; column `k*m + j` holds `a_{ijk,n}`.
    a: Vec<Vec<f64>>,
    /// Index `(k*m + i)*m + j`: `Σ_{n ∈ j} b_{ijk,n}`.
    b_sum: Vec<f64>,
    counts: Vec<usize>,
}

impl SufficientStats {
    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn kernels(&self) -> usize {
        self.k
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// `a_{ijk,n}` for the n-th (0-based) event of type i.
    pub fn a(&self, i: usize, j: usize, k: usize, n: usize) -> f64 {
        let w = self.k * self.m;
        self.a[i][n * w + k * self.m + j]
    }

    /// Row of `a` values for the n-th event of type i (`k*m + j` layout).
    pub fn a_row(&self, i: usize, n: usize) -> &[f64] {
        let w = self.k * self.m;
        &self.a[i][n * w..(n + 1) * w]
    }

    /// `Σ_{n ∈ j} b_{ijk,n}`.
    pub fn b_sum(&self, i: usize, j: usize, k: usize) -> f64 {
        self.b_sum[(k * self.m + i) * self.m + j]
    }
}

/// Computes the `a` recursion and `b` sums for the decays of `params`.
pub fn sufficient_stats(params: &ModelParams, stream: &EventStream) -> Result<SufficientStats> {
    if stream.dim() != params.dim() {
        return Err(HawkesError::DimensionMismatch(format!(
            "stream has {} types, model has {}",
            stream.dim(),
            params.dim()
        )));
    }
    let m = params.dim();
    let kk = params.kernels();
    let w = kk * m;
    let (betas, slot) = params.decay_groups();
    let beta = params.beta_flat();
    let counts = stream.counts();
    let mut a: Vec<Vec<f64>> = counts.iter().map(|&c| Vec::with_capacity(c * w)).collect();
    let mut b_sum = vec![0.0; beta.len()];
    let mut state = vec![0.0; beta.len()];
    let mut factors = vec![0.0; betas.len()];
    let horizon = stream.horizon();
    let types = stream.types();
    let mut prev = 0.0;
    for n in 0..stream.len() {
        let t = stream.time(n);
        let dt = t - prev;
        if dt < 0.0 {
            return Err(HawkesError::InvalidStream("events are not sorted".into()));
        }
        if dt > 0.0 {
            for (f, b) in factors.iter_mut().zip(&betas) {
                *f = (-b * dt).exp();
            }
            for (s, &g) in state.iter_mut().zip(&slot) {
                *s *= factors[g];
            }
        }
        prev = t;
        let i = types[n];
        let row = &mut a[i];
        for k in 0..kk {
            let base = (k * m + i) * m;
            row.extend_from_slice(&state[base..base + m]);
        }
        let remaining = horizon - t;
        for k in 0..kk {
            for tgt in 0..m {
                let idx = (k * m + tgt) * m + i;
                state[idx] += 1.0;
                b_sum[idx] += compensator_weight(beta[idx], remaining);
            }
        }
    }
    Ok(SufficientStats { m, k: kk, horizon, a, b_sum, counts })
}

fn intensity_at_event(params: &ModelParams, stats: &SufficientStats, i: usize, n: usize) -> f64 {
    let m = stats.m;
    let row = stats.a_row(i, n);
    let mut lam = params.mu()[i];
    for k in 0..stats.k {
        for j in 0..m {
            lam += params.alpha(k, i, j) * row[k * m + j];
        }
    }
    lam
}

/// Log-likelihood from precomputed statistics (the decays of `params`
/// must be those the statistics were built with).
pub fn log_likelihood_with(params: &ModelParams, stats: &SufficientStats) -> Result<f64> {
    let m = stats.m;
    let mut total = CompensatedSum::default();
    for i in 0..m {
        for n in 0..stats.counts[i] {
            let lam = intensity_at_event(params, stats, i, n);
            if !(lam > 0.0) {
                return Err(HawkesError::InvalidParameters(format!(
                    "non-positive intensity {lam} at event {n} of type {}",
                    i + 1
                )));
            }
            total.add(lam.ln());
        }
        total.add(-params.mu()[i] * stats.horizon);
        for k in 0..stats.k {
            for j in 0..m {
                total.add(-params.alpha(k, i, j) * stats.b_sum(i, j, k));
            }
        }
    }
    Ok(total.value())
}

pub fn log_likelihood(params: &ModelParams, stream: &EventStream) -> Result<f64> {
    let stats = sufficient_stats(params, stream)?;
    log_likelihood_with(params, &stats)
}

/// Gradient in (μ, α) at fixed β; `alpha` uses the flat `(k*m + i)*m + j` index.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGradient {
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl ConditionalGradient {
    /// `[μ_1..μ_m, α flat]`
    pub fn to_vec(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.alpha).copied().collect()
    }
}

pub fn conditional_gradient(params: &ModelParams, stream: &EventStream) -> Result<ConditionalGradient> {
    let stats = sufficient_stats(params, stream)?;
    conditional_gradient_with(params, &stats)
}

pub fn conditional_gradient_with(params: &ModelParams, stats: &SufficientStats) -> Result<ConditionalGradient> {
    let m = stats.m;
    let kk = stats.k;
    let mut mu = vec![0.0; m];
    let mut alpha = vec![0.0; kk * m * m];
    for i in 0..m {
        let mut g_mu = CompensatedSum::default();
        let mut g_a = vec![CompensatedSum::default(); kk * m];
        for n in 0..stats.counts[i] {
            let lam = intensity_at_event(params, stats, i, n);
            if !(lam > 0.0) {
                return Err(HawkesError::InvalidParameters(format!("non-positive intensity {lam}")));
            }
            let inv = 1.0 / lam;
            g_mu.add(inv);
            for (acc, &x) in g_a.iter_mut().zip(stats.a_row(i, n)) {
                acc.add(x * inv);
            }
        }
        mu[i] = g_mu.value() - stats.horizon;
        for k in 0..kk {
            for j in 0..m {
                alpha[(k * m + i) * m + j] = g_a[k * m + j].value() - stats.b_sum(i, j, k);
            }
        }
    }
    Ok(ConditionalGradient { mu, alpha })
}

/// Hessian in `[μ_1..μ_m, α flat]` at fixed β: `-Σ_n x_n x_nᵀ / λ²`,
/// with `x_n` the design row of the n-th event.
pub fn conditional_hessian(params: &ModelParams, stream: &EventStream) -> Result<DMatrix<f64>> {
    let stats = sufficient_stats(params, stream)?;
    let m = stats.m;
    let kk = stats.k;
    let p = m + kk * m * m;
    let mut h = DMatrix::<f64>::zeros(p, p);
    let mut x = vec![0.0; p];
    let mut idx = Vec::with_capacity(1 + kk * m);
    for i in 0..m {
        for n in 0..stats.counts[i] {
            let lam = intensity_at_event(params, &stats, i, n);
            if !(lam > 0.0) {
                return Err(HawkesError::InvalidParameters(format!("non-positive intensity {lam}")));
            }
            idx.clear();
            idx.push(i);
            x[i] = 1.0;
            let row = stats.a_row(i, n);
            for k in 0..kk {
                for j in 0..m {
                    let c = m + (k * m + i) * m + j;
                    x[c] = row[k * m + j];
                    idx.push(c);
                }
            }
            let w = 1.0 / (lam * lam);
            for &r in &idx {
                for &c in &idx {
                    h[(r, c)] -= w * x[r] * x[c];
                }
            }
        }
    }
    Ok(h)
}

/// Conditional log-likelihood at fixed decays as a function of a vector
/// of free linear parameters `θ`: `L(θ) = Σ_n ln(x_n·θ) - c·θ`.
#[derive(Debug, Clone)]
pub struct LinearDesign {
    p: usize,
    rows: Vec<f64>,
    comp: Vec<f64>,
}

impl LinearDesign {
    /// `mu_index[i]` and `alpha_index[(k*m+i)*m+j]` map model entries to θ.
    pub fn new(stats: &SufficientStats, p: usize, mu_index: &[usize], alpha_index: &[usize]) -> Self {
        let m = stats.m;
        let kk = stats.k;
        let n_total: usize = stats.counts.iter().sum();
        let mut rows = vec![0.0; n_total * p];
        let mut comp = vec![0.0; p];
        let mut r = 0;
        for i in 0..m {
            comp[mu_index[i]] += stats.horizon;
            for k in 0..kk {
                for j in 0..m {
                    comp[alpha_index[(k * m + i) * m + j]] += stats.b_sum(i, j, k);
                }
            }
            for n in 0..stats.counts[i] {
                let out = &mut rows[r * p..(r + 1) * p];
                out[mu_index[i]] += 1.0;
                let a = stats.a_row(i, n);
                for k in 0..kk {
                    for j in 0..m {
                        out[alpha_index[(k * m + i) * m + j]] += a[k * m + j];
                    }
                }
                r += 1;
            }
        }
        LinearDesign { p, rows, comp }
    }

    pub fn n_params(&self) -> usize {
        self.p
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len() / self.p.max(1)
    }

    pub fn compensator_coefficients(&self) -> &[f64] {
        &self.comp
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.p)
    }

    /// `None` when some intensity is not positive.
    pub fn value(&self, theta: &[f64]) -> Option<f64> {
        let mut acc = CompensatedSum::default();
        for row in self.rows() {
            let lam: f64 = row.iter().zip(theta).map(|(x, t)| x * t).sum();
            if !(lam > 0.0) {
                return None;
            }
            acc.add(lam.ln());
        }
        let lin: f64 = self.comp.iter().zip(theta).map(|(c, t)| c * t).sum();
        acc.add(-lin);
        Some(acc.value())
    }

    /// Value, gradient and Hessian.
    pub fn derivatives(&self, theta: &[f64]) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let p = self.p;
        let mut acc = CompensatedSum::default();
        let mut g = vec![0.0; p];
        let mut h = vec![0.0; p * p];
        for row in self.rows() {
            let lam: f64 = row.iter().zip(theta).map(|(x, t)| x * t).sum();
            if !(lam > 0.0) {
                return None;
            }
            acc.add(lam.ln());
            let inv = 1.0 / lam;
            let inv2 = inv * inv;
            for r in 0..p {
                let xr = row[r];
                if xr == 0.0 {
                    continue;
                }
                g[r] += xr * inv;
                let wr = xr * inv2;
                for c in r..p {
                    h[r * p + c] -= wr * row[c];
                }
            }
        }
        let lin: f64 = self.comp.iter().zip(theta).map(|(c, t)| c * t).sum();
        acc.add(-lin);
        for r in 0..p {
            g[r] -= self.comp[r];
            for c in 0..r {
                h[r * p + c] = h[c * p + r];
            }
        }
        Some((acc.value(), DVector::from_vec(g), DMatrix::from_row_slice(p, p, &h)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::EventRecord;
    use approx::assert_relative_eq;

    fn stream(m: usize, end: i64, ev: &[(i64, usize)]) -> EventStream {
        let recs: Vec<_> = ev.iter().map(|&(t, ty)| EventRecord { timestamp_ns: t, event_type: ty }).collect();
        EventStream::new(m, 0, end, &recs).unwrap()
    }

    #[test]
    fn single_event_poisson() {
        let p = ModelParams::univariate(1.0, &[0.0], &[1.0]).unwrap();
        let s = stream(1, 2_000_000_000, &[(1_000_000_000, 1)]);
        assert_relative_eq!(log_likelihood(&p, &s).unwrap(), -2.0, epsilon = 1e-15);
    }

    #[test]
    fn poisson_closed_form() {
        let p = ModelParams::scalar(vec![0.3, 0.7], vec![vec![vec![0.0; 2]; 2]], vec![4.0]).unwrap();
        let s = stream(2, 10_000_000_000, &[(1, 1), (5, 2), (70, 2), (900_000, 1), (2_000_000_000, 2)]);
        let expect = 2.0 * 0.3f64.ln() - 3.0 + 3.0 * 0.7f64.ln() - 7.0;
        assert_relative_eq!(log_likelihood(&p, &s).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn a_single_prior_event() {
        let p = ModelParams::scalar(vec![0.1, 0.1], vec![vec![vec![0.1; 2]; 2]], vec![3.0]).unwrap();
        let g: f64 = 0.25;
        let s = stream(2, 2_000_000_000, &[(0, 2), (250_000_000, 1)]);
        let st = sufficient_stats(&p, &s).unwrap();
        assert_relative_eq!(st.a(0, 1, 0, 0), (-3.0 * g).exp(), epsilon = 1e-15);
        assert_eq!(st.a(0, 0, 0, 0), 0.0);
        let fast = ModelParams::scalar(vec![0.1, 0.1], vec![vec![vec![0.1; 2]; 2]], vec![1e6]).unwrap();
        let st = sufficient_stats(&fast, &s).unwrap();
        assert_eq!(st.a(0, 1, 0, 0), 0.0);
    }

    #[test]
    fn poisson_mle_has_zero_mu_gradient() {
        let s = stream(2, 10_000_000_000, &[(1, 1), (5, 2), (70, 2), (900_000, 1), (2_000_000_000, 2)]);
        let p = ModelParams::scalar(vec![0.2, 0.3], vec![vec![vec![0.0; 2]; 2]], vec![4.0]).unwrap();
        let g = conditional_gradient(&p, &s).unwrap();
        assert_relative_eq!(g.mu[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(g.mu[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn design_matches_likelihood() {
        let p = ModelParams::symmetric_bivariate(0.3, &[1.2, 0.1], &[0.4, 0.2], &[9.0, 0.7]).unwrap();
        let s = stream(
            2,
            20_000_000_000,
            &[(10_000_000, 1), (300_000_000, 2), (310_000_000, 2), (4_000_000_000, 1), (9_000_000_000, 1)],
        );
        let st = sufficient_stats(&p, &s).unwrap();
        let mu_idx = [0, 0];
        let mut a_idx = vec![0; 8];
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    a_idx[(k * 2 + i) * 2 + j] = if i == j { 1 + 2 * k } else { 2 + 2 * k };
                }
            }
        }
        let d = LinearDesign::new(&st, 5, &mu_idx, &a_idx);
        let theta = [0.3, 1.2, 0.4, 0.1, 0.2];
        assert_relative_eq!(d.value(&theta).unwrap(), log_likelihood(&p, &s).unwrap(), epsilon = 1e-12);
        let (v, g, h) = d.derivatives(&theta).unwrap();
        assert_relative_eq!(v, d.value(&theta).unwrap(), epsilon = 1e-14);
        for r in 0..5 {
            let mut tp = theta;
            let mut tm = theta;
            let step = 1e-6;
            tp[r] += step;
            tm[r] -= step;
            let fd = (d.value(&tp).unwrap() - d.value(&tm).unwrap()) / (2.0 * step);
            assert_relative_eq!(g[r], fd, max_relative = 1e-6, epsilon = 1e-8);
        }
        assert!(h.symmetric_eigen().eigenvalues.iter().all(|&e| e <= 1e-12));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let p = ModelParams::univariate(1.0, &[0.0], &[1.0]).unwrap();
        let s = stream(2, 10, &[(1, 2)]);
        assert!(log_likelihood(&p, &s).is_err());
    }
}
