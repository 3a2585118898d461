//! Responsiveness and event-cause attribution for fitted models.

use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::model::ModelParams;
use crate::stream::EventStream;
use crate::SCHEMA_VERSION;

/// `P(τ < u) = 1 - exp(-α(1 - e^{-βu})/β)` for the first arrival triggered
/// by a single exponential kernel.
pub fn arrival_probability(alpha: f64, beta: f64, u: f64) -> f64 {
    if u.is_infinite() {
        return -(-alpha / beta).exp_m1();
    }
    let mass = alpha * -(-beta * u).exp_m1() / beta;
    -(-mass).exp_m1()
}

/// `P(τ < ∞) = 1 - e^{-α/β}`.
pub fn arrival_probability_finite(alpha: f64, beta: f64) -> f64 {
    arrival_probability(alpha, beta, f64::INFINITY)
}

/// Integrand `αu·exp(-α(1-e^{-βu})/β - βu)`.
pub fn arrival_density_moment(alpha: f64, beta: f64, u: f64) -> f64 {
    alpha * u * (-alpha * -(-beta * u).exp_m1() / beta - beta * u).exp()
}

/// Point past the peak of `αu e^{-βu}` where it drops to `rel` of the peak.
fn truncation_point(alpha: f64, beta: f64, rel: f64) -> f64 {
    let target = (alpha / beta * (-1.0f64).exp() * rel).ln();
    let mut u = 40.0 / beta;
    for _ in 0..50 {
        let next = ((alpha * u).ln() - target) / beta;
        if (next - u).abs() <= 1e-12 * u {
            return next;
        }
        u = next;
    }
    u
}

/// `∫₀^∞ αu·exp(-α(1-e^{-βu})/β - βu) du`, the expected first-arrival time
/// integral (not divided by `P(τ < ∞)`). Seconds.
pub fn expected_arrival_time(alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
        return Err(HawkesError::InvalidArgument(format!(
            "expected arrival time needs alpha > 0 and beta > 0, got ({alpha}, {beta})"
        )));
    }
    let upper = truncation_point(alpha, beta, 1e-16);
    // the bulk sits within a few 1/β of zero; split there so the
    // double-exponential rule resolves both pieces
    let knots = [0.0, 1.0 / beta, 5.0 / beta, 20.0 / beta, upper.max(21.0 / beta)];
    let scale = alpha / (beta * beta);
    let mut total = 0.0;
    for w in knots.windows(2) {
        let out = quadrature::double_exponential::integrate(
            |u| arrival_density_moment(alpha, beta, u),
            w[0],
            w[1],
            1e-12 * scale,
        );
        total += out.integral;
    }
    Ok(total)
}

/// Expected arrival time conditioned on an arrival occurring.
pub fn expected_arrival_time_normalized(alpha: f64, beta: f64) -> Result<f64> {
    Ok(expected_arrival_time(alpha, beta)? / arrival_probability_finite(alpha, beta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEntry {
    /// 1-based kernel, 0 for the baseline.
    pub kernel: usize,
    pub target: usize,
    pub source: usize,
    pub kind: String,
    pub alpha: f64,
    pub beta: f64,
    pub p_finite: f64,
    /// Undefined when `α = 0`.
    pub e_tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsivenessReport {
    pub schema_version: u32,
    pub normalized: bool,
    pub entries: Vec<ResponseEntry>,
}

/// Per-kernel arrival probabilities and times for every excitation entry,
/// plus a baseline row per type (`P = 1`, `E τ = 1/μ`).
/// Symmetric bivariate models report one self and one cross entry per kernel.
pub fn responsiveness(params: &ModelParams, normalized: bool) -> Result<ResponsivenessReport> {
    let m = params.dim();
    let sym = params.profile() == crate::model::ConstraintProfile::SymmetricBivariate;
    let mut entries = Vec::new();
    let base_types = if sym { 1 } else { m };
    for i in 0..base_types {
        let mu = params.mu()[i];
        entries.push(ResponseEntry {
            kernel: 0,
            target: i + 1,
            source: 0,
            kind: "base".into(),
            alpha: 0.0,
            beta: 0.0,
            p_finite: 1.0,
            e_tau: Some(1.0 / mu),
        });
    }
    for k in 0..params.kernels() {
        for i in 0..m {
            for j in 0..m {
                if sym && i != 0 {
                    continue;
                }
                let a = params.alpha(k, i, j);
                let b = params.beta(k, i, j);
                let e_tau = if a > 0.0 {
                    Some(if normalized {
                        expected_arrival_time_normalized(a, b)?
                    } else {
                        expected_arrival_time(a, b)?
                    })
                } else {
                    None
                };
                entries.push(ResponseEntry {
                    kernel: k + 1,
                    target: i + 1,
                    source: j + 1,
                    kind: if i == j { "self".into() } else { "cross".into() },
                    alpha: a,
                    beta: b,
                    p_finite: arrival_probability_finite(a, b),
                    e_tau,
                });
            }
        }
    }
    Ok(ResponsivenessReport { schema_version: SCHEMA_VERSION, normalized, entries })
}

/// Mean cause shares: index 0 is the baseline, then kernels fastest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shares {
    pub n_events: usize,
    pub base: f64,
    pub kernels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub schema_version: u32,
    pub per_type: Vec<Shares>,
    pub pooled: Shares,
}

/// Share vectors `[μ_i, λ_{1i}, …, λ_{Ki}] / λ_i` at the left limit of
/// each event, in stream order.
pub fn event_shares(params: &ModelParams, stream: &EventStream) -> Result<Vec<Vec<f64>>> {
    if params.dim() != stream.dim() {
        return Err(HawkesError::DimensionMismatch(format!(
            "stream has {} types, model has {}",
            stream.dim(),
            params.dim()
        )));
    }
    let m = params.dim();
    let kk = params.kernels();
    let beta = params.beta_flat();
    let alpha = params.alpha_flat();
    let mut state = vec![0.0; beta.len()];
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(stream.len());
    for n in 0..stream.len() {
        let t = stream.time(n);
        let dt = t - prev;
        if dt > 0.0 {
            for (s, b) in state.iter_mut().zip(beta) {
                *s *= (-b * dt).exp();
            }
        }
        prev = t;
        let i = stream.types()[n];
        let mut comp = Vec::with_capacity(kk + 1);
        comp.push(params.mu()[i]);
        for k in 0..kk {
            let base = (k * m + i) * m;
            comp.push((0..m).map(|j| alpha[base + j] * state[base + j]).sum());
        }
        let total: f64 = comp.iter().sum();
        comp.iter_mut().for_each(|c| *c /= total);
        out.push(comp);
        for k in 0..kk {
            for tgt in 0..m {
                state[(k * m + tgt) * m + i] += 1.0;
            }
        }
    }
    Ok(out)
}

fn mean_shares(rows: &[&Vec<f64>], kk: usize) -> Shares {
    let n = rows.len();
    let mut acc = vec![0.0; kk + 1];
    for r in rows {
        acc.iter_mut().zip(r.iter()).for_each(|(a, v)| *a += v);
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    Shares { n_events: n, base: acc[0], kernels: acc[1..].to_vec() }
}

/// Arithmetic mean of the per-event shares, per type and pooled.
pub fn attribute_causes(params: &ModelParams, stream: &EventStream) -> Result<AttributionReport> {
    let shares = event_shares(params, stream)?;
    let kk = params.kernels();
    let per_type = (0..params.dim())
        .map(|i| {
            let rows: Vec<&Vec<f64>> =
                shares.iter().zip(stream.types()).filter(|(_, &t)| t == i).map(|(s, _)| s).collect();
            mean_shares(&rows, kk)
        })
        .collect();
    let all: Vec<&Vec<f64>> = shares.iter().collect();
    Ok(AttributionReport { schema_version: SCHEMA_VERSION, per_type, pooled: mean_shares(&all, kk) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn trapezoid(alpha: f64, beta: f64, steps: usize) -> f64 {
        let upper = 60.0 / beta;
        let h = upper / steps as f64;
        let mut s = 0.5 * (arrival_density_moment(alpha, beta, 0.0) + arrival_density_moment(alpha, beta, upper));
        for i in 1..steps {
            s += arrival_density_moment(alpha, beta, i as f64 * h);
        }
        s * h
    }

    #[test]
    fn probability_limits() {
        assert_relative_eq!(arrival_probability(2.0, 2.0, f64::INFINITY), 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(arrival_probability(2.0, 2.0, 1e9), 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(arrival_probability(0.0, 1.0, 5.0), 0.0);
        assert!(arrival_probability(1.0, 2.0, 0.5) < arrival_probability(1.0, 2.0, 0.6));
        assert!(arrival_probability(1.0, 2.0, 0.5) < arrival_probability(1.1, 2.0, 0.5));
    }

    #[test]
    fn matches_trapezoid_oracle() {
        for (a, b) in [(318.2, 871.8), (123.1, 871.8), (0.5, 2.0), (5.0, 1.0)] {
            let q = expected_arrival_time(a, b).unwrap();
            let t = trapezoid(a, b, 2_000_000);
            assert_relative_eq!(q, t, max_relative = 1e-6);
        }
    }

    #[test]
    fn one_kernel_response_times() {
        let self_us = expected_arrival_time(318.2, 871.8).unwrap() * 1e6;
        let cross_us = expected_arrival_time(123.1, 871.8).unwrap() * 1e6;
        assert!((self_us / 319.4 - 1.0).abs() < 0.01, "{self_us}");
        assert!((cross_us / 145.7 - 1.0).abs() < 0.01, "{cross_us}");
    }

    #[test]
    fn small_alpha_limit() {
        let e = expected_arrival_time(1e-6, 1.0).unwrap();
        assert_relative_eq!(e, 1e-6, max_relative = 1e-3);
    }

    #[test]
    fn scaling_law() {
        let base = expected_arrival_time(3.0, 7.0).unwrap();
        let scaled = expected_arrival_time(30.0, 70.0).unwrap();
        assert_relative_eq!(scaled, base / 10.0, max_relative = 1e-8);
    }

    #[test]
    fn zero_alpha_is_an_error() {
        assert!(expected_arrival_time(0.0, 1.0).is_err());
    }

    #[test]
    fn two_event_shares_by_hand() {
        let p = ModelParams::univariate(0.5, &[2.0, 0.3], &[4.0, 0.5]).unwrap();
        let s = EventStream::from_seconds(1, &[1.0, 1.7], &[1, 1], 2.0).unwrap();
        let sh = event_shares(&p, &s).unwrap();
        assert_eq!(sh[0], vec![1.0, 0.0, 0.0]);
        let k1 = 2.0 * (-4.0f64 * 0.7).exp();
        let k2 = 0.3 * (-0.5f64 * 0.7).exp();
        let tot = 0.5 + k1 + k2;
        assert_relative_eq!(sh[1][0], 0.5 / tot, max_relative = 1e-12);
        assert_relative_eq!(sh[1][1], k1 / tot, max_relative = 1e-12);
        assert_relative_eq!(sh[1][2], k2 / tot, max_relative = 1e-12);
        let sum: f64 = sh[1].iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_shares_are_all_base() {
        let p = ModelParams::univariate(0.5, &[0.0], &[1.0]).unwrap();
        let s = EventStream::from_seconds(1, &[0.1, 0.2, 0.9], &[1, 1, 1], 1.0).unwrap();
        let r = attribute_causes(&p, &s).unwrap();
        assert_eq!(r.pooled.base, 1.0);
        assert_eq!(r.pooled.n_events, 3);
    }
}
