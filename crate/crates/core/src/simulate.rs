//! Thinning simulation of the multi-kernel model.
//!
//! Between events every intensity decays, so the total intensity right
//! after the last accepted or rejected candidate dominates the path until
//! the next candidate. Each path draws from its own ChaCha stream keyed by
//! the path index, so ensembles are reproducible and order-independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::model::{MarkovState, ModelParams};
use crate::stream::EventStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Start from the stationary mean of the intensity components.
    StationaryMean,
    /// Start from zero excitation at `-burn_seconds` and discard the burn-in.
    ZeroWithBurnIn(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Seconds.
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub init: InitMode,
    pub max_events: usize,
}

impl SimConfig {
    pub fn new(horizon: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            horizon,
            n_paths,
            seed,
            init: InitMode::StationaryMean,
            max_events: 50_000_000,
        }
    }

    pub fn with_init(mut self, init: InitMode) -> Self {
        self.init = init;
        self
    }

    pub fn with_max_events(mut self, max_events: usize) -> Self {
        self.max_events = max_events;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(HawkesError::InvalidArgument(format!("horizon must be >= 0, got {}", self.horizon)));
        }
        if self.n_paths == 0 {
            return Err(HawkesError::InvalidArgument("n_paths must be >= 1".into()));
        }
        if self.max_events == 0 {
            return Err(HawkesError::InvalidArgument("max_events must be > 0".into()));
        }
        if let InitMode::ZeroWithBurnIn(b) = self.init {
            if !(b >= 0.0) {
                return Err(HawkesError::InvalidArgument(format!("burn-in must be >= 0, got {b}")));
            }
        }
        Ok(())
    }
}

/// RNG for one path of an ensemble.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

struct Thinning<'a> {
    params: &'a ModelParams,
    betas: Vec<f64>,
    slot: Vec<usize>,
    factors: Vec<f64>,
    lambda: Vec<f64>,
}

impl<'a> Thinning<'a> {
    fn new(params: &'a ModelParams) -> Self {
        let (betas, slot) = params.decay_groups();
        let n = betas.len();
        Thinning {
            params,
            betas,
            slot,
            factors: vec![0.0; n],
            lambda: vec![0.0; params.dim()],
        }
    }

    fn total(&mut self, state: &MarkovState) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.params.dim() {
            self.lambda[i] = self.params.mu()[i] + state.excitation(i);
            sum += self.lambda[i];
        }
        sum
    }

    /// Runs from `t0` until `t_end` or until `stop_after` events have been
    /// recorded. Events before `record_from` are simulated but dropped.
    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        state: &mut MarkovState,
        t0: f64,
        t_end: f64,
        record_from: f64,
        max_events: usize,
        stop_after: Option<usize>,
        rng: &mut ChaCha8Rng,
        times: &mut Vec<f64>,
        types: &mut Vec<usize>,
    ) -> Result<f64> {
        let mut t = t0;
        let mut bound = self.total(state);
        let mut simulated = 0usize;
        loop {
            if let Some(n) = stop_after {
                if times.len() >= n {
                    return Ok(t);
                }
            }
            let u: f64 = 1.0 - rng.random::<f64>();
            let cand = t - u.ln() / bound;
            if cand > t_end {
                return Ok(t_end);
            }
            let dt = cand - t;
            for (f, b) in self.factors.iter_mut().zip(&self.betas) {
                *f = (-b * dt).exp();
            }
            state.decay_grouped(&self.factors, &self.slot);
            t = cand;
            let total = self.total(state);
            let v: f64 = rng.random::<f64>();
            if v * bound <= total {
                let mut pick = rng.random::<f64>() * total;
                let mut ty = self.params.dim() - 1;
                for (i, &l) in self.lambda.iter().enumerate() {
                    if pick < l {
                        ty = i;
                        break;
                    }
                    pick -= l;
                }
                state.jump(self.params, ty);
                simulated += 1;
                if simulated > max_events {
                    return Err(HawkesError::Runaway(max_events));
                }
                if t >= record_from {
                    times.push(t);
                    types.push(ty + 1);
                }
                bound = self.total(state);
            } else {
                bound = total;
            }
        }
    }
}

fn initial_state(params: &ModelParams, init: InitMode) -> Result<(MarkovState, f64)> {
    match init {
        InitMode::StationaryMean => Ok((MarkovState::stationary_mean(params)?, 0.0)),
        InitMode::ZeroWithBurnIn(b) => Ok((MarkovState::zero(params), -b)),
    }
}

/// Simulates one path on `[0, horizon]`.
pub fn simulate_path(params: &ModelParams, config: &SimConfig, path: u64) -> Result<EventStream> {
    config.validate()?;
    params.warn_if_nonstationary("simulate_path");
    let mut rng = path_rng(config.seed, path);
    let (mut state, t0) = initial_state(params, config.init)?;
    let mut sim = Thinning::new(params);
    let mut times = Vec::new();
    let mut types = Vec::new();
    sim.run(
        &mut state,
        t0,
        config.horizon,
        0.0,
        config.max_events,
        None,
        &mut rng,
        &mut times,
        &mut types,
    )?;
    EventStream::from_seconds(params.dim(), &times, &types, config.horizon)
}

/// Simulates until exactly `n_events` events are recorded; the window
/// closes at the last event.
pub fn simulate_n_events(
    params: &ModelParams,
    n_events: usize,
    init: InitMode,
    seed: u64,
    path: u64,
) -> Result<EventStream> {
    params.warn_if_nonstationary("simulate_n_events");
    let mut rng = path_rng(seed, path);
    let (mut state, t0) = initial_state(params, init)?;
    let mut sim = Thinning::new(params);
    let mut times = Vec::with_capacity(n_events);
    let mut types = Vec::with_capacity(n_events);
    if let InitMode::ZeroWithBurnIn(_) = init {
        sim.run(&mut state, t0, 0.0, 0.0, usize::MAX, None, &mut rng, &mut times, &mut types)?;
        times.clear();
        types.clear();
    }
    let end = sim.run(
        &mut state,
        0.0,
        f64::INFINITY,
        0.0,
        n_events.saturating_mul(10).max(1000),
        Some(n_events),
        &mut rng,
        &mut times,
        &mut types,
    )?;
    EventStream::from_seconds(params.dim(), &times, &types, end)
}

/// Sample moments of the counts over an ensemble of paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub schema_version: u32,
    pub n_paths: usize,
    pub horizon: f64,
    pub seed: u64,
    /// mean of N_i(T)
    pub mean_counts: Vec<f64>,
    pub se_counts: Vec<f64>,
    /// mean of N_i(T) N_j(T)
    pub mean_products: Vec<Vec<f64>>,
    pub se_products: Vec<Vec<f64>>,
    pub total_events: u64,
}

impl EnsembleSummary {
    /// Builds the summary from per-path counts, in path order.
    pub fn from_counts(counts: &[Vec<usize>], horizon: f64, seed: u64) -> Self {
        let n = counts.len();
        let m = counts.first().map_or(0, |c| c.len());
        let nf = n as f64;
        let mean_se = |vals: &mut dyn Iterator<Item = f64>| {
            let (mut s, mut s2) = (0.0, 0.0);
            for v in vals {
                s += v;
                s2 += v * v;
            }
            let mean = s / nf;
            let se = if n > 1 {
                ((s2 - nf * mean * mean).max(0.0) / (nf - 1.0) / nf).sqrt()
            } else {
                0.0
            };
            (mean, se)
        };
        let mut mean_counts = vec![0.0; m];
        let mut se_counts = vec![0.0; m];
        let mut mean_products = vec![vec![0.0; m]; m];
        let mut se_products = vec![vec![0.0; m]; m];
        for i in 0..m {
            let (a, b) = mean_se(&mut counts.iter().map(|c| c[i] as f64));
            mean_counts[i] = a;
            se_counts[i] = b;
            for j in 0..m {
                let (a, b) = mean_se(&mut counts.iter().map(|c| (c[i] * c[j]) as f64));
                mean_products[i][j] = a;
                se_products[i][j] = b;
            }
        }
        EnsembleSummary {
            schema_version: crate::SCHEMA_VERSION,
            n_paths: n,
            horizon,
            seed,
            mean_counts,
            se_counts,
            mean_products,
            se_products,
            total_events: counts.iter().flatten().map(|&c| c as u64).sum(),
        }
    }
}

/// Runs `config.n_paths` independent paths in parallel.
pub fn simulate_ensemble(params: &ModelParams, config: &SimConfig) -> Result<EnsembleSummary> {
    config.validate()?;
    params.warn_if_nonstationary("simulate_ensemble");
    let counts = (0..config.n_paths as u64)
        .into_par_iter()
        .map(|p| simulate_path(params, config, p).map(|s| s.counts()))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleSummary::from_counts(&counts, config.horizon, config.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_horizon_is_empty() {
        let p = ModelParams::univariate(1.0, &[0.5], &[1.0]).unwrap();
        let s = simulate_path(&p, &SimConfig::new(0.0, 1, 3), 0).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let p = ModelParams::symmetric_bivariate(0.5, &[2.0], &[1.0], &[5.0]).unwrap();
        let cfg = SimConfig::new(200.0, 4, 11);
        assert_eq!(simulate_path(&p, &cfg, 2).unwrap(), simulate_path(&p, &cfg, 2).unwrap());
        assert_ne!(simulate_path(&p, &cfg, 1).unwrap(), simulate_path(&p, &cfg, 2).unwrap());
        assert_eq!(simulate_ensemble(&p, &cfg).unwrap(), simulate_ensemble(&p, &cfg).unwrap());
    }

    #[test]
    fn single_path_summary() {
        let p = ModelParams::symmetric_bivariate(0.5, &[2.0], &[1.0], &[5.0]).unwrap();
        let cfg = SimConfig::new(100.0, 1, 5);
        let path = simulate_path(&p, &cfg, 0).unwrap();
        let s = simulate_ensemble(&p, &cfg).unwrap();
        let c = path.counts();
        assert_eq!(s.mean_counts, vec![c[0] as f64, c[1] as f64]);
        assert_eq!(s.mean_products[0][1], (c[0] * c[1]) as f64);
        assert_eq!(s.se_counts, vec![0.0, 0.0]);
    }

    #[test]
    fn runaway_guard() {
        let p = ModelParams::univariate(1.0, &[2.0], &[1.0]).unwrap();
        let cfg = SimConfig::new(1e6, 1, 1).with_init(InitMode::ZeroWithBurnIn(0.0)).with_max_events(1000);
        assert!(matches!(simulate_path(&p, &cfg, 0), Err(HawkesError::Runaway(1000))));
    }

    #[test]
    fn n_event_paths() {
        let p = ModelParams::univariate(0.2, &[0.5], &[1.0]).unwrap();
        let s = simulate_n_events(&p, 150, InitMode::StationaryMean, 9, 0).unwrap();
        assert_eq!(s.len(), 150);
        assert_eq!(s.end_ns(), *s.times_ns().last().unwrap());
    }
}
