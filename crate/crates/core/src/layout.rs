//! Maps between a constraint profile's free parameters and [`ModelParams`].
//!
//! Free parameters split into a linear block `θ` (μ and α, in which the
//! intensity is linear) and a decay block. Both blocks are ordered as in
//! the report tables: all μ, then α kernel by kernel, then β kernel by kernel.

use crate::error::{HawkesError, Result};
use crate::model::{ConstraintProfile, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    profile: ConstraintProfile,
    m: usize,
    k: usize,
    mu_index: Vec<usize>,
    alpha_index: Vec<usize>,
    n_linear: usize,
    beta_index: Vec<usize>,
    n_beta: usize,
    linear_names: Vec<String>,
    beta_names: Vec<String>,
}

impl ParamLayout {
    pub fn new(profile: ConstraintProfile, m: usize, k: usize) -> Result<Self> {
        if m == 0 || k == 0 {
            return Err(HawkesError::InvalidArgument("m and K must be >= 1".into()));
        }
        let mm = m * m;
        let mut mu_index = vec![0; m];
        let mut alpha_index = vec![0; k * mm];
        let mut beta_index = vec![0; k * mm];
        let mut linear_names = Vec::new();
        let mut beta_names = Vec::new();
        let pair = |i: usize, j: usize| {
            if m < 10 {
                format!("{}{}", i + 1, j + 1)
            } else {
                format!("{}_{}", i + 1, j + 1)
            }
        };
        match profile {
            ConstraintProfile::SymmetricBivariate => {
                if m != 2 {
                    return Err(HawkesError::InvalidArgument("sym2 requires m = 2".into()));
                }
                linear_names.push("mu".to_string());
                for kk in 0..k {
                    linear_names.push(format!("alpha_{}s", kk + 1));
                    linear_names.push(format!("alpha_{}c", kk + 1));
                    beta_names.push(format!("beta_{}", kk + 1));
                    for i in 0..2 {
                        for j in 0..2 {
                            let idx = (kk * 2 + i) * 2 + j;
                            alpha_index[idx] = if i == j { 1 + 2 * kk } else { 2 + 2 * kk };
                            beta_index[idx] = kk;
                        }
                    }
                }
            }
            _ => {
                for (i, slot) in mu_index.iter_mut().enumerate() {
                    *slot = i;
                    linear_names.push(if m == 1 { "mu".to_string() } else { format!("mu_{}", i + 1) });
                }
                for kk in 0..k {
                    for i in 0..m {
                        for j in 0..m {
                            let idx = (kk * m + i) * m + j;
                            alpha_index[idx] = m + idx;
                            linear_names.push(if m == 1 {
                                format!("alpha_{}", kk + 1)
                            } else {
                                format!("alpha_{}_{}", kk + 1, pair(i, j))
                            });
                            beta_index[idx] = match profile {
                                ConstraintProfile::Full => idx,
                                ConstraintProfile::MarkovRow => kk * m + i,
                                _ => kk,
                            };
                        }
                    }
                    match profile {
                        ConstraintProfile::Full => {
                            for i in 0..m {
                                for j in 0..m {
                                    beta_names.push(format!("beta_{}_{}", kk + 1, pair(i, j)));
                                }
                            }
                        }
                        ConstraintProfile::MarkovRow => {
                            for i in 0..m {
                                beta_names.push(format!("beta_{}_{}", kk + 1, i + 1));
                            }
                        }
                        _ => beta_names.push(format!("beta_{}", kk + 1)),
                    }
                }
            }
        }
        Ok(ParamLayout {
            profile,
            m,
            k,
            mu_index,
            alpha_index,
            n_linear: linear_names.len(),
            beta_index,
            n_beta: beta_names.len(),
            linear_names,
            beta_names,
        })
    }

    pub fn profile(&self) -> ConstraintProfile {
        self.profile
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn kernels(&self) -> usize {
        self.k
    }

    pub fn n_linear(&self) -> usize {
        self.n_linear
    }

    pub fn n_beta(&self) -> usize {
        self.n_beta
    }

    /// Free-parameter count used by AIC.
    pub fn n_free(&self) -> usize {
        self.n_linear + self.n_beta
    }

    pub fn mu_index(&self) -> &[usize] {
        &self.mu_index
    }

    pub fn alpha_index(&self) -> &[usize] {
        &self.alpha_index
    }

    /// Decay parameter index of each model entry `(k*m+i)*m+j`.
    pub fn beta_param_index(&self) -> &[usize] {
        &self.beta_index
    }

    /// Decay parameter index of kernel `k`.
    pub fn beta_index_of_kernel(&self, k: usize) -> Vec<usize> {
        let mm = self.m * self.m;
        let mut v: Vec<usize> = self.beta_index[k * mm..(k + 1) * mm].to_vec();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Names of all free parameters, linear block first.
    pub fn names(&self) -> Vec<String> {
        self.linear_names.iter().chain(&self.beta_names).cloned().collect()
    }

    pub fn linear_names(&self) -> &[String] {
        &self.linear_names
    }

    pub fn beta_names(&self) -> &[String] {
        &self.beta_names
    }

    /// Index of the linear parameter that is μ_i.
    pub fn is_mu(&self, linear: usize) -> bool {
        self.mu_index.contains(&linear)
    }

    pub fn to_params(&self, linear: &[f64], betas: &[f64]) -> Result<ModelParams> {
        if linear.len() != self.n_linear || betas.len() != self.n_beta {
            return Err(HawkesError::DimensionMismatch(format!(
                "expected {} linear and {} decay parameters",
                self.n_linear, self.n_beta
            )));
        }
        let mu = self.mu_index.iter().map(|&i| linear[i]).collect();
        let alpha = self.alpha_index.iter().map(|&i| linear[i]).collect();
        let beta = self.beta_index.iter().map(|&i| betas[i]).collect();
        ModelParams::from_flat(self.profile, mu, alpha, beta)
    }

    /// Extracts the free parameters; tied entries are averaged.
    pub fn from_params(&self, params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
        if params.dim() != self.m || params.kernels() != self.k {
            return Err(HawkesError::DimensionMismatch(format!(
                "layout is m={}, K={}; params are m={}, K={}",
                self.m,
                self.k,
                params.dim(),
                params.kernels()
            )));
        }
        let mut lin = vec![0.0; self.n_linear];
        let mut lin_n = vec![0usize; self.n_linear];
        for (i, &ix) in self.mu_index.iter().enumerate() {
            lin[ix] += params.mu()[i];
            lin_n[ix] += 1;
        }
        for (flat, &ix) in self.alpha_index.iter().enumerate() {
            lin[ix] += params.alpha_flat()[flat];
            lin_n[ix] += 1;
        }
        let mut bet = vec![0.0; self.n_beta];
        let mut bet_n = vec![0usize; self.n_beta];
        for (flat, &ix) in self.beta_index.iter().enumerate() {
            bet[ix] += params.beta_flat()[flat];
            bet_n[ix] += 1;
        }
        lin.iter_mut().zip(&lin_n).for_each(|(v, &n)| *v /= n as f64);
        bet.iter_mut().zip(&bet_n).for_each(|(v, &n)| *v /= n as f64);
        Ok((lin, bet))
    }

    /// Expands decay parameters to a model with the given linear block.
    pub fn beta_flat(&self, betas: &[f64]) -> Vec<f64> {
        self.beta_index.iter().map(|&i| betas[i]).collect()
    }

    /// Kernel order by decreasing speed, for a decay block.
    pub fn kernel_order(&self, betas: &[f64]) -> Vec<usize> {
        let speed = |k: usize| {
            self.beta_index_of_kernel(k)
                .iter()
                .map(|&i| betas[i])
                .fold(f64::MIN, f64::max)
        };
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &b| speed(b).total_cmp(&speed(a)));
        order
    }
}
