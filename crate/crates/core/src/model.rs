//! Parameterization of the m-variate, K-kernel exponential Hawkes model.
//!
//! The intensity of type `i` is
//! `λ_i(t) = μ_i + Σ_k Σ_j Σ_{t_j < t} α_kij exp(-β_kij (t - t_j))`.
//! Decays are always stored expanded to one value per `(k, i, j)`; the
//! [`ConstraintProfile`] records which entries are tied together.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};

/// Nanoseconds per second.
pub const NANOS_PER_SEC: f64 = 1e9;

/// Which parameters are tied together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConstraintProfile {
    /// One decay per kernel and per (target, source) pair.
    Full,
    /// One decay per kernel and target row (the Markov restriction).
    MarkovRow,
    /// One decay per kernel.
    ScalarPerKernel,
    /// m = 2, shared μ, α_k = [[s, c], [c, s]], scalar decay per kernel.
    SymmetricBivariate,
}

impl ConstraintProfile {
    pub fn short_name(self) -> &'static str {
        match self {
            ConstraintProfile::Full => "full",
            ConstraintProfile::MarkovRow => "markov",
            ConstraintProfile::ScalarPerKernel => "scalar",
            ConstraintProfile::SymmetricBivariate => "sym2",
        }
    }

    /// True when every kernel row shares one decay, so the intensity
    /// components form a Markov state of size m·K.
    pub fn is_markov(self) -> bool {
        !matches!(self, ConstraintProfile::Full)
    }
}

impl fmt::Display for ConstraintProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for ConstraintProfile {
    type Err = HawkesError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(ConstraintProfile::Full),
            "markov" | "markov_row" => Ok(ConstraintProfile::MarkovRow),
            "scalar" | "scalar_per_kernel" => Ok(ConstraintProfile::ScalarPerKernel),
            "sym2" | "symmetric_bivariate" => Ok(ConstraintProfile::SymmetricBivariate),
            other => Err(HawkesError::InvalidArgument(format!(
                "unknown constraint profile '{other}' (expected full|markov|scalar|sym2)"
            ))),
        }
    }
}

/// Full parameter set of a multi-kernel exponential Hawkes model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    m: usize,
    k: usize,
    mu: Vec<f64>,
    // index: k*m*m + i*m + j
    alpha: Vec<f64>,
    beta: Vec<f64>,
    profile: ConstraintProfile,
}

fn check_cube(name: &str, cube: &[Vec<Vec<f64>>], m: usize) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(cube.len() * m * m);
    for (k, mat) in cube.iter().enumerate() {
        if mat.len() != m || mat.iter().any(|row| row.len() != m) {
            return Err(HawkesError::DimensionMismatch(format!(
                "{name}[{k}] must be {m}x{m}"
            )));
        }
        flat.extend(mat.iter().flatten().copied());
    }
    Ok(flat)
}

impl ModelParams {
    /// Builds a model with one decay per `(k, i, j)`.
    pub fn full(mu: Vec<f64>, alpha: Vec<Vec<Vec<f64>>>, beta: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let m = mu.len();
        if alpha.len() != beta.len() {
            return Err(HawkesError::DimensionMismatch(
                "alpha and beta must have the same kernel count".into(),
            ));
        }
        let a = check_cube("alpha", &alpha, m)?;
        let b = check_cube("beta", &beta, m)?;
        Self::from_flat(ConstraintProfile::Full, mu, a, b)
    }

    /// Builds a model whose decays are shared along each kernel row.
    pub fn markov(mu: Vec<f64>, alpha: Vec<Vec<Vec<f64>>>, beta_rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = mu.len();
        if alpha.len() != beta_rows.len() {
            return Err(HawkesError::DimensionMismatch(
                "alpha and beta must have the same kernel count".into(),
            ));
        }
        let a = check_cube("alpha", &alpha, m)?;
        let mut b = Vec::with_capacity(a.len());
        for (k, row) in beta_rows.iter().enumerate() {
            if row.len() != m {
                return Err(HawkesError::DimensionMismatch(format!(
                    "beta[{k}] must have length {m}"
                )));
            }
            for &bi in row {
                b.extend(std::iter::repeat_n(bi, m));
            }
        }
        Self::from_flat(ConstraintProfile::MarkovRow, mu, a, b)
    }

    /// Builds a model with one decay per kernel.
    pub fn scalar(mu: Vec<f64>, alpha: Vec<Vec<Vec<f64>>>, beta: Vec<f64>) -> Result<Self> {
        let m = mu.len();
        if alpha.len() != beta.len() {
            return Err(HawkesError::DimensionMismatch(
                "alpha and beta must have the same kernel count".into(),
            ));
        }
        let a = check_cube("alpha", &alpha, m)?;
        let b = beta.iter().flat_map(|&bk| std::iter::repeat_n(bk, m * m)).collect();
        Self::from_flat(ConstraintProfile::ScalarPerKernel, mu, a, b)
    }

    /// Univariate K-kernel model.
    pub fn univariate(mu: f64, alpha: &[f64], beta: &[f64]) -> Result<Self> {
        let a = alpha.iter().map(|&x| vec![vec![x]]).collect();
        Self::scalar(vec![mu], a, beta.to_vec())
    }

    /// The symmetric bivariate up/down parameterization: shared μ,
    /// self-excitation `alpha_self[k]`, cross-excitation `alpha_cross[k]`.
    pub fn symmetric_bivariate(
        mu: f64,
        alpha_self: &[f64],
        alpha_cross: &[f64],
        beta: &[f64],
    ) -> Result<Self> {
        if alpha_self.len() != beta.len() || alpha_cross.len() != beta.len() {
            return Err(HawkesError::DimensionMismatch(
                "alpha_self, alpha_cross and beta must have the same length".into(),
            ));
        }
        let mut a = Vec::with_capacity(4 * beta.len());
        let mut b = Vec::with_capacity(4 * beta.len());
        for k in 0..beta.len() {
            a.extend([alpha_self[k], alpha_cross[k], alpha_cross[k], alpha_self[k]]);
            b.extend([beta[k]; 4]);
        }
        Self::from_flat(ConstraintProfile::SymmetricBivariate, vec![mu, mu], a, b)
    }

    /// Low-level constructor from flattened `(k, i, j)` arrays.
    pub fn from_flat(
        profile: ConstraintProfile,
        mu: Vec<f64>,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    ) -> Result<Self> {
        let m = mu.len();
        if m == 0 {
            return Err(HawkesError::InvalidParameters("mu must be non-empty".into()));
        }
        if alpha.is_empty() || !alpha.len().is_multiple_of(m * m) || beta.len() != alpha.len() {
            return Err(HawkesError::DimensionMismatch(format!(
                "alpha/beta must hold K*{m}*{m} entries with K >= 1"
            )));
        }
        let params = ModelParams {
            m,
            k: alpha.len() / (m * m),
            mu,
            alpha,
            beta,
            profile,
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        if let Some(x) = self.mu.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(HawkesError::InvalidParameters(format!("mu must be > 0, got {x}")));
        }
        if let Some(x) = self.alpha.iter().find(|&&x| !(x >= 0.0 && x.is_finite())) {
            return Err(HawkesError::InvalidParameters(format!("alpha must be >= 0, got {x}")));
        }
        if let Some(x) = self.beta.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(HawkesError::InvalidParameters(format!("beta must be > 0, got {x}")));
        }
        let m = self.m;
        let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        for k in 0..self.k {
            match self.profile {
                ConstraintProfile::Full => {}
                ConstraintProfile::MarkovRow => {
                    for i in 0..m {
                        if (0..m).any(|j| !same(self.beta(k, i, j), self.beta(k, i, 0))) {
                            return Err(HawkesError::InvalidParameters(format!(
                                "MARKOV_ROW requires equal decays along row {i} of kernel {k}"
                            )));
                        }
                    }
                }
                ConstraintProfile::ScalarPerKernel | ConstraintProfile::SymmetricBivariate => {
                    let b0 = self.beta(k, 0, 0);
                    if self.kernel_betas(k).iter().any(|&b| !same(b, b0)) {
                        return Err(HawkesError::InvalidParameters(format!(
                            "{} requires one decay for kernel {k}",
                            self.profile
                        )));
                    }
                }
            }
        }
        if self.profile == ConstraintProfile::SymmetricBivariate {
            if m != 2 {
                return Err(HawkesError::InvalidParameters(
                    "SYMMETRIC_BIVARIATE requires m = 2".into(),
                ));
            }
            if !same(self.mu[0], self.mu[1]) {
                return Err(HawkesError::InvalidParameters(
                    "SYMMETRIC_BIVARIATE requires mu_1 = mu_2".into(),
                ));
            }
            for k in 0..self.k {
                if !same(self.alpha(k, 0, 0), self.alpha(k, 1, 1))
                    || !same(self.alpha(k, 0, 1), self.alpha(k, 1, 0))
                {
                    return Err(HawkesError::InvalidParameters(format!(
                        "SYMMETRIC_BIVARIATE requires alpha[{k}] = [[s, c], [c, s]]"
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn kernels(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn profile(&self) -> ConstraintProfile {
        self.profile
    }

    #[inline]
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    #[inline]
    pub(crate) fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.m + i) * self.m + j
    }

    /// Jump of λ_i through kernel k caused by a type-j event.
    #[inline]
    pub fn alpha(&self, k: usize, i: usize, j: usize) -> f64 {
        self.alpha[self.idx(k, i, j)]
    }

    #[inline]
    pub fn beta(&self, k: usize, i: usize, j: usize) -> f64 {
        self.beta[self.idx(k, i, j)]
    }

    /// Flattened α, index `(k*m + i)*m + j`.
    pub fn alpha_flat(&self) -> &[f64] {
        &self.alpha
    }

    /// Flattened β, index `(k*m + i)*m + j`.
    pub fn beta_flat(&self) -> &[f64] {
        &self.beta
    }

    fn kernel_betas(&self, k: usize) -> &[f64] {
        let s = k * self.m * self.m;
        &self.beta[s..s + self.m * self.m]
    }

    /// Decay of row `i` of kernel `k` under a Markov layout.
    pub fn row_beta(&self, k: usize, i: usize) -> f64 {
        self.beta(k, i, 0)
    }

    /// Kernel decay used for canonical ordering (scalar decay, or row max).
    pub fn kernel_speed(&self, k: usize) -> f64 {
        self.kernel_betas(k).iter().copied().fold(f64::MIN, f64::max)
    }

    /// Copy with μ, α, β replaced, keeping the profile; re-validated.
    pub fn with_values(&self, mu: Vec<f64>, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.profile, mu, alpha, beta)
    }

    /// Copy with every α set to zero.
    pub fn without_excitation(&self) -> Self {
        let mut p = self.clone();
        p.alpha.iter_mut().for_each(|a| *a = 0.0);
        p
    }

    /// Reorders kernels by decreasing decay (fastest kernel first).
    pub fn canonicalize(&self) -> Self {
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &b| self.kernel_speed(b).total_cmp(&self.kernel_speed(a)));
        let mm = self.m * self.m;
        let mut out = self.clone();
        for (dst, &src) in order.iter().enumerate() {
            out.alpha[dst * mm..(dst + 1) * mm].copy_from_slice(&self.alpha[src * mm..(src + 1) * mm]);
            out.beta[dst * mm..(dst + 1) * mm].copy_from_slice(&self.beta[src * mm..(src + 1) * mm]);
        }
        out
    }

    /// `Σ_k α_k ∘ β_k⁻¹`, entrywise; equals `Σ_k β_k⁻¹ α_k` under a Markov layout.
    pub fn branching_matrix(&self) -> DMatrix<f64> {
        let m = self.m;
        DMatrix::from_fn(m, m, |i, j| {
            (0..self.k).map(|k| self.alpha(k, i, j) / self.beta(k, i, j)).sum()
        })
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.branching_matrix())
    }

    pub fn is_stationary(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// Logs a warning when the branching matrix is not contractive.
    pub fn warn_if_nonstationary(&self, context: &str) {
        let r = self.spectral_radius();
        if r >= 1.0 {
            log::warn!("{context}: spectral radius {r:.6} >= 1, model is not stationary");
        }
    }

    /// Distinct decay values and, per `(k, i, j)` slot, the index into them.
    pub(crate) fn decay_groups(&self) -> (Vec<f64>, Vec<usize>) {
        let mut distinct: Vec<f64> = Vec::new();
        let slot = self
            .beta
            .iter()
            .map(|&b| match distinct.iter().position(|&d| d == b) {
                Some(p) => p,
                None => {
                    distinct.push(b);
                    distinct.len() - 1
                }
            })
            .collect();
        (distinct, slot)
    }

    /// Serializable document form.
    pub fn to_doc(&self) -> ParamsDoc {
        let m = self.m;
        let alpha = (0..self.k)
            .map(|k| (0..m).map(|i| (0..m).map(|j| self.alpha(k, i, j)).collect()).collect())
            .collect();
        let beta = match self.profile {
            ConstraintProfile::Full => BetaDoc::Full(
                (0..self.k)
                    .map(|k| (0..m).map(|i| (0..m).map(|j| self.beta(k, i, j)).collect()).collect())
                    .collect(),
            ),
            ConstraintProfile::MarkovRow => BetaDoc::Rows(
                (0..self.k).map(|k| (0..m).map(|i| self.row_beta(k, i)).collect()).collect(),
            ),
            _ => BetaDoc::Scalar((0..self.k).map(|k| self.beta(k, 0, 0)).collect()),
        };
        ParamsDoc {
            schema_version: crate::SCHEMA_VERSION,
            constraint_profile: self.profile,
            mu: self.mu.clone(),
            alpha,
            beta,
        }
    }

    pub fn from_doc(doc: ParamsDoc) -> Result<Self> {
        let m = doc.mu.len();
        let k = doc.alpha.len();
        let alpha = check_cube("alpha", &doc.alpha, m)?;
        let beta = match (doc.constraint_profile, doc.beta) {
            (ConstraintProfile::Full, BetaDoc::Full(b)) => {
                if b.len() != k {
                    return Err(HawkesError::DimensionMismatch("beta must have K entries".into()));
                }
                check_cube("beta", &b, m)?
            }
            (ConstraintProfile::MarkovRow, BetaDoc::Rows(rows)) => {
                if rows.len() != k || rows.iter().any(|r| r.len() != m) {
                    return Err(HawkesError::DimensionMismatch(format!("beta must be {k}x{m}")));
                }
                rows.iter()
                    .flat_map(|r| r.iter().flat_map(|&b| std::iter::repeat_n(b, m)))
                    .collect()
            }
            (ConstraintProfile::ScalarPerKernel | ConstraintProfile::SymmetricBivariate, BetaDoc::Scalar(b)) => {
                if b.len() != k {
                    return Err(HawkesError::DimensionMismatch(format!("beta must have {k} entries")));
                }
                b.iter().flat_map(|&bk| std::iter::repeat_n(bk, m * m)).collect()
            }
            (p, _) => {
                return Err(HawkesError::InvalidParameters(format!(
                    "beta layout does not match constraint profile {p}"
                )))
            }
        };
        Self::from_flat(doc.constraint_profile, doc.mu, alpha, beta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(s)?)
    }
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = ParamsDoc::deserialize(d)?;
        ModelParams::from_doc(doc).map_err(serde::de::Error::custom)
    }
}

/// JSON layout of [`ModelParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsDoc {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub constraint_profile: ConstraintProfile,
    pub mu: Vec<f64>,
    /// K × m × m
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub beta: BetaDoc,
}

fn default_schema() -> u32 {
    crate::SCHEMA_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaDoc {
    /// K × m × m
    Full(Vec<Vec<Vec<f64>>>),
    /// K × m
    Rows(Vec<Vec<f64>>),
    /// K
    Scalar(Vec<f64>),
}

/// Largest eigenvalue modulus of a real square matrix.
pub fn spectral_radius(mat: &DMatrix<f64>) -> f64 {
    match mat.nrows() {
        0 => 0.0,
        1 => mat[(0, 0)].abs(),
        _ => mat
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
    }
}

/// Intensity components of a Markov-decaying model.
///
/// Stores one component per `(k, i, j)`: the part of λ_i contributed by
/// type-j events through kernel k. The stacked vector `Λ_t` of
/// per-kernel, per-type components is [`MarkovState::lambda_components`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovState {
    comp: Vec<f64>,
    m: usize,
    k: usize,
    time_ns: i64,
}

impl MarkovState {
    pub fn zero(params: &ModelParams) -> Self {
        MarkovState {
            comp: vec![0.0; params.alpha.len()],
            m: params.m,
            k: params.k,
            time_ns: 0,
        }
    }

    /// Stationary mean state: each `(k, i, j)` component at `α_kij E[λ_j] / β_kij`.
    pub fn stationary_mean(params: &ModelParams) -> Result<Self> {
        let mean = crate::moments::stationary_mean_intensity(params)?;
        let mut st = Self::zero(params);
        for k in 0..params.k {
            for i in 0..params.m {
                for j in 0..params.m {
                    let idx = params.idx(k, i, j);
                    st.comp[idx] = params.alpha[idx] * mean[j] / params.beta[idx];
                }
            }
        }
        Ok(st)
    }

    /// Builds a state from per-kernel, per-target components `λ_ki`
    /// (kernel-major, length m·K). Each `λ_ki` is attributed to its row's
    /// first source slot; this is exact for Markov layouts.
    pub fn from_lambda_components(params: &ModelParams, lambda: &[f64]) -> Result<Self> {
        if lambda.len() != params.m * params.k {
            return Err(HawkesError::DimensionMismatch(format!(
                "expected {} components, got {}",
                params.m * params.k,
                lambda.len()
            )));
        }
        if !params.profile.is_markov() {
            return Err(HawkesError::InvalidParameters(
                "aggregated components require a Markov decay layout".into(),
            ));
        }
        if lambda.iter().any(|&x| !(x >= 0.0)) {
            return Err(HawkesError::InvalidArgument("components must be >= 0".into()));
        }
        let mut st = Self::zero(params);
        for k in 0..params.k {
            for i in 0..params.m {
                st.comp[params.idx(k, i, 0)] = lambda[k * params.m + i];
            }
        }
        Ok(st)
    }

    pub fn time_ns(&self) -> i64 {
        self.time_ns
    }

    pub fn set_time_ns(&mut self, t: i64) {
        self.time_ns = t;
    }

    /// Raw `(k, i, j)` components.
    pub fn raw(&self) -> &[f64] {
        &self.comp
    }

    /// `Λ_t = [λ_11, …, λ_1m, λ_21, …, λ_Km]`.
    pub fn lambda_components(&self) -> Vec<f64> {
        let m = self.m;
        (0..self.k * m)
            .map(|ki| self.comp[ki * m..(ki + 1) * m].iter().sum())
            .collect()
    }

    /// Component of kernel k on target i.
    pub fn kernel_component(&self, k: usize, i: usize) -> f64 {
        let s = (k * self.m + i) * self.m;
        self.comp[s..s + self.m].iter().sum()
    }

    /// Total excitation on target i (without μ).
    pub fn excitation(&self, i: usize) -> f64 {
        (0..self.k).map(|k| self.kernel_component(k, i)).sum()
    }

    /// Multiplies each component by its decay factor; does not touch the clock.
    pub(crate) fn decay_in_place(&mut self, params: &ModelParams, dt: f64) {
        for (c, &b) in self.comp.iter_mut().zip(&params.beta) {
            *c *= (-b * dt).exp();
        }
    }

    /// Same as [`decay_in_place`] with precomputed per-group factors.
    pub(crate) fn decay_grouped(&mut self, factors: &[f64], slot: &[usize]) {
        for (c, &g) in self.comp.iter_mut().zip(slot) {
            *c *= factors[g];
        }
    }

    pub(crate) fn jump(&mut self, params: &ModelParams, j: usize) {
        let m = self.m;
        for k in 0..self.k {
            for i in 0..m {
                let idx = (k * m + i) * m + j;
                self.comp[idx] += params.alpha[idx];
            }
        }
    }
}

/// `μ + J Λ_t`: total intensity per type.
pub fn intensity_at(params: &ModelParams, state: &MarkovState) -> Vec<f64> {
    (0..params.m).map(|i| params.mu[i] + state.excitation(i)).collect()
}

/// Decays the state by `dt` seconds and advances its clock.
pub fn advance_state(params: &ModelParams, state: &MarkovState, dt: f64) -> Result<MarkovState> {
    if !(dt >= 0.0) {
        return Err(HawkesError::NegativeTimeStep(dt));
    }
    let mut next = state.clone();
    next.decay_in_place(params, dt);
    next.time_ns += (dt * NANOS_PER_SEC).round() as i64;
    Ok(next)
}

/// Adds the jumps caused by a type-`event_type` event (1-based type index).
pub fn apply_event(params: &ModelParams, state: &MarkovState, event_type: usize) -> Result<MarkovState> {
    if event_type == 0 || event_type > params.m {
        return Err(HawkesError::InvalidEventType { got: event_type, m: params.m });
    }
    let mut next = state.clone();
    next.jump(params, event_type - 1);
    Ok(next)
}
