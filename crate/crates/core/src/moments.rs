//! Closed-form first and second moments of the stationary model.
//!
//! State vector convention: `Λ_t` stacks `λ_k(t)` kernel-major, so entry
//! `k*m + i` is the kernel-k component on target i.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::model::ModelParams;

fn require_stationary(params: &ModelParams) -> Result<()> {
    let r = params.spectral_radius();
    if r >= 1.0 || !r.is_finite() {
        return Err(HawkesError::NonStationary(r));
    }
    Ok(())
}

fn require_markov(params: &ModelParams) -> Result<()> {
    if !params.profile().is_markov() {
        return Err(HawkesError::InvalidParameters(
            "second moments need row-shared decays (Markov layout)".into(),
        ));
    }
    Ok(())
}

/// `E[λ] = (I - Σ_k β_k⁻¹ α_k)⁻¹ μ`.
pub fn stationary_mean_intensity(params: &ModelParams) -> Result<Vec<f64>> {
    require_stationary(params)?;
    let m = params.dim();
    let lhs = DMatrix::identity(m, m) - params.branching_matrix();
    let mu = DVector::from_column_slice(params.mu());
    let sol = lhs
        .lu()
        .solve(&mu)
        .ok_or_else(|| HawkesError::Degenerate("I - branching matrix is singular".into()))?;
    Ok(sol.iter().copied().collect())
}

/// Stationary `E[λ]` together with the per-kernel means `E[λ_k] = β_k⁻¹ α_k E[λ]`.
pub fn stationary_intensity(params: &ModelParams) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mean = stationary_mean_intensity(params)?;
    let m = params.dim();
    let per_kernel = (0..params.kernels())
        .map(|k| {
            (0..m)
                .map(|i| (0..m).map(|j| params.alpha(k, i, j) * mean[j] / params.beta(k, i, j)).sum())
                .collect()
        })
        .collect();
    Ok((mean, per_kernel))
}

struct StackedSystem {
    /// β − αJ, (mK)×(mK)
    drift: DMatrix<f64>,
    /// Sylvester right-hand side
    rhs: DMatrix<f64>,
    mean: Vec<f64>,
    state_mean: DVector<f64>,
}

fn stacked_system(params: &ModelParams) -> Result<StackedSystem> {
    require_markov(params)?;
    let (mean, per_kernel) = stationary_intensity(params)?;
    let m = params.dim();
    let kk = params.kernels();
    let n = m * kk;
    // α stacked: row k*m+i, column j
    let alpha = DMatrix::from_fn(n, m, |r, j| params.alpha(r / m, r % m, j));
    let beta = DMatrix::from_fn(n, n, |r, c| if r == c { params.row_beta(r / m, r % m) } else { 0.0 });
    let jmat = DMatrix::from_fn(m, n, |i, c| if c % m == i { 1.0 } else { 0.0 });
    let drift = &beta - &alpha * &jmat;
    let mu = DVector::from_column_slice(params.mu());
    let state_mean = DVector::from_iterator(n, per_kernel.iter().flatten().copied());
    let amu = &alpha * &mu;
    let dg = DMatrix::from_diagonal(&DVector::from_column_slice(&mean));
    let rhs = &amu * state_mean.transpose() + &state_mean * amu.transpose() + &alpha * dg * alpha.transpose();
    Ok(StackedSystem { drift, rhs, mean, state_mean })
}

/// `E[Λ_t Λ_tᵀ]`, from the Sylvester equation
/// `(β − αJ) X + X (β − αJ)ᵀ = αμE[Λ]ᵀ + E[Λ]μᵀαᵀ + α Dg(E[λ]) αᵀ`
/// solved through its Kronecker vectorization.
pub fn second_moment_ll(params: &ModelParams) -> Result<DMatrix<f64>> {
    let sys = stacked_system(params)?;
    solve_sylvester_symmetric(&sys.drift, &sys.rhs)
}

/// Solves `M X + X Mᵀ = R` densely and symmetrizes the result.
pub fn solve_sylvester_symmetric(drift: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = drift.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let big = eye.kronecker(drift) + drift.kronecker(&eye);
    // column-major vec
    let v = DVector::from_column_slice(rhs.as_slice());
    let sol = big
        .full_piv_lu()
        .solve(&v)
        .ok_or_else(|| HawkesError::Degenerate("Sylvester system is singular".into()))?;
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(HawkesError::Degenerate("Sylvester system is singular".into()));
    }
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// Relative residual `‖M X + X Mᵀ − R‖_F / ‖R‖_F` of a candidate solution.
pub fn sylvester_residual(params: &ModelParams, x: &DMatrix<f64>) -> Result<f64> {
    let sys = stacked_system(params)?;
    let res = &sys.drift * x + x * sys.drift.transpose() - &sys.rhs;
    let scale = sys.rhs.norm();
    Ok(if scale == 0.0 { res.norm() } else { res.norm() / scale })
}

/// Coefficients of `E[λ_t N_tᵀ] ≈ A t + B` (particular solution only).
pub fn lambda_n_coefficients(params: &ModelParams) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sys = stacked_system(params)?;
    let ell = solve_sylvester_symmetric(&sys.drift, &sys.rhs)?;
    Ok(coefficients_from(params, &sys, &ell))
}

fn coefficients_from(params: &ModelParams, sys: &StackedSystem, ell: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = params.dim();
    let n = m * params.kernels();
    let mean = DVector::from_column_slice(&sys.mean);
    let a = &mean * mean.transpose();
    let mu = DVector::from_column_slice(params.mu());
    let jmat = DMatrix::from_fn(m, n, |i, c| if c % m == i { 1.0 } else { 0.0 });
    // E[Λ λᵀ] = E[Λ] μᵀ + E[ΛΛᵀ] Jᵀ
    let state_lambda = &sys.state_mean * mu.transpose() + ell * jmat.transpose();
    let dg = DMatrix::from_diagonal(&mean);
    let mut inner = DMatrix::<f64>::zeros(m, m);
    for k in 0..params.kernels() {
        let alpha_k = DMatrix::from_fn(m, m, |i, j| params.alpha(k, i, j));
        let beta_inv = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 / params.row_beta(k, i) } else { 0.0 });
        let e_k = state_lambda.rows(k * m, m).into_owned();
        inner += &beta_inv * (-(&beta_inv * &alpha_k) * &a + e_k + &alpha_k * &dg);
    }
    let lhs = DMatrix::identity(m, m) - params.branching_matrix();
    // stationarity was checked upstream, so the LU solve succeeds
    let b = lhs.lu().solve(&inner).unwrap_or_else(|| DMatrix::from_element(m, m, f64::NAN));
    (a, b)
}

/// `E[N_t N_tᵀ] = A t² + (B + Bᵀ + Dg(E[λ])) t`.
pub fn second_moment_n(params: &ModelParams, t: f64) -> Result<DMatrix<f64>> {
    if !(t > 0.0) {
        return Err(HawkesError::InvalidArgument(format!("horizon must be > 0, got {t}")));
    }
    let sys = stacked_system(params)?;
    let ell = solve_sylvester_symmetric(&sys.drift, &sys.rhs)?;
    let (a, b) = coefficients_from(params, &sys, &ell);
    Ok(counts_second_moment(&a, &b, &sys.mean, t))
}

fn counts_second_moment(a: &DMatrix<f64>, b: &DMatrix<f64>, mean: &[f64], t: f64) -> DMatrix<f64> {
    let dg = DMatrix::from_diagonal(&DVector::from_column_slice(mean));
    a * (t * t) + (b + b.transpose() + dg) * t
}

/// `Var(N_1(t) − N_2(t)) = t · (2 [1,−1] B [1,−1]ᵀ + [1,1] E[λ])` for m = 2.
pub fn variance_mid_price(params: &ModelParams, t: f64) -> Result<f64> {
    if params.dim() != 2 {
        return Err(HawkesError::InvalidParameters("mid-price variance needs m = 2".into()));
    }
    if !(t > 0.0) {
        return Err(HawkesError::InvalidArgument(format!("horizon must be > 0, got {t}")));
    }
    let (_, b) = lambda_n_coefficients(params)?;
    let mean = stationary_mean_intensity(params)?;
    Ok(variance_from(&b, &mean, t))
}

fn variance_from(b: &DMatrix<f64>, mean: &[f64], t: f64) -> f64 {
    let contrast = b[(0, 0)] - b[(0, 1)] - b[(1, 0)] + b[(1, 1)];
    t * (2.0 * contrast + mean[0] + mean[1])
}

fn rows(mat: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..mat.nrows()).map(|r| mat.row(r).iter().copied().collect()).collect()
}

/// Horizon-dependent part of a [`MomentReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonMoments {
    pub t: f64,
    #[serde(rename = "E_N")]
    pub mean_counts: Vec<f64>,
    #[serde(rename = "E_NN")]
    pub second_moment_counts: Vec<Vec<f64>>,
    /// Only for m = 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_diff: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub schema_version: u32,
    #[serde(rename = "E_lambda")]
    pub mean_intensity: Vec<f64>,
    #[serde(rename = "E_lambda_k")]
    pub kernel_mean_intensity: Vec<Vec<f64>>,
    #[serde(rename = "E_LL")]
    pub state_second_moment: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub sylvester_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<HorizonMoments>,
}

impl MomentReport {
    pub fn compute(params: &ModelParams, t: Option<f64>) -> Result<Self> {
        let sys = stacked_system(params)?;
        let ell = solve_sylvester_symmetric(&sys.drift, &sys.rhs)?;
        let (a, b) = coefficients_from(params, &sys, &ell);
        let residual = {
            let res = &sys.drift * &ell + &ell * sys.drift.transpose() - &sys.rhs;
            let s = sys.rhs.norm();
            if s == 0.0 { res.norm() } else { res.norm() / s }
        };
        let (_, per_kernel) = stationary_intensity(params)?;
        let horizon = match t {
            None => None,
            Some(t) if t > 0.0 => Some(Self::at(&a, &b, &sys.mean, t)),
            Some(t) => return Err(HawkesError::InvalidArgument(format!("horizon must be > 0, got {t}"))),
        };
        Ok(MomentReport {
            schema_version: crate::SCHEMA_VERSION,
            mean_intensity: sys.mean.clone(),
            kernel_mean_intensity: per_kernel,
            state_second_moment: rows(&ell),
            a: rows(&a),
            b: rows(&b),
            sylvester_residual: residual,
            horizon,
        })
    }

    fn at(a: &DMatrix<f64>, b: &DMatrix<f64>, mean: &[f64], t: f64) -> HorizonMoments {
        let enn = counts_second_moment(a, b, mean, t);
        HorizonMoments {
            t,
            mean_counts: mean.iter().map(|x| x * t).collect(),
            second_moment_counts: rows(&enn),
            var_diff: (mean.len() == 2).then(|| variance_from(b, mean, t)),
        }
    }

    /// Horizon moments at an arbitrary `t > 0` from the stored coefficients.
    pub fn horizon_moments(&self, t: f64) -> Result<HorizonMoments> {
        if !(t > 0.0) {
            return Err(HawkesError::InvalidArgument(format!("horizon must be > 0, got {t}")));
        }
        let m = self.mean_intensity.len();
        let a = DMatrix::from_fn(m, m, |i, j| self.a[i][j]);
        let b = DMatrix::from_fn(m, m, |i, j| self.b[i][j]);
        Ok(Self::at(&a, &b, &self.mean_intensity, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_model() -> ModelParams {
        ModelParams::symmetric_bivariate(0.0757, &[23.34, 6.0, 0.10], &[15.67, 9.0, 0.02], &[140.0, 30.0, 0.8])
            .unwrap()
    }

    #[test]
    fn poisson_limit() {
        let p = ModelParams::symmetric_bivariate(0.2, &[0.0], &[0.0], &[1.0]).unwrap();
        assert_eq!(stationary_mean_intensity(&p).unwrap(), vec![0.2, 0.2]);
        let ell = second_moment_ll(&p).unwrap();
        assert!(ell.iter().all(|&x| x == 0.0));
        let (a, b) = lambda_n_coefficients(&p).unwrap();
        assert_relative_eq!(a[(0, 1)], 0.04, epsilon = 1e-15);
        assert!(b.iter().all(|&x| x.abs() < 1e-15));
        let enn = second_moment_n(&p, 10.0).unwrap();
        assert_relative_eq!(enn[(0, 1)], 4.0, epsilon = 1e-12);
        assert_relative_eq!(enn[(0, 0)], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn univariate_mean() {
        let p = ModelParams::univariate(0.2, &[0.5], &[1.0]).unwrap();
        assert_relative_eq!(stationary_mean_intensity(&p).unwrap()[0], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn univariate_variance_matches_known_closed_form() {
        // asymptotic variance rate of a univariate exponential Hawkes count: Λ / (1-ρ)²
        let (mu, a, b) = (0.3, 0.6, 2.0);
        let p = ModelParams::univariate(mu, &[a], &[b]).unwrap();
        let rho = a / b;
        let lam = mu / (1.0 - rho);
        let t1 = 1000.0;
        let t2 = 2000.0;
        let var = |t: f64| second_moment_n(&p, t).unwrap()[(0, 0)] - (lam * t).powi(2);
        let slope = (var(t2) - var(t1)) / (t2 - t1);
        assert_relative_eq!(slope, lam / (1.0 - rho).powi(2), epsilon = 1e-9);
    }

    #[test]
    fn nonstationary_rejected() {
        let p = ModelParams::univariate(0.2, &[1.5], &[1.0]).unwrap();
        assert!(matches!(stationary_mean_intensity(&p), Err(HawkesError::NonStationary(_))));
        assert!(second_moment_ll(&p).is_err());
    }

    #[test]
    fn full_layout_rejected_for_second_moments() {
        let p = ModelParams::full(
            vec![0.2, 0.2],
            vec![vec![vec![0.5, 0.001], vec![0.9, 0.5]]],
            vec![vec![vec![2.1, 2.3], vec![2.2, 2.0]]],
        )
        .unwrap();
        assert!(stationary_mean_intensity(&p).is_ok());
        assert!(second_moment_ll(&p).is_err());
    }

    #[test]
    fn sylvester_residual_tiny_and_psd() {
        let p = reference_model();
        let ell = second_moment_ll(&p).unwrap();
        assert!(sylvester_residual(&p, &ell).unwrap() < 1e-10);
        let eig = ell.clone().symmetric_eigen();
        let scale = eig.eigenvalues.amax();
        assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-10 * scale));
    }

    #[test]
    fn a_is_symmetric_rank_one() {
        let (a, _) = lambda_n_coefficients(&reference_model()).unwrap();
        assert_relative_eq!(a[(0, 1)], a[(1, 0)]);
        assert_relative_eq!(a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)], 0.0, epsilon = 1e-12);
        let mean = stationary_mean_intensity(&reference_model()).unwrap();
        assert_relative_eq!(a[(0, 0)], mean[0] * mean[0], epsilon = 1e-15);
    }

    #[test]
    fn variance_identity_with_count_moments() {
        let p = reference_model();
        let t = 1000.0;
        let enn = second_moment_n(&p, t).unwrap();
        let v = variance_mid_price(&p, t).unwrap();
        let direct = enn[(0, 0)] + enn[(1, 1)] - 2.0 * enn[(0, 1)];
        assert_relative_eq!(v, direct, max_relative = 1e-9);
    }

    #[test]
    fn report_grows_like_a_t_squared() {
        let r = MomentReport::compute(&reference_model(), Some(1000.0)).unwrap();
        let far = r.horizon_moments(1e9).unwrap();
        assert_relative_eq!(far.second_moment_counts[0][1] / 1e18, r.a[0][1], max_relative = 1e-6);
        assert!(r.horizon_moments(0.0).is_err());
    }
}
