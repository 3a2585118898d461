//! Bound-constrained Newton maximization of the conditional likelihood.
//!
//! At fixed decays `L(θ) = Σ_n ln(x_n·θ) - c·θ` is concave with Hessian
//! `-Σ x xᵀ/λ²`, so any stationary point of the box-constrained problem
//! is the global maximum. Projected Newton with an active set handles
//! excitation parameters sitting on their zero bound.

use nalgebra::{DMatrix, DVector};

use crate::likelihood::LinearDesign;

/// Lower bound used for μ-type parameters so the model stays valid.
pub const MU_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ConcaveOptions {
    pub max_iter: usize,
    /// Stop when the Newton decrement falls below this.
    pub decrement_tol: f64,
}

impl Default for ConcaveOptions {
    fn default() -> Self {
        ConcaveOptions { max_iter: 200, decrement_tol: 1e-13 }
    }
}

#[derive(Debug, Clone)]
pub struct ConcaveFit {
    pub theta: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn project(theta: &mut [f64], lower: &[f64]) {
    for (t, &l) in theta.iter_mut().zip(lower) {
        if *t < l {
            *t = l;
        }
    }
}

/// Maximizes `design` over `θ ≥ lower` from `start`.
///
/// Returns `None` only when the start cannot be made feasible.
pub fn maximize(design: &LinearDesign, start: &[f64], lower: &[f64], opts: &ConcaveOptions) -> Option<ConcaveFit> {
    let p = design.n_params();
    let mut theta = start.to_vec();
    project(&mut theta, lower);
    let (mut f, mut g, mut h) = design.derivatives(&theta)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut d = vec![0.0; p];
    let mut trial = vec![0.0; p];
    while iterations < opts.max_iter {
        iterations += 1;
        let free: Vec<usize> = (0..p)
            .filter(|&j| !(theta[j] - lower[j] <= 1e-12 * (1.0 + theta[j].abs()) && g[j] <= 0.0))
            .collect();
        d.iter_mut().for_each(|x| *x = 0.0);
        if !free.is_empty() {
            let nf = free.len();
            let neg_h = DMatrix::from_fn(nf, nf, |r, c| -h[(free[r], free[c])]);
            let rhs = DVector::from_iterator(nf, free.iter().map(|&j| g[j]));
            let scale = (0..nf).map(|r| neg_h[(r, r)].abs()).fold(0.0, f64::max).max(1e-300);
            let mut ridge = 0.0;
            let step = loop {
                let mut mat = neg_h.clone();
                for r in 0..nf {
                    mat[(r, r)] += ridge;
                }
                if let Some(ch) = mat.cholesky() {
                    break Some(ch.solve(&rhs));
                }
                ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
                if ridge > 1e6 * scale {
                    break None;
                }
            };
            match step {
                Some(s) => {
                    for (r, &j) in free.iter().enumerate() {
                        d[j] = s[r];
                    }
                }
                None => {
                    for &j in &free {
                        d[j] = g[j] / (-h[(j, j)]).max(1e-300);
                    }
                }
            }
        }
        let decrement: f64 = (0..p).map(|j| g[j] * d[j]).sum();
        if decrement < opts.decrement_tol {
            converged = true;
            break;
        }
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for j in 0..p {
                trial[j] = theta[j] + s * d[j];
            }
            project(&mut trial, lower);
            if let Some(ft) = design.value(&trial) {
                let gain: f64 = (0..p).map(|j| g[j] * (trial[j] - theta[j])).sum();
                if ft >= f + 1e-4 * gain && ft >= f - 1e-12 * f.abs() {
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            // no ascent possible at machine precision
            converged = decrement < 1e-6 * (1.0 + f.abs());
            break;
        }
        theta.copy_from_slice(&trial);
        let next = design.derivatives(&theta)?;
        f = next.0;
        g = next.1;
        h = next.2;
    }
    Some(ConcaveFit {
        theta,
        value: f,
        gradient: g.iter().copied().collect(),
        hessian: h,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::sufficient_stats;
    use crate::model::ModelParams;
    use crate::simulate::{simulate_path, SimConfig};
    use approx::assert_relative_eq;

    #[test]
    fn poisson_fit_is_closed_form() {
        let truth = ModelParams::univariate(0.5, &[0.0], &[1.0]).unwrap();
        let s = simulate_path(&truth, &SimConfig::new(2000.0, 1, 4), 0).unwrap();
        let st = sufficient_stats(&truth, &s).unwrap();
        let d = LinearDesign::new(&st, 2, &[0], &[1]);
        let fit = maximize(&d, &[1.0, 0.3], &[MU_FLOOR, 0.0], &ConcaveOptions::default()).unwrap();
        assert!(fit.converged);
        let n = s.len() as f64;
        // with excitation allowed the fit can only improve on the Poisson optimum
        let poisson = n * (n / s.horizon()).ln() - n;
        assert!(fit.value >= poisson - 1e-9);
        assert!(fit.theta[1] < 0.05);
    }

    #[test]
    fn kkt_conditions_hold() {
        let truth = ModelParams::univariate(0.2, &[0.6], &[1.5]).unwrap();
        let s = simulate_path(&truth, &SimConfig::new(3000.0, 1, 8), 0).unwrap();
        let st = sufficient_stats(&truth, &s).unwrap();
        let d = LinearDesign::new(&st, 2, &[0], &[1]);
        let fit = maximize(&d, &[0.1, 0.1], &[MU_FLOOR, 0.0], &ConcaveOptions::default()).unwrap();
        assert!(fit.converged);
        for j in 0..2 {
            if fit.theta[j] > 1e-8 {
                assert!(fit.gradient[j].abs() < 1e-5, "gradient {}", fit.gradient[j]);
            } else {
                assert!(fit.gradient[j] <= 1e-8);
            }
        }
        // Euler identity at an interior optimum: compensator equals event count
        let c = d.compensator_coefficients();
        let comp: f64 = c.iter().zip(&fit.theta).map(|(a, b)| a * b).sum();
        assert_relative_eq!(comp, s.len() as f64, max_relative = 1e-8);
    }
}
