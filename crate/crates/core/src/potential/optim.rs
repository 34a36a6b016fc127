use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Potential;
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerResult {
    pub argmin: Vec<f64>,
    pub min_value: f64,
    pub grad_norm_at_argmin: f64,
    pub iterations: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient descent with Armijo backtracking. Intended for convex potentials.
///
/// The trial step is doubled after every accepted step and halved on each
/// rejection, so well-conditioned problems settle on a near-optimal step
/// quickly.
pub fn find_minimizer<P: Potential + ?Sized>(
    potential: &P,
    theta_init: &[f64],
    tol: f64,
) -> Result<MinimizerResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let d = potential.dim();
    if theta_init.len() != d {
        return Err(Error::InvalidInput(format!(
            "initial point has dimension {}, potential has {d}",
            theta_init.len()
        )));
    }
    let mut x = theta_init.to_vec();
    let mut g = vec![0.0; d];
    let mut trial = vec![0.0; d];
    let mut g_trial = vec![0.0; d];
    let mut fx = potential.value(&x);
    potential.gradient(&x, &mut g);
    let mut step = 1.0;

    for it in 0..MAX_ITERATIONS {
        let gn = norm(&g);
        if !(fx.is_finite() && gn.is_finite()) {
            return Err(Error::EvaluationFailure {
                theta: x,
                what: "non-finite value or gradient during minimization".into(),
            });
        }
        if gn <= tol {
            return Ok(MinimizerResult {
                argmin: x,
                min_value: fx,
                grad_norm_at_argmin: gn,
                iterations: it,
            });
        }
        let gsq = gn * gn;
        // once f changes sit below machine precision the Armijo test can
        // never succeed
        let slack = 8.0 * f64::EPSILON * fx.abs().max(1.0);
        loop {
            for ((t, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
                *t = xi - step * gi;
            }
            let ft = potential.value(&trial);
            let accept = if !ft.is_finite() {
                false
            } else if (ft - fx).abs() <= slack {
                // values are indistinguishable: fall back on gradient decrease
                potential.gradient(&trial, &mut g_trial);
                norm(&g_trial) < gn
            } else if ft <= fx - 0.5 * step * gsq {
                potential.gradient(&trial, &mut g_trial);
                true
            } else {
                false
            };
            if accept {
                std::mem::swap(&mut x, &mut trial);
                std::mem::swap(&mut g, &mut g_trial);
                fx = ft;
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                return Err(Error::NonConvergence {
                    iterations: it,
                    grad_norm: gn,
                    best: x,
                });
            }
        }
    }
    let gn = norm(&g);
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        grad_norm: gn,
        best: x,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn symmetric_min_eigenvalue(h: &DMatrix<f64>) -> Result<f64> {
    if h.nrows() != h.ncols() || h.nrows() == 0 {
        return Err(Error::Eigen(format!(
            "matrix is {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    if h.nrows() == 1 {
        return Ok(h[(0, 0)]);
    }
    let eig = h.clone().symmetric_eigenvalues();
    Ok(eig.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Central finite-difference Hessian from gradients, step
/// `ε^{1/3}·(1 + ‖θ‖)`. Returns the raw (unsymmetrized) matrix.
pub(crate) fn fd_hessian<P: Potential + ?Sized>(potential: &P, theta: &[f64]) -> DMatrix<f64> {
    let d = theta.len();
    let step = f64::EPSILON.cbrt() * (1.0 + norm(theta));
    let mut h = DMatrix::zeros(d, d);
    let mut plus = theta.to_vec();
    let mut minus = theta.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for k in 0..d {
        plus[k] = theta[k] + step;
        minus[k] = theta[k] - step;
        potential.gradient(&plus, &mut gp);
        potential.gradient(&minus, &mut gm);
        for j in 0..d {
            h[(j, k)] = (gp[j] - gm[j]) / (2.0 * step);
        }
        plus[k] = theta[k];
        minus[k] = theta[k];
    }
    h
}

/// `inf Sp(∇²V(θ))`, from the analytic Hessian when the potential has one and
/// from a symmetrized finite-difference Hessian otherwise.
pub fn min_eigenvalue<P: Potential + ?Sized>(potential: &P, theta: &[f64]) -> Result<f64> {
    if theta.len() != potential.dim() {
        return Err(Error::InvalidInput("theta dimension mismatch".into()));
    }
    if let Some(h) = potential.hessian(theta) {
        return symmetric_min_eigenvalue(&h);
    }
    let h = fd_hessian(potential, theta);
    let asymmetry = (&h - h.transpose()).amax();
    let scale = h.amax().max(1.0);
    if asymmetry > 1e-4 * scale {
        return Err(Error::AsymmetricHessian { asymmetry });
    }
    let sym = (&h + h.transpose()) * 0.5;
    symmetric_min_eigenvalue(&sym)
}
