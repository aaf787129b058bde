//! Weighted least squares and weighted logistic regression.

use nalgebra::{DMatrix, DVector};

use crate::error::{param, Error, Result};
use crate::linalg::{row_dot, weighted_cross, weighted_gram, SpdFactor};

/// Result of a weighted least-squares fit.
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coefficients: DVector<f64>,
    /// `y − x·B̂`.
    pub residuals: Vec<f64>,
    pub weights: Vec<f64>,
    /// `Σ w x xᵀ`.
    pub info: DMatrix<f64>,
}

impl WlsFit {
    pub fn predict_row(&self, x: &DMatrix<f64>, j: usize) -> f64 {
        row_dot(x, j, &self.coefficients)
    }

    /// Residuals of a (possibly different) response against these coefficients.
    pub fn residuals_for(&self, x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
        (0..x.nrows())
            .map(|j| y[j] - row_dot(x, j, &self.coefficients))
            .collect()
    }
}

fn check_shapes(x: &DMatrix<f64>, v: &[f64], w: &[f64]) -> Result<()> {
    if x.nrows() != v.len() || v.len() != w.len() {
        return Err(param(format!(
            "regression shapes disagree: x has {} rows, response {}, weights {}",
            x.nrows(),
            v.len(),
            w.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(param("regression on an empty sample"));
    }
    Ok(())
}

/// `B̂ = (Σ w x xᵀ)⁻¹ Σ w x y`.
pub fn weighted_ls(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<WlsFit> {
    check_shapes(x, y, w)?;
    if let Some(bad) = w.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(param(format!("regression weight {bad} is not positive")));
    }
    let info = weighted_gram(x, w);
    let rhs = weighted_cross(x, w, y);
    let coefficients = SpdFactor::new(&info, "weighted least squares")?.solve(&rhs);
    let residuals = (0..x.nrows())
        .map(|j| y[j] - row_dot(x, j, &coefficients))
        .collect();
    Ok(WlsFit {
        coefficients,
        residuals,
        weights: w.to_vec(),
        info,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct LogisticOptions {
    /// Convergence threshold on `max |Δβ|`, relative to `max(1, max |β|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coefficients: DVector<f64>,
    pub linear_predictor: Vec<f64>,
    pub fitted_probs: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Set when some `|β_c| > 15`, a symptom of (quasi-)separation.
    pub separation_warning: bool,
}

const P_MIN: f64 = 1e-10;

fn sigmoid(eta: f64) -> f64 {
    let p = if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    };
    p.clamp(P_MIN, 1.0 - P_MIN)
}

fn deviance(x: &DMatrix<f64>, label: &[f64], w: &[f64], beta: &DVector<f64>) -> f64 {
    let mut d = 0.0;
    for j in 0..x.nrows() {
        let p = sigmoid(row_dot(x, j, beta));
        d -= 2.0 * w[j] * (label[j] * p.ln() + (1.0 - label[j]) * (1.0 - p).ln());
    }
    d
}

/// Weighted logistic regression by iteratively reweighted least squares,
/// with step halving whenever a full Newton step increases the deviance.
pub fn logistic_irls(
    x: &DMatrix<f64>,
    label: &[f64],
    w: &[f64],
    opts: LogisticOptions,
) -> Result<LogisticFit> {
    check_shapes(x, label, w)?;
    if let Some(bad) = label.iter().find(|l| **l != 0.0 && **l != 1.0) {
        return Err(param(format!("logistic label {bad} is not 0 or 1")));
    }
    if let Some(bad) = w.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(param(format!("logistic weight {bad} is negative")));
    }
    let pos: f64 = label.iter().zip(w).map(|(l, w)| l * w).sum();
    let tot: f64 = w.iter().sum();
    if !(pos > 0.0 && pos < tot) {
        return Err(Error::Fit("both classes must carry positive weight".into()));
    }

    let c = x.ncols();
    let mut beta = DVector::zeros(c);
    let mut dev = deviance(x, label, w, &beta);
    let mut converged = false;
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        let mut resid = Vec::with_capacity(x.nrows());
        let mut irls_w = Vec::with_capacity(x.nrows());
        for j in 0..x.nrows() {
            let p = sigmoid(row_dot(x, j, &beta));
            resid.push(label[j] - p);
            irls_w.push(w[j] * p * (1.0 - p));
        }
        let score = weighted_cross(x, w, &resid);
        let info = weighted_gram(x, &irls_w);
        let step = SpdFactor::new(&info, "logistic information matrix")
            .map_err(|e| {
                Error::Fit(format!(
                    "information matrix singular at iteration {iter} (possible separation): {e}"
                ))
            })?
            .solve(&score);

        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_dev = deviance(x, label, w, &candidate);
        let mut halvings = 0;
        while cand_dev > dev * (1.0 + 1e-12) + 1e-12 && halvings < 30 {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_dev = deviance(x, label, w, &candidate);
            halvings += 1;
        }
        let change = (&step * scale).amax();
        beta = candidate;
        dev = cand_dev;
        last_change = change;
        if change <= opts.tol * beta.amax().max(1.0) {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::Fit(format!(
            "logistic regression did not converge in {iterations} iterations (last max coefficient change {last_change:.3e}, coefficients {:?})",
            beta.as_slice()
        )));
    }

    let linear_predictor: Vec<f64> = (0..x.nrows()).map(|j| row_dot(x, j, &beta)).collect();
    let fitted_probs = linear_predictor.iter().map(|&e| sigmoid(e)).collect();
    let separation_warning = beta.iter().any(|b| b.abs() > 15.0);
    if separation_warning {
        log::warn!(
            "logistic coefficients exceed 15 in magnitude; the classes may be (quasi-)separated"
        );
    }
    Ok(LogisticFit {
        coefficients: beta,
        linear_predictor,
        fitted_probs,
        converged,
        iterations,
        deviance: dev,
        separation_warning,
    })
}
