//! Linear (chi-square distance) calibration.

use nalgebra::{DMatrix, DVector};

use crate::error::{param, Result};
use crate::linalg::{row_dot, weighted_gram, weighted_totals, SpdFactor};
use crate::matching::MatchedSample;
use crate::sampling::DesignSample;

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub weights: Vec<f64>,
    /// `weights / base`.
    pub g_factors: Vec<f64>,
    pub target_totals: DVector<f64>,
    pub achieved_totals: DVector<f64>,
    pub sigma2: Vec<f64>,
    /// Solution `λ` of `A λ = X_U − X̂`; `g_j = 1 + λᵀx_j/σ²_j`.
    pub lambda: DVector<f64>,
    pub negative_weights: usize,
}

impl CalibrationResult {
    /// `max_c |achieved − target| / (1 + |target|)`.
    pub fn max_relative_error(&self) -> f64 {
        self.achieved_totals
            .iter()
            .zip(self.target_totals.iter())
            .map(|(a, t)| (a - t).abs() / (1.0 + t.abs()))
            .fold(0.0, f64::max)
    }
}

/// Chi-square calibration of `base` weights so that `Σ w x = target`.
pub fn calibrate_linear(
    x: &DMatrix<f64>,
    base: &[f64],
    target: &DVector<f64>,
    sigma2: Option<&[f64]>,
) -> Result<CalibrationResult> {
    let n = x.nrows();
    if base.len() != n {
        return Err(param(format!("{} weights for {} rows", base.len(), n)));
    }
    if target.len() != x.ncols() {
        return Err(param(format!(
            "{} targets for {} calibration columns",
            target.len(),
            x.ncols()
        )));
    }
    let sigma2 = match sigma2 {
        Some(s) if s.len() != n => return Err(param("one σ² per row is required")),
        Some(s) => {
            if let Some(bad) = s.iter().find(|v| !(**v > 0.0)) {
                return Err(param(format!("σ² value {bad} is not positive")));
            }
            s.to_vec()
        }
        None => vec![1.0; n],
    };
    if let Some(bad) = base.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(param(format!("base weight {bad} is not positive")));
    }
    let a_w: Vec<f64> = base.iter().zip(&sigma2).map(|(w, s)| w / s).collect();
    let a = weighted_gram(x, &a_w);
    let gap = target - weighted_totals(x, base);
    let lambda = SpdFactor::new(&a, "calibration matrix")?.solve(&gap);
    let g_factors: Vec<f64> = (0..n)
        .map(|j| 1.0 + row_dot(x, j, &lambda) / sigma2[j])
        .collect();
    let weights: Vec<f64> = base.iter().zip(&g_factors).map(|(w, g)| w * g).collect();
    let negative_weights = weights.iter().filter(|w| **w < 0.0).count();
    if negative_weights > 0 {
        log::debug!("calibration produced {negative_weights} negative weights");
    }
    let achieved_totals = weighted_totals(x, &weights);
    Ok(CalibrationResult {
        weights,
        g_factors,
        target_totals: target.clone(),
        achieved_totals,
        sigma2,
        lambda,
        negative_weights,
    })
}

/// GREG weights `g/π` for a probability sample; also stored into
/// `sample.greg_weight`.
pub fn greg_gweights(
    sample: &mut DesignSample,
    x: &DMatrix<f64>,
    target: &DVector<f64>,
    sigma_tilde2: Option<&[f64]>,
) -> Result<CalibrationResult> {
    if x.nrows() != sample.len() {
        return Err(param("GREG design rows must match the sample"));
    }
    let res = calibrate_linear(x, &sample.base_weight, target, sigma_tilde2)?;
    sample.greg_weight = Some(res.weights.clone());
    Ok(res)
}

/// Calibrate the weights carried by a matched sample to `target`.
pub fn chi_square_calibrate(
    matched: &MatchedSample,
    target: &DVector<f64>,
    sigma_star2: Option<&[f64]>,
) -> Result<CalibrationResult> {
    calibrate_linear(&matched.x, &matched.weight, target, sigma_star2)
}
