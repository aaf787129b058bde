//! Point estimators of totals and means from a matched panel sample.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_linear, CalibrationResult};
use crate::error::{param, Error, Result};
use crate::linalg::{pairwise_sum, weighted_cross, weighted_gram, weighted_totals, SpdFactor};
use crate::matching::{MatchedSample, WeightKind};
use crate::regress::{logistic_irls, LogisticFit, LogisticOptions};
use crate::variance::VarianceKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    M1,
    M2,
    MC1,
    MC2,
    DR1,
    DR2,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::M1,
        EstimatorKind::M2,
        EstimatorKind::MC1,
        EstimatorKind::MC2,
        EstimatorKind::DR1,
        EstimatorKind::DR2,
    ];

    /// Weight type the matched units inherit, for the matched estimators.
    pub fn weight_kind(self) -> Option<WeightKind> {
        match self {
            EstimatorKind::M1 | EstimatorKind::MC1 => Some(WeightKind::Pi),
            EstimatorKind::M2 | EstimatorKind::MC2 => Some(WeightKind::Greg),
            _ => None,
        }
    }

    pub fn is_calibrated(self) -> bool {
        !matches!(self, EstimatorKind::M1 | EstimatorKind::M2)
    }

    pub fn is_doubly_robust(self) -> bool {
        matches!(self, EstimatorKind::DR1 | EstimatorKind::DR2)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub kind: EstimatorKind,
    pub total: f64,
    /// `Σ w`.
    pub n_hat: f64,
    /// `total / n_hat`.
    pub mean: f64,
    /// Variance estimates of `total`.
    pub variances: BTreeMap<VarianceKind, f64>,
}

impl EstimateReport {
    pub fn from_weights(kind: EstimatorKind, weights: &[f64], y: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(param("estimate from an empty sample"));
        }
        if weights.len() != y.len() {
            return Err(Error::State("weights and responses differ in length".into()));
        }
        let contrib: Vec<f64> = weights.iter().zip(y).map(|(w, y)| w * y).collect();
        let total = pairwise_sum(&contrib);
        let n_hat = pairwise_sum(weights);
        Ok(Self {
            kind,
            total,
            n_hat,
            mean: total / n_hat,
            variances: BTreeMap::new(),
        })
    }

    /// Normal-approximation 95% interval for the total.
    pub fn ci95(&self, v: VarianceKind) -> Option<(f64, f64)> {
        self.variances.get(&v).map(|var| {
            let h = 1.96 * var.max(0.0).sqrt();
            (self.total - h, self.total + h)
        })
    }
}

/// `Σ w̃ y` over the matched sample; M1 for π-weights, M2 for GREG weights.
pub fn total_matched(matched: &MatchedSample) -> Result<EstimateReport> {
    let kind = match matched.kind {
        WeightKind::Pi => EstimatorKind::M1,
        WeightKind::Greg => EstimatorKind::M2,
    };
    EstimateReport::from_weights(kind, &matched.weight, &matched.y)
}

/// `Σ w* y` with calibrated weights; MC1 for π-weights, MC2 for GREG weights.
pub fn total_matched_calibrated(
    matched: &MatchedSample,
    calib: &CalibrationResult,
) -> Result<EstimateReport> {
    if calib.weights.len() != matched.len() {
        return Err(Error::State(format!(
            "{} calibrated weights for {} matched units",
            calib.weights.len(),
            matched.len()
        )));
    }
    let kind = match matched.kind {
        WeightKind::Pi => EstimatorKind::MC1,
        WeightKind::Greg => EstimatorKind::MC2,
    };
    EstimateReport::from_weights(kind, &calib.weights, &matched.y)
}

/// The same calibrated total in regression form,
/// `Ŷ_M + (X_U − X̂_M)ᵀ B̂*` with `B̂*` fitted with weights `w̃/σ*²`.
pub fn calibrated_total_regression_form(
    matched: &MatchedSample,
    calib: &CalibrationResult,
) -> Result<f64> {
    if calib.sigma2.len() != matched.len() {
        return Err(Error::State("calibration does not belong to this sample".into()));
    }
    let w: Vec<f64> = matched
        .weight
        .iter()
        .zip(&calib.sigma2)
        .map(|(w, s)| w / s)
        .collect();
    let a = weighted_gram(&matched.x, &w);
    let b_star = SpdFactor::new(&a, "calibration regression")?.solve(&weighted_cross(
        &matched.x,
        &w,
        &matched.y,
    ));
    let y_m: f64 = matched.weight.iter().zip(&matched.y).map(|(w, y)| w * y).sum();
    let gap = &calib.target_totals - weighted_totals(&matched.x, &matched.weight);
    Ok(y_m + gap.dot(&b_star))
}

/// Propensity-odds weights followed by linear calibration.
#[derive(Debug, Clone)]
pub struct DrWeights {
    /// `(1 − R̂)/R̂` for each panel unit.
    pub odds_weights: Vec<f64>,
    pub calibration: CalibrationResult,
    pub fit: LogisticFit,
}

/// Fits the panel-membership propensity `R̂` on the stack of the
/// probability sample (weights `p_weights`, label 0) and the panel
/// (weight 1, label 1), then calibrates the odds weights `(1 − R̂)/R̂` of the
/// panel units on `np_calib_x` to `target`.
pub fn dr_weights(
    p_design: &DMatrix<f64>,
    p_weights: &[f64],
    np_design: &DMatrix<f64>,
    np_calib_x: &DMatrix<f64>,
    target: &DVector<f64>,
) -> Result<DrWeights> {
    if p_design.ncols() != np_design.ncols() {
        return Err(param("propensity designs have different column counts"));
    }
    if p_weights.len() != p_design.nrows() || np_calib_x.nrows() != np_design.nrows() {
        return Err(param("propensity inputs differ in length"));
    }
    let n_p = p_design.nrows();
    let n_np = np_design.nrows();
    let stacked = DMatrix::from_fn(n_p + n_np, p_design.ncols(), |i, j| {
        if i < n_p {
            p_design[(i, j)]
        } else {
            np_design[(i - n_p, j)]
        }
    });
    let mut w = p_weights.to_vec();
    w.extend(std::iter::repeat_n(1.0, n_np));
    let mut label = vec![0.0; n_p];
    label.extend(std::iter::repeat_n(1.0, n_np));
    let fit = logistic_irls(&stacked, &label, &w, LogisticOptions::default())?;
    let odds_weights: Vec<f64> = fit.fitted_probs[n_p..]
        .iter()
        .map(|r| (1.0 - r) / r)
        .collect();
    let calibration = calibrate_linear(np_calib_x, &odds_weights, target, None)?;
    Ok(DrWeights {
        odds_weights,
        calibration,
        fit,
    })
}

/// Doubly robust estimate of the total of `np_y`.
pub fn dr_estimator(
    kind: EstimatorKind,
    p_design: &DMatrix<f64>,
    p_weights: &[f64],
    np_design: &DMatrix<f64>,
    np_calib_x: &DMatrix<f64>,
    np_y: &[f64],
    target: &DVector<f64>,
) -> Result<EstimateReport> {
    if !kind.is_doubly_robust() {
        return Err(param(format!("{kind} is not a doubly robust estimator")));
    }
    let dw = dr_weights(p_design, p_weights, np_design, np_calib_x, target)?;
    EstimateReport::from_weights(kind, &dw.calibration.weights, np_y)
}
