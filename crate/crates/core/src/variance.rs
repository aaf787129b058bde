//! Variance estimators for the matched and matched-calibrated totals.
//!
//! Every estimator is assembled from three building blocks: model-based
//! sums of squared scaled residuals, the with-replacement variance of
//! weighted contributions over the matched sample, and quadratic forms in a
//! regression coefficient vector with the covariance of an estimated
//! covariate total.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibrate::CalibrationResult;
use crate::error::{param, Error, Result};
use crate::estimators::EstimatorKind;
use crate::linalg::{pairwise_mean, quad_form};
use crate::matching::MatchedSample;
use crate::regress::{weighted_ls, WlsFit};
use crate::sampling::DesignSample;

/// Which randomization distribution a variance estimator targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Xi,
    R,
    Rpi,
    Rpixi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    XiM1,
    RM1,
    RpixiM1,
    XiM2,
    RpiM2,
    RpixiM2,
    XiMC1,
    RMC1,
    XiMC2,
    RpiMC2,
    RpixiMC2,
}

impl VarianceKind {
    pub const ALL: [VarianceKind; 11] = [
        VarianceKind::XiM1,
        VarianceKind::RM1,
        VarianceKind::RpixiM1,
        VarianceKind::XiM2,
        VarianceKind::RpiM2,
        VarianceKind::RpixiM2,
        VarianceKind::XiMC1,
        VarianceKind::RMC1,
        VarianceKind::XiMC2,
        VarianceKind::RpiMC2,
        VarianceKind::RpixiMC2,
    ];

    pub fn estimator(self) -> EstimatorKind {
        use VarianceKind::*;
        match self {
            XiM1 | RM1 | RpixiM1 => EstimatorKind::M1,
            XiM2 | RpiM2 | RpixiM2 => EstimatorKind::M2,
            XiMC1 | RMC1 => EstimatorKind::MC1,
            XiMC2 | RpiMC2 | RpixiMC2 => EstimatorKind::MC2,
        }
    }

    pub fn distribution(self) -> Distribution {
        use VarianceKind::*;
        match self {
            XiM1 | XiM2 | XiMC1 | XiMC2 => Distribution::Xi,
            RM1 | RMC1 => Distribution::R,
            RpiM2 | RpiMC2 => Distribution::Rpi,
            RpixiM1 | RpixiM2 | RpixiMC2 => Distribution::Rpixi,
        }
    }

    pub fn for_estimator(est: EstimatorKind) -> Vec<VarianceKind> {
        Self::ALL.into_iter().filter(|v| v.estimator() == est).collect()
    }

    pub fn label(self) -> String {
        let d = match self.distribution() {
            Distribution::Xi => "xi",
            Distribution::R => "R",
            Distribution::Rpi => "Rpi",
            Distribution::Rpixi => "Rpixi",
        };
        format!("v_{d}({})", self.estimator())
    }
}

impl fmt::Display for VarianceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// `n/(n−1) Σ (z_j − z̄)²`.
pub fn wr_total_variance(z: &[f64]) -> Result<f64> {
    let n = z.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "with-replacement variance needs at least 2 units, got {n}"
        )));
    }
    let mean = pairwise_mean(z);
    let ss: Vec<f64> = z.iter().map(|v| (v - mean) * (v - mean)).collect();
    Ok(n as f64 / (n as f64 - 1.0) * crate::linalg::pairwise_sum(&ss))
}

/// `n/(n−1) Σ (z_j − z̄)(z_j − z̄)ᵀ` over the rows of `z`.
pub fn wr_total_covariance(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "with-replacement covariance needs at least 2 units, got {n}"
        )));
    }
    let c = z.ncols();
    let means: Vec<f64> = (0..c).map(|a| z.column(a).sum() / n as f64).collect();
    let mut out = DMatrix::zeros(c, c);
    for j in 0..n {
        for a in 0..c {
            let da = z[(j, a)] - means[a];
            for b in a..c {
                out[(a, b)] += da * (z[(j, b)] - means[b]);
            }
        }
    }
    let f = n as f64 / (n as f64 - 1.0);
    for a in 0..c {
        for b in a..c {
            out[(a, b)] *= f;
            out[(b, a)] = out[(a, b)];
        }
    }
    Ok(out)
}

/// Rows `x_j / π_j`.
fn expand_rows(x: &DMatrix<f64>, pi: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |j, a| x[(j, a)] / pi[j])
}

/// Stratified with-replacement covariance of the Horvitz–Thompson total of
/// `x` over the donor sample (row `j` of `x` belongs to donor unit `j`).
/// No finite population correction.
pub fn v_pi_xp(donor: &DesignSample, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != donor.len() {
        return Err(param("design rows must match the donor sample"));
    }
    let mut strata: Vec<u32> = donor.stratum.clone();
    strata.sort_unstable();
    strata.dedup();
    let mut out = DMatrix::zeros(x.ncols(), x.ncols());
    for h in strata {
        let rows: Vec<usize> = (0..donor.len()).filter(|&j| donor.stratum[j] == h).collect();
        if rows.len() < 2 {
            return Err(Error::Degenerate(format!(
                "stratum {h} has {} sampled unit(s); at least 2 are needed",
                rows.len()
            )));
        }
        let z = DMatrix::from_fn(rows.len(), x.ncols(), |i, a| {
            x[(rows[i], a)] / donor.pi[rows[i]]
        });
        out += wr_total_covariance(&z)?;
    }
    Ok(out)
}

/// `Σ (f_j r_j)²`.
pub fn scaled_square_sum(factor: &[f64], resid: &[f64]) -> f64 {
    let v: Vec<f64> = factor
        .iter()
        .zip(resid)
        .map(|(f, r)| (f * r) * (f * r))
        .collect();
    crate::linalg::pairwise_sum(&v)
}

/// Everything the variance estimators need for one matched sample and one
/// response.
#[derive(Debug, Clone)]
pub struct VarianceInputs {
    pub pi: Vec<f64>,
    pub weight: Vec<f64>,
    pub y: Vec<f64>,
    /// `w̃ π`; identically 1 for π-weights.
    pub g: Vec<f64>,
    /// Calibration factors `w*/w̃`, when the sample was calibrated.
    pub g_star: Option<Vec<f64>>,
    /// Fit of `y` on `x` with weights `1/(π σ̃²)`.
    pub fit_tilde: WlsFit,
    /// Fit of `y` on `x` with weights `1/(π σ*²)`.
    pub fit_star: WlsFit,
    /// With-replacement covariance of `Σ x/π` over the matched sample.
    pub v_r_xnp: DMatrix<f64>,
    /// Design covariance of the donor total of `x`.
    pub v_pi_xp: DMatrix<f64>,
}

impl VarianceInputs {
    pub fn new(
        matched: &MatchedSample,
        v_pi_xp: DMatrix<f64>,
        calib: Option<&CalibrationResult>,
        sigma_tilde2: Option<&[f64]>,
    ) -> Result<Self> {
        let n = matched.len();
        if v_pi_xp.nrows() != matched.x.ncols() {
            return Err(param("donor covariance does not match the model columns"));
        }
        let sigma_tilde2 = sigma_tilde2.map(|s| s.to_vec()).unwrap_or_else(|| vec![1.0; n]);
        if sigma_tilde2.len() != n {
            return Err(param("one σ̃² per matched unit is required"));
        }
        let w_tilde: Vec<f64> = matched
            .pi
            .iter()
            .zip(&sigma_tilde2)
            .map(|(p, s)| 1.0 / (p * s))
            .collect();
        let fit_tilde = weighted_ls(&matched.x, &matched.y, &w_tilde)?;
        let (fit_star, g_star) = match calib {
            Some(c) => {
                if c.weights.len() != n {
                    return Err(Error::State("calibration does not belong to this sample".into()));
                }
                let w_star: Vec<f64> = matched
                    .pi
                    .iter()
                    .zip(&c.sigma2)
                    .map(|(p, s)| 1.0 / (p * s))
                    .collect();
                let fit = if c.sigma2 == sigma_tilde2 {
                    fit_tilde.clone()
                } else {
                    weighted_ls(&matched.x, &matched.y, &w_star)?
                };
                (fit, Some(c.g_factors.clone()))
            }
            None => (fit_tilde.clone(), None),
        };
        let v_r_xnp = wr_total_covariance(&expand_rows(&matched.x, &matched.pi))?;
        Ok(Self {
            pi: matched.pi.clone(),
            weight: matched.weight.clone(),
            y: matched.y.clone(),
            g: matched.g_factors(),
            g_star,
            fit_tilde,
            fit_star,
            v_r_xnp,
            v_pi_xp,
        })
    }

    fn inv_pi(&self) -> Vec<f64> {
        self.pi.iter().map(|p| 1.0 / p).collect()
    }

    fn b_hat(&self) -> &DVector<f64> {
        &self.fit_tilde.coefficients
    }

    fn g_star(&self) -> Result<&[f64]> {
        self.g_star
            .as_deref()
            .ok_or_else(|| Error::State("calibration factors are required".into()))
    }

    /// `B̂ᵀ v_R(X̂_np) B̂`.
    pub fn quad_r(&self) -> f64 {
        quad_form(&self.v_r_xnp, self.b_hat())
    }

    /// `B̂ᵀ v_π(X̂_p) B̂`.
    pub fn quad_pi(&self) -> f64 {
        quad_form(&self.v_pi_xp, self.b_hat())
    }

    /// `Σ (e/π)²` with `e` against the `σ̃²` fit.
    pub fn xi_inv_pi(&self) -> f64 {
        scaled_square_sum(&self.inv_pi(), &self.fit_tilde.residuals)
    }

    /// `Σ (g e/π)²`.
    pub fn xi_g_over_pi(&self) -> f64 {
        let f: Vec<f64> = self.g.iter().zip(&self.pi).map(|(g, p)| g / p).collect();
        scaled_square_sum(&f, &self.fit_tilde.residuals)
    }

    /// `Σ (g* ê*/π)²`.
    pub fn xi_gstar_over_pi(&self) -> Result<f64> {
        let f: Vec<f64> = self.g_star()?.iter().zip(&self.pi).map(|(g, p)| g / p).collect();
        Ok(scaled_square_sum(&f, &self.fit_star.residuals))
    }

    /// `Σ (ê*/π)²`.
    pub fn xi_inv_pi_estar(&self) -> f64 {
        scaled_square_sum(&self.inv_pi(), &self.fit_star.residuals)
    }

    pub fn estimate(&self, kind: VarianceKind) -> Result<f64> {
        use VarianceKind::*;
        let v = match kind {
            XiM1 => self.xi_inv_pi(),
            RM1 => {
                let z: Vec<f64> = self.weight.iter().zip(&self.y).map(|(w, y)| w * y).collect();
                wr_total_variance(&z)?
            }
            RpixiM1 => self.xi_inv_pi() + self.quad_r(),
            XiM2 => self.xi_g_over_pi(),
            RpiM2 => {
                let z: Vec<f64> = self.y.iter().zip(&self.pi).map(|(y, p)| y / p).collect();
                wr_total_variance(&z)? + self.quad_pi()
            }
            RpixiM2 => self.xi_inv_pi() + self.quad_r() + self.quad_pi(),
            XiMC1 => self.xi_gstar_over_pi()?,
            RMC1 => {
                self.g_star()?;
                let z: Vec<f64> = self
                    .weight
                    .iter()
                    .zip(&self.fit_star.residuals)
                    .map(|(w, e)| w * e)
                    .collect();
                wr_total_variance(&z)?
            }
            XiMC2 => {
                self.g_star()?;
                self.xi_inv_pi_estar()
            }
            RpiMC2 => {
                self.g_star()?;
                let z: Vec<f64> = self
                    .fit_star
                    .residuals
                    .iter()
                    .zip(&self.pi)
                    .map(|(e, p)| e / p)
                    .collect();
                wr_total_variance(&z)? + self.quad_pi()
            }
            RpixiMC2 => {
                self.g_star()?;
                self.xi_inv_pi_estar() + self.quad_pi()
            }
        };
        Ok(v)
    }
}
