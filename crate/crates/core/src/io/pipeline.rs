//! Repeated matching study on survey microdata: an equal-probability
//! reference sample from the full file, a volunteer-like panel from a
//! covered subset, propensity matching and mean estimation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::schema::{load_dataset, Dataset, DatasetSchema, DesignSpec};
use crate::calibrate::chi_square_calibrate;
use crate::error::{param, Result};
use crate::estimators::{dr_weights, total_matched, total_matched_calibrated, EstimateReport, EstimatorKind};
use crate::exec::Execution;
use crate::linalg::{pairwise_sum, select_rows, weighted_totals};
use crate::matching::{propensity_match, transfer_weights, MatchOptions, MatchedSample, WeightKind};
use crate::montecarlo::{run_replicates, summarize, MonteCarloSummary, ReplicateRecord};
use crate::rng::replicate_substream;
use crate::sampling::{srs, DesignSample};
use crate::variance::{v_pi_xp, VarianceInputs, VarianceKind};

const SUB_REFERENCE: u64 = 11;
const SUB_WEB: u64 = 12;
const SUB_DR: u64 = 13;

/// Rows whose raw `column` equals `value` form the covered subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRule {
    pub column: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub data: PathBuf,
    pub schema: DatasetSchema,
    pub web_rule: SubsetRule,
    /// `N` in the weight rescaling `(N/n)·w`; defaults to the retained row
    /// count.
    #[serde(default)]
    pub population_size: Option<f64>,
    /// Reference sample size.
    pub n: usize,
    /// Initial panel draw from the covered subset.
    pub m: usize,
    pub calibration_model: DesignSpec,
    /// Model for matching propensities and for DR1.
    pub propensity_model: DesignSpec,
    /// Propensity model for DR2.
    #[serde(default)]
    pub dr2_propensity_model: Option<DesignSpec>,
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub variances: Vec<VarianceKind>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_failure_rate")]
    pub max_failure_rate: f64,
    #[serde(skip)]
    pub execution: Execution,
}

fn default_failure_rate() -> f64 {
    0.01
}

impl PipelineSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(param("at least 2 replicates are required"));
        }
        if self.n < 2 || self.n > self.m {
            return Err(param(format!("need 2 ≤ n ≤ M, got n = {}, M = {}", self.n, self.m)));
        }
        if self.schema.responses.is_empty() {
            return Err(param("the schema declares no response"));
        }
        if self.schema.final_weight.is_none() || self.schema.design_weight.is_none() {
            return Err(param("design and final weight columns are required"));
        }
        for v in &self.variances {
            if !self.estimators.contains(&v.estimator()) {
                return Err(param(format!("variance {v} requested without its estimator")));
            }
        }
        if self.estimators.contains(&EstimatorKind::DR2) && self.dr2_propensity_model.is_none() {
            return Err(param("DR2 needs dr2_propensity_model"));
        }
        Ok(())
    }
}

/// Loaded data and everything fixed across replicates.
pub struct PipelineData {
    pub data: Dataset,
    pub web_rows: Vec<usize>,
    pub calib_x: DMatrix<f64>,
    pub prop_x: DMatrix<f64>,
    pub dr2_x: Option<DMatrix<f64>>,
    pub targets: DVector<f64>,
    /// Final-weighted means of each response over the full file.
    pub truth: Vec<f64>,
    pub population_size: f64,
}

impl PipelineData {
    pub fn load(spec: &PipelineSpec) -> Result<Self> {
        let data = load_dataset(&spec.data, &spec.schema, &[spec.web_rule.column.as_str()])?;
        Self::from_dataset(spec, data)
    }

    pub fn from_dataset(spec: &PipelineSpec, data: Dataset) -> Result<Self> {
        spec.validate()?;
        let web_rows: Vec<usize> = data.raw[&spec.web_rule.column]
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == spec.web_rule.value)
            .map(|(i, _)| i)
            .collect();
        if web_rows.len() < spec.m {
            return Err(param(format!(
                "covered subset has {} rows but M = {}",
                web_rows.len(),
                spec.m
            )));
        }
        if data.len() < spec.n {
            return Err(param(format!("{} rows cannot supply n = {}", data.len(), spec.n)));
        }
        let final_w = data.final_weight.as_ref().expect("validated");
        let calib_x = spec.calibration_model.build(&data)?;
        let prop_x = spec.propensity_model.build(&data)?;
        let dr2_x = spec.dr2_propensity_model.as_ref().map(|d| d.build(&data)).transpose()?;
        let targets = weighted_totals(&calib_x, final_w);
        let w_sum = pairwise_sum(final_w);
        let truth = data
            .responses
            .iter()
            .map(|(_, y)| {
                let c: Vec<f64> = final_w.iter().zip(y).map(|(w, y)| w * y).collect();
                pairwise_sum(&c) / w_sum
            })
            .collect();
        let population_size = spec.population_size.unwrap_or(data.len() as f64);
        Ok(Self {
            data,
            web_rows,
            calib_x,
            prop_x,
            dr2_x,
            targets,
            truth,
            population_size,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSummary {
    pub response: String,
    pub summary: MonteCarloSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub covered_rows: usize,
    pub responses: Vec<ResponseSummary>,
}

/// Per-response records of one replicate; estimates are means and
/// variances are divided by the squared estimated population size.
fn pipeline_replicate(spec: &PipelineSpec, pd: &PipelineData, r: usize) -> Result<Vec<ReplicateRecord>> {
    let d = &pd.data;
    let n = spec.n;
    let scale = pd.population_size / n as f64;
    let design = d.design_weight.as_ref().expect("validated");
    let fin = d.final_weight.as_ref().expect("validated");

    let sp_rows = srs(d.len(), n, replicate_substream(spec.seed, r, SUB_REFERENCE))?;
    let sum_final: f64 = sp_rows.iter().map(|&i| fin[i]).sum();
    let sum_design: f64 = sp_rows.iter().map(|&i| design[i]).sum();
    if !(sum_design > 0.0) {
        return Err(param("design weights of the reference sample sum to zero"));
    }
    let f_nr = sum_final / sum_design;
    let w_pi: Vec<f64> = sp_rows.iter().map(|&i| scale * design[i] * f_nr).collect();
    let w_final: Vec<f64> = sp_rows.iter().map(|&i| scale * fin[i]).collect();
    let mut sp = DesignSample::new(
        sp_rows.clone(),
        w_pi.iter().map(|w| 1.0 / w).collect(),
        vec![1; n],
    )?;
    sp.base_weight = w_pi;
    sp.greg_weight = Some(w_final.clone());

    let web_draw = srs(pd.web_rows.len(), spec.m, replicate_substream(spec.seed, r, SUB_WEB))?;
    let pool_rows: Vec<usize> = web_draw.iter().map(|&k| pd.web_rows[k]).collect();

    let sp_prop = select_rows(&pd.prop_x, &sp_rows);
    let pool_prop = select_rows(&pd.prop_x, &pool_rows);
    let (skeleton, _) = propensity_match(&sp_prop, &w_final, &pool_prop, &MatchOptions::default())?;

    let pool_calib = select_rows(&pd.calib_x, &pool_rows);
    let sp_calib = select_rows(&pd.calib_x, &sp_rows);
    let wants = |e: EstimatorKind| spec.estimators.contains(&e);
    let vpi = if spec.variances.is_empty() {
        None
    } else {
        Some(v_pi_xp(&sp, &sp_calib)?)
    };

    let first_y: Vec<f64> = pool_rows.iter().map(|&i| d.responses[0].1[i]).collect();
    let mut matched: BTreeMap<EstimatorKind, (MatchedSample, Option<_>)> = BTreeMap::new();
    for (plain, cal, wk) in [
        (EstimatorKind::M1, EstimatorKind::MC1, WeightKind::Pi),
        (EstimatorKind::M2, EstimatorKind::MC2, WeightKind::Greg),
    ] {
        if wants(plain) || wants(cal) {
            let m = transfer_weights(&skeleton, &sp, wk, &pool_calib, &first_y)?;
            let c = if wants(cal) {
                Some(chi_square_calibrate(&m, &pd.targets, None)?)
            } else {
                None
            };
            matched.insert(plain, (m, c));
        }
    }

    let mut dr = Vec::new();
    if spec.estimators.iter().any(|e| e.is_doubly_robust()) {
        let sub = srs(spec.m, n, replicate_substream(spec.seed, r, SUB_DR))?;
        let sub_rows: Vec<usize> = sub.iter().map(|&k| pool_rows[k]).collect();
        let sub_calib = select_rows(&pd.calib_x, &sub_rows);
        for e in [EstimatorKind::DR1, EstimatorKind::DR2] {
            if !wants(e) {
                continue;
            }
            let px = if e == EstimatorKind::DR1 {
                &pd.prop_x
            } else {
                pd.dr2_x.as_ref().expect("validated")
            };
            let w = dr_weights(
                &select_rows(px, &sp_rows),
                &w_final,
                &select_rows(px, &sub_rows),
                &sub_calib,
                &pd.targets,
            )?;
            dr.push((e, sub_rows.clone(), w.calibration.weights));
        }
    }

    let mut out = Vec::with_capacity(d.responses.len());
    for (_, y_all) in &d.responses {
        let pool_y: Vec<f64> = pool_rows.iter().map(|&i| y_all[i]).collect();
        let mut rec = ReplicateRecord::default();
        for (m0, calib) in matched.values() {
            let m = m0.with_response(&pool_y);
            let mut reports: Vec<EstimateReport> = Vec::new();
            let plain = total_matched(&m)?;
            if wants(plain.kind) {
                reports.push(plain);
            }
            if let Some(c) = calib {
                reports.push(total_matched_calibrated(&m, c)?);
            }
            let needs_var = reports
                .iter()
                .any(|rep| spec.variances.iter().any(|v| v.estimator() == rep.kind));
            let inputs = if needs_var {
                Some(VarianceInputs::new(
                    &m,
                    vpi.clone().expect("computed when variances are requested"),
                    calib.as_ref(),
                    None,
                )?)
            } else {
                None
            };
            for rep in reports {
                let nh2 = rep.n_hat * rep.n_hat;
                rec.points.insert(rep.kind, rep.mean);
                for &v in spec.variances.iter().filter(|v| v.estimator() == rep.kind) {
                    let est = inputs.as_ref().expect("variance inputs").estimate(v)?;
                    rec.variances.insert(v, est / nh2);
                }
            }
        }
        for (e, rows, w) in &dr {
            let y: Vec<f64> = rows.iter().map(|&i| y_all[i]).collect();
            let rep = EstimateReport::from_weights(*e, w, &y)?;
            rec.points.insert(*e, rep.mean);
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn run_pipeline(spec: &PipelineSpec) -> Result<PipelineSummary> {
    let pd = PipelineData::load(spec)?;
    run_pipeline_with_data(spec, &pd)
}

pub fn run_pipeline_with_data(spec: &PipelineSpec, pd: &PipelineData) -> Result<PipelineSummary> {
    spec.validate()?;
    let (records, failures) = run_replicates(
        spec.replicates,
        spec.execution,
        spec.max_failure_rate,
        |r| pipeline_replicate(spec, pd, r),
    )?;
    let mut responses = Vec::new();
    for (k, (name, _)) in pd.data.responses.iter().enumerate() {
        let recs: Vec<ReplicateRecord> = records.iter().map(|rs| rs[k].clone()).collect();
        let (estimators, variances) =
            summarize(pd.truth[k], &recs, &spec.estimators, &spec.variances)?;
        responses.push(ResponseSummary {
            response: name.clone(),
            summary: MonteCarloSummary {
                truth: pd.truth[k],
                replicates: spec.replicates,
                successful: recs.len(),
                failures: failures.clone(),
                estimators,
                variances,
            },
        });
    }
    Ok(PipelineSummary {
        rows_read: pd.data.rows_read,
        rows_kept: pd.data.len(),
        covered_rows: pd.web_rows.len(),
        responses,
    })
}

/// One block of tables per response.
pub fn render_pipeline_tables(summary: &PipelineSummary) -> String {
    let mut out = format!(
        "rows read {}, kept {}, covered {}\n",
        summary.rows_read, summary.rows_kept, summary.covered_rows
    );
    for r in &summary.responses {
        out.push_str(&format!("\n== {} ==\n", r.response));
        out.push_str(&crate::montecarlo::render_tables(&r.summary));
    }
    out
}
