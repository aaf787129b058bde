//! Replicated simulation studies and their summary metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibrate::{chi_square_calibrate, greg_gweights};
use crate::error::{param, Error, Result};
use crate::estimators::{
    dr_estimator, total_matched, total_matched_calibrated, EstimateReport, EstimatorKind,
};
use crate::exec::{map_indexed, Execution};
use crate::linalg::{pairwise_mean, pairwise_sum, select_rows, with_intercept};
use crate::matching::{nn_match, transfer_weights, MatchOptions, MatchOrder, WeightKind};
use crate::population::{generate_stratified_hmt, FinitePopulation, HmtParams};
use crate::rng::{derive_seed, population_seed, replicate_substream};
use crate::sampling::{poisson_draw, poisson_inclusion_probs, srs, stsrs, DesignSample, RawProb};
use crate::variance::{v_pi_xp, VarianceInputs, VarianceKind};

const SUB_PROBABILITY: u64 = 1;
const SUB_PANEL: u64 = 2;
const SUB_DR: u64 = 3;
const SUB_MATCH_ORDER: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationSpec {
    Hmt { params: HmtParams, strata: usize },
    /// Population CSV with header `x_1..x_C,y,stratum`.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PanelSpec {
    Stsrs { sizes: Vec<usize> },
    Poisson { raw_prob: RawProb, expected_size: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub population: PopulationSpec,
    /// Stratum sample sizes of the probability sample.
    pub probability_sizes: Vec<usize>,
    pub panel: PanelSpec,
    #[serde(default)]
    pub matching: MatchOptions,
    /// Size of the panel subsample used by the doubly robust comparator.
    #[serde(default)]
    pub dr_subsample: Option<usize>,
    pub estimators: Vec<EstimatorKind>,
    pub variances: Vec<VarianceKind>,
    pub replicates: usize,
    pub seed: u64,
    /// Largest tolerated fraction of failed replicates.
    #[serde(default = "default_failure_rate")]
    pub max_failure_rate: f64,
    #[serde(skip)]
    pub execution: Execution,
}

fn default_failure_rate() -> f64 {
    0.01
}

impl StudyConfig {
    /// HMT population, 5 strata, 50 per stratum in the probability sample,
    /// 250 per stratum in the panel, nearest-neighbour matching on X.
    pub fn study1() -> Self {
        Self {
            population: PopulationSpec::Hmt {
                params: HmtParams::default(),
                strata: 5,
            },
            probability_sizes: vec![50; 5],
            panel: PanelSpec::Stsrs {
                sizes: vec![250; 5],
            },
            matching: MatchOptions::default(),
            dr_subsample: Some(250),
            estimators: vec![
                EstimatorKind::M1,
                EstimatorKind::M2,
                EstimatorKind::MC1,
                EstimatorKind::MC2,
                EstimatorKind::DR1,
            ],
            variances: VarianceKind::ALL.to_vec(),
            replicates: 1000,
            seed: 20_210_601,
            max_failure_rate: default_failure_rate(),
            execution: Execution::default(),
        }
    }

    /// As [`StudyConfig::study1`] with a Poisson panel,
    /// `π ∝ 0.085·exp(−0.085·X)` normalised to expected size 1250.
    pub fn study2() -> Self {
        Self {
            panel: PanelSpec::Poisson {
                raw_prob: RawProb::Exponential {
                    scale: 0.085,
                    rate: 0.085,
                    column: 0,
                },
                expected_size: 1250.0,
            },
            ..Self::study1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(param("at least 2 replicates are required"));
        }
        if self.estimators.is_empty() {
            return Err(param("no estimators requested"));
        }
        for v in &self.variances {
            if !self.estimators.contains(&v.estimator()) {
                return Err(param(format!(
                    "variance {v} requested without estimator {}",
                    v.estimator()
                )));
            }
        }
        let needs_dr = self.estimators.iter().any(|e| e.is_doubly_robust());
        if needs_dr && self.dr_subsample.is_none() {
            return Err(param("doubly robust estimators need dr_subsample"));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(param("max_failure_rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Point and variance estimates from one replicate.
#[derive(Debug, Clone, Default)]
pub struct ReplicateRecord {
    pub points: BTreeMap<EstimatorKind, f64>,
    pub variances: BTreeMap<VarianceKind, f64>,
}

impl ReplicateRecord {
    pub fn push(&mut self, report: &EstimateReport) {
        self.points.insert(report.kind, report.total);
        for (k, v) in &report.variances {
            self.variances.insert(*k, *v);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub mean_estimate: f64,
    pub relbias_pct: f64,
    pub emp_variance: f64,
    pub mse: f64,
    pub ratio_to_min_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSummary {
    pub variance: VarianceKind,
    pub label: String,
    pub estimator: EstimatorKind,
    pub mean_variance: f64,
    /// Undefined (null) when the empirical variance is 0.
    pub rb_empvar_pct: Option<f64>,
    pub rb_mse_pct: Option<f64>,
    pub ci95_coverage_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub truth: f64,
    pub replicates: usize,
    pub successful: usize,
    pub failures: Vec<ReplicateFailure>,
    pub estimators: Vec<EstimatorSummary>,
    pub variances: Vec<VarianceSummary>,
}

/// Relative bias, empirical variance (denominator `B − 1`) and mean squared
/// error (denominator `B`) of a series of point estimates.
pub fn summarize_points(
    estimator: EstimatorKind,
    truth: f64,
    points: &[f64],
) -> Result<EstimatorSummary> {
    if truth == 0.0 {
        return Err(param("relative bias is undefined for a zero true value"));
    }
    let b = points.len();
    if b < 2 {
        return Err(param("at least 2 replicates are needed to summarize"));
    }
    let mean = pairwise_mean(points);
    let dev: Vec<f64> = points.iter().map(|p| (p - mean) * (p - mean)).collect();
    let err: Vec<f64> = points.iter().map(|p| (p - truth) * (p - truth)).collect();
    Ok(EstimatorSummary {
        estimator,
        mean_estimate: mean,
        relbias_pct: 100.0 * (mean - truth) / truth,
        emp_variance: pairwise_sum(&dev) / (b as f64 - 1.0),
        mse: pairwise_sum(&err) / b as f64,
        ratio_to_min_mse: None,
    })
}

/// Relative biases of a variance estimator and normal-approximation
/// coverage of `point ± 1.96·√v`.
pub fn summarize_variance(
    kind: VarianceKind,
    truth: f64,
    points: &[f64],
    variances: &[f64],
    point_summary: &EstimatorSummary,
) -> Result<VarianceSummary> {
    if points.len() != variances.len() || points.is_empty() {
        return Err(param("one variance per point estimate is required"));
    }
    let mean_v = pairwise_mean(variances);
    let rel = |base: f64| (base > 0.0).then(|| 100.0 * (mean_v - base) / base);
    // Slack so that zero-width intervals around an exact estimate still count.
    let slack = 1e-9 * truth.abs();
    let covered = points
        .iter()
        .zip(variances)
        .filter(|(p, v)| (*p - truth).abs() <= 1.96 * v.max(0.0).sqrt() + slack)
        .count();
    Ok(VarianceSummary {
        variance: kind,
        label: kind.label(),
        estimator: kind.estimator(),
        mean_variance: mean_v,
        rb_empvar_pct: rel(point_summary.emp_variance),
        rb_mse_pct: rel(point_summary.mse),
        ci95_coverage_pct: 100.0 * covered as f64 / points.len() as f64,
    })
}

/// Summaries for every estimator and variance present in `records`.
pub fn summarize(
    truth: f64,
    records: &[ReplicateRecord],
    estimators: &[EstimatorKind],
    variance_kinds: &[VarianceKind],
) -> Result<(Vec<EstimatorSummary>, Vec<VarianceSummary>)> {
    let mut est = Vec::new();
    let mut series = BTreeMap::new();
    for &e in estimators {
        let points: Vec<f64> = records
            .iter()
            .map(|r| {
                r.points
                    .get(&e)
                    .copied()
                    .ok_or_else(|| Error::State(format!("replicate lacks estimator {e}")))
            })
            .collect::<Result<_>>()?;
        est.push(summarize_points(e, truth, &points)?);
        series.insert(e, points);
    }
    let min_mse = est.iter().map(|s| s.mse).fold(f64::INFINITY, f64::min);
    for s in &mut est {
        s.ratio_to_min_mse = (min_mse > 0.0).then(|| s.mse / min_mse);
    }
    let mut var = Vec::new();
    for &v in variance_kinds {
        let vals: Vec<f64> = records
            .iter()
            .map(|r| {
                r.variances
                    .get(&v)
                    .copied()
                    .ok_or_else(|| Error::State(format!("replicate lacks variance {v}")))
            })
            .collect::<Result<_>>()?;
        let ps = est
            .iter()
            .find(|s| s.estimator == v.estimator())
            .ok_or_else(|| param(format!("variance {v} without its estimator")))?;
        var.push(summarize_variance(v, truth, &series[&v.estimator()], &vals, ps)?);
    }
    Ok((est, var))
}

/// Run `b` replicates of `f`, keeping successes and failures in replicate
/// order, and abort if the failure fraction exceeds `max_failure_rate`.
pub fn run_replicates<T, F>(
    b: usize,
    exec: Execution,
    max_failure_rate: f64,
    f: F,
) -> Result<(Vec<T>, Vec<ReplicateFailure>)>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let results = map_indexed(b, exec, f);
    let mut ok = Vec::with_capacity(b);
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(t) => ok.push(t),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push(ReplicateFailure {
                    replicate: r,
                    message: e.to_string(),
                });
            }
        }
    }
    if failures.len() as f64 > max_failure_rate * b as f64 {
        let first = &failures[0];
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: b,
            first_replicate: first.replicate,
            first_message: first.message.clone(),
        });
    }
    Ok((ok, failures))
}

/// Population, model matrix and calibration targets shared by all replicates.
pub struct StudyContext {
    pub population: FinitePopulation,
    /// `(1, x)` for every population unit.
    pub model_x: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub truth: f64,
    panel_probs: Option<Vec<f64>>,
}

impl StudyContext {
    pub fn new(config: &StudyConfig) -> Result<Self> {
        let population = match &config.population {
            PopulationSpec::Hmt { params, strata } => {
                generate_stratified_hmt(params, *strata, population_seed(config.seed))?
            }
            PopulationSpec::Csv { path } => crate::io::read_population_csv(path)?,
        };
        Self::from_population(population, &config.panel)
    }

    pub fn from_population(population: FinitePopulation, panel: &PanelSpec) -> Result<Self> {
        let model_x = with_intercept(&population.x);
        let ones = vec![1.0; population.len()];
        let targets = crate::linalg::weighted_totals(&model_x, &ones);
        let truth = population.y_total();
        let panel_probs = match panel {
            PanelSpec::Poisson {
                raw_prob,
                expected_size,
            } => Some(poisson_inclusion_probs(&population, |r| raw_prob.eval(r), *expected_size)?.0),
            PanelSpec::Stsrs { .. } => None,
        };
        Ok(Self {
            population,
            model_x,
            targets,
            truth,
            panel_probs,
        })
    }
}

fn draw_panel(
    ctx: &StudyContext,
    panel: &PanelSpec,
    seed: u64,
) -> Result<DesignSample> {
    match panel {
        PanelSpec::Stsrs { sizes } => stsrs(&ctx.population, sizes, seed),
        PanelSpec::Poisson { .. } => poisson_draw(
            &ctx.population,
            ctx.panel_probs.as_deref().expect("probabilities precomputed"),
            seed,
        ),
    }
}

/// One replicate of a simulation study.
pub fn run_replicate(
    config: &StudyConfig,
    ctx: &StudyContext,
    r: usize,
) -> Result<ReplicateRecord> {
    let pop = &ctx.population;
    let mut sp = stsrs(
        pop,
        &config.probability_sizes,
        replicate_substream(config.seed, r, SUB_PROBABILITY),
    )?;
    let sp_model_x = select_rows(&ctx.model_x, &sp.unit_ids);
    greg_gweights(&mut sp, &sp_model_x, &ctx.targets, None)?;

    let panel = draw_panel(ctx, &config.panel, replicate_substream(config.seed, r, SUB_PANEL))?;
    let pool_x = select_rows(&pop.x, &panel.unit_ids);
    let pool_model_x = select_rows(&ctx.model_x, &panel.unit_ids);
    let pool_y: Vec<f64> = panel.unit_ids.iter().map(|&i| pop.y[i]).collect();

    let mut opts = config.matching;
    if let MatchOrder::Random { seed } = opts.order {
        opts.order = MatchOrder::Random {
            seed: derive_seed(seed, &[replicate_substream(config.seed, r, SUB_MATCH_ORDER)]),
        };
    }
    let target_x = select_rows(&pop.x, &sp.unit_ids);
    let skeleton = nn_match(&target_x, &pool_x, &opts)?;

    let wants = |e: EstimatorKind| config.estimators.contains(&e);
    let wants_variance = |e: EstimatorKind| config.variances.iter().any(|v| v.estimator() == e);
    let vpi = if config.variances.is_empty() {
        None
    } else {
        Some(v_pi_xp(&sp, &sp_model_x)?)
    };

    let mut record = ReplicateRecord::default();
    for wk in [WeightKind::Pi, WeightKind::Greg] {
        let (plain, calibrated) = match wk {
            WeightKind::Pi => (EstimatorKind::M1, EstimatorKind::MC1),
            WeightKind::Greg => (EstimatorKind::M2, EstimatorKind::MC2),
        };
        if !wants(plain) && !wants(calibrated) {
            continue;
        }
        let matched = transfer_weights(&skeleton, &sp, wk, &pool_model_x, &pool_y)?;
        let calib = if wants(calibrated) {
            Some(chi_square_calibrate(&matched, &ctx.targets, None)?)
        } else {
            None
        };
        let inputs = if wants_variance(plain) || wants_variance(calibrated) {
            Some(VarianceInputs::new(
                &matched,
                vpi.clone().expect("computed when variances are requested"),
                calib.as_ref(),
                None,
            )?)
        } else {
            None
        };
        let mut reports = Vec::new();
        if wants(plain) {
            reports.push(total_matched(&matched)?);
        }
        if let Some(c) = &calib {
            reports.push(total_matched_calibrated(&matched, c)?);
        }
        for mut rep in reports {
            for &v in config.variances.iter().filter(|v| v.estimator() == rep.kind) {
                let est = inputs.as_ref().expect("variance inputs").estimate(v)?;
                rep.variances.insert(v, est);
            }
            record.push(&rep);
        }
    }

    for &e in config.estimators.iter().filter(|e| e.is_doubly_robust()) {
        let n_sub = config.dr_subsample.expect("validated");
        let sub = srs(panel.len(), n_sub, replicate_substream(config.seed, r, SUB_DR))?;
        let sub_x = select_rows(&pool_model_x, &sub);
        let sub_y: Vec<f64> = sub.iter().map(|&j| pool_y[j]).collect();
        let rep = dr_estimator(
            e,
            &sp_model_x,
            &sp.base_weight,
            &sub_x,
            &sub_x,
            &sub_y,
            &ctx.targets,
        )?;
        record.push(&rep);
    }
    Ok(record)
}

/// Run a full simulation study.
pub fn run_study(config: &StudyConfig) -> Result<MonteCarloSummary> {
    config.validate()?;
    let ctx = StudyContext::new(config)?;
    run_study_with_context(config, &ctx)
}

pub fn run_study_with_context(config: &StudyConfig, ctx: &StudyContext) -> Result<MonteCarloSummary> {
    config.validate()?;
    let (records, failures) = run_replicates(
        config.replicates,
        config.execution,
        config.max_failure_rate,
        |r| run_replicate(config, ctx, r),
    )?;
    let (estimators, variances) =
        summarize(ctx.truth, &records, &config.estimators, &config.variances)?;
    Ok(MonteCarloSummary {
        truth: ctx.truth,
        replicates: config.replicates,
        successful: records.len(),
        failures,
        estimators,
        variances,
    })
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(
        || "NA".to_string(),
        |x| {
            if x.abs() >= 1e6 {
                format!("{x:.prec$e}")
            } else {
                format!("{x:.prec$}")
            }
        },
    )
}

/// Aligned text tables: point estimators, then variance estimators.
pub fn render_tables(summary: &MonteCarloSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "truth = {:.6e}   replicates = {} ({} failed)",
        summary.truth,
        summary.replicates,
        summary.failures.len()
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<10} {:>10} {:>14} {:>14} {:>10}",
        "Estimator", "RelBias%", "EmpVar", "MSE", "MSE/min"
    );
    for s in &summary.estimators {
        let _ = writeln!(
            out,
            "{:<10} {:>10.3} {:>14.4e} {:>14.4e} {:>10}",
            s.estimator.to_string(),
            s.relbias_pct,
            s.emp_variance,
            s.mse,
            fmt_opt(s.ratio_to_min_mse, 2)
        );
    }
    if !summary.variances.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<16} {:>14} {:>11} {:>9} {:>10}",
            "Variance", "Mean", "RB.Empvar", "RB.MSE", "Coverage%"
        );
        for v in &summary.variances {
            let _ = writeln!(
                out,
                "{:<16} {:>14.4e} {:>11} {:>9} {:>10.1}",
                v.label,
                v.mean_variance,
                fmt_opt(v.rb_empvar_pct, 1),
                fmt_opt(v.rb_mse_pct, 1),
                v.ci95_coverage_pct
            );
        }
    }
    out
}
