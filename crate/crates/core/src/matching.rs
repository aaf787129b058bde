//! Nearest-neighbour and propensity-score matching of probability-sample
//! units to panel units, and transfer of design weights onto the matches.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::regress::{logistic_irls, LogisticFit, LogisticOptions};
use crate::rng::rng_from_seed;
use crate::sampling::DesignSample;

/// Order in which target rows claim pool rows when matching without
/// replacement.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatchOrder {
    /// Target rows in the order given.
    #[default]
    Sequential,
    /// A seeded random permutation of the target rows.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    #[serde(default)]
    pub with_replacement: bool,
    /// Per-column z-scoring over the pooled target and pool rows. `None`
    /// turns it on only when there is more than one covariate.
    #[serde(default)]
    pub standardize: Option<bool>,
    #[serde(default)]
    pub order: MatchOrder,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            with_replacement: false,
            standardize: None,
            order: MatchOrder::Sequential,
            execution: Execution::default(),
        }
    }
}

/// Pairs `(target row, pool row)` in target-row order, plus distances.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSkeleton {
    pub pairs: Vec<(usize, usize)>,
    pub distance: Vec<f64>,
}

fn standardized(target: &DMatrix<f64>, pool: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = (target.nrows() + pool.nrows()) as f64;
    let mut t = target.clone();
    let mut p = pool.clone();
    for c in 0..target.ncols() {
        let sum: f64 = target.column(c).iter().chain(pool.column(c).iter()).sum();
        let mean = sum / n;
        let ss: f64 = target
            .column(c)
            .iter()
            .chain(pool.column(c).iter())
            .map(|v| (v - mean) * (v - mean))
            .sum();
        let sd = (ss / n).sqrt();
        let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
        for v in t.column_mut(c).iter_mut() {
            *v = (*v - mean) * scale;
        }
        for v in p.column_mut(c).iter_mut() {
            *v = (*v - mean) * scale;
        }
    }
    (t, p)
}

#[inline]
fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols())
        .map(|c| {
            let d = a[(i, c)] - b[(j, c)];
            d * d
        })
        .sum()
}

/// Closest pool row to target row `i` among rows with `available[j]`.
/// Ties go to the smallest pool index.
fn nearest(
    target: &DMatrix<f64>,
    i: usize,
    pool: &DMatrix<f64>,
    available: Option<&[bool]>,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for j in 0..pool.nrows() {
        if let Some(av) = available {
            if !av[j] {
                continue;
            }
        }
        let d = sq_dist(target, i, pool, j);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best
}

/// Single nearest-neighbour matching on Euclidean distance.
///
/// Without replacement each target row, in the order selected by
/// `opts.order`, takes the closest pool row not yet used; the result is a
/// greedy (not globally optimal) assignment.
pub fn nn_match(
    target: &DMatrix<f64>,
    pool: &DMatrix<f64>,
    opts: &MatchOptions,
) -> Result<MatchSkeleton> {
    if target.ncols() != pool.ncols() {
        return Err(param(format!(
            "target has {} covariates but pool has {}",
            target.ncols(),
            pool.ncols()
        )));
    }
    if pool.nrows() == 0 {
        return Err(Error::Infeasible("empty matching pool".into()));
    }
    if !opts.with_replacement && pool.nrows() < target.nrows() {
        return Err(Error::Infeasible(format!(
            "{} target rows cannot be matched without replacement to {} pool rows",
            target.nrows(),
            pool.nrows()
        )));
    }
    let standardize = opts.standardize.unwrap_or(target.ncols() > 1);
    let scaled;
    let (t, p) = if standardize {
        scaled = standardized(target, pool);
        (&scaled.0, &scaled.1)
    } else {
        (target, pool)
    };

    let n = t.nrows();
    let mut pairs = vec![(0usize, 0usize); n];
    let mut distance = vec![0.0; n];

    if opts.with_replacement {
        let hits = map_indexed(n, opts.execution, |i| nearest(t, i, p, None));
        for (i, hit) in hits.into_iter().enumerate() {
            let (j, d) = hit.expect("pool is nonempty");
            pairs[i] = (i, j);
            distance[i] = d.sqrt();
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        if let MatchOrder::Random { seed } = opts.order {
            order.shuffle(&mut rng_from_seed(seed));
        }
        let mut available = vec![true; p.nrows()];
        for i in order {
            let (j, d) = nearest(t, i, p, Some(&available)).expect("pool has a free row");
            available[j] = false;
            pairs[i] = (i, j);
            distance[i] = d.sqrt();
        }
    }
    Ok(MatchSkeleton { pairs, distance })
}

/// Propensity-score matching.
///
/// Stacks the probability-sample design rows (label 1, weights rescaled to
/// sum to the sample size) on the pool rows (label 0, weight 1), fits a
/// weighted logistic regression of membership, and matches on the fitted
/// linear predictor. Design matrices are used as given, so include an
/// intercept column if the model should have one.
pub fn propensity_match(
    p_design: &DMatrix<f64>,
    p_weights: &[f64],
    pool_design: &DMatrix<f64>,
    opts: &MatchOptions,
) -> Result<(MatchSkeleton, LogisticFit)> {
    if p_design.ncols() != pool_design.ncols() {
        return Err(param("propensity designs have different column counts"));
    }
    if p_weights.len() != p_design.nrows() {
        return Err(param("one weight per probability-sample row is required"));
    }
    let n_p = p_design.nrows();
    let n_pool = pool_design.nrows();
    let c = p_design.ncols();
    let stacked = DMatrix::from_fn(n_p + n_pool, c, |i, j| {
        if i < n_p {
            p_design[(i, j)]
        } else {
            pool_design[(i - n_p, j)]
        }
    });
    let w_sum: f64 = p_weights.iter().sum();
    if !(w_sum > 0.0) {
        return Err(param("probability-sample weights must sum to a positive value"));
    }
    let mut weights: Vec<f64> = p_weights.iter().map(|w| w * n_p as f64 / w_sum).collect();
    weights.extend(std::iter::repeat_n(1.0, n_pool));
    let mut labels = vec![1.0; n_p];
    labels.extend(std::iter::repeat_n(0.0, n_pool));

    let fit = logistic_irls(&stacked, &labels, &weights, LogisticOptions::default())?;
    let scores_p = DMatrix::from_column_slice(n_p, 1, &fit.linear_predictor[..n_p]);
    let scores_pool = DMatrix::from_column_slice(n_pool, 1, &fit.linear_predictor[n_p..]);
    let scalar_opts = MatchOptions {
        standardize: Some(false),
        ..*opts
    };
    let skeleton = nn_match(&scores_p, &scores_pool, &scalar_opts)?;
    Ok((skeleton, fit))
}

/// Which probability-sample weight a matched panel unit inherits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// Inverse inclusion probability.
    Pi,
    /// Calibrated (GREG) weight.
    Greg,
}

/// Panel units matched to probability-sample donors, carrying the donors'
/// weights. `x` holds the model design rows of the panel units.
#[derive(Debug, Clone)]
pub struct MatchedSample {
    pub pairs: Vec<(usize, usize)>,
    pub distance: Vec<f64>,
    pub kind: WeightKind,
    pub weight: Vec<f64>,
    pub pi: Vec<f64>,
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
}

impl MatchedSample {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Donor calibration factors `g = w̃·π`; identically 1 for π-weights.
    pub fn g_factors(&self) -> Vec<f64> {
        match self.kind {
            WeightKind::Pi => vec![1.0; self.len()],
            WeightKind::Greg => self.weight.iter().zip(&self.pi).map(|(w, p)| w * p).collect(),
        }
    }

    /// Same matches and weights with another response variable.
    pub fn with_response(&self, pool_y: &[f64]) -> Self {
        let y = self.pairs.iter().map(|&(_, j)| pool_y[j]).collect();
        Self { y, ..self.clone() }
    }
}

/// Give each matched panel unit the weight of its probability-sample donor.
pub fn transfer_weights(
    skeleton: &MatchSkeleton,
    donor: &DesignSample,
    kind: WeightKind,
    pool_x: &DMatrix<f64>,
    pool_y: &[f64],
) -> Result<MatchedSample> {
    if pool_x.nrows() != pool_y.len() {
        return Err(param("pool design and response lengths differ"));
    }
    let source = match kind {
        WeightKind::Pi => &donor.base_weight,
        WeightKind::Greg => donor
            .greg_weight
            .as_ref()
            .ok_or_else(|| Error::State("donor sample has no calibrated weights".into()))?,
    };
    let mut weight = Vec::with_capacity(skeleton.pairs.len());
    let mut pi = Vec::with_capacity(skeleton.pairs.len());
    let mut rows = Vec::with_capacity(skeleton.pairs.len());
    for &(i, j) in &skeleton.pairs {
        if i >= donor.len() || j >= pool_y.len() {
            return Err(Error::State(format!("pair ({i}, {j}) out of range")));
        }
        weight.push(source[i]);
        pi.push(donor.pi[i]);
        rows.push(j);
    }
    if let Some(w) = weight.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::State(format!("transferred weight {w} is not positive")));
    }
    Ok(MatchedSample {
        pairs: skeleton.pairs.clone(),
        distance: skeleton.distance.clone(),
        kind,
        weight,
        pi,
        y: rows.iter().map(|&j| pool_y[j]).collect(),
        x: crate::linalg::select_rows(pool_x, &rows),
    })
}
