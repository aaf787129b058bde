//! Finite populations and the gamma superpopulation generator.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::rng::rng_from_seed;

/// The universe of units: covariates, analysis variable, stratum labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    /// `N × C` covariates, one row per unit.
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    /// Labels in `1..=H`.
    pub stratum: Vec<u32>,
}

impl FinitePopulation {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, stratum: Vec<u32>) -> Result<Self> {
        if x.nrows() != y.len() || y.len() != stratum.len() {
            return Err(param(format!(
                "population shape mismatch: x has {} rows, y has {}, stratum has {}",
                x.nrows(),
                y.len(),
                stratum.len()
            )));
        }
        if stratum.contains(&0) {
            return Err(param("stratum labels start at 1"));
        }
        Ok(Self { x, y, stratum })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_strata(&self) -> usize {
        self.stratum.iter().copied().max().unwrap_or(0) as usize
    }

    /// Unit indices of each stratum, ascending, indexed by `label - 1`.
    pub fn stratum_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_strata()];
        for (i, &s) in self.stratum.iter().enumerate() {
            out[s as usize - 1].push(i);
        }
        out
    }

    pub fn y_total(&self) -> f64 {
        crate::linalg::pairwise_sum(&self.y)
    }

    /// Column totals of `x`.
    pub fn x_totals(&self) -> Vec<f64> {
        (0..self.x.ncols())
            .map(|c| {
                let col: Vec<f64> = self.x.column(c).iter().copied().collect();
                crate::linalg::pairwise_sum(&col)
            })
            .collect()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }
}

/// Parameters of the gamma superpopulation: `E(Y|x) = α + βx`,
/// `Var(Y|x) = σ² x^{3/2}`, `X ~ Gamma(shape, scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmtParams {
    pub alpha: f64,
    pub beta: f64,
    pub sigma2: f64,
    pub x_shape: f64,
    pub x_scale: f64,
    pub n_units: usize,
}

impl Default for HmtParams {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.25,
            sigma2: 0.0625,
            x_shape: 2.0,
            x_scale: 5.0,
            n_units: 100_000,
        }
    }
}

impl HmtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.x_shape > 0.0 && self.x_scale > 0.0) {
            return Err(param("sigma2, x_shape and x_scale must be positive"));
        }
        if self.n_units == 0 {
            return Err(param("n_units must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(param("alpha and beta must be finite"));
        }
        Ok(())
    }

    pub fn conditional_mean(&self, x: f64) -> f64 {
        self.alpha + self.beta * x
    }

    pub fn conditional_variance(&self, x: f64) -> f64 {
        self.sigma2 * x.powf(1.5)
    }

    /// Shape `c(x)` and scale `b(x)` of the gamma law of `Y | X = x`,
    /// chosen so that `b·c` and `b²·c` reproduce the conditional moments.
    /// With the default parameters these are `c = 0.04 x^{-3/2}(8+5x)²` and
    /// `b = 1.25 x^{3/2}/(8+5x)`.
    pub fn y_gamma(&self, x: f64) -> (f64, f64) {
        let mean = self.conditional_mean(x);
        let var = self.conditional_variance(x);
        (mean * mean / var, var / mean)
    }
}

/// Draw an HMT population. Single stratum; see [`stratify_equal_x_total`].
pub fn generate_hmt(params: &HmtParams, seed: u64) -> Result<FinitePopulation> {
    params.validate()?;
    let mut rng = rng_from_seed(seed);
    let x_dist = Gamma::new(params.x_shape, params.x_scale)
        .map_err(|e| param(format!("x distribution: {e}")))?;
    let n = params.n_units;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    while xs.len() < n {
        let x: f64 = x_dist.sample(&mut rng);
        if x <= 0.0 {
            // Underflow to exactly zero has probability ~0; redraw.
            continue;
        }
        let (shape, scale) = params.y_gamma(x);
        if params.conditional_mean(x) <= 0.0 {
            return Err(param(format!(
                "conditional mean α+βx is not positive at x = {x}"
            )));
        }
        let y = Gamma::new(shape, scale)
            .map_err(|e| param(format!("y distribution at x = {x}: {e}")))?
            .sample(&mut rng);
        xs.push(x);
        ys.push(y);
    }
    FinitePopulation::new(DMatrix::from_vec(n, 1, xs), ys, vec![1; n])
}

/// Stratify by contiguous ranges of covariate `column` so every stratum has
/// approximately the same total of that covariate. Row order is preserved;
/// only the stratum labels change.
///
/// Units are ranked by the covariate and the cumulative total is walked;
/// the `k`-th boundary is placed on whichever side of the crossing of
/// `k·T/H` lies closer to it.
pub fn stratify_equal_x_total(
    pop: &FinitePopulation,
    n_strata: usize,
    column: usize,
) -> Result<FinitePopulation> {
    let n = pop.len();
    if n_strata == 0 || n_strata > n {
        return Err(param(format!(
            "cannot form {n_strata} strata from {n} units"
        )));
    }
    if column >= pop.n_covariates() {
        return Err(param(format!("no covariate column {column}")));
    }
    let values: Vec<f64> = pop.x.column(column).iter().copied().collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &i in &order {
        acc += values[i];
        cum.push(acc);
    }
    let total = acc;

    // bounds[k-1] = number of ranked units in strata 1..=k.
    let mut bounds = Vec::with_capacity(n_strata);
    let mut prev = 0usize;
    for k in 1..n_strata {
        let target = total * k as f64 / n_strata as f64;
        let first_at_or_over = cum.partition_point(|&c| c < target) + 1;
        let mut count = first_at_or_over.min(n);
        if count > 1 {
            let over = (cum[count - 1] - target).abs();
            let under = (cum[count - 2] - target).abs();
            if under < over {
                count -= 1;
            }
        }
        let lo = prev + 1;
        let hi = n - (n_strata - k);
        count = count.clamp(lo, hi);
        bounds.push(count);
        prev = count;
    }
    bounds.push(n);

    let mut stratum = vec![0u32; n];
    let mut start = 0;
    for (h, &end) in bounds.iter().enumerate() {
        for &i in &order[start..end] {
            stratum[i] = h as u32 + 1;
        }
        start = end;
    }
    FinitePopulation::new(pop.x.clone(), pop.y.clone(), stratum)
}

/// Generate the HMT population and stratify on its single covariate.
pub fn generate_stratified_hmt(
    params: &HmtParams,
    n_strata: usize,
    seed: u64,
) -> Result<FinitePopulation> {
    let pop = generate_hmt(params, seed)?;
    stratify_equal_x_total(&pop, n_strata, 0)
}
