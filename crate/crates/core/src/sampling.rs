//! Probability sampling designs: stratified SRS without replacement, plain
//! SRS, and normalised Poisson sampling for volunteer panels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::population::FinitePopulation;
use crate::rng::{derive_seed, rng_from_seed};

/// A sample drawn from a finite population together with its design
/// quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSample {
    /// Population row indices, unique.
    pub unit_ids: Vec<usize>,
    /// Inclusion probabilities in `(0, 1]`.
    pub pi: Vec<f64>,
    /// `1/π`.
    pub base_weight: Vec<f64>,
    pub stratum: Vec<u32>,
    /// Calibrated (GREG or externally supplied final) weights, when present.
    pub greg_weight: Option<Vec<f64>>,
}

impl DesignSample {
    pub fn new(unit_ids: Vec<usize>, pi: Vec<f64>, stratum: Vec<u32>) -> Result<Self> {
        if unit_ids.len() != pi.len() || pi.len() != stratum.len() {
            return Err(param("design sample vectors differ in length"));
        }
        if let Some(p) = pi.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(param(format!("inclusion probability {p} outside (0, 1]")));
        }
        let mut seen = std::collections::HashSet::with_capacity(unit_ids.len());
        if let Some(dup) = unit_ids.iter().find(|id| !seen.insert(**id)) {
            return Err(param(format!("unit {dup} appears twice in the sample")));
        }
        let base_weight = pi.iter().map(|p| 1.0 / p).collect();
        Ok(Self {
            unit_ids,
            pi,
            base_weight,
            stratum,
            greg_weight: None,
        })
    }

    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }

    /// Horvitz–Thompson total of a per-unit population variable.
    pub fn ht_total(&self, values: &[f64]) -> f64 {
        self.unit_ids
            .iter()
            .zip(&self.base_weight)
            .map(|(&i, w)| w * values[i])
            .sum()
    }
}

/// Partial Fisher–Yates draw of `k` items from `items`, in draw order.
fn draw_without_replacement<T: Copy, R: Rng>(items: &[T], k: usize, rng: &mut R) -> Vec<T> {
    let mut pool = items.to_vec();
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Stratified simple random sampling without replacement.
///
/// `sizes[h]` units are drawn from stratum `h + 1`. Each stratum uses its own
/// stream derived from `(seed, h)`, so the draw in one stratum does not
/// depend on any other. Output is ordered by stratum, then by unit index.
pub fn stsrs(pop: &FinitePopulation, sizes: &[usize], seed: u64) -> Result<DesignSample> {
    let members = pop.stratum_members();
    if sizes.len() != members.len() {
        return Err(param(format!(
            "{} stratum sizes given for {} strata",
            sizes.len(),
            members.len()
        )));
    }
    let total: usize = sizes.iter().sum();
    let mut ids = Vec::with_capacity(total);
    let mut pi = Vec::with_capacity(total);
    let mut strata = Vec::with_capacity(total);
    for (h, (units, &n_h)) in members.iter().zip(sizes).enumerate() {
        if n_h > units.len() {
            return Err(param(format!(
                "stratum {} has {} units but {} were requested",
                h + 1,
                units.len(),
                n_h
            )));
        }
        if n_h == 0 {
            continue;
        }
        let mut rng = rng_from_seed(derive_seed(seed, &[h as u64]));
        let mut chosen = draw_without_replacement(units, n_h, &mut rng);
        chosen.sort_unstable();
        let p = n_h as f64 / units.len() as f64;
        for id in chosen {
            ids.push(id);
            pi.push(p);
            strata.push(h as u32 + 1);
        }
    }
    DesignSample::new(ids, pi, strata)
}

/// Uniform without-replacement draw of `n_draw` indices from `0..n_from`,
/// returned in draw order.
pub fn srs(n_from: usize, n_draw: usize, seed: u64) -> Result<Vec<usize>> {
    if n_draw > n_from {
        return Err(param(format!(
            "cannot draw {n_draw} units from {n_from} without replacement"
        )));
    }
    let items: Vec<usize> = (0..n_from).collect();
    let mut rng = rng_from_seed(seed);
    Ok(draw_without_replacement(&items, n_draw, &mut rng))
}

/// Raw selection-propensity functions for Poisson panels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawProb {
    /// `scale · exp(−rate · x[column])`.
    Exponential {
        scale: f64,
        rate: f64,
        #[serde(default)]
        column: usize,
    },
    Constant { value: f64 },
}

impl RawProb {
    pub fn eval(&self, row: &[f64]) -> f64 {
        match *self {
            RawProb::Exponential {
                scale,
                rate,
                column,
            } => scale * (-rate * row[column]).exp(),
            RawProb::Constant { value } => value,
        }
    }
}

/// Normalised inclusion probabilities `π′_i = m·π_i/Σπ`, clamped to 1.
/// Returns the probabilities and the number of clamped units.
pub fn poisson_inclusion_probs<F>(
    pop: &FinitePopulation,
    raw_prob: F,
    target_size: f64,
) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[f64]) -> f64,
{
    if !(target_size > 0.0) {
        return Err(param(format!("expected panel size must be positive, got {target_size}")));
    }
    let mut raw = Vec::with_capacity(pop.len());
    let mut row = vec![0.0; pop.n_covariates()];
    for i in 0..pop.len() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = pop.x[(i, c)];
        }
        let r = raw_prob(&row);
        if !(r >= 0.0 && r.is_finite()) {
            return Err(param(format!("raw selection probability {r} at unit {i}")));
        }
        raw.push(r);
    }
    let sum = crate::linalg::pairwise_sum(&raw);
    if !(sum > 0.0) {
        return Err(param("raw selection probabilities sum to zero"));
    }
    let mut clamped = 0;
    let probs = raw
        .into_iter()
        .map(|r| {
            let p = target_size * r / sum;
            if p > 1.0 {
                clamped += 1;
                1.0
            } else {
                p
            }
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} normalised Poisson inclusion probabilities exceeded 1 and were clamped");
    }
    Ok((probs, clamped))
}

/// Poisson sample with expected size `target_size`; each unit enters
/// independently with probability `π′_i`.
pub fn poisson_panel<F>(
    pop: &FinitePopulation,
    raw_prob: F,
    target_size: f64,
    seed: u64,
) -> Result<DesignSample>
where
    F: Fn(&[f64]) -> f64,
{
    let (probs, _) = poisson_inclusion_probs(pop, raw_prob, target_size)?;
    poisson_draw(pop, &probs, seed)
}

/// Poisson draw with precomputed inclusion probabilities.
pub fn poisson_draw(pop: &FinitePopulation, probs: &[f64], seed: u64) -> Result<DesignSample> {
    if probs.len() != pop.len() {
        return Err(param("one inclusion probability per population unit is required"));
    }
    let mut rng = rng_from_seed(seed);
    let mut ids = Vec::new();
    let mut pi = Vec::new();
    let mut strata = Vec::new();
    for (i, &p) in probs.iter().enumerate() {
        let u: f64 = rng.random();
        if u < p {
            ids.push(i);
            pi.push(p);
            strata.push(pop.stratum[i]);
        }
    }
    if ids.is_empty() {
        return Err(Error::Degenerate("Poisson panel draw selected no units".into()));
    }
    DesignSample::new(ids, pi, strata)
}
