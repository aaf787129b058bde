//! Small hand-solvable fixtures and independent oracles.
//!
//! Shared by the core integration tests and the workspace acceptance
//! target, which includes this file by path.

#![allow(dead_code)]

use std::path::Path;

use matchcal::calibrate::{chi_square_calibrate, greg_gweights};
use matchcal::estimators::{
    calibrated_total_regression_form, dr_estimator, total_matched, total_matched_calibrated,
    EstimatorKind,
};
use matchcal::io::{
    ColumnKind, ColumnSpec, DatasetSchema, DesignSpec, PipelineSpec, ResponseSpec, SubsetRule,
};
use matchcal::matching::{nn_match, propensity_match, MatchOptions, MatchedSample, WeightKind};
use matchcal::montecarlo::{summarize, ReplicateRecord};
use matchcal::regress::{logistic_irls, weighted_ls, LogisticOptions};
use matchcal::sampling::DesignSample;
use matchcal::variance::{v_pi_xp, wr_total_covariance, wr_total_variance, VarianceInputs, VarianceKind};
use matchcal::Execution;
use nalgebra::{DMatrix, DVector};

/// One computed value against its oracle.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub got: f64,
    pub expected: f64,
    pub tol: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, got: f64, expected: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            got,
            expected,
            tol,
        }
    }

    /// Relative error; absolute when the oracle is 0.
    pub fn error(&self) -> f64 {
        let d = (self.got - self.expected).abs();
        if self.expected == 0.0 {
            d
        } else {
            d / self.expected.abs()
        }
    }

    pub fn ok(&self) -> bool {
        self.error() <= self.tol && self.got.is_finite()
    }
}

const TIGHT: f64 = 1e-10;

// ---------------------------------------------------------------- oracles

/// Solve a 2×2 system by Cramer's rule.
pub fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> [f64; 2] {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [
        (b[0] * a[1][1] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - b[0] * a[1][0]) / det,
    ]
}

/// Weighted least squares of `y` on `(1, x)` through the explicit normal
/// equations.
pub fn wls2(x: &[f64], y: &[f64], w: &[f64]) -> [f64; 2] {
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        s0 += w[i];
        s1 += w[i] * x[i];
        s2 += w[i] * x[i] * x[i];
        t0 += w[i] * y[i];
        t1 += w[i] * x[i] * y[i];
    }
    solve2([[s0, s1], [s1, s2]], [t0, t1])
}

/// `n/(n−1) Σ (z − z̄)²`.
pub fn wr_oracle(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    let m = z.iter().sum::<f64>() / n;
    n / (n - 1.0) * z.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
}

/// Plain Newton iterations for weighted logistic regression on `(1, x)`,
/// started from a nonzero point and with no step control.
pub fn newton_logistic2(x: &[f64], label: &[f64], w: &[f64]) -> [f64; 2] {
    let mut b = [0.1, -0.1];
    for _ in 0..200 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..x.len() {
            let p = 1.0 / (1.0 + (-(b[0] + b[1] * x[i])).exp());
            let r = w[i] * (label[i] - p);
            g0 += r;
            g1 += r * x[i];
            let v = w[i] * p * (1.0 - p);
            h00 += v;
            h01 += v * x[i];
            h11 += v * x[i] * x[i];
        }
        let d = solve2([[h00, h01], [h01, h11]], [g0, g1]);
        b = [b[0] + d[0], b[1] + d[1]];
        if d[0].abs().max(d[1].abs()) < 1e-15 {
            break;
        }
    }
    b
}

/// Greedy matching without replacement replayed from a full distance table;
/// ties go to the lowest pool index.
pub fn greedy_oracle(target: &[Vec<f64>], pool: &[Vec<f64>]) -> Vec<usize> {
    let table: Vec<Vec<f64>> = target
        .iter()
        .map(|t| {
            pool.iter()
                .map(|p| t.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect()
        })
        .collect();
    let mut used = vec![false; pool.len()];
    let mut out = Vec::new();
    for row in &table {
        let mut best = usize::MAX;
        for j in 0..pool.len() {
            if !used[j] && (best == usize::MAX || row[j] < row[best]) {
                best = j;
            }
        }
        used[best] = true;
        out.push(best);
    }
    out
}

/// Pooled z-scores with population standard deviations.
pub fn zscore(target: &[Vec<f64>], pool: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let c = target[0].len();
    let all: Vec<&Vec<f64>> = target.iter().chain(pool).collect();
    let n = all.len() as f64;
    let mut mean = vec![0.0; c];
    let mut sd = vec![0.0; c];
    for k in 0..c {
        mean[k] = all.iter().map(|r| r[k]).sum::<f64>() / n;
        sd[k] = (all.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt();
    }
    let f = |r: &Vec<f64>| (0..c).map(|k| (r[k] - mean[k]) / sd[k]).collect::<Vec<f64>>();
    (target.iter().map(f).collect(), pool.iter().map(f).collect())
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

/// Deterministic uniform(0,1) stream for fixtures, independent of the
/// library's generators.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6_364_136_223_846_793_005)
            .wrapping_add(1_442_695_040_888_963_407);
        ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
    }
}

// ---------------------------------------------------------------- matching

/// The 6×2 target and 20×2 pool used for the greedy matching oracle.
pub fn greedy_fixture() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut u = Lcg::new(42);
    let mut row = |scale: f64| vec![10.0 * u.next(), scale * u.next()];
    let target = (0..6).map(|_| row(100.0)).collect();
    let pool = (0..20).map(|_| row(100.0)).collect();
    (target, pool)
}

/// Pool indices chosen by the greedy oracle on the standardized fixture.
pub fn greedy_fixture_oracle() -> Vec<usize> {
    let (t, p) = greedy_fixture();
    let (zt, zp) = zscore(&t, &p);
    greedy_oracle(&zt, &zp)
}

pub fn greedy_fixture_pairs() -> Vec<usize> {
    let (t, p) = greedy_fixture();
    let s = nn_match(&rows_to_matrix(&t), &rows_to_matrix(&p), &MatchOptions::default()).unwrap();
    s.pairs.iter().map(|&(_, j)| j).collect()
}

// ---------------------------------------------------------------- checks

fn calibration_checks(out: &mut Vec<Check>) {
    // Scalar GREG: x = (1,2,3), π = ½, target 10.
    let mut s = DesignSample::new(vec![0, 1, 2], vec![0.5; 3], vec![1; 3]).unwrap();
    let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
    let r = greg_gweights(&mut s, &x, &DVector::from_element(1, 10.0), None).unwrap();
    let xp: f64 = 12.0;
    let a: f64 = 28.0;
    for j in 0..3 {
        let xj = (j + 1) as f64;
        out.push(Check::new(
            format!("greg g[{j}]"),
            r.g_factors[j],
            1.0 + (10.0 - xp) * xj / a,
            TIGHT,
        ));
    }
    out.push(Check::new("greg achieved total", r.achieved_totals[0], 10.0, TIGHT));

    // Four units, (1, x), w̃ = 2, targets (10, 26).
    let (m, c, lam) = four_unit_calibration();
    for j in 0..4 {
        let xj = (j + 1) as f64;
        out.push(Check::new(
            format!("chi-square w*[{j}]"),
            c.weights[j],
            2.0 * (1.0 + lam[0] + lam[1] * xj),
            TIGHT,
        ));
    }
    out.push(Check::new("chi-square total of 1", c.achieved_totals[0], 10.0, TIGHT));
    out.push(Check::new("chi-square total of x", c.achieved_totals[1], 26.0, TIGHT));
    let direct = total_matched_calibrated(&m, &c).unwrap().total;
    let oracle: f64 = (0..4)
        .map(|j| 2.0 * (1.0 + lam[0] + lam[1] * (j + 1) as f64) * m.y[j])
        .sum();
    out.push(Check::new("calibrated total, weight form", direct, oracle, TIGHT));
    out.push(Check::new(
        "calibrated total, regression form",
        calibrated_total_regression_form(&m, &c).unwrap(),
        oracle,
        TIGHT,
    ));

    // Intercept-only ratio adjustment.
    let w = [3.0, 5.0, 2.0];
    let m1 = matched(w.to_vec(), vec![1.0, 2.0, 3.0], DMatrix::from_element(3, 1, 1.0), WeightKind::Pi);
    let c1 = chi_square_calibrate(&m1, &DVector::from_element(1, 20.0), None).unwrap();
    for (j, wj) in w.iter().enumerate() {
        out.push(Check::new(format!("ratio w*[{j}]"), c1.weights[j], wj * 20.0 / 10.0, TIGHT));
    }
}

/// Four-unit calibration fixture and its hand-solved multipliers.
pub fn four_unit_calibration() -> (MatchedSample, matchcal::calibrate::CalibrationResult, [f64; 2]) {
    let x = DMatrix::from_row_slice(4, 2, &[1., 1., 1., 2., 1., 3., 1., 4.]);
    let m = matched(vec![2.0; 4], vec![1.0, 3.0, 2.0, 5.0], x, WeightKind::Pi);
    let c = chi_square_calibrate(&m, &DVector::from_vec(vec![10.0, 26.0]), None).unwrap();
    // A = Σ 2·(1,x)(1,x)ᵀ, gap = (10 − 8, 26 − 20).
    let lam = solve2([[8.0, 20.0], [20.0, 60.0]], [2.0, 6.0]);
    (m, c, lam)
}

pub fn matched(weight: Vec<f64>, y: Vec<f64>, x: DMatrix<f64>, kind: WeightKind) -> MatchedSample {
    let n = y.len();
    let pi = weight.iter().map(|w| 1.0 / w).collect();
    MatchedSample {
        pairs: (0..n).map(|i| (i, i)).collect(),
        distance: vec![0.0; n],
        kind,
        pi,
        weight,
        y,
        x,
    }
}

fn regression_checks(out: &mut Vec<Check>) {
    let x = [1.0, 2.0, 3.0];
    let fit = weighted_ls(&design2(&x), &x, &[0.3, 2.0, 7.0]).unwrap();
    out.push(Check::new("exact line intercept", fit.coefficients[0], 0.0, TIGHT));
    out.push(Check::new("exact line slope", fit.coefficients[1], 1.0, TIGHT));

    let x = [1.0, 2.5, 4.0, 6.0, 9.0];
    let y = [1.1, 2.0, 3.7, 4.2, 7.9];
    let pi = [0.1, 0.2, 0.05, 0.5, 0.25];
    let s2 = [1.0, 2.5, 4.0, 6.0, 9.0];
    let w: Vec<f64> = pi.iter().zip(&s2).map(|(p, s)| 1.0 / (p * s)).collect();
    let fit = weighted_ls(&design2(&x), &y, &w).unwrap();
    let b = wls2(&x, &y, &w);
    out.push(Check::new("wls intercept", fit.coefficients[0], b[0], TIGHT));
    out.push(Check::new("wls slope", fit.coefficients[1], b[1], TIGHT));

    let label = [1.0, 0.0, 0.0, 0.0];
    let f = logistic_irls(&DMatrix::from_element(4, 1, 1.0), &label, &[1.0; 4], LogisticOptions::default())
        .unwrap();
    out.push(Check::new("logit of a quarter", f.coefficients[0], (0.25f64 / 0.75).ln(), TIGHT));
}

pub fn design2(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] })
}

fn variance_part_checks(out: &mut Vec<Check>) {
    out.push(Check::new("wr of (1, 3)", wr_total_variance(&[1.0, 3.0]).unwrap(), 4.0, TIGHT));
    let z = DMatrix::from_row_slice(3, 2, &[1., 2., 2., 0., 3., 1.]);
    let v = wr_total_covariance(&z).unwrap();
    let col = |k: usize| [z[(0, k)], z[(1, k)], z[(2, k)]];
    let (a, b) = (col(0), col(1));
    let ma = a.iter().sum::<f64>() / 3.0;
    let mb = b.iter().sum::<f64>() / 3.0;
    let cov = 1.5 * (0..3).map(|i| (a[i] - ma) * (b[i] - mb)).sum::<f64>();
    out.push(Check::new("wr covariance [0,0]", v[(0, 0)], wr_oracle(&a), TIGHT));
    out.push(Check::new("wr covariance [1,1]", v[(1, 1)], wr_oracle(&b), TIGHT));
    out.push(Check::new("wr covariance [0,1]", v[(0, 1)], cov, TIGHT));

    let donor = DesignSample::new(
        vec![0, 1, 2, 3, 4],
        vec![0.5, 0.5, 0.25, 0.25, 0.25],
        vec![1, 1, 2, 2, 2],
    )
    .unwrap();
    let x = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 1.0, 2.0, 3.0]);
    let v = v_pi_xp(&donor, &x).unwrap();
    let oracle = wr_oracle(&[2.0, 4.0]) + wr_oracle(&[4.0, 8.0, 12.0]);
    out.push(Check::new("stratified design variance", v[(0, 0)], oracle, TIGHT));

    // π ≡ 1, g ≡ 1, residuals (1, −1).
    let m = matched(vec![1.0, 1.0], vec![1.0, -1.0], DMatrix::from_element(2, 1, 1.0), WeightKind::Pi);
    let vi = VarianceInputs::new(&m, DMatrix::zeros(1, 1), None, None).unwrap();
    out.push(Check::new("xi with unit factors", vi.estimate(VarianceKind::XiM1).unwrap(), 2.0, TIGHT));
    out.push(Check::new("xi with unit g", vi.xi_g_over_pi(), 2.0, TIGHT));
}

/// Five-unit fixture: every composite variance is recomputed from parts
/// obtained with the standalone oracles above.
pub fn composite_checks(out: &mut Vec<Check>) {
    let xs = [1.0, 2.0, 4.0, 5.0, 7.0];
    let y = vec![1.2, 2.9, 4.1, 6.3, 7.0];
    let pi = [0.1, 0.2, 0.25, 0.1, 0.5];
    let g = [1.1, 0.9, 1.0, 1.2, 0.8];
    let s_tilde: Vec<f64> = xs.to_vec();
    let v_pi = DMatrix::from_row_slice(2, 2, &[30.0, 40.0, 40.0, 90.0]);
    let target = [36.0, 120.0];

    for kind in [WeightKind::Pi, WeightKind::Greg] {
        let w: Vec<f64> = match kind {
            WeightKind::Pi => pi.iter().map(|p| 1.0 / p).collect(),
            WeightKind::Greg => g.iter().zip(&pi).map(|(g, p)| g / p).collect(),
        };
        let m = MatchedSample {
            pairs: (0..5).map(|i| (i, i)).collect(),
            distance: vec![0.0; 5],
            kind,
            weight: w.clone(),
            pi: pi.to_vec(),
            y: y.clone(),
            x: design2(&xs),
        };
        let calib = chi_square_calibrate(&m, &DVector::from_vec(target.to_vec()), None).unwrap();
        let vi = VarianceInputs::new(&m, v_pi.clone(), Some(&calib), Some(&s_tilde)).unwrap();

        // Parts.
        let w_tilde: Vec<f64> = (0..5).map(|j| 1.0 / (pi[j] * s_tilde[j])).collect();
        let bt = wls2(&xs, &y, &w_tilde);
        let w_star: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
        let bs = wls2(&xs, &y, &w_star);
        let e: Vec<f64> = (0..5).map(|j| y[j] - bt[0] - bt[1] * xs[j]).collect();
        let es: Vec<f64> = (0..5).map(|j| y[j] - bs[0] - bs[1] * xs[j]).collect();
        let (mut a00, mut a01, mut a11, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in 0..5 {
            a00 += w[j];
            a01 += w[j] * xs[j];
            a11 += w[j] * xs[j] * xs[j];
            t0 += w[j];
            t1 += w[j] * xs[j];
        }
        let lam = solve2([[a00, a01], [a01, a11]], [target[0] - t0, target[1] - t1]);
        let gs: Vec<f64> = xs.iter().map(|x| 1.0 + lam[0] + lam[1] * x).collect();
        let gd: Vec<f64> = match kind {
            WeightKind::Pi => vec![1.0; 5],
            WeightKind::Greg => g.to_vec(),
        };
        let z0: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
        let z1: Vec<f64> = xs.iter().zip(&pi).map(|(x, p)| x / p).collect();
        let m0 = z0.iter().sum::<f64>() / 5.0;
        let m1 = z1.iter().sum::<f64>() / 5.0;
        let c01 = 1.25 * (0..5).map(|j| (z0[j] - m0) * (z1[j] - m1)).sum::<f64>();
        let quad = |v00: f64, v01: f64, v11: f64| {
            bt[0] * bt[0] * v00 + 2.0 * bt[0] * bt[1] * v01 + bt[1] * bt[1] * v11
        };
        let q_r = quad(wr_oracle(&z0), c01, wr_oracle(&z1));
        let q_pi = quad(30.0, 40.0, 90.0);
        let sq = |f: &dyn Fn(usize) -> f64| (0..5).map(|j| f(j) * f(j)).sum::<f64>();
        let xi_pi = sq(&|j| e[j] / pi[j]);
        let xi_g = sq(&|j| gd[j] * e[j] / pi[j]);
        let xi_gs = sq(&|j| gs[j] * es[j] / pi[j]);
        let xi_es = sq(&|j| es[j] / pi[j]);
        let wr_wy = wr_oracle(&(0..5).map(|j| w[j] * y[j]).collect::<Vec<_>>());
        let wr_ypi = wr_oracle(&(0..5).map(|j| y[j] / pi[j]).collect::<Vec<_>>());
        let wr_wes = wr_oracle(&(0..5).map(|j| w[j] * es[j]).collect::<Vec<_>>());
        let wr_espi = wr_oracle(&(0..5).map(|j| es[j] / pi[j]).collect::<Vec<_>>());

        use VarianceKind::*;
        let expected: Vec<(VarianceKind, f64)> = match kind {
            WeightKind::Pi => vec![
                (XiM1, xi_pi),
                (RM1, wr_wy),
                (RpixiM1, xi_pi + q_r),
                (XiMC1, xi_gs),
                (RMC1, wr_wes),
            ],
            WeightKind::Greg => vec![
                (XiM2, xi_g),
                (RpiM2, wr_ypi + q_pi),
                (RpixiM2, xi_pi + q_r + q_pi),
                (XiMC2, xi_es),
                (RpiMC2, wr_espi + q_pi),
                (RpixiMC2, xi_es + q_pi),
            ],
        };
        for (k, v) in expected {
            out.push(Check::new(format!("composite {}", k.label()), vi.estimate(k).unwrap(), v, TIGHT));
        }
    }
}

fn estimator_checks(out: &mut Vec<Check>) {
    let m = matched(vec![100.0], vec![0.5], DMatrix::from_element(1, 1, 1.0), WeightKind::Pi);
    let r = total_matched(&m).unwrap();
    out.push(Check::new("single pair total", r.total, 50.0, TIGHT));
    out.push(Check::new("single pair n_hat", r.n_hat, 100.0, TIGHT));
    out.push(Check::new("single pair mean", r.mean, 0.5, TIGHT));
    let y = vec![0.3, 1.7, 2.2, 4.0];
    let m = matched(vec![1.0; 4], y.clone(), DMatrix::from_element(4, 1, 1.0), WeightKind::Pi);
    out.push(Check::new("unit weights total", total_matched(&m).unwrap().total, y.iter().sum(), TIGHT));

    // Panel identical to the reference sample, π = n/N.
    let xs = [1.0, 2.0, 3.0, 4.0];
    let y = [1.0, 2.0, 3.0, 5.0];
    let (n, big_n) = (4.0, 40.0);
    let d = design2(&xs);
    let target = DVector::from_vec(vec![big_n, big_n / n * xs.iter().sum::<f64>()]);
    let r = dr_estimator(EstimatorKind::DR1, &d, &[big_n / n; 4], &d, &d, &y, &target).unwrap();
    out.push(Check::new("doubly robust symmetric classes", r.total, big_n / n * y.iter().sum::<f64>(), TIGHT));

    // Scalar matching by inspection.
    let s = nn_match(
        &DMatrix::from_column_slice(2, 1, &[1.0, 5.0]),
        &DMatrix::from_column_slice(3, 1, &[0.9, 1.2, 4.7]),
        &MatchOptions {
            with_replacement: true,
            ..MatchOptions::default()
        },
    )
    .unwrap();
    out.push(Check::new("nn pair 0", s.pairs[0].1 as f64, 0.0, 0.0));
    out.push(Check::new("nn pair 1", s.pairs[1].1 as f64, 2.0, 0.0));
    out.push(Check::new("nn distance 0", s.distance[0], 0.1, TIGHT));
    out.push(Check::new("nn distance 1", s.distance[1], 0.3, TIGHT));
}

fn summary_checks(out: &mut Vec<Check>) {
    let recs: Vec<ReplicateRecord> = [9.0, 11.0]
        .iter()
        .map(|p| {
            let mut r = ReplicateRecord::default();
            r.points.insert(EstimatorKind::M1, *p);
            r.variances.insert(VarianceKind::XiM1, 4.0);
            r
        })
        .collect();
    let (e, v) = summarize(10.0, &recs, &[EstimatorKind::M1], &[VarianceKind::XiM1]).unwrap();
    out.push(Check::new("summary relbias", e[0].relbias_pct, 0.0, TIGHT));
    out.push(Check::new("summary empvar", e[0].emp_variance, 2.0, TIGHT));
    out.push(Check::new("summary mse", e[0].mse, 1.0, TIGHT));
    out.push(Check::new("summary rb empvar", v[0].rb_empvar_pct.unwrap(), 100.0, TIGHT));
    out.push(Check::new("summary coverage", v[0].ci95_coverage_pct, 100.0, TIGHT));
}

/// All 3–5-unit fixtures.
pub fn small_fixture_checks() -> Vec<Check> {
    let mut out = Vec::new();
    calibration_checks(&mut out);
    regression_checks(&mut out);
    variance_part_checks(&mut out);
    composite_checks(&mut out);
    estimator_checks(&mut out);
    summary_checks(&mut out);
    out
}

// ---------------------------------------------------------------- propensity

/// 30 stacked units: 10 reference rows then 20 pool rows, one covariate.
pub fn propensity_fixture() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut u = Lcg::new(7);
    let xp: Vec<f64> = (0..10).map(|_| 2.0 + 4.0 * u.next()).collect();
    let xq: Vec<f64> = (0..20).map(|_| 6.0 * u.next()).collect();
    let w: Vec<f64> = (0..10).map(|_| 1.0 + 9.0 * u.next()).collect();
    (xp, xq, w)
}

/// Propensity-match checks against the Newton oracle and the exhaustive
/// nearest-neighbour oracle on the oracle's scores.
pub fn propensity_checks() -> (Vec<Check>, bool) {
    let (xp, xq, w) = propensity_fixture();
    let (skel, fit) = propensity_match(&design2(&xp), &w, &design2(&xq), &MatchOptions::default()).unwrap();
    let ws: f64 = w.iter().sum();
    let mut x = xp.clone();
    x.extend(&xq);
    let mut wt: Vec<f64> = w.iter().map(|v| v * 10.0 / ws).collect();
    wt.extend([1.0; 20]);
    let mut label = vec![1.0; 10];
    label.extend([0.0; 20]);
    let b = newton_logistic2(&x, &label, &wt);
    let mut checks = Vec::new();
    for (i, xi) in x.iter().enumerate() {
        let p = 1.0 / (1.0 + (-(b[0] + b[1] * xi)).exp());
        checks.push(Check::new(format!("propensity score {i}"), fit.fitted_probs[i], p, 1e-6));
    }
    let score = |v: f64| vec![b[0] + b[1] * v];
    let oracle = greedy_oracle(
        &xp.iter().map(|&v| score(v)).collect::<Vec<_>>(),
        &xq.iter().map(|&v| score(v)).collect::<Vec<_>>(),
    );
    let pairs: Vec<usize> = skel.pairs.iter().map(|&(_, j)| j).collect();
    (checks, pairs == oracle)
}

// ---------------------------------------------------------------- pipeline

/// Rows, covered web rows and the subset sizes of the two-group file.
pub const PIPE_ROWS: usize = 500;
pub const PIPE_GROUP1: usize = 200;
pub const PIPE_WEB_GROUP1: usize = 40;
pub const PIPE_N: usize = 100;
pub const PIPE_M: usize = 200;
pub const PIPE_Y0: f64 = 0.1;
pub const PIPE_Y1: f64 = 0.6;

/// Write the two-group file: `z = 1` rows have `y = 0.6`, `z = 0` rows
/// `y = 0.1`; every `z = 0` row and the first 40 `z = 1` rows are covered.
pub fn write_pipeline_fixture(path: &Path) {
    let mut s = String::from("id,z,y,web,wd,wf\n");
    for i in 0..PIPE_ROWS {
        let z = usize::from(i < PIPE_GROUP1);
        let y = if z == 1 { PIPE_Y1 } else { PIPE_Y0 };
        let web = z == 0 || i < PIPE_WEB_GROUP1;
        s.push_str(&format!("{i},{z},{y},{},1,1\n", if web { "yes" } else { "no" }));
    }
    std::fs::write(path, s).unwrap();
}

pub fn pipeline_fixture_spec(data: &Path, replicates: usize, seed: u64) -> PipelineSpec {
    let model = DesignSpec {
        intercept: true,
        main_effects: vec!["z".into()],
        interactions: vec![],
    };
    PipelineSpec {
        data: data.to_path_buf(),
        schema: DatasetSchema {
            covariates: vec![ColumnSpec {
                name: "z".into(),
                kind: ColumnKind::Continuous,
                drop: vec![],
            }],
            responses: vec![ResponseSpec {
                name: "y".into(),
                map: None,
                drop: vec![],
            }],
            design_weight: Some("wd".into()),
            final_weight: Some("wf".into()),
        },
        web_rule: SubsetRule {
            column: "web".into(),
            value: "yes".into(),
        },
        population_size: None,
        n: PIPE_N,
        m: PIPE_M,
        calibration_model: model.clone(),
        propensity_model: model,
        dr2_propensity_model: None,
        estimators: vec![
            EstimatorKind::M1,
            EstimatorKind::M2,
            EstimatorKind::MC1,
            EstimatorKind::MC2,
            EstimatorKind::DR1,
        ],
        variances: vec![],
        replicates,
        seed,
        max_failure_rate: 0.01,
        execution: Execution::Parallel,
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

fn hypergeometric(total: usize, good: usize, draws: usize) -> Vec<f64> {
    (0..=draws.min(good))
        .map(|k| {
            if draws - k > total - good {
                0.0
            } else {
                (ln_choose(good, k) + ln_choose(total - good, draws - k) - ln_choose(total, draws)).exp()
            }
        })
        .collect()
}

/// Expected matched-only mean. Reference group-1 units find group-1 panel
/// units while any remain and otherwise take a group-0 unit, so the mean is
/// `y0 + (y1 − y0)·min(k, n1)/n` with `k` and `n1` independent
/// hypergeometric counts.
pub fn pipeline_matched_mean_oracle() -> f64 {
    let web = PIPE_ROWS - PIPE_GROUP1 + PIPE_WEB_GROUP1;
    let pk = hypergeometric(web, PIPE_WEB_GROUP1, PIPE_M);
    let pn = hypergeometric(PIPE_ROWS, PIPE_GROUP1, PIPE_N);
    let mut e_min = 0.0;
    for (k, a) in pk.iter().enumerate() {
        for (n1, b) in pn.iter().enumerate() {
            e_min += a * b * k.min(n1) as f64;
        }
    }
    PIPE_Y0 + (PIPE_Y1 - PIPE_Y0) * e_min / PIPE_N as f64
}

pub fn pipeline_truth() -> f64 {
    (PIPE_GROUP1 as f64 * PIPE_Y1 + (PIPE_ROWS - PIPE_GROUP1) as f64 * PIPE_Y0) / PIPE_ROWS as f64
}
