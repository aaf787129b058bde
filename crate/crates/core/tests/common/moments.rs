//! Monte Carlo moment checks of the gamma superpopulation.

#![allow(dead_code)]

use matchcal::population::{generate_hmt, HmtParams};

/// A statistic standardized by its Monte Carlo standard error.
#[derive(Debug, Clone)]
pub struct ZCheck {
    pub name: String,
    pub z: f64,
}

/// Conditional mean and variance in ten equal-count bins of `x`, plus the
/// OLS slope with a heteroscedasticity-robust standard error.
pub fn hmt_moment_checks(n_units: usize, seed: u64) -> Vec<ZCheck> {
    let p = HmtParams {
        n_units,
        ..HmtParams::default()
    };
    let pop = generate_hmt(&p, seed).unwrap();
    let x: Vec<f64> = pop.x.column(0).iter().copied().collect();
    let y = &pop.y;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = Vec::new();
    let bins = 10;
    for b in 0..bins {
        let idx = &order[b * x.len() / bins..(b + 1) * x.len() / bins];
        let n = idx.len() as f64;
        // Residuals against the model mean and squared-residual excess over
        // the model variance both have expectation 0 given x.
        let r: Vec<f64> = idx.iter().map(|&i| y[i] - p.conditional_mean(x[i])).collect();
        let q: Vec<f64> = idx
            .iter()
            .zip(&r)
            .map(|(&i, e)| e * e - p.conditional_variance(x[i]))
            .collect();
        for (name, v) in [("mean", &r), ("variance", &q)] {
            let m = v.iter().sum::<f64>() / n;
            let s2 = v.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / (n - 1.0);
            out.push(ZCheck {
                name: format!("bin {b} conditional {name}"),
                z: m / (s2 / n).sqrt(),
            });
        }
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let slope = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx;
    let icpt = my - slope * mx;
    let meat: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - icpt - slope * a;
            (a - mx) * (a - mx) * e * e
        })
        .sum();
    out.push(ZCheck {
        name: "OLS slope".into(),
        z: (slope - p.beta) / (meat.sqrt() / sxx),
    });
    let xm_se = (p.x_shape * p.x_scale * p.x_scale / n).sqrt();
    out.push(ZCheck {
        name: "mean of x".into(),
        z: (mx - p.x_shape * p.x_scale) / xm_se,
    });
    out
}
