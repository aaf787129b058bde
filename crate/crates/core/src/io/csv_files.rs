//! Plain CSV formats: populations, samples, matched samples and targets.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so an
//! export followed by an import reproduces every value exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matching::MatchedSample;
use crate::population::FinitePopulation;
use crate::sampling::DesignSample;

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?)
}

pub(crate) fn parse_f64(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.parse::<f64>().map_err(|e| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("'{raw}': {e}"),
    })
}

/// A CSV held as column names plus rows of strings.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = reader(path)?;
        let headers = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.column_index(name).ok_or_else(|| Error::Schema {
            row: 0,
            message: format!("missing column '{name}'"),
        })
    }

    /// Numeric column; row numbers in errors count the header as row 1.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.require(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| parse_f64(&r[c], i + 2, name))
            .collect()
    }

    /// Numeric matrix of the named columns.
    pub fn matrix(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let cols: Vec<Vec<f64>> = names.iter().map(|n| self.numeric(n)).collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(self.rows.len(), names.len(), |i, j| cols[j][i]))
    }
}

/// Population CSV with header `x_1,…,x_C,y,stratum`.
pub fn read_population_csv(path: &Path) -> Result<FinitePopulation> {
    let t = RawTable::read(path)?;
    let x_names: Vec<String> = t
        .headers
        .iter()
        .filter(|h| h.starts_with("x_"))
        .cloned()
        .collect();
    if x_names.is_empty() {
        return Err(Error::Schema {
            row: 1,
            message: "population file has no x_ columns".into(),
        });
    }
    let x = t.matrix(&x_names)?;
    let y = t.numeric("y")?;
    let strata = t.numeric("stratum")?;
    let stratum = strata
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if *s >= 1.0 && s.fract() == 0.0 {
                Ok(*s as u32)
            } else {
                Err(Error::Parse {
                    row: i + 2,
                    column: "stratum".into(),
                    message: format!("stratum label {s} is not a positive integer"),
                })
            }
        })
        .collect::<Result<_>>()?;
    FinitePopulation::new(x, y, stratum)
}

pub fn write_population_csv(pop: &FinitePopulation, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=pop.n_covariates()).map(|c| format!("x_{c}")).collect();
    header.push("y".into());
    header.push("stratum".into());
    w.write_record(&header)?;
    for i in 0..pop.len() {
        let mut rec: Vec<String> = (0..pop.n_covariates()).map(|c| pop.x[(i, c)].to_string()).collect();
        rec.push(pop.y[i].to_string());
        rec.push(pop.stratum[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Sample CSV `unit_id,pi,weight,stratum`.
pub fn write_sample_csv(s: &DesignSample, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit_id", "pi", "weight", "stratum"])?;
    for j in 0..s.len() {
        w.write_record([
            s.unit_ids[j].to_string(),
            s.pi[j].to_string(),
            s.base_weight[j].to_string(),
            s.stratum[j].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sample_csv(path: &Path) -> Result<DesignSample> {
    let t = RawTable::read(path)?;
    let ids = t.numeric("unit_id")?;
    let pi = t.numeric("pi")?;
    let strata = t.numeric("stratum")?;
    DesignSample::new(
        ids.iter().map(|v| *v as usize).collect(),
        pi,
        strata.iter().map(|v| *v as u32).collect(),
    )
}

/// Matched CSV `p_id,np_id,distance,weight,pi`.
pub fn write_matched_csv<W: std::io::Write>(m: &MatchedSample, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p_id", "np_id", "distance", "weight", "pi"])?;
    for (k, &(i, j)) in m.pairs.iter().enumerate() {
        w.write_record([
            i.to_string(),
            j.to_string(),
            m.distance[k].to_string(),
            m.weight[k].to_string(),
            m.pi[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Targets CSV `name,total`.
pub fn read_targets_csv(path: &Path) -> Result<(Vec<String>, DVector<f64>)> {
    let t = RawTable::read(path)?;
    let name = t.require("name")?;
    let totals = t.numeric("total")?;
    let names = t.rows.iter().map(|r| r[name].clone()).collect();
    Ok((names, DVector::from_vec(totals)))
}

pub fn write_targets_csv(names: &[String], totals: &DVector<f64>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "total"])?;
    for (n, t) in names.iter().zip(totals.iter()) {
        w.write_record([n.clone(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
