//! Microdata ingestion: row filtering, recoding and dummy expansion.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::csv_files::{parse_f64, RawTable};
use crate::error::{param, Error, Result};
use crate::population::FinitePopulation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    /// Dummy coded; the reference level (default: first) gets no column.
    Categorical {
        levels: Vec<String>,
        #[serde(default)]
        merge: BTreeMap<String, String>,
        #[serde(default)]
        reference: Option<String>,
    },
    /// Single indicator `value >= threshold`.
    Cut { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
    /// Raw codes (missing, refused, …) whose rows are dropped.
    #[serde(default)]
    pub drop: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSpec {
    pub name: String,
    /// Raw code to numeric value; without a map the column is parsed as a
    /// number.
    #[serde(default)]
    pub map: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub drop: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub covariates: Vec<ColumnSpec>,
    #[serde(default)]
    pub responses: Vec<ResponseSpec>,
    #[serde(default)]
    pub design_weight: Option<String>,
    #[serde(default)]
    pub final_weight: Option<String>,
}

/// A filtered, recoded dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Expanded covariate names, e.g. `SEX=2`, `X_AGE>=55`, `WEIGHT2`.
    pub columns: Vec<String>,
    /// Expanded covariates, no intercept.
    pub x: DMatrix<f64>,
    /// Source column name to its range of expanded columns.
    pub blocks: BTreeMap<String, Range<usize>>,
    pub responses: Vec<(String, Vec<f64>)>,
    pub design_weight: Option<Vec<f64>>,
    pub final_weight: Option<Vec<f64>>,
    /// Raw strings of any extra columns asked for at load time.
    pub raw: BTreeMap<String, Vec<String>>,
    pub rows_read: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn response(&self, name: &str) -> Option<&[f64]> {
        self.responses.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Single-stratum population carrying the `k`-th response.
    pub fn to_population(&self, k: usize) -> Result<FinitePopulation> {
        let (_, y) = self
            .responses
            .get(k)
            .ok_or_else(|| param(format!("dataset has no response {k}")))?;
        FinitePopulation::new(self.x.clone(), y.clone(), vec![1; self.len()])
    }
}

fn schema_err(row: usize, message: String) -> Error {
    Error::Schema { row, message }
}

/// Read `path`, drop rows carrying any drop code, and recode the covariates.
/// `extra_raw` names further columns to keep as strings.
pub fn load_dataset(path: &Path, schema: &DatasetSchema, extra_raw: &[&str]) -> Result<Dataset> {
    let table = RawTable::read(path)?;
    load_table(&table, schema, extra_raw)
}

pub fn load_table(table: &RawTable, schema: &DatasetSchema, extra_raw: &[&str]) -> Result<Dataset> {
    let mut cov_idx = Vec::new();
    for c in &schema.covariates {
        cov_idx.push(table.require(&c.name)?);
    }
    let mut resp_idx = Vec::new();
    for r in &schema.responses {
        resp_idx.push(table.require(&r.name)?);
    }
    let dw_idx = schema.design_weight.as_deref().map(|n| table.require(n)).transpose()?;
    let fw_idx = schema.final_weight.as_deref().map(|n| table.require(n)).transpose()?;
    let extra_idx: Vec<usize> = extra_raw.iter().map(|n| table.require(n)).collect::<Result<_>>()?;

    // Expanded layout.
    let mut columns = Vec::new();
    let mut blocks = BTreeMap::new();
    let mut plans = Vec::new();
    for c in &schema.covariates {
        let start = columns.len();
        match &c.kind {
            ColumnKind::Continuous => columns.push(c.name.clone()),
            ColumnKind::Cut { threshold } => columns.push(format!("{}>={threshold}", c.name)),
            ColumnKind::Categorical {
                levels,
                merge,
                reference,
            } => {
                if levels.is_empty() {
                    return Err(param(format!("categorical column '{}' has no levels", c.name)));
                }
                for target in merge.values() {
                    if !levels.contains(target) {
                        return Err(param(format!(
                            "column '{}' merges into unknown level '{target}'",
                            c.name
                        )));
                    }
                }
                let reference = reference.clone().unwrap_or_else(|| levels[0].clone());
                if !levels.contains(&reference) {
                    return Err(param(format!(
                        "reference level '{reference}' of '{}' is not a level",
                        c.name
                    )));
                }
                let kept: Vec<&String> = levels.iter().filter(|l| **l != reference).collect();
                for l in &kept {
                    columns.push(format!("{}={l}", c.name));
                }
                plans.push((start, kept.into_iter().cloned().collect::<Vec<_>>()));
            }
        }
        blocks.insert(c.name.clone(), start..columns.len());
    }

    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    let mut responses: Vec<Vec<f64>> = vec![Vec::new(); schema.responses.len()];
    let mut dw = Vec::new();
    let mut fw = Vec::new();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); extra_idx.len()];

    'rows: for (i, rec) in table.rows.iter().enumerate() {
        let row_no = i + 2;
        if rec.len() != table.headers.len() {
            return Err(schema_err(row_no, format!("expected {} fields, found {}", table.headers.len(), rec.len())));
        }
        for (c, &k) in schema.covariates.iter().zip(&cov_idx) {
            if c.drop.iter().any(|d| *d == rec[k]) {
                continue 'rows;
            }
        }
        for (r, &k) in schema.responses.iter().zip(&resp_idx) {
            if r.drop.iter().any(|d| *d == rec[k]) {
                continue 'rows;
            }
        }

        let mut xr = vec![0.0; columns.len()];
        let mut plan_iter = plans.iter();
        for (c, &k) in schema.covariates.iter().zip(&cov_idx) {
            let start = blocks[&c.name].start;
            let value = &rec[k];
            match &c.kind {
                ColumnKind::Continuous => xr[start] = parse_f64(value, row_no, &c.name)?,
                ColumnKind::Cut { threshold } => {
                    let v = parse_f64(value, row_no, &c.name)?;
                    xr[start] = if v >= *threshold { 1.0 } else { 0.0 };
                }
                ColumnKind::Categorical { levels, merge, .. } => {
                    let (_, kept) = plan_iter.next().expect("one plan per categorical column");
                    let level = merge.get(value).unwrap_or(value);
                    if !levels.contains(level) {
                        return Err(schema_err(
                            row_no,
                            format!("unknown level '{value}' in column '{}'", c.name),
                        ));
                    }
                    if let Some(pos) = kept.iter().position(|l| l == level) {
                        xr[start + pos] = 1.0;
                    }
                }
            }
        }
        for (ri, (r, &k)) in schema.responses.iter().zip(&resp_idx).enumerate() {
            let v = match &r.map {
                Some(map) => *map.get(&rec[k]).ok_or_else(|| {
                    schema_err(row_no, format!("unmapped code '{}' in response '{}'", rec[k], r.name))
                })?,
                None => parse_f64(&rec[k], row_no, &r.name)?,
            };
            responses[ri].push(v);
        }
        if let (Some(k), Some(name)) = (dw_idx, &schema.design_weight) {
            dw.push(parse_f64(&rec[k], row_no, name)?);
        }
        if let (Some(k), Some(name)) = (fw_idx, &schema.final_weight) {
            fw.push(parse_f64(&rec[k], row_no, name)?);
        }
        for (slot, &k) in raw.iter_mut().zip(&extra_idx) {
            slot.push(rec[k].clone());
        }
        x_rows.push(xr);
    }

    let n = x_rows.len();
    log::info!("kept {n} of {} rows", table.rows.len());
    let x = DMatrix::from_fn(n, columns.len(), |i, j| x_rows[i][j]);
    Ok(Dataset {
        columns,
        x,
        blocks,
        responses: schema
            .responses
            .iter()
            .map(|r| r.name.clone())
            .zip(responses)
            .collect(),
        design_weight: dw_idx.map(|_| dw),
        final_weight: fw_idx.map(|_| fw),
        raw: extra_raw.iter().map(|s| s.to_string()).zip(raw).collect(),
        rows_read: table.rows.len(),
    })
}

/// Model matrix from main effects and pairwise interactions of source
/// columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    #[serde(default = "yes")]
    pub intercept: bool,
    #[serde(default)]
    pub main_effects: Vec<String>,
    /// Each pair contributes the products of every expanded column of the
    /// first source with every expanded column of the second.
    #[serde(default)]
    pub interactions: Vec<(String, String)>,
}

fn yes() -> bool {
    true
}

impl DesignSpec {
    pub fn build(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let block = |name: &str| {
            data.blocks
                .get(name)
                .cloned()
                .ok_or_else(|| param(format!("model refers to unknown column '{name}'")))
        };
        let mut cols: Vec<Vec<f64>> = Vec::new();
        if self.intercept {
            cols.push(vec![1.0; data.len()]);
        }
        for m in &self.main_effects {
            for c in block(m)? {
                cols.push(data.x.column(c).iter().copied().collect());
            }
        }
        for (a, b) in &self.interactions {
            for ca in block(a)? {
                for cb in block(b)? {
                    cols.push((0..data.len()).map(|i| data.x[(i, ca)] * data.x[(i, cb)]).collect());
                }
            }
        }
        if cols.is_empty() {
            return Err(param("model has no columns"));
        }
        Ok(DMatrix::from_fn(data.len(), cols.len(), |i, j| cols[j][i]))
    }
}
