use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use matchcal::calibrate::calibrate_linear;
use matchcal::io::{
    read_targets_csv, render_pipeline_tables, to_json, write_matched_csv, PipelineReport,
    PipelineSpec, RawTable, SimulationReport,
};
use matchcal::matching::{nn_match, MatchOptions, MatchSkeleton, MatchedSample, WeightKind};
use matchcal::montecarlo::{render_tables, run_study, StudyConfig};
use matchcal::Execution;
use nalgebra::DMatrix;

#[derive(Parser)]
#[command(name = "matchcal", version, about = "Matched and calibrated estimation for nonprobability samples")]
struct Cli {
    /// Worker threads for replicate loops.
    #[arg(long, global = true, env = "MATCHCAL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation study from a JSON config or a built-in preset.
    Simulate {
        config: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        study: Option<u8>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON report path; tables still go to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the microdata matching pipeline from a JSON spec.
    Pipeline {
        spec: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nearest-neighbour match the rows of A to the rows of B.
    Match {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        replace: bool,
        #[arg(long)]
        standardize: Option<bool>,
        /// Matched CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate the `weight` column of a CSV to `name,total` targets.
    Calibrate {
        weights: PathBuf,
        targets: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(2),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Simulate {
            config,
            study,
            reps,
            seed,
            out,
        } => simulate(config, study, reps, seed, out),
        Command::Pipeline {
            spec,
            reps,
            seed,
            out,
        } => pipeline(&spec, reps, seed, out),
        Command::Match {
            a,
            b,
            replace,
            standardize,
            out,
        } => match_files(&a, &b, replace, standardize, out),
        Command::Calibrate {
            weights,
            targets,
            out,
        } => calibrate(&weights, &targets, out),
    }
}

fn emit(text: &str, json: &str, out: Option<PathBuf>) -> Result<()> {
    print!("{text}");
    if let Some(p) = out {
        std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn simulate(
    config: Option<PathBuf>,
    study: Option<u8>,
    reps: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = match (config, study) {
        (Some(_), Some(_)) => bail!("give either a config file or --study, not both"),
        (Some(p), None) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<StudyConfig>(&text)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        (None, Some(1)) => StudyConfig::study1(),
        (None, Some(_)) => StudyConfig::study2(),
        (None, None) => bail!("simulate needs a config file or --study 1|2"),
    };
    if let Some(r) = reps {
        cfg.replicates = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.execution = Execution::Parallel;
    let summary = run_study(&cfg)?;
    let text = render_tables(&summary);
    let report = SimulationReport::new(cfg, summary);
    emit(&text, &to_json(&report)?, out)
}

fn pipeline(spec_path: &Path, reps: Option<usize>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))?;
    let mut spec: PipelineSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
    if spec.data.is_relative() {
        if let Some(dir) = spec_path.parent() {
            spec.data = dir.join(&spec.data);
        }
    }
    if let Some(r) = reps {
        spec.replicates = r;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.execution = Execution::Parallel;
    let summary = matchcal::io::run_pipeline(&spec)?;
    let tables = render_pipeline_tables(&summary);
    let report = PipelineReport {
        schema_version: matchcal::io::SCHEMA_VERSION,
        replicates: spec.replicates,
        seed: spec.seed,
        summary,
    };
    emit(&tables, &to_json(&report)?, out)
}

/// Covariate columns are every column except `id`, `pi` and `weight`.
fn covariates(t: &RawTable) -> Result<(DMatrix<f64>, Vec<String>)> {
    let names: Vec<String> = t
        .headers
        .iter()
        .filter(|h| !matches!(h.as_str(), "id" | "pi" | "weight"))
        .cloned()
        .collect();
    if names.is_empty() {
        bail!("no covariate columns");
    }
    Ok((t.matrix(&names)?, names))
}

fn match_files(
    a: &Path,
    b: &Path,
    replace: bool,
    standardize: Option<bool>,
    out: Option<PathBuf>,
) -> Result<()> {
    let ta = RawTable::read(a).with_context(|| format!("reading {}", a.display()))?;
    let tb = RawTable::read(b).with_context(|| format!("reading {}", b.display()))?;
    let (xa, na) = covariates(&ta)?;
    let (xb, nb) = covariates(&tb)?;
    if na != nb {
        bail!("covariate columns differ: {na:?} vs {nb:?}");
    }
    let pi = if ta.column_index("pi").is_some() {
        ta.numeric("pi")?
    } else if ta.column_index("weight").is_some() {
        ta.numeric("weight")?.iter().map(|w| 1.0 / w).collect()
    } else {
        vec![1.0; xa.nrows()]
    };
    let opts = MatchOptions {
        with_replacement: replace,
        standardize,
        ..MatchOptions::default()
    };
    let MatchSkeleton { pairs, distance } = nn_match(&xa, &xb, &opts)?;
    let matched = MatchedSample {
        weight: pairs.iter().map(|&(i, _)| 1.0 / pi[i]).collect(),
        pi: pairs.iter().map(|&(i, _)| pi[i]).collect(),
        y: vec![0.0; pairs.len()],
        x: DMatrix::zeros(pairs.len(), 0),
        kind: WeightKind::Pi,
        pairs,
        distance,
    };
    match out {
        Some(p) => write_matched_csv(&matched, std::fs::File::create(&p)?)?,
        None => write_matched_csv(&matched, std::io::stdout().lock())?,
    }
    Ok(())
}

fn calibrate(weights: &Path, targets: &Path, out: Option<PathBuf>) -> Result<()> {
    let t = RawTable::read(weights).with_context(|| format!("reading {}", weights.display()))?;
    let (names, totals) = read_targets_csv(targets)?;
    let base = t.numeric("weight")?;
    let n = base.len();
    let mut cols = Vec::with_capacity(names.len());
    for name in &names {
        if t.column_index(name).is_some() {
            cols.push(t.numeric(name)?);
        } else if matches!(name.as_str(), "intercept" | "(Intercept)" | "1") {
            cols.push(vec![1.0; n]);
        } else {
            bail!("target '{name}' has no matching column in {}", weights.display());
        }
    }
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let res = calibrate_linear(&x, &base, &totals, None)?;
    let wcol = t.require("weight")?;
    let mut buf: Vec<u8> = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = t.headers.clone();
        header.push("g".into());
        w.write_record(&header)?;
        for (i, row) in t.rows.iter().enumerate() {
            let mut rec = row.clone();
            rec[wcol] = res.weights[i].to_string();
            rec.push(res.g_factors[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    if res.negative_weights > 0 {
        eprintln!("warning: {} calibrated weights are negative", res.negative_weights);
    }
    match out {
        Some(p) => std::fs::write(&p, &buf)?,
        None => std::io::stdout().lock().write_all(&buf)?,
    }
    Ok(())
}
