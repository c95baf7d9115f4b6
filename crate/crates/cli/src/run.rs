//! Executes a plan: simulations and analyses per sweep point, then one
//! summary CSV.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;

use smq_core::report::write_summary;
use smq_core::simulator::{run_replications, BeamformingService, SAMPLE_CSV_HEADER};
use smq_core::theory::theory_for;
use smq_core::{Replications, Source, SummaryRow, SystemConfig};

use crate::plan::{describe, ExperimentPlan};
use crate::{CliError, Result};

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug)]
pub struct RunOutcome {
    pub rows: Vec<SummaryRow>,
    pub summary_path: PathBuf,
    pub sample_paths: Vec<PathBuf>,
    pub points: usize,
    pub failed_points: usize,
}

impl RunOutcome {
    pub fn is_ok(&self) -> bool {
        self.failed_points == 0
    }
}

struct PointResult {
    rows: Vec<SummaryRow>,
    replications: Option<Replications>,
    failed: bool,
}

fn run_point(plan: &ExperimentPlan, config: &SystemConfig) -> PointResult {
    let mut rows = Vec::new();
    let mut replications = None;
    let mut failed = false;
    if plan.sources.sim() {
        match run_replications(config, plan.n_services, plan.warmup, &plan.seeds) {
            Ok(reps) => {
                rows.extend(SummaryRow::from_sim(config, &reps));
                replications = Some(reps);
            }
            Err(e) => {
                failed = true;
                rows.push(SummaryRow::failed(Source::Sim, config, &e));
            }
        }
    }
    if plan.sources.theory() {
        let result = BeamformingService::new(config).and_then(|mut model| {
            let options = smq_core::TheoryOptions { seed: plan.seeds[0], ..plan.theory.clone() };
            theory_for(config, &mut model, &options).transpose()
        });
        match result {
            Ok(Some(r)) => rows.extend(SummaryRow::from_theory(config, &r)),
            // No approximation exists for this discipline.
            Ok(None) => {}
            Err(e) => {
                failed = true;
                rows.push(SummaryRow::failed(Source::Theory, config, &e));
            }
        }
    }
    PointResult { rows, replications, failed }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Invalid(format!("cannot start {workers} workers: {e}")))
}

/// Runs every sweep point and writes `summary.csv` (and optional sample
/// files) under the plan's output directory.
///
/// Failed points become rows with a non-empty `error`; the run itself only
/// errors on invalid plans and I/O problems.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<RunOutcome> {
    let points = plan.points()?;
    fs::create_dir_all(&plan.out_dir).map_err(CliError::io(&plan.out_dir))?;

    let total = points.len();
    let results: Vec<PointResult> = pool(plan.workers)?.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(i, config)| {
                let r = run_point(plan, config);
                let status = if r.failed { "failed" } else { "done" };
                eprintln!("[{}/{total}] {} {status}", i + 1, describe(config));
                r
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut sample_paths = Vec::new();
    let mut failed_points = 0;
    for (i, r) in results.into_iter().enumerate() {
        failed_points += r.failed as usize;
        rows.extend(r.rows);
        if let (true, Some(reps)) = (plan.samples, &r.replications) {
            sample_paths.push(write_samples(plan, i, reps)?);
        }
    }
    let summary_path = plan.out_dir.join(SUMMARY_FILE);
    let file = fs::File::create(&summary_path).map_err(CliError::io(&summary_path))?;
    write_summary(&rows, file)?;
    Ok(RunOutcome { rows, summary_path, sample_paths, points: total, failed_points })
}

fn write_samples(plan: &ExperimentPlan, point: usize, reps: &Replications) -> Result<PathBuf> {
    let dir = plan.out_dir.join("samples");
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let path = dir.join(format!("point_{point:04}.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(smq_core::Error::from)?;
    w.write_record(SAMPLE_CSV_HEADER).map_err(smq_core::Error::from)?;
    for (replication, report) in reps.reports.iter().enumerate() {
        report.write_samples_csv(replication, &mut w)?;
    }
    w.flush().map_err(CliError::io(&path))?;
    Ok(path)
}
