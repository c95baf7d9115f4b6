use std::fs;
use std::path::Path;
use std::process::Command;

use smq_cli::{render, run_experiment, ExperimentPlan, PlotKind, Sources};
use smq_core::report::{read_summary, summary_to_string};
use smq_core::{RowClass, Source, SystemConfig};

fn small_plan(out: &Path) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(SystemConfig { lambda_total: 6.0, ..SystemConfig::default() }, out);
    plan.n_services = 200;
    plan.warmup = 20;
    plan
}

fn smq(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_smq")).args(args).output().unwrap()
}

#[test]
fn single_point_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&small_plan(dir.path())).unwrap();
    assert!(outcome.is_ok());
    assert_eq!(outcome.rows.len(), 1);
    let text = fs::read_to_string(&outcome.summary_path).unwrap();
    assert_eq!(read_summary(text.as_bytes()).unwrap(), outcome.rows);
}

#[test]
fn sweep_product_gives_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = small_plan(dir.path());
    plan.set_axis("lambda=10,20,40".parse().unwrap());
    plan.set_axis("scheme=MMF,MMF-RS".parse().unwrap());
    plan.n_services = 60;
    plan.warmup = 0;
    let outcome = run_experiment(&plan).unwrap();
    assert_eq!(outcome.rows.len(), 6);
    assert!(outcome.rows.iter().all(|r| r.source == Source::Sim && !r.is_failed()));
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut plan = small_plan(a.path());
    plan.seeds = vec![3, 4];
    plan.sources = Sources::Both;
    plan.theory.samples = 50;
    plan.set_axis("lambda=4,8".parse().unwrap());
    run_experiment(&plan).unwrap();
    plan.out_dir = b.path().to_path_buf();
    plan.workers = 1;
    run_experiment(&plan).unwrap();
    let read = |d: &Path| fs::read(d.join("summary.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn failed_points_are_rows_and_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // No channel reaches a service rate of 1e9/s, so the redraw cap trips.
    let output = smq(&["run", "--sweep", "r_eps=0.01,1e9", "--services", "50", "--out", out]);
    assert_eq!(output.status.code(), Some(2), "{}", String::from_utf8_lossy(&output.stderr));
    let rows = read_summary(fs::File::open(dir.path().join("summary.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(!rows[0].is_failed());
    assert!(rows[1].error.contains("redraws"), "{}", rows[1].error);
}

#[test]
fn validation_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(smq(&["run", "--sweep", "S=9"]).status.code(), Some(1));
    assert_eq!(smq(&["run", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(smq(&["run", "--preset", "paper-fig5"]).status.code(), Some(1));
    let bad = dir.path().join("bad.json");
    let config = SystemConfig { users: 0, ..SystemConfig::default() };
    fs::write(&bad, config.to_json_string()).unwrap();
    assert_eq!(smq(&["validate", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    let good = dir.path().join("good.json");
    fs::write(&good, String::from_utf8(smq(&["default-config"]).stdout).unwrap()).unwrap();
    assert_eq!(smq(&["validate", "--config", good.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn samples_flag_writes_per_request_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = small_plan(dir.path());
    plan.samples = true;
    let outcome = run_experiment(&plan).unwrap();
    assert_eq!(outcome.sample_paths.len(), 1);
    let text = fs::read_to_string(&outcome.sample_paths[0]).unwrap();
    assert!(text.starts_with("replication,service_index,user,file,class,sojourn_s"));
    assert!(text.lines().count() > 100);
}

#[test]
fn empty_summary_cannot_be_plotted() {
    assert!(render(&[], PlotKind::DelayVsLambda).is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    fs::write(&path, summary_to_string(&[]).unwrap()).unwrap();
    let output = smq(&["plot", path.to_str().unwrap(), "--plot", "delay_vs_lambda", "--out", dir.path().to_str().unwrap()]);
    assert_ne!(output.status.code(), Some(0));
}

#[test]
fn schema_mismatch_names_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "source,scheme,queue_kind,S,C,lambda,K,L,N,klass\n").unwrap();
    let err = smq_cli::emit_plots(&path, PlotKind::DelayVsLambda, dir.path()).unwrap_err().to_string();
    assert!(err.contains("klass"), "{err}");
}

#[test]
fn one_series_gives_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = small_plan(dir.path());
    plan.n_services = 60;
    plan.warmup = 0;
    plan.set_axis("lambda=2,4,6".parse().unwrap());
    let outcome = run_experiment(&plan).unwrap();
    let svg = render(&outcome.rows, PlotKind::DelayVsLambda).unwrap();
    assert_eq!(svg.matches("MMF SMQ S=1 C=8").count(), 1);
    assert_eq!(render(&outcome.rows, PlotKind::DelayVsLambda).unwrap(), svg);
    assert!(render(&outcome.rows, PlotKind::TheoryVsSim).is_err());
}

#[test]
fn heterogeneous_sweep_plots_paired_panels() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = ExperimentPlan::new(SystemConfig::default().with_heterogeneous_split(5), dir.path());
    plan.n_services = 80;
    plan.warmup = 0;
    plan.set_axis("queue_kind=SMQ,DSMQ".parse().unwrap());
    plan.set_axis("lambda=2,4".parse().unwrap());
    let outcome = run_experiment(&plan).unwrap();
    assert!(outcome.rows.iter().any(|r| r.class == RowClass::Good));
    assert!(outcome.rows.iter().any(|r| r.class == RowClass::Bad));
    let path = smq_cli::emit_plots(&outcome.summary_path, PlotKind::GoodVsBad, dir.path()).unwrap();
    let svg = fs::read_to_string(path).unwrap();
    assert!(svg.contains("Good users") && svg.contains("Bad users"));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let config = SystemConfig::from_path(entry.unwrap().path()).unwrap();
        assert!(smq_core::validate(&config).is_empty());
        seen += 1;
    }
    assert!(seen >= 2);
}
