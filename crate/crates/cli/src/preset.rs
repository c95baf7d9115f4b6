//! Paper-scale experiment profiles. Each takes hours, so the front end only
//! runs them when asked to explicitly.

use std::path::PathBuf;

use smq_core::SystemConfig;

use crate::plan::{ExperimentPlan, SweepAxis};
use crate::{CliError, Result};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    build: fn() -> (SystemConfig, Vec<SweepAxis>),
}

fn homogeneous() -> (SystemConfig, Vec<SweepAxis>) {
    let axes = vec![
        SweepAxis::new("K", &["10", "40"]),
        SweepAxis::new("scheme", &["MMF", "MMF-SIC", "MMF-RS"]),
        SweepAxis::new("S", &["1", "2", "3"]),
        SweepAxis::new("lambda", &["10", "20", "40", "60", "80"]),
    ];
    (SystemConfig::paper_homogeneous(), axes)
}

fn heterogeneous() -> (SystemConfig, Vec<SweepAxis>) {
    let base = SystemConfig::paper_homogeneous().with_heterogeneous_split(20);
    let axes = vec![
        SweepAxis::new("queue_kind", &["SMQ", "DSMQ", "LOOPBACK"]),
        SweepAxis::new("scheme", &["MMF", "MMF-RS"]),
        SweepAxis::new("C", &["5", "8", "15"]),
        SweepAxis::new("S", &["1", "2"]),
        SweepAxis::new("lambda", &["10", "20", "40"]),
    ];
    (base, axes)
}

pub const PRESETS: [Preset; 2] = [
    Preset {
        name: "paper-fig5",
        description: "homogeneous SMQ, L=16 N=100, K in {10,40}, every scheme, S in {1,2,3}, lambda 10..80",
        build: homogeneous,
    },
    Preset {
        name: "paper-fig6-7",
        description: "heterogeneous 20 good / 20 bad users, SMQ, DSMQ and loopback with MMF and MMF-RS",
        build: heterogeneous,
    },
];

/// Services per point used by the paper-scale runs.
pub const PAPER_SERVICES: usize = 10_000;

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// The plan of a preset; fails unless `full` is set.
pub fn preset_plan(name: &str, full: bool, out_dir: impl Into<PathBuf>) -> Result<ExperimentPlan> {
    let preset = find(name).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        CliError::Invalid(format!("unknown preset `{name}` (known: {})", known.join(", ")))
    })?;
    if !full {
        return Err(CliError::Invalid(format!("preset `{name}` runs for hours; pass --full to run it")));
    }
    let (base, axes) = (preset.build)();
    let mut plan = ExperimentPlan::new(base, out_dir);
    plan.axes = axes;
    plan.n_services = PAPER_SERVICES;
    plan.warmup = smq_core::simulator::default_warmup(PAPER_SERVICES);
    Ok(plan)
}
