//! Sweep plans and their expansion into validated configurations.

use std::path::PathBuf;
use std::str::FromStr;

use smq_core::model::QueueKind;
use smq_core::simulator::default_warmup;
use smq_core::{SystemConfig, TheoryOptions};

use crate::{CliError, Result};

/// One swept parameter: a configuration key and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl SweepAxis {
    pub fn new(key: &str, values: &[&str]) -> Self {
        SweepAxis { key: key.to_string(), values: values.iter().map(|v| v.to_string()).collect() }
    }
}

impl FromStr for SweepAxis {
    type Err = CliError;

    /// Parses `KEY=V1,V2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (key, values) =
            s.split_once('=').ok_or_else(|| CliError::Invalid(format!("sweep `{s}` is not KEY=V1,V2,...")))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(CliError::Invalid(format!("sweep over `{key}` has no values")));
        }
        Ok(SweepAxis { key: key.trim().to_string(), values })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sources {
    #[default]
    Sim,
    Theory,
    Both,
}

impl Sources {
    pub fn sim(self) -> bool {
        matches!(self, Sources::Sim | Sources::Both)
    }

    pub fn theory(self) -> bool {
        matches!(self, Sources::Theory | Sources::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub base: SystemConfig,
    /// Expanded as a cartesian product, first axis outermost.
    pub axes: Vec<SweepAxis>,
    pub seeds: Vec<u64>,
    pub n_services: usize,
    pub warmup: usize,
    pub out_dir: PathBuf,
    pub sources: Sources,
    /// Also write one per-request CSV per point.
    pub samples: bool,
    pub theory: TheoryOptions,
    /// Sweep points run concurrently; 0 uses every core.
    pub workers: usize,
}

impl ExperimentPlan {
    pub fn new(base: SystemConfig, out_dir: impl Into<PathBuf>) -> Self {
        let n_services = 2000;
        ExperimentPlan {
            base,
            axes: Vec::new(),
            seeds: vec![0],
            n_services,
            warmup: default_warmup(n_services),
            out_dir: out_dir.into(),
            sources: Sources::Sim,
            samples: false,
            theory: TheoryOptions::default(),
            workers: 0,
        }
    }

    /// Replaces an axis over the same key or appends a new one.
    pub fn set_axis(&mut self, axis: SweepAxis) {
        match self.axes.iter_mut().find(|a| a.key == axis.key) {
            Some(a) => *a = axis,
            None => self.axes.push(axis),
        }
    }

    /// Every configuration of the sweep, validated.
    ///
    /// The cycle only matters to DSMQ, so other disciplines keep the base
    /// cycle and points that become identical are run once.
    pub fn points(&self) -> Result<Vec<SystemConfig>> {
        if self.seeds.is_empty() {
            return Err(CliError::Invalid("no seeds given".into()));
        }
        if self.n_services == 0 || self.warmup >= self.n_services {
            return Err(CliError::Invalid(format!(
                "warmup ({}) must be below the number of services ({})",
                self.warmup, self.n_services
            )));
        }
        let mut points = vec![self.base.clone()];
        for axis in &self.axes {
            if axis.values.is_empty() {
                return Err(CliError::Invalid(format!("sweep over `{}` has no values", axis.key)));
            }
            let mut next = Vec::with_capacity(points.len() * axis.values.len());
            for p in &points {
                for v in &axis.values {
                    let mut c = p.clone();
                    c.set_key(&axis.key, v)?;
                    next.push(c);
                }
            }
            points = next;
        }
        let mut unique: Vec<SystemConfig> = Vec::with_capacity(points.len());
        for mut p in points {
            if p.queue_kind != QueueKind::Dsmq {
                p.cycle = self.base.cycle;
            }
            if !unique.contains(&p) {
                unique.push(p);
            }
        }
        for (i, p) in unique.iter().enumerate() {
            p.validated().map_err(|e| CliError::Invalid(format!("sweep point {i} ({}): {e}", describe(p))))?;
        }
        Ok(unique)
    }
}

/// Short label of the swept coordinates of a configuration.
pub fn describe(c: &SystemConfig) -> String {
    format!("{} {} S={} C={} lambda={}", c.scheme, c.queue_kind, c.streams, c.cycle, c.lambda_total)
}

/// Parses a seed list such as `1,2,5` or a half-open range `0..4`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || CliError::Invalid(format!("invalid seed list `{text}`"));
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}
