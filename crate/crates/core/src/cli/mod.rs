//! Experiment harness behind the `brwlab` binary.
//!
//! [`execute`] validates a config, runs it on a pool of
//! [`workers`](resolve_workers) threads and writes the payload, the
//! manifest (`<stem>.manifest.json`) and the timing file
//! (`<stem>.timing.json`) next to `out.path`. Results depend only on the
//! config and seed, never on the worker count.

pub mod config;
pub mod output;
pub mod run;

use std::path::PathBuf;
use std::time::Instant;

pub use config::{ExperimentConfig, ExperimentKind, LawBlock};
pub use output::{Manifest, Table, CSV_SCHEMA};
pub use run::{run, RunOutput};

use crate::estimate::with_workers;
use crate::Result;

pub const THREADS_ENV: &str = "BRWLAB_THREADS";

/// `BRWLAB_THREADS`, else `run.workers`, else the available parallelism.
pub fn resolve_workers(config: &ExperimentConfig) -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(crate::Error::Config {
                key: THREADS_ENV.into(),
                message: format!("`{v}` is not a positive integer"),
            }),
        };
    }
    Ok(config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

/// Paths written by [`execute`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Written {
    pub payload: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub timing: Option<PathBuf>,
}

/// Validate, run and write outputs.
pub fn execute(config: &ExperimentConfig) -> Result<(RunOutput, Written)> {
    config.validate()?;
    let workers = resolve_workers(config)?;
    let start = Instant::now();
    let mut out = with_workers(workers, || run(config))?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut written = Written::default();
    if let Some(path) = &config.out {
        output::write_atomic(path, &out.payload)?;
        written.payload = Some(path.clone());
        if let Some(m) = out.manifest.as_mut() {
            let timing_path = output::sibling(path, "timing.json");
            let manifest_path = output::sibling(path, "manifest.json");
            let name = |p: &PathBuf| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            m.outputs = vec![name(path)];
            m.timing = Some(name(&timing_path));
            let timing = output::Timing {
                config_hash: m.config_hash.clone(),
                wall_clock_seconds: elapsed,
                workers,
            };
            output::write_atomic(&manifest_path, &output::to_json(m)?)?;
            output::write_atomic(&timing_path, &output::to_json(&timing)?)?;
            written.manifest = Some(manifest_path);
            written.timing = Some(timing_path);
        }
    }
    Ok((out, written))
}
