//! Subcommand implementations plus the small amount of plumbing they share:
//! config-file overlay, report writing, and the scene-parallel driver.

pub mod baseline;
pub mod bench;
pub mod eval;
pub mod fuse;
pub mod gen;
pub mod predict;
pub mod ssc;
pub mod train;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::{CliError, CliResult};
use sedimask_core::Error;

/// Read a JSON config file. The file is one object whose top-level keys are
/// named sections ("scene", "net", "train", "ssc"); each subcommand overlays
/// the sections it understands onto its built-in defaults, and command-line
/// flags override both.
pub fn load_config_file(path: &Path) -> CliResult<Value> {
    let body = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&body)
        .map_err(|e| Error::BadInput(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(Error::BadInput(format!(
            "{}: config file must be a JSON object",
            path.display()
        ))
        .into());
    }
    Ok(value)
}

/// Overlay one config section onto `base`: fields present in the section
/// replace the base values, everything else keeps its default. Unknown
/// fields inside a section are rejected so typos cannot silently no-op.
pub fn section<T: Serialize + DeserializeOwned>(
    file: Option<&Value>,
    name: &str,
    base: T,
) -> CliResult<T> {
    let Some(patch) = file.and_then(|f| f.get(name)) else {
        return Ok(base);
    };
    let mut merged = serde_json::to_value(&base)
        .map_err(|e| Error::BadInput(format!("config defaults failed to serialize: {e}")))?;
    match (&mut merged, patch) {
        (Value::Object(m), Value::Object(p)) => {
            for (k, v) in p {
                m.insert(k.clone(), v.clone());
            }
        }
        _ => {
            return Err(Error::BadInput(format!("config section \"{name}\" must be an object"))
                .into())
        }
    }
    serde_json::from_value(merged)
        .map_err(|e| Error::BadInput(format!("config section \"{name}\": {e}")).into())
}

/// One-line JSON on stdout; the machine-readable success output of every
/// subcommand.
pub fn print_summary<T: Serialize>(summary: &T) {
    println!("{}", serde_json::to_string(summary).expect("summary serializes"));
}

/// Pretty JSON with a trailing newline, for report artifacts.
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::BadInput(format!("report serialization failed: {e}")))?;
    std::fs::write(path, body + "\n")?;
    Ok(())
}

pub fn check_jobs(jobs: usize) -> CliResult<()> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(())
}

/// Run `work(i)` for `i in 0..n`, fanned over up to `jobs` threads, and
/// return the results in index order. Items are independent (one scene
/// each), so chunking by contiguous ranges keeps outputs deterministic.
pub fn for_each_indexed<R, F>(n: usize, jobs: usize, work: F) -> CliResult<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> CliResult<R> + Sync,
{
    if jobs <= 1 || n <= 1 {
        return (0..n).map(work).collect();
    }
    let chunk = n.div_ceil(jobs);
    let mut chunks: Vec<CliResult<Vec<R>>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                let end = (start + chunk).min(n);
                let work = &work;
                scope.spawn(move || (start..end).map(work).collect::<CliResult<Vec<R>>>())
            })
            .collect();
        for h in handles {
            chunks.push(h.join().expect("worker thread panicked"));
        }
    });
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}
