//! Machine-readable outputs: JSON with 17-significant-digit floats (so
//! every f64 round-trips losslessly), CSV helpers and the per-run
//! manifest.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::ser::Formatter;
use serde_json::Value;

/// serde_json formatter printing floats as `{:.16e}` (17 significant
/// digits); everything else is the default compact layout.
struct SciFloats;

impl Formatter for SciFloats {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{:.16e}", value)
    }
}

pub fn json_to_string(value: &Value) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFloats);
    serde::Serialize::serialize(value, &mut ser)?;
    Ok(String::from_utf8(out)?)
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let body = json_to_string(value)?;
    std::fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Tracks a run: what was invoked, with which seed, what it produced.
/// Exactly one manifest is written per run, next to the outputs.
pub struct RunContext {
    pub out_dir: PathBuf,
    pub seed: u64,
    subcommand: String,
    argv: Vec<String>,
    started: Instant,
    outputs: Vec<String>,
    stats: Option<Value>,
}

impl RunContext {
    pub fn new(out_dir: PathBuf, seed: u64, subcommand: &str) -> Result<Self> {
        std::fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(RunContext {
            out_dir,
            seed,
            subcommand: subcommand.to_string(),
            argv: std::env::args().collect(),
            started: Instant::now(),
            outputs: Vec::new(),
            stats: None,
        })
    }

    /// Register an output path (relative to the out dir) and return the
    /// full path to write to.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    /// Attach run statistics (e.g. transfer coverage) to the manifest.
    pub fn set_stats(&mut self, stats: Value) {
        self.stats = Some(stats);
    }

    pub fn finish(mut self) -> Result<()> {
        let manifest_path = self.out_dir.join("manifest.json");
        self.outputs.push("manifest.json".to_string());
        let mut manifest = serde_json::json!({
            "subcommand": self.subcommand,
            "argv": self.argv,
            "seed": self.seed,
            "versions": {
                "mbot": env!("CARGO_PKG_VERSION"),
            },
            "wall_clock_seconds": self.started.elapsed().as_secs_f64(),
            "outputs": self.outputs,
        });
        if let Some(stats) = self.stats.take() {
            manifest["stats"] = stats;
        }
        write_json(&manifest_path, &manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_json() {
        let v = serde_json::json!({"x": 1.0 / 3.0, "y": 2.0f64.sqrt()});
        let s = json_to_string(&v).unwrap();
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"].as_f64().unwrap(), 1.0 / 3.0);
        assert_eq!(back["y"].as_f64().unwrap(), 2.0f64.sqrt());
        assert!(s.contains('e'), "{s}");
    }
}
