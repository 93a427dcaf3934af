use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use plume_core::pipeline::StageTiming;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Record of one run. `config` holds the fully resolved arguments, so
/// `plume replay` can re-run it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<StageTiming>,
    /// Subcommand-specific results (selected scale, AUC, cutoffs, ...).
    #[serde(default)]
    pub summary: Value,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

pub fn manifest_path(out: &Path, subcommand: &str) -> PathBuf {
    out.join(format!("{subcommand}.manifest.json"))
}

/// Collects outputs and stage timings while a subcommand runs.
pub struct Run {
    pub out: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<StageTiming>,
    pub summary: serde_json::Map<String, Value>,
    last: Instant,
}

impl Run {
    pub fn new(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out)
            .with_context(|| format!("creating output directory {}", out.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            summary: serde_json::Map::new(),
            last: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn lap(&mut self, stage: impl Into<String>) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(
            key.to_string(),
            serde_json::to_value(value).expect("summary values serialise"),
        );
    }

    pub fn finish(
        self,
        subcommand: &str,
        seed: Option<u64>,
        threads: Option<usize>,
        config: Value,
    ) -> Result<PathBuf> {
        let path = manifest_path(&self.out, subcommand);
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            version: VERSION.to_string(),
            seed,
            threads,
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            timings: self.timings,
            summary: Value::Object(self.summary),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
