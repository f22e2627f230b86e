use anyhow::{Context, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record kept in every output directory. It is written before
/// any work starts and rewritten with the finish time and outputs at the end.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub version: String,
    /// `git describe` of the working tree, when available.
    pub git_describe: Option<String>,
    pub seed: u64,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: String,
    #[serde(skip)]
    dir: PathBuf,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn git_describe() -> Option<String> {
    let out = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .stderr(std::process::Stdio::null())
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

impl RunManifest {
    pub fn begin(
        dir: &Path,
        command: &str,
        config: &impl Serialize,
        seed: u64,
        inputs: BTreeMap<String, PathBuf>,
    ) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let m = RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            version: env!("CARGO_PKG_VERSION").to_string(),
            git_describe: git_describe(),
            seed,
            inputs,
            outputs: Vec::new(),
            started_at: now(),
            finished_at: None,
            status: "running".to_string(),
            dir: dir.to_path_buf(),
        };
        m.write()?;
        Ok(m)
    }

    /// Record completion with the files now present in the directory.
    pub fn finish(mut self) -> Result<()> {
        let mut outputs: Vec<String> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != MANIFEST_FILE)
            .collect();
        outputs.sort();
        self.outputs = outputs;
        self.finished_at = Some(now());
        self.status = "complete".to_string();
        self.write()
    }

    fn write(&self) -> Result<()> {
        // Going through Value sorts the keys.
        let value = serde_json::to_value(self)?;
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
