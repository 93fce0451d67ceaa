//! Run manifests and atomic file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fla_core::{BinConfig, FitConfig, WeightRule, WindowSpec};
use serde::{Deserialize, Serialize};

/// Everything needed to replay a command. Flags override loaded values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    #[serde(default)]
    pub inputs: Inputs,
    pub output: Option<PathBuf>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub scene: Option<String>,
    pub tracks: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub segments: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub frame_rate: f64,
    pub window_seconds: f64,
    pub stride: usize,
    pub weight: WeightRule,
    pub bins: BinConfig,
    pub classes: Vec<usize>,
    pub fit: FitConfig,
    pub smooth: bool,
    pub predicate: Option<String>,
    pub export: Option<String>,
    /// Overrides the scene file's own seed.
    pub scene_seed: Option<u64>,
    pub glitch_rate: f64,
    pub glitch_seed: u64,
    /// Feature subset for the oracle comparison, e.g. `size,speed`.
    pub features: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            frame_rate: 15.0,
            window_seconds: 1.0,
            stride: 1,
            weight: WeightRule::Uniform,
            bins: BinConfig::default(),
            classes: vec![2, 3, 6, 8],
            fit: FitConfig::default(),
            smooth: true,
            predicate: None,
            export: None,
            scene_seed: None,
            glitch_rate: 0.0,
            glitch_seed: 0,
            features: None,
        }
    }
}

impl RunConfig {
    pub fn window(&self) -> fla_core::Result<WindowSpec> {
        if !(self.frame_rate > 0.0 && self.window_seconds >= 0.0) {
            return Err(fla_core::FlaError::Invalid(format!(
                "bad window: {} s at {} frames/s",
                self.window_seconds, self.frame_rate
            )));
        }
        let spec = WindowSpec {
            stride: self.stride,
            weight: self.weight,
            ..WindowSpec::from_seconds(self.window_seconds, self.frame_rate)
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            inputs: Inputs::default(),
            output: None,
            config: RunConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(fla_core::FlaError::from)
            .with_context(|| format!("bad manifest {}", path.display()))?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(fla_core::FlaError::from)?;
        s.push('\n');
        Ok(s)
    }
}

/// `model.json` → `model.manifest.json`; a directory gets `manifest.json`.
pub fn manifest_path_for(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        return output.join("manifest.json");
    }
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    output.with_file_name(format!("{stem}.manifest.json"))
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let name = path
        .file_name()
        .with_context(|| format!("{} is not a file path", path.display()))?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("cannot write {}", path.display()))
}
