//! Settings file (TOML or JSON, by extension) with flag and environment
//! overrides. Precedence: flag, then `SCD_DATA_ROOT`, then file, then default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use scd_core::annotation::{PipelineConfig, ViewClassifyConfig};
use scd_core::backbone::TrainConfig;
use scd_core::caption::GenerationParams;
use scd_core::curation::PairingConfig;
use scd_core::matching::MatchConfig;
use scd_core::review::{ReviewConfig, DECISION_LOG};
use serde::{Deserialize, Serialize};

pub const DATA_ROOT_ENV: &str = "SCD_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateSettings {
    pub workers: usize,
    pub min_overlap_pixels: usize,
    pub view: ViewClassifyConfig,
    /// Processing resolution; pairs are resampled to it on load.
    pub resolution: u32,
}

impl Default for AnnotateSettings {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            workers: p.workers,
            min_overlap_pixels: p.min_overlap_pixels,
            view: p.view,
            resolution: 504,
        }
    }
}

impl AnnotateSettings {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            view: self.view,
            min_overlap_pixels: self.min_overlap_pixels,
            workers: self.workers,
            halt_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeSettings {
    pub addr: String,
    /// Directory of built review UI assets, served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub data_root: Option<PathBuf>,
    pub matching: MatchConfig,
    pub annotate: AnnotateSettings,
    pub caption: GenerationParams,
    pub pairing: PairingConfig,
    pub review: ReviewConfig,
    pub train: TrainConfig,
    pub serve: ServeSettings,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("read config {}", path.display()))?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).with_context(|| format!("parse {}", path.display()))?,
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parse {}", path.display()))?,
            _ => bail!("config {} must end in .toml or .json", path.display()),
        };
        Ok(parsed)
    }

    /// Data root after applying the flag and environment overrides.
    pub fn resolve_data_root(&self, flag: Option<&Path>) -> PathBuf {
        self.resolve_data_root_with(flag, std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
    }

    pub fn resolve_data_root_with(&self, flag: Option<&Path>, env: Option<PathBuf>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or(env)
            .or_else(|| self.data_root.clone())
            .unwrap_or_else(|| PathBuf::from("scd-data"))
    }
}

/// Fixed layout under the data root.
#[derive(Debug, Clone)]
pub struct DataLayout {
    pub root: PathBuf,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Annotation run output, one directory per pair.
    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn decision_log(&self) -> PathBuf {
        self.root.join("review").join(DECISION_LOG)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(
            &t,
            "data_root = \"/d\"\n[matching]\nalpha_t = 0.3\n[review]\nlease_timeout_secs = 60\n",
        )
        .unwrap();
        let j = dir.path().join("c.json");
        std::fs::write(
            &j,
            r#"{"data_root": "/d", "matching": {"alpha_t": 0.3}, "review": {"lease_timeout_secs": 60}}"#,
        )
        .unwrap();
        let a = Settings::load(Some(&t)).unwrap();
        assert_eq!(a, Settings::load(Some(&j)).unwrap());
        assert_eq!(a.matching.alpha_t, 0.3);
        assert_eq!(a.matching.alpha_g, MatchConfig::default().alpha_g);
        assert_eq!(a.review.lease_timeout_secs, 60);
        assert!(Settings::load(Some(&dir.path().join("c.yaml"))).is_err());
    }

    #[test]
    fn data_root_precedence() {
        let s = Settings {
            data_root: Some("/file".into()),
            ..Settings::default()
        };
        let env = Some(PathBuf::from("/env"));
        assert_eq!(
            s.resolve_data_root_with(Some(Path::new("/flag")), env.clone()),
            PathBuf::from("/flag")
        );
        assert_eq!(s.resolve_data_root_with(None, env), PathBuf::from("/env"));
        assert_eq!(s.resolve_data_root_with(None, None), PathBuf::from("/file"));
        assert_eq!(
            Settings::default().resolve_data_root_with(None, None),
            PathBuf::from("scd-data")
        );
    }
}
