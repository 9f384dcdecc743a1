use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MeshEvalConfig;
use crate::fusion::FusionConfig;
use crate::gaussians::{KeyframePolicy, OptimConfig};
use crate::scene::{NoiseConfig, DEFAULT_EROSION_RADIUS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    Synthetic,
    Replay,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    #[default]
    Tabletop,
    AbuttingBoxes,
    TiltedPlane,
    Sphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub kind: SourceKind,
    /// Replay manifest; required for replay sources.
    pub manifest: Option<PathBuf>,
    /// Frames to generate, or the cap on frames read from a replay.
    pub frames: usize,
    pub scene: SceneKind,
    /// Objects in the tabletop scene.
    pub objects: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            kind: SourceKind::Synthetic,
            manifest: None,
            frames: 20,
            scene: SceneKind::Tabletop,
            objects: 4,
            width: 128,
            height: 96,
            fov_deg: 60.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Voxel size used to re-fuse rendered depth for mesh evaluation.
    pub mesh_resolution: f64,
    /// Rendered pixels below this alpha carry no depth.
    pub min_alpha: f64,
    pub mesh: MeshEvalConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mesh_resolution: 0.01,
            min_alpha: 0.5,
            mesh: MeshEvalConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub resolution: f64,
    pub truncation: f64,
    pub embedding_dim: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub erosion_radius: usize,
    /// When false the Gaussian field is seeded but never optimized.
    pub optimize: bool,
    pub source: SourceConfig,
    pub fusion: FusionConfig,
    pub keyframe: KeyframePolicy,
    pub optim: OptimConfig,
    pub noise: NoiseConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            resolution: 0.03,
            truncation: 0.12,
            embedding_dim: 16,
            seed: 0,
            out_dir: PathBuf::from("out"),
            erosion_radius: DEFAULT_EROSION_RADIUS,
            optimize: true,
            source: SourceConfig::default(),
            fusion: FusionConfig::default(),
            keyframe: KeyframePolicy::default(),
            optim: OptimConfig::default(),
            noise: NoiseConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(Error::Config(format!("resolution must be positive, got {}", self.resolution)));
        }
        if !(self.truncation >= 2.0 * self.resolution) || !self.truncation.is_finite() {
            return Err(Error::Config(format!(
                "truncation {} must be at least twice the resolution {}",
                self.truncation, self.resolution
            )));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        let s = &self.source;
        match s.kind {
            SourceKind::Replay if s.manifest.is_none() => {
                return Err(Error::Config("source.manifest is required for replay sources".into()));
            }
            SourceKind::Synthetic => {
                if s.width == 0 || s.height == 0 {
                    return Err(Error::Config("source image size must be positive".into()));
                }
                if !(s.fov_deg > 0.0 && s.fov_deg < 180.0) {
                    return Err(Error::Config(format!("source.fov_deg must be in (0, 180), got {}", s.fov_deg)));
                }
                if s.scene == SceneKind::Tabletop && !(1..=6).contains(&s.objects) {
                    return Err(Error::Config("source.objects must be in 1..=6".into()));
                }
            }
            _ => {}
        }
        if !(self.eval.mesh_resolution > 0.0) || !(0.0..1.0).contains(&self.eval.min_alpha) {
            return Err(Error::Config("eval.mesh_resolution must be positive and eval.min_alpha in [0, 1)".into()));
        }
        self.fusion.validate()?;
        self.keyframe.validate()?;
        self.optim.validate()?;
        self.noise.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Full document with every field spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_are_explicit() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        for key in ["resolution", "xi", "lambda_geo", "tau_threshold", "n_key", "lr_color", "warmup_iters", "kf_sample", "normal", "p_drop"] {
            assert!(text.contains(key), "{key} missing from\n{text}");
        }
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 7\n[fusion]\nxi = 0.5\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.fusion.xi, 0.5);
        assert_eq!(cfg.fusion.lambda_geo, 0.5);
    }

    #[test]
    fn invalid_documents_are_config_errors() {
        for text in ["resolution = -1.0", "[fusion]\nxi = 2.0", "bogus = 1", "[source]\nkind = \"replay\"", "resolution = \"a\""] {
            let e = PipelineConfig::from_toml(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
    }

    #[test]
    fn shipped_default_config_matches() {
        let text = include_str!("../../../../configs/default.toml");
        assert_eq!(PipelineConfig::from_toml(text).unwrap(), PipelineConfig::default());
    }
}
