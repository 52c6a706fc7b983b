//! Run configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scenes::SceneConfig;
use crate::degrade::DistributionProfile;
use crate::error::{Error, Result};
use crate::meta::{Models, TrainConfig};
use crate::nets::{DiscConfig, MaskNetConfig, SrNetConfig};
use crate::oracle::CorruptionKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    /// `iid` or `ood`; ignored when `profile` is given.
    pub preset: String,
    pub profile: Option<DistributionProfile>,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig { preset: "iid".into(), profile: None }
    }
}

impl DegradationConfig {
    pub fn profile(&self, scale: usize) -> Result<DistributionProfile> {
        let p = match &self.profile {
            Some(p) => p.clone(),
            None => DistributionProfile::preset(&self.preset, scale)?,
        };
        if p.scale != scale {
            return Err(Error::Config(format!(
                "degradation scale {} differs from srnet scale {scale}",
                p.scale
            )));
        }
        p.validate()?;
        Ok(p)
    }
}

/// Pseudo-restorer settings for training tasks; each face draws its
/// strength uniformly from `strength` and its kind uniformly from `kinds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub strength: [f64; 2],
    pub regions: usize,
    pub region_size: [usize; 2],
    pub kinds: Vec<CorruptionKind>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            strength: [0.3, 1.0],
            regions: 2,
            region_size: [6, 12],
            kinds: vec![CorruptionKind::TextureSubstitution],
        }
    }
}

/// Supervised warm start of the SR net on the task distribution before
/// meta-training, standing in for initialising from a pretrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// HR patch side.
    pub patch: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { steps: 200, lr: 2e-3, batch: 4, patch: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSettings {
    pub steps: usize,
    /// Inner step size at inference; the training `alpha` when absent.
    pub alpha: Option<f64>,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        AdaptSettings { steps: 1, alpha: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tasks: usize,
    pub seed: u64,
    pub steps: Vec<usize>,
    pub preset: String,
    pub mask_faces: usize,
    pub mask_strength: f64,
    pub mask_kind: CorruptionKind,
    /// Number of tasks whose images are written as samples.
    pub samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tasks: 100,
            seed: 9001,
            steps: vec![0, 1, 10, 20],
            preset: "iid".into(),
            mask_faces: 50,
            mask_strength: 0.8,
            mask_kind: CorruptionKind::TextureSubstitution,
            samples: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: SceneConfig,
    pub degradation: DegradationConfig,
    pub oracle: OracleConfig,
    pub srnet: SrNetConfig,
    pub masknet: MaskNetConfig,
    pub disc: DiscConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub adapt: AdaptSettings,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            out_dir: PathBuf::from("runs/default"),
            data: SceneConfig::default(),
            degradation: DegradationConfig::default(),
            oracle: OracleConfig::default(),
            srnet: SrNetConfig::default(),
            masknet: MaskNetConfig::default(),
            disc: DiscConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            adapt: AdaptSettings::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scale(&self) -> usize {
        self.srnet.scale
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.profile()?;
        let s = self.scale();
        if self.data.height % s != 0 || self.data.width % s != 0 {
            return Err(Error::Config("scene size must be divisible by the scale".into()));
        }
        for (name, p) in [("train.outer_patch", self.train.outer_patch), ("pretrain.patch", self.pretrain.patch)] {
            if p % s != 0 || p > self.data.height.min(self.data.width) {
                return Err(Error::Config(format!(
                    "{name} = {p} must be a multiple of {s} no larger than the scene"
                )));
            }
        }
        let [lo, hi] = self.oracle.strength;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) || self.oracle.kinds.is_empty() {
            return Err(Error::Config("oracle strength range must lie in [0, 1] with kinds".into()));
        }
        if self.pretrain.steps > 0 && (self.pretrain.batch == 0 || !(self.pretrain.lr > 0.0)) {
            return Err(Error::Config("pretrain needs batch >= 1 and lr > 0".into()));
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<DistributionProfile> {
        self.degradation.profile(self.scale())
    }

    pub fn models(&self) -> Result<Models> {
        let mut mask = self.masknet.clone();
        mask.scale = self.scale();
        Models::new(self.srnet.clone(), mask, self.disc.clone())
    }

    pub fn adapt_alpha(&self) -> f64 {
        self.adapt.alpha.unwrap_or(self.train.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[train]\nalpha = 0.2\n[train.lambda]\nadv = 0.0\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.alpha, 0.2);
        assert_eq!(cfg.train.lambda.adv, 0.0);
        assert_eq!(cfg.train.lambda.l1, 1.0);
        assert_eq!(cfg.adapt_alpha(), 0.2);
    }

    #[test]
    fn shipped_tiny_config_is_valid() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/tiny.toml");
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.train.steps, 50);
    }

    #[test]
    fn bad_configs_are_rejected() {
        for text in [
            "unknown = 1",
            "[train]\ninner_steps = 2",
            "[train]\nalpha = -1.0",
            "[data]\nheight = 30",
            "[train]\nouter_patch = 1024",
            "[oracle]\nstrength = [0.8, 0.2]",
            "[degradation]\npreset = \"nope\"",
            "[srnet]\nscale = 3",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }
}
