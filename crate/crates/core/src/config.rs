//! Run configuration (TOML) and the run manifest written next to outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoding::HashGridConfig;
use crate::error::{Error, Result};
use crate::field::{FieldModel, MlpConfig};
use crate::meta::{InnerLoopConfig, IterationLog, OuterLoopConfig};
use crate::metrics::SsimConfig;
use crate::render::RenderConfig;
use crate::scenes::{list_scene_dirs, Category};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Holds one directory per category.
    pub dataset_root: PathBuf,
    pub output_root: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub category: Category,
    /// The first `train_scenes` scenes (by directory name) are used for
    /// meta-training, the rest for evaluation.
    pub train_scenes: usize,
    /// Evenly spaced frames per meta-training scene.
    pub views_per_scene: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            category: Category::Sphere,
            train_scenes: 32,
            views_per_scene: 25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_views: usize,
    /// Evenly subsample held-out frames to at most this many; 0 keeps all.
    pub max_heldout_frames: usize,
    pub ssim: SsimConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_views: 2,
            max_heldout_frames: 0,
            ssim: SsimConfig::default(),
        }
    }
}

pub const ALLOWED_VIEWS: [usize; 3] = [2, 3, 6];

fn eval_render() -> RenderConfig {
    RenderConfig {
        samples_per_ray: 128,
        jitter: false,
        ..RenderConfig::default()
    }
}

fn adapt_inner() -> InnerLoopConfig {
    InnerLoopConfig::with_steps(400)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub grid: HashGridConfig,
    #[serde(default)]
    pub mlp: MlpConfig,
    /// Used while fitting.
    #[serde(default)]
    pub render: RenderConfig,
    /// Used for evaluation renders.
    #[serde(default = "eval_render")]
    pub eval_render: RenderConfig,
    #[serde(default)]
    pub meta_inner: InnerLoopConfig,
    #[serde(default = "adapt_inner")]
    pub adapt_inner: InnerLoopConfig,
    #[serde(default)]
    pub outer: OuterLoopConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn new(dataset_root: PathBuf, output_root: PathBuf) -> Self {
        Self {
            seed: 0,
            paths: PathsConfig { dataset_root, output_root },
            data: DataConfig::default(),
            grid: HashGridConfig::default(),
            mlp: MlpConfig::default(),
            render: RenderConfig::default(),
            eval_render: eval_render(),
            meta_inner: InnerLoopConfig::default(),
            adapt_inner: adapt_inner(),
            outer: OuterLoopConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|m| Error::InvalidConfig(format!("{}: {m}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.dataset_root, &mut cfg.paths.output_root] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn model(&self) -> Result<FieldModel> {
        FieldModel::new(self.grid, self.mlp)
    }

    pub fn category_dir(&self) -> PathBuf {
        self.paths.dataset_root.join(self.data.category.name())
    }

    /// Checks every sub-configuration and the dataset layout.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.mlp.validate()?;
        self.render.validate()?;
        self.eval_render.validate()?;
        self.meta_inner.validate()?;
        self.adapt_inner.validate()?;
        self.outer.validate()?;
        self.eval.ssim.validate()?;
        if !ALLOWED_VIEWS.contains(&self.eval.n_views) {
            return Err(Error::InvalidConfig(format!("eval.n_views must be 2, 3 or 6, got {}", self.eval.n_views)));
        }
        if self.data.views_per_scene == 0 {
            return Err(Error::InvalidConfig("data.views_per_scene must be >= 1".into()));
        }
        if self.data.train_scenes < self.outer.scenes_per_iteration {
            return Err(Error::InvalidConfig(format!(
                "data.train_scenes ({}) is smaller than outer.scenes_per_iteration ({})",
                self.data.train_scenes, self.outer.scenes_per_iteration
            )));
        }
        let model = self.model()?;
        self.outer.check_second_order(model.param_count(), self.meta_inner.steps)?;
        let dir = self.category_dir();
        if !dir.is_dir() {
            return Err(Error::InvalidConfig(format!("dataset directory {} does not exist", dir.display())));
        }
        let scenes = list_scene_dirs(&dir)?.len();
        if scenes < self.data.train_scenes {
            return Err(Error::InvalidConfig(format!(
                "{} holds {scenes} scenes, data.train_scenes is {}",
                dir.display(),
                self.data.train_scenes
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub iteration: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub command: String,
    pub seed: u64,
    pub param_count: usize,
    pub train_scenes: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Record of a meta-training run: resolved configuration, scene list,
/// checkpoints and per-iteration losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub run: RunInfo,
    pub config: RunConfig,
    #[serde(default)]
    pub checkpoints: Vec<CheckpointEntry>,
    #[serde(default)]
    pub iterations: Vec<IterationLog>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_unknown_keys_fail() {
        let cfg = RunConfig::new("data".into(), "out".into());
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        let minimal = RunConfig::from_toml("[paths]\ndataset_root = \"data\"\noutput_root = \"out\"\n").unwrap();
        assert_eq!(minimal, cfg);
        assert_eq!(minimal.adapt_inner.steps, 400);
        assert_eq!(minimal.meta_inner.steps, 200);
        assert_eq!(minimal.eval_render.samples_per_ray, 128);
        let err = RunConfig::from_toml("[paths]\ndataset_root = \"d\"\noutput_root = \"o\"\n[outer]\nalpha = 1.0\n").unwrap_err();
        assert!(err.contains("alpha"), "{err}");
        assert!(RunConfig::from_toml("[paths]\ndataset_root = \"d\"\noutput_root = \"o\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn validation_checks_paths_and_views() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(tmp.path().to_path_buf(), tmp.path().join("out"));
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(m)) if m.contains("does not exist")));
        cfg.eval.n_views = 4;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(m)) if m.contains("n_views")));
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            run: RunInfo {
                command: "meta-train".into(),
                seed: 3,
                param_count: 10,
                train_scenes: vec!["a".into()],
                notes: vec![],
            },
            config: RunConfig::new("d".into(), "o".into()),
            checkpoints: vec![CheckpointEntry {
                iteration: 0,
                file: "meta_iter_0.ckpt".into(),
            }],
            iterations: vec![IterationLog {
                iteration: 1,
                scenes: vec!["a".into()],
                mean_initial_loss: 0.5,
                mean_final_loss: 0.25,
            }],
        };
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("manifest.toml");
        m.save(&p).unwrap();
        assert_eq!(Manifest::load(&p).unwrap(), m);
    }
}
