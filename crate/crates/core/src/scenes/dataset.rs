use std::fs;
use std::path::{Component, Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{oracle_render, AnalyticScene, Category};
use crate::error::{Error, Result};
use crate::geometry::{orbit_pose, CameraIntrinsics, CameraPose, Vec3};
use crate::render::Image;

pub const META_FILE: &str = "meta.json";
/// Eye-to-target distance of every dataset camera.
pub const CAMERA_DISTANCE: f64 = 3.0;
pub const CAMERA_ELEVATION_DEG: f64 = 20.0;
pub const ELEVATION_JITTER_DEG: f64 = 3.0;
/// Focal length in units of the image width.
pub const FOCAL_FACTOR: f64 = 1.3;

pub fn camera_intrinsics(size: usize) -> Result<CameraIntrinsics> {
    CameraIntrinsics::new(size, size, FOCAL_FACTOR * size as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub pose: CameraPose,
    /// Relative to the scene directory.
    pub image_path: PathBuf,
    pub image: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub scene_id: String,
    pub frames: Vec<FrameRecord>,
    pub intrinsics: CameraIntrinsics,
    pub input_split: Vec<usize>,
    pub heldout_split: Vec<usize>,
}

fn frame_path(i: usize) -> PathBuf {
    PathBuf::from(format!("frames/frame_{i:04}.ppm"))
}

/// Renders `n_frames` views on a circle around the origin. Azimuths are
/// evenly spaced; elevations are jittered per frame; all eyes sit at
/// [`CAMERA_DISTANCE`]. Images are stored quantized to 8 bits.
pub fn build_dataset(scene: &AnalyticScene, n_frames: usize, intr: &CameraIntrinsics, background: [f64; 3], seed: u64) -> Result<SceneDataset> {
    if n_frames < 8 {
        return Err(Error::InvalidConfig(format!("a dataset needs at least 8 frames, got {n_frames}")));
    }
    intr.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(seed, &[0x5CE4E]));
    let poses = (0..n_frames)
        .map(|i| {
            let phi = std::f64::consts::TAU * i as f64 / n_frames as f64;
            let el = (CAMERA_ELEVATION_DEG + rng.gen_range(-ELEVATION_JITTER_DEG..=ELEVATION_JITTER_DEG)).to_radians();
            orbit_pose(phi, CAMERA_DISTANCE * el.sin(), CAMERA_DISTANCE * el.cos(), Vec3::zeros())
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = poses
        .into_par_iter()
        .enumerate()
        .map(|(i, pose)| FrameRecord {
            pose,
            image_path: frame_path(i),
            image: oracle_render(scene, &pose, intr, background).quantized(),
        })
        .collect();
    Ok(SceneDataset {
        scene_id: scene.scene_id.clone(),
        frames,
        intrinsics: *intr,
        input_split: Vec::new(),
        heldout_split: Vec::new(),
    })
}

/// `n_input` indices `floor(i·N/n_input)` and their complement.
pub fn split_indices(n_frames: usize, n_input: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_input == 0 || n_input + 1 > n_frames {
        return Err(Error::TooFewFrames {
            frames: n_frames,
            requested: n_input,
        });
    }
    let input: Vec<usize> = (0..n_input).map(|i| i * n_frames / n_input).collect();
    let heldout = (0..n_frames).filter(|i| !input.contains(i)).collect();
    Ok((input, heldout))
}

pub fn split_views(mut dataset: SceneDataset, n_input: usize) -> Result<SceneDataset> {
    let (input, heldout) = split_indices(dataset.frames.len(), n_input)?;
    dataset.input_split = input;
    dataset.heldout_split = heldout;
    Ok(dataset)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameJson {
    file: String,
    pose: Vec<f64>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SplitsJson {
    input: Vec<usize>,
    heldout: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaJson {
    scene_id: String,
    width: usize,
    height: usize,
    focal: f64,
    frames: Vec<FrameJson>,
    #[serde(default)]
    splits: SplitsJson,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `meta.json` and the frame images under `scene_dir`.
pub fn save_dataset(dataset: &SceneDataset, scene_dir: &Path) -> Result<()> {
    create_dir(&scene_dir.join("frames"))?;
    let meta = MetaJson {
        scene_id: dataset.scene_id.clone(),
        width: dataset.intrinsics.width,
        height: dataset.intrinsics.height,
        focal: dataset.intrinsics.focal,
        frames: dataset
            .frames
            .iter()
            .map(|f| FrameJson {
                file: f.image_path.to_string_lossy().into_owned(),
                pose: f.pose.to_matrix().to_vec(),
            })
            .collect(),
        splits: SplitsJson {
            input: dataset.input_split.clone(),
            heldout: dataset.heldout_split.clone(),
        },
    };
    dataset.frames.par_iter().try_for_each(|f| f.image.write_ppm(&scene_dir.join(&f.image_path)))?;
    let mut text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    text.push('\n');
    let path = scene_dir.join(META_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn check_relative(file: &str) -> std::result::Result<PathBuf, String> {
    let p = PathBuf::from(file);
    if p.components().all(|c| matches!(c, Component::Normal(_))) && !file.is_empty() {
        Ok(p)
    } else {
        Err(format!("frame path {file:?} must be relative and stay inside the scene directory"))
    }
}

pub fn load_dataset(scene_dir: &Path) -> Result<SceneDataset> {
    let meta_path = scene_dir.join(META_FILE);
    let bad = |msg: String| Error::Metadata {
        path: meta_path.clone(),
        msg,
    };
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MetaJson = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let intrinsics = CameraIntrinsics::new(meta.width, meta.height, meta.focal).map_err(|e| bad(e.to_string()))?;
    let n = meta.frames.len();
    let mut records = Vec::with_capacity(n);
    for (i, f) in meta.frames.iter().enumerate() {
        if f.pose.len() != 16 {
            return Err(bad(format!("frames[{i}].pose: expected 16 numbers, found {}", f.pose.len())));
        }
        let pose = CameraPose::from_matrix(&f.pose).map_err(|e| bad(format!("frames[{i}].pose: {e}")))?;
        let image_path = check_relative(&f.file).map_err(|m| bad(format!("frames[{i}].file: {m}")))?;
        records.push((pose, image_path));
    }
    let splits = &meta.splits;
    for (name, list) in [("input", &splits.input), ("heldout", &splits.heldout)] {
        if let Some(&bad_idx) = list.iter().find(|&&i| i >= n) {
            return Err(bad(format!("splits.{name}: index {bad_idx} out of range for {n} frames")));
        }
    }
    if splits.input.iter().any(|i| splits.heldout.contains(i)) {
        return Err(bad("splits.input and splits.heldout overlap".into()));
    }
    let frames = records
        .into_par_iter()
        .map(|(pose, image_path)| {
            let full = scene_dir.join(&image_path);
            let image = Image::read_ppm(&full)?;
            if image.width() != meta.width || image.height() != meta.height {
                return Err(Error::Image {
                    path: full,
                    msg: format!(
                        "dimensions {}x{} do not match metadata {}x{}",
                        image.width(),
                        image.height(),
                        meta.width,
                        meta.height
                    ),
                });
            }
            Ok(FrameRecord { pose, image_path, image })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneDataset {
        scene_id: meta.scene_id,
        frames,
        intrinsics,
        input_split: meta.splits.input,
        heldout_split: meta.splits.heldout,
    })
}

/// Writes each dataset to `<root>/<category>/<scene_id>`.
pub fn save_category(root: &Path, category: Category, datasets: &[SceneDataset]) -> Result<PathBuf> {
    let dir = root.join(category.name());
    for d in datasets {
        save_dataset(d, &dir.join(&d.scene_id)).map_err(|e| e.in_scene(&d.scene_id))?;
    }
    Ok(dir)
}

/// Scene directories (those holding a `meta.json`) under `category_dir`,
/// sorted by name.
pub fn list_scene_dirs(category_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(category_dir).map_err(|e| Error::io(category_dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(category_dir, e))?.path();
        if path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn load_category(category_dir: &Path) -> Result<Vec<SceneDataset>> {
    list_scene_dirs(category_dir)?.iter().map(|d| load_dataset(d)).collect()
}
