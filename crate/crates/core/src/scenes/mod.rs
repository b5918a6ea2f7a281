//! Procedural object categories, an analytic ray tracer used as ground
//! truth, and multi-view datasets built from them.

mod dataset;
mod primitive;

pub use dataset::{
    build_dataset, camera_intrinsics, list_scene_dirs, load_category, load_dataset, save_category, save_dataset, split_indices,
    split_views, FrameRecord, SceneDataset, CAMERA_DISTANCE, CAMERA_ELEVATION_DEG, ELEVATION_JITTER_DEG, FOCAL_FACTOR, META_FILE,
};
pub use primitive::Primitive;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{generate_ray, Aabb, CameraIntrinsics, CameraPose, Ray, Vec3};
use crate::render::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Sphere,
    Box,
    Cylinder,
    Torus,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Sphere, Category::Box, Category::Cylinder, Category::Torus];

    pub fn name(self) -> &'static str {
        match self {
            Category::Sphere => "sphere",
            Category::Box => "box",
            Category::Cylinder => "cylinder",
            Category::Torus => "torus",
        }
    }

    fn palette(self) -> [f64; 3] {
        match self {
            Category::Sphere => [0.85, 0.25, 0.2],
            Category::Box => [0.3, 0.5, 0.85],
            Category::Cylinder => [0.85, 0.7, 0.2],
            Category::Torus => [0.75, 0.5, 0.3],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown category {s:?} (expected sphere, box, cylinder or torus)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pattern {
    Stripes,
    Checker,
}

/// Two-color procedural albedo evaluated in object-local coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Texture {
    pub base: [f64; 3],
    pub accent: [f64; 3],
    pub pattern: Pattern,
    pub frequency: f64,
    pub phase: f64,
}

impl Texture {
    /// `local` is the hit point relative to the primitive center, with the
    /// primitive axis as second coordinate.
    pub fn albedo(&self, local: &Vec3) -> [f64; 3] {
        let s = match self.pattern {
            Pattern::Stripes => 0.5 + 0.5 * (self.frequency * local.y + self.phase).sin(),
            Pattern::Checker => {
                let p = (0..3).map(|i| (self.frequency * local[i] + self.phase).sin()).product::<f64>();
                if p > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        std::array::from_fn(|c| self.base[c] * (1.0 - s) + self.accent[c] * s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticScene {
    pub scene_id: String,
    pub category: Category,
    pub primitive: Primitive,
    pub texture: Texture,
    pub light_dir: Vec3,
}

pub const AMBIENT: f64 = 0.2;

impl AnalyticScene {
    /// Lambertian shading with an ambient floor; `None` on a miss.
    pub fn shade(&self, ray: &Ray) -> Option<[f64; 3]> {
        let hit = self.primitive.intersect(ray)?;
        let albedo = self.texture.albedo(&hit.local);
        let lambert = hit.normal.dot(&self.light_dir).max(0.0);
        let k = AMBIENT + (1.0 - AMBIENT) * lambert;
        Some(albedo.map(|a| a * k))
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..=hi)
}

fn tilted_axis(rng: &mut ChaCha8Rng, max_tilt: f64) -> Vec3 {
    let tilt = uniform(rng, 0.0, max_tilt);
    let az = uniform(rng, 0.0, std::f64::consts::TAU);
    Vec3::new(tilt.sin() * az.cos(), tilt.cos(), tilt.sin() * az.sin())
}

fn generate_scene(category: Category, index: usize, seed: u64) -> AnalyticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(seed, &[category as u64, index as u64]));
    let center = Vec3::new(uniform(&mut rng, -0.15, 0.15), uniform(&mut rng, -0.15, 0.15), uniform(&mut rng, -0.15, 0.15));
    let primitive = match category {
        Category::Sphere => Primitive::Sphere {
            center,
            radius: uniform(&mut rng, 0.3, 0.6),
        },
        Category::Box => Primitive::Box {
            center,
            half_extents: Vec3::new(uniform(&mut rng, 0.2, 0.4), uniform(&mut rng, 0.2, 0.4), uniform(&mut rng, 0.2, 0.4)),
        },
        Category::Cylinder => Primitive::Cylinder {
            center,
            axis: tilted_axis(&mut rng, 0.25),
            radius: uniform(&mut rng, 0.2, 0.4),
            half_height: uniform(&mut rng, 0.3, 0.55),
        },
        Category::Torus => Primitive::Torus {
            center,
            axis: tilted_axis(&mut rng, 0.35),
            major: uniform(&mut rng, 0.35, 0.5),
            minor: uniform(&mut rng, 0.1, 0.2),
        },
    };
    let palette = category.palette();
    let base = palette.map(|p| (p + uniform(&mut rng, -0.1, 0.1)).clamp(0.0, 1.0));
    let shade = uniform(&mut rng, 0.3, 0.6);
    let (pattern, freq_range) = match category {
        Category::Box => (Pattern::Checker, (2.0, 3.0)),
        _ => (Pattern::Stripes, (3.0, 6.0)),
    };
    let texture = Texture {
        base,
        accent: base.map(|b| b * shade),
        pattern,
        frequency: uniform(&mut rng, freq_range.0, freq_range.1),
        phase: uniform(&mut rng, 0.0, std::f64::consts::TAU),
    };
    let light = Vec3::new(
        0.4 + uniform(&mut rng, -0.25, 0.25),
        1.0 + uniform(&mut rng, -0.25, 0.25),
        0.6 + uniform(&mut rng, -0.25, 0.25),
    );
    AnalyticScene {
        scene_id: format!("{}_{index:04}", category.name()),
        category,
        primitive,
        texture,
        light_dir: light.normalize(),
    }
}

/// `n_scenes` scenes of one category. Scene `i` depends only on `seed`,
/// the category and `i`.
pub fn generate_category(category: Category, n_scenes: usize, seed: u64) -> Vec<AnalyticScene> {
    (0..n_scenes).map(|i| generate_scene(category, i, seed)).collect()
}

/// Ground-truth image: one ray through each pixel center.
pub fn oracle_render(scene: &AnalyticScene, pose: &CameraPose, intr: &CameraIntrinsics, background: [f64; 3]) -> Image {
    let w = intr.width;
    let mut data = vec![0f32; intr.pixel_count() * 3];
    data.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let ray = generate_ray(x as f64, y as f64, intr, pose);
            let rgb = scene.shade(&ray).unwrap_or(background);
            for c in 0..3 {
                row[x * 3 + c] = rgb[c] as f32;
            }
        }
    });
    Image::new(intr.width, intr.height, data).expect("buffer sized from intrinsics")
}

/// Whether the primitive lies inside `aabb`.
pub fn scene_inside(scene: &AnalyticScene, aabb: &Aabb) -> bool {
    let (lo, hi) = scene.primitive.bounds();
    aabb.contains(&lo) && aabb.contains(&hi)
}
