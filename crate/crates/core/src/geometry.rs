//! Pinhole cameras, camera-to-world poses, ray generation and box clipping.
//!
//! Convention: right-handed world, the camera looks down its local `-z`
//! axis, `+y` is up in camera space and image rows grow downward. Pixel
//! centers sit at `+0.5`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    /// Centered principal point.
    pub fn new(width: usize, height: usize, focal: f64) -> Result<Self> {
        let intr = Self {
            width,
            height,
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("image dimensions must be positive".into()));
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::InvalidConfig(format!("focal must be positive, got {}", self.focal)));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Camera-to-world rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Checks `RᵀR = I` and `det R = 1` within `tol`.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        (rtr - Matrix3::identity()).abs().max() <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Viewing direction in world space (the camera's `-z` axis).
    pub fn forward(&self) -> Vec3 {
        -self.rotation.column(2).into_owned()
    }

    /// 4x4 row-major camera-to-world matrix.
    pub fn to_matrix(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_matrix(m: &[f64]) -> Result<Self> {
        if m.len() != 16 {
            return Err(Error::LengthMismatch {
                expected: 16,
                actual: m.len(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("pose matrix has non-finite entries".into()));
        }
        let pose = Self {
            rotation: Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            translation: Vec3::new(m[3], m[7], m[11]),
        };
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::InvalidConfig("pose matrix bottom row must be 0 0 0 1".into()));
        }
        if !pose.is_rigid(1e-6) {
            return Err(Error::InvalidConfig("pose rotation is not orthonormal".into()));
        }
        Ok(pose)
    }

    /// Projects a world point to continuous pixel coordinates. `None` when
    /// the point is not in front of the camera.
    pub fn project(&self, intr: &CameraIntrinsics, p: &Vec3) -> Option<(f64, f64)> {
        let pc = self.rotation.transpose() * (p - self.translation);
        if pc.z >= 0.0 {
            return None;
        }
        let depth = -pc.z;
        Some((intr.cx + intr.focal * pc.x / depth, intr.cy - intr.focal * pc.y / depth))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Default for Aabb {
    fn default() -> Self {
        Self::unit_cube()
    }
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).all(|i| min[i] < max[i]) {
            Ok(Self { min, max })
        } else {
            Err(Error::InvalidConfig("box min must be below max on every axis".into()))
        }
    }

    /// The scene volume `[-1, 1]³`.
    pub fn unit_cube() -> Self {
        Self {
            min: Vec3::repeat(-1.0),
            max: Vec3::repeat(1.0),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Maps a point of the box to `[0, 1]³`.
    pub fn normalize(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            (p.x - self.min.x) / (self.max.x - self.min.x),
            (p.y - self.min.y) / (self.max.y - self.min.y),
            (p.z - self.min.z) / (self.max.z - self.min.z),
        )
    }
}

pub fn look_at_pose(eye: Vec3, target: Vec3, up: Vec3) -> Result<CameraPose> {
    let view = target - eye;
    let dist = view.norm();
    if dist < 1e-9 {
        return Err(Error::DegenerateDirection("eye and target coincide"));
    }
    let forward = view / dist;
    let right = forward.cross(&up);
    let up_norm = up.norm();
    if up_norm < 1e-12 || right.norm() < 1e-9 * up_norm {
        return Err(Error::DegenerateDirection("up vector parallel to the viewing axis"));
    }
    let right = right.normalize();
    let true_up = right.cross(&forward);
    Ok(CameraPose {
        rotation: Matrix3::from_columns(&[right, true_up, -forward]),
        translation: eye,
    })
}

/// `n` cameras on a horizontal circle around `target`, azimuths `2πi/n`,
/// eye offset `(r cos φ, height, r sin φ)`, world `+y` up.
pub fn circle_poses(n: usize, radius: f64, height: f64, target: Vec3) -> Result<Vec<CameraPose>> {
    if n == 0 {
        return Err(Error::InvalidConfig("circle needs at least one pose".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig(format!("circle radius must be positive, got {radius}")));
    }
    (0..n)
        .map(|i| {
            let phi = std::f64::consts::TAU * i as f64 / n as f64;
            orbit_pose(phi, height, radius, target)
        })
        .collect()
}

/// Camera at azimuth `phi`, vertical offset `height`, horizontal distance
/// `radius` from `target`, looking at it.
pub fn orbit_pose(phi: f64, height: f64, radius: f64, target: Vec3) -> Result<CameraPose> {
    let eye = target + Vec3::new(radius * phi.cos(), height, radius * phi.sin());
    look_at_pose(eye, target, Vec3::y())
}

pub fn generate_ray(px: f64, py: f64, intr: &CameraIntrinsics, pose: &CameraPose) -> Ray {
    let local = Vec3::new(
        (px + 0.5 - intr.cx) / intr.focal,
        -(py + 0.5 - intr.cy) / intr.focal,
        -1.0,
    );
    Ray::new(pose.translation, pose.rotation * local)
}

/// Slab test. Returns `(t_near, t_far)` clamped to `t >= 0`, or `None` on a
/// miss or when the box lies behind the origin.
pub fn ray_aabb_intersect(ray: &Ray, aabb: &Aabb) -> Option<(f64, f64)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        let o = ray.origin[axis];
        let d = ray.direction[axis];
        if d.abs() < 1e-15 {
            if o < aabb.min[axis] || o > aabb.max[axis] {
                return None;
            }
            continue;
        }
        let t0 = (aabb.min[axis] - o) / d;
        let t1 = (aabb.max[axis] - o) / d;
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        t_near = t_near.max(lo);
        t_far = t_far.min(hi);
    }
    let t_near = t_near.max(0.0);
    (t_far > t_near).then_some((t_near, t_far))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn look_at_axis_aligned_is_identity() {
        let pose = look_at_pose(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y()).unwrap();
        assert_abs_diff_eq!(pose.rotation, Matrix3::identity(), epsilon = 1e-15);
        assert_eq!(pose.translation, Vec3::new(0.0, 0.0, 2.0));
        assert_abs_diff_eq!(pose.forward(), Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-15);
    }

    #[test]
    fn look_at_from_plus_x() {
        let pose = look_at_pose(Vec3::new(2.0, 0.0, 0.0), Vec3::zeros(), Vec3::y()).unwrap();
        assert_abs_diff_eq!(pose.forward(), Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn look_at_diagonal() {
        let pose = look_at_pose(Vec3::new(1.0, 1.0, 1.0), Vec3::zeros(), Vec3::y()).unwrap();
        assert!(pose.is_rigid(1e-12));
        let s = 1.0 / 3f64.sqrt();
        assert_abs_diff_eq!(pose.forward(), Vec3::new(-s, -s, -s), epsilon = 1e-12);
    }

    #[test]
    fn look_at_rejects_degenerate_inputs() {
        assert!(matches!(
            look_at_pose(Vec3::zeros(), Vec3::zeros(), Vec3::y()),
            Err(Error::DegenerateDirection(_))
        ));
        assert!(matches!(
            look_at_pose(Vec3::new(0.0, 3.0, 0.0), Vec3::zeros(), Vec3::y()),
            Err(Error::DegenerateDirection(_))
        ));
    }

    #[test]
    fn circle_of_four() {
        let poses = circle_poses(4, 2.0, 0.0, Vec3::zeros()).unwrap();
        let expected = [
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::new(-2.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, -2.0),
        ];
        for (pose, eye) in poses.iter().zip(expected) {
            assert_abs_diff_eq!(pose.translation, eye, epsilon = 1e-12);
        }
        let single = circle_poses(1, 2.0, 0.0, Vec3::zeros()).unwrap();
        assert_eq!(single.len(), 1);
        assert_abs_diff_eq!(single[0].translation, Vec3::new(2.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn circle_distances_are_equal() {
        let target = Vec3::new(0.1, -0.2, 0.3);
        let poses = circle_poses(100, 2.5, 0.5, target).unwrap();
        let expected = (2.5f64 * 2.5 + 0.5 * 0.5).sqrt();
        for pose in &poses {
            assert!(((pose.translation - target).norm() - expected).abs() < 1e-12);
            assert!(pose.is_rigid(1e-12));
        }
    }

    #[test]
    fn circle_rejects_bad_arguments() {
        assert!(circle_poses(0, 1.0, 0.0, Vec3::zeros()).is_err());
        assert!(circle_poses(3, 0.0, 0.0, Vec3::zeros()).is_err());
    }

    #[test]
    fn principal_ray_and_mirror_symmetry() {
        let intr = CameraIntrinsics::new(128, 128, 64.0).unwrap();
        let pose = CameraPose::identity();
        let center = generate_ray(intr.cx - 0.5, intr.cy - 0.5, &intr, &pose);
        assert_abs_diff_eq!(center.direction, Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-15);

        let a = generate_ray(10.0, 20.0, &intr, &pose);
        let b = generate_ray(2.0 * intr.cx - 10.0 - 1.0, 20.0, &intr, &pose);
        assert_abs_diff_eq!(a.direction.x, -b.direction.x, epsilon = 1e-15);
        assert_abs_diff_eq!(a.direction.y, b.direction.y, epsilon = 1e-15);
    }

    #[test]
    fn corner_pixel_ray() {
        let intr = CameraIntrinsics::new(128, 128, 64.0).unwrap();
        let ray = generate_ray(0.0, 0.0, &intr, &CameraPose::identity());
        let expected = Vec3::new(-63.5 / 64.0, 63.5 / 64.0, -1.0).normalize();
        assert_abs_diff_eq!(ray.direction, expected, epsilon = 1e-15);
        assert_eq!(ray.origin, Vec3::zeros());
    }

    #[test]
    fn aabb_examples() {
        let cube = Aabb::unit_cube();
        let hit = ray_aabb_intersect(&Ray::new(Vec3::new(0.0, 0.0, 2.0), -Vec3::z()), &cube).unwrap();
        assert_abs_diff_eq!(hit.0, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hit.1, 3.0, epsilon = 1e-15);
        assert!(ray_aabb_intersect(&Ray::new(Vec3::new(0.0, 0.0, 2.0), Vec3::z()), &cube).is_none());
        let diag = Ray::new(Vec3::repeat(2.0), -Vec3::repeat(1.0));
        let (n, f) = ray_aabb_intersect(&diag, &cube).unwrap();
        assert_abs_diff_eq!(n, 3f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(f, 3.0 * 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn origin_inside_box_clamps_near_to_zero() {
        let (n, f) = ray_aabb_intersect(&Ray::new(Vec3::new(0.0, 0.0, 0.5), -Vec3::z()), &Aabb::unit_cube()).unwrap();
        assert_eq!(n, 0.0);
        assert_abs_diff_eq!(f, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn pose_matrix_round_trip_and_validation() {
        let pose = look_at_pose(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), Vec3::y()).unwrap();
        let back = CameraPose::from_matrix(&pose.to_matrix()).unwrap();
        assert_eq!(pose, back);
        assert!(matches!(
            CameraPose::from_matrix(&pose.to_matrix()[..15]),
            Err(Error::LengthMismatch { expected: 16, actual: 15 })
        ));
    }

    fn unit(x: f64, y: f64, z: f64) -> Option<Vec3> {
        let v = Vec3::new(x, y, z);
        (v.norm() > 1e-3).then(|| v.normalize())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn ray_reprojects_to_its_pixel(
            px in 0.0f64..127.99, py in 0.0f64..95.99, t in 0.01f64..50.0,
            az in 0.0f64..std::f64::consts::TAU, h in -1.5f64..1.5,
        ) {
            let intr = CameraIntrinsics::new(128, 96, 110.0).unwrap();
            let pose = orbit_pose(az, h, 2.5, Vec3::new(0.1, 0.0, -0.1)).unwrap();
            let ray = generate_ray(px, py, &intr, &pose);
            prop_assert!((ray.direction.norm() - 1.0).abs() < 1e-9);
            let (u, v) = pose.project(&intr, &ray.at(t)).unwrap();
            prop_assert!((u - (px + 0.5)).abs() < 1e-4);
            prop_assert!((v - (py + 0.5)).abs() < 1e-4);
        }

        #[test]
        fn circle_is_rotation_invariant(n in 1usize..40, r in 0.1f64..4.0, h in -2.0f64..2.0,
                                        tx in -1.0f64..1.0, tz in -1.0f64..1.0) {
            let target = Vec3::new(tx, 0.3, tz);
            let eyes: Vec<Vec3> = circle_poses(n, r, h, target).unwrap().iter().map(|p| p.translation).collect();
            let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), std::f64::consts::TAU / n as f64);
            for eye in &eyes {
                let moved = target + rot * (eye - target);
                prop_assert!(eyes.iter().any(|e| (e - moved).norm() < 1e-9));
            }
        }

        #[test]
        fn slab_test_agrees_with_marching(
            ox in -3.0f64..3.0, oy in -3.0f64..3.0, oz in -3.0f64..3.0,
            dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in -1.0f64..1.0,
        ) {
            let Some(dir) = unit(dx, dy, dz) else { return Ok(()) };
            let ray = Ray { origin: Vec3::new(ox, oy, oz), direction: dir };
            let cube = Aabb::unit_cube();
            // Farthest possible exit from any origin in [-3,3]^3 is < 10.
            let steps = 10_000;
            let marched = (0..steps).any(|i| cube.contains(&ray.at(10.0 * (i as f64 + 0.5) / steps as f64)));
            let hit = ray_aabb_intersect(&ray, &cube);
            // Chords shorter than the march step can be missed by the marcher.
            if let Some((n, f)) = hit {
                if f - n > 2e-3 {
                    prop_assert!(marched);
                }
            } else {
                prop_assert!(!marched);
            }
        }
    }
}
