//! Volume rendering by ray marching through the scene box.

mod image;

pub use image::Image;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{render_rays, FieldModel};
use crate::geometry::{generate_ray, ray_aabb_intersect, Aabb, CameraIntrinsics, CameraPose, Ray};
use crate::real::Real;
use crate::seed::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    pub background: [f64; 3],
    /// Uniform jitter inside each stratum (seeded by the caller).
    pub jitter: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples_per_ray: 64,
            background: [1.0, 1.0, 1.0],
            jitter: true,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray == 0 {
            return Err(Error::InvalidConfig("render: samples_per_ray must be >= 1".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidConfig("render: background must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Stratified sample distances inside the box and their segment lengths.
///
/// Stratum `i` of `[t_near, t_far]` contributes `t_i = t_near + (i + u_i)·Δ`
/// with `u_i = 0.5`, or uniform when a jitter seed is given;
/// `δ_i = t_{i+1} - t_i` and the last `δ = t_far - t_last`.
pub fn sample_ray(ray: &Ray, volume: &Aabb, samples: usize, jitter_seed: Option<u64>) -> Option<(Vec<f64>, Vec<f64>)> {
    let (t_near, t_far) = ray_aabb_intersect(ray, volume)?;
    let step = (t_far - t_near) / samples as f64;
    let mut stream = jitter_seed.map(Stream::new);
    let ts: Vec<f64> = (0..samples)
        .map(|i| {
            let u = stream.as_mut().map_or(0.5, Stream::next_f64);
            t_near + (i as f64 + u) * step
        })
        .collect();
    let deltas = ts
        .iter()
        .enumerate()
        .map(|(i, &t)| ts.get(i + 1).copied().unwrap_or(t_far) - t)
        .collect();
    Some((ts, deltas))
}

/// Quadrature `C = Σ T_i (1 - e^{-σ_i δ_i}) c_i + T_final · background`,
/// `T_i = exp(-Σ_{j<i} σ_j δ_j)`. `colors` is flat (`3` per sample).
/// Returns the color and `T_final`.
pub fn composite<R: Real>(sigmas: &[R], colors: &[R], deltas: &[R], background: [R; 3]) -> Result<([R; 3], R)> {
    check_lengths(sigmas, colors, deltas)?;
    let mut transmittance = R::one();
    let mut rgb = [R::zero(); 3];
    for (i, (&sigma, &delta)) in sigmas.iter().zip(deltas).enumerate() {
        let decay = (-(sigma * delta)).exp();
        let weight = transmittance * (R::one() - decay);
        for ch in 0..3 {
            rgb[ch] += weight * colors[3 * i + ch];
        }
        transmittance *= decay;
    }
    for ch in 0..3 {
        rgb[ch] += transmittance * background[ch];
    }
    Ok((rgb, transmittance))
}

/// Compositing weights `T_i (1 - e^{-σ_i δ_i})` and `T_final`.
pub fn composite_weights<R: Real>(sigmas: &[R], deltas: &[R]) -> (Vec<R>, R) {
    let mut transmittance = R::one();
    let weights = sigmas
        .iter()
        .zip(deltas)
        .map(|(&sigma, &delta)| {
            let decay = (-(sigma * delta)).exp();
            let w = transmittance * (R::one() - decay);
            transmittance *= decay;
            w
        })
        .collect();
    (weights, transmittance)
}

fn check_lengths<R>(sigmas: &[R], colors: &[R], deltas: &[R]) -> Result<()> {
    if deltas.len() != sigmas.len() {
        return Err(Error::LengthMismatch {
            expected: sigmas.len(),
            actual: deltas.len(),
        });
    }
    if colors.len() != 3 * sigmas.len() {
        return Err(Error::LengthMismatch {
            expected: 3 * sigmas.len(),
            actual: colors.len(),
        });
    }
    Ok(())
}

/// Reverse pass of [`composite`]: given `∂L/∂C`, accumulates `∂L/∂σ_i` and
/// `∂L/∂c_i`.
///
/// With `τ_k = σ_k δ_k`: `∂C/∂τ_k = T_{k+1} c_k - Σ_{i>k} w_i c_i - T_final·bg`.
#[allow(clippy::too_many_arguments)]
pub fn composite_backward<R: Real>(
    sigmas: &[R],
    colors: &[R],
    deltas: &[R],
    background: [R; 3],
    d_color: [R; 3],
    d_sigmas: &mut [R],
    d_colors: &mut [R],
) {
    let n = sigmas.len();
    // T after each sample, and weights.
    let mut after = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = R::one();
    for (&sigma, &delta) in sigmas.iter().zip(deltas) {
        let decay = (-(sigma * delta)).exp();
        weights.push(transmittance * (R::one() - decay));
        transmittance *= decay;
        after.push(transmittance);
    }
    // suffix = Σ_{i>k} w_i c_i + T_final·bg, built from the back.
    let mut suffix = [R::zero(); 3];
    for ch in 0..3 {
        suffix[ch] = transmittance * background[ch];
    }
    for k in (0..n).rev() {
        let mut d_tau = R::zero();
        for ch in 0..3 {
            let c = colors[3 * k + ch];
            d_tau += d_color[ch] * (after[k] * c - suffix[ch]);
            d_colors[3 * k + ch] += d_color[ch] * weights[k];
            suffix[ch] += weights[k] * c;
        }
        d_sigmas[k] += d_tau * deltas[k];
    }
}

/// Color of one ray: background on a miss, otherwise stratified samples
/// of the field composited front to back.
pub fn render_pixel<R: Real>(model: &FieldModel, params: &[R], ray: &Ray, cfg: &RenderConfig, jitter_seed: Option<u64>) -> Result<[f64; 3]> {
    model.check_params(params.len())?;
    let rgb = render_rays(model, params, std::slice::from_ref(ray), cfg, jitter_seed)[0];
    Ok(rgb.map(R::to_f64))
}

/// Every pixel's center ray, row-major.
pub fn camera_rays(pose: &CameraPose, intr: &CameraIntrinsics) -> Vec<Ray> {
    (0..intr.height)
        .flat_map(|y| (0..intr.width).map(move |x| generate_ray(x as f64, y as f64, intr, pose)))
        .collect()
}

/// Renders a full image; pixels are processed in parallel chunks on the
/// current rayon pool.
pub fn render_image<R: Real>(
    model: &FieldModel,
    params: &[R],
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    cfg: &RenderConfig,
    jitter_seed: Option<u64>,
) -> Result<Image> {
    model.check_params(params.len())?;
    let rays = camera_rays(pose, intr);
    let colors = render_rays(model, params, &rays, cfg, jitter_seed);
    let data = colors.iter().flat_map(|c| c.map(|v| v.to_f64() as f32)).collect();
    Image::new(intr.width, intr.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::HashGridConfig;
    use crate::field::MlpConfig;
    use crate::geometry::{look_at_pose, Vec3};
    use proptest::prelude::*;

    /// Straightforward reference: explicit exp-of-sum transmittance.
    fn brute_force(sigmas: &[f64], colors: &[f64], deltas: &[f64], bg: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..sigmas.len() {
            let optical: f64 = (0..i).map(|j| sigmas[j] * deltas[j]).sum();
            let t = (-optical).exp();
            let alpha = 1.0 - (-sigmas[i] * deltas[i]).exp();
            for ch in 0..3 {
                out[ch] += t * alpha * colors[3 * i + ch];
            }
        }
        let total: f64 = sigmas.iter().zip(deltas).map(|(s, d)| s * d).sum();
        for ch in 0..3 {
            out[ch] += (-total).exp() * bg[ch];
        }
        out
    }

    #[test]
    fn empty_space_shows_background() {
        let (rgb, t) = composite(&[0.0; 4], &[0.3; 12], &[0.25; 4], [0.1, 0.2, 0.3]).unwrap();
        assert_eq!(rgb, [0.1, 0.2, 0.3]);
        assert_eq!(t, 1.0);
    }

    #[test]
    fn opaque_sample() {
        let (rgb, t) = composite(&[20.0], &[0.2, 0.4, 0.6], &[1.0], [0.0; 3]).unwrap();
        assert!((t - (-20.0f64).exp()).abs() < 1e-20);
        for (a, b) in rgb.iter().zip([0.2, 0.4, 0.6]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn two_sample_quadrature() {
        let (rgb, _) = composite(&[0.5, 1.0], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], &[1.0, 1.0], [0.0; 3]).unwrap();
        assert!((rgb[0] - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!((rgb[1] - (-0.5f64).exp() * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((rgb[0] - 0.39347).abs() < 1e-5);
        assert!((rgb[1] - 0.38340).abs() < 1e-5);
        assert_eq!(rgb[2], 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            composite(&[1.0, 2.0], &[0.0; 6], &[1.0], [0.0; 3]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(composite(&[1.0], &[0.0; 2], &[1.0], [0.0; 3]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let sigmas = [0.3, 1.7, 0.0, 2.2];
        let colors = [0.1, 0.5, 0.9, 0.8, 0.2, 0.4, 0.3, 0.3, 0.3, 0.6, 0.7, 0.1];
        let deltas = [0.2, 0.3, 0.25, 0.1];
        let bg = [1.0, 0.5, 0.0];
        let g = [0.7, -1.3, 0.4];
        let objective = |s: &[f64], c: &[f64]| {
            let (rgb, _) = composite(s, c, &deltas, bg).unwrap();
            (0..3).map(|i| g[i] * rgb[i]).sum::<f64>()
        };
        let mut ds = [0.0; 4];
        let mut dc = [0.0; 12];
        composite_backward(&sigmas, &colors, &deltas, bg, g, &mut ds, &mut dc);
        let h = 1e-6;
        for k in 0..4 {
            let (mut p, mut m) = (sigmas, sigmas);
            p[k] += h;
            m[k] -= h;
            let fd = (objective(&p, &colors) - objective(&m, &colors)) / (2.0 * h);
            assert!((fd - ds[k]).abs() < 1e-8, "sigma {k}: {fd} vs {}", ds[k]);
        }
        for k in 0..12 {
            let (mut p, mut m) = (colors, colors);
            p[k] += h;
            m[k] -= h;
            let fd = (objective(&sigmas, &p) - objective(&sigmas, &m)) / (2.0 * h);
            assert!((fd - dc[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn midpoint_samples() {
        let ray = Ray::new(Vec3::new(0.0, 0.0, 2.0), -Vec3::z());
        let (ts, ds) = sample_ray(&ray, &Aabb::unit_cube(), 4, None).unwrap();
        assert_eq!(ts, vec![1.25, 1.75, 2.25, 2.75]);
        assert_eq!(ds, vec![0.5, 0.5, 0.5, 0.25]);
        assert!(sample_ray(&Ray::new(Vec3::new(0.0, 0.0, 2.0), Vec3::z()), &Aabb::unit_cube(), 4, None).is_none());
        let (jt, _) = sample_ray(&ray, &Aabb::unit_cube(), 4, Some(3)).unwrap();
        for (i, t) in jt.iter().enumerate() {
            assert!(*t >= 1.0 + 0.5 * i as f64 && *t < 1.5 + 0.5 * i as f64);
        }
    }

    fn small_model() -> FieldModel {
        FieldModel::new(
            HashGridConfig { levels: 2, features_per_level: 2, table_size_log2: 8, base_resolution: 4, max_resolution: 8 },
            MlpConfig { density_hidden_layers: 1, density_hidden_width: 8, geo_feature_dim: 3, color_hidden_layers: 1, color_hidden_width: 8, direction_frequencies: 1 },
        )
        .unwrap()
    }

    /// Params whose MLP ignores its input: density `sigma`, raw color `logit`.
    fn constant_params(model: &FieldModel, sigma: f64, logit: f64) -> Vec<f64> {
        let mut p = vec![0.0; model.param_count()];
        let d = model.density_layers().last().unwrap();
        p[d.bias_offset] = sigma.exp_m1().ln();
        let c = model.color_layers().last().unwrap();
        p[c.bias_offset..c.bias_offset + 3].fill(logit);
        p
    }

    #[test]
    fn zero_density_renders_background() {
        let model = small_model();
        let params = constant_params(&model, 1e-300, 0.0);
        let cfg = RenderConfig { background: [0.2, 0.4, 0.6], ..RenderConfig::default() };
        let intr = CameraIntrinsics::new(6, 5, 6.0).unwrap();
        let pose = look_at_pose(Vec3::new(0.0, 1.0, 3.0), Vec3::zeros(), Vec3::y()).unwrap();
        let img = render_image(&model, &params, &pose, &intr, &cfg, None).unwrap();
        for v in img.data().chunks(3) {
            for (a, b) in v.iter().zip([0.2f32, 0.4, 0.6]) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn transmittance_law() {
        let model = small_model();
        let cfg = RenderConfig { samples_per_ray: 256, background: [0.0; 3], jitter: false };
        for s in [0.5, 1.0, 4.0] {
            let params = constant_params(&model, s, 40.0);
            for d in [0.5, 1.0, 2.0] {
                let ray = Ray::new(Vec3::new(0.1, -0.2, -1.0 + d), -Vec3::z());
                let rgb = render_pixel(&model, &params, &ray, &cfg, None).unwrap();
                let expected = 1.0 - (-s * d).exp();
                assert!((rgb[0] - expected).abs() < 1e-3, "s={s} d={d}: {} vs {expected}", rgb[0]);
            }
        }
    }

    #[test]
    fn deterministic_without_jitter_and_one_pixel_image() {
        let model = small_model();
        let params = model.init_params(5).to_f64();
        let cfg = RenderConfig::default();
        let intr = CameraIntrinsics::new(1, 1, 2.0).unwrap();
        let pose = look_at_pose(Vec3::new(0.5, 0.5, 2.5), Vec3::zeros(), Vec3::y()).unwrap();
        let img = render_image(&model, &params, &pose, &intr, &cfg, None).unwrap();
        let ray = generate_ray(0.0, 0.0, &intr, &pose);
        let a = render_pixel(&model, &params, &ray, &cfg, None).unwrap();
        let b = render_pixel(&model, &params, &ray, &cfg, None).unwrap();
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        assert_eq!(img.pixel(0, 0), a.map(|v| v as f32));
    }

    fn inputs(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>, [f64; 3]) {
        let mut s = Stream::new(seed);
        let sigmas = (0..n).map(|_| 10.0 * s.next_f64().powi(3)).collect();
        let colors = (0..3 * n).map(|_| s.next_f64()).collect();
        let deltas = (0..n).map(|_| 0.2 * s.next_f64()).collect();
        (sigmas, colors, deltas, [s.next_f64(), s.next_f64(), s.next_f64()])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn weights_partition_unity(n in 0usize..64, seed in any::<u64>()) {
            let (sigmas, colors, deltas, bg) = inputs(n, seed);
            let (w, t) = composite_weights(&sigmas, &deltas);
            prop_assert!((w.iter().sum::<f64>() + t - 1.0).abs() < 1e-9);
            let (rgb, t2) = composite(&sigmas, &colors, &deltas, bg).unwrap();
            prop_assert_eq!(t, t2);
            let reference = brute_force(&sigmas, &colors, &deltas, bg);
            for ch in 0..3 {
                prop_assert!((rgb[ch] - reference[ch]).abs() < 1e-6);
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&rgb[ch]));
            }
        }

        #[test]
        fn more_density_never_raises_transmittance(n in 1usize..32, seed in any::<u64>(), k in 0usize..32, bump in 0.0f64..5.0) {
            let (mut sigmas, _, deltas, _) = inputs(n, seed);
            let (_, before) = composite_weights(&sigmas, &deltas);
            sigmas[k % n] += bump;
            let (_, after) = composite_weights(&sigmas, &deltas);
            prop_assert!(after <= before);
        }

        #[test]
        fn splitting_a_segment_is_consistent(n in 1usize..32, seed in any::<u64>(), k in 0usize..32) {
            let (sigmas, colors, deltas, bg) = inputs(n, seed);
            let k = k % n;
            let mut s2 = sigmas.clone();
            let mut c2 = colors.clone();
            let mut d2 = deltas.clone();
            s2.insert(k, sigmas[k]);
            d2[k] = deltas[k] / 2.0;
            d2.insert(k, deltas[k] / 2.0);
            for ch in (0..3).rev() {
                c2.insert(3 * k, colors[3 * k + ch]);
            }
            let (a, _) = composite(&sigmas, &colors, &deltas, bg).unwrap();
            let (b, _) = composite(&s2, &c2, &d2, bg).unwrap();
            for ch in 0..3 {
                prop_assert!((a[ch] - b[ch]).abs() < 1e-9);
            }
        }
    }
}
