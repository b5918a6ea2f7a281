//! The radiance field: hash-grid encoding followed by a density MLP and a
//! view-dependent color MLP, with a hand-written reverse pass.
//!
//! Parameter layout (stable for a fixed configuration):
//!
//! 1. hash tables, level-major (see [`crate::encoding`]);
//! 2. density layers in order, each as a row-major `outputs x inputs` weight
//!    block followed by `outputs` biases. Hidden layers use ReLU; the last
//!    layer emits `1 + geo_feature_dim` values (raw density, geometry
//!    features);
//! 3. color layers in the same format. The first takes the geometry
//!    features concatenated with the sinusoidal encoding of the view
//!    direction; the last emits 3 raw color values.
//!
//! `σ = softplus(raw density)`, `rgb = logistic(raw color)`.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{sinusoidal_encode, HashGrid, HashGridConfig, LevelCorners, SinusoidalConfig};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Ray, Vec3};
use crate::real::Real;
use crate::render::{composite, composite_backward, sample_ray, RenderConfig};

/// Hash-table entries are drawn from `U[-TABLE_INIT_RANGE, TABLE_INIT_RANGE]`.
pub const TABLE_INIT_RANGE: f64 = 1e-4;

/// Rays per work unit in batched loss evaluation. Fixed so the reduction
/// order (and hence the bits of the result) does not depend on the thread
/// count.
pub const RAY_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub density_hidden_layers: usize,
    pub density_hidden_width: usize,
    pub geo_feature_dim: usize,
    pub color_hidden_layers: usize,
    pub color_hidden_width: usize,
    pub direction_frequencies: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            density_hidden_layers: 1,
            density_hidden_width: 64,
            geo_feature_dim: 15,
            color_hidden_layers: 2,
            color_hidden_width: 64,
            direction_frequencies: 4,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.density_hidden_width == 0 || self.color_hidden_width == 0 {
            return Err(Error::InvalidConfig("mlp: hidden widths must be >= 1".into()));
        }
        if self.geo_feature_dim == 0 {
            return Err(Error::InvalidConfig("mlp: geo_feature_dim must be >= 1".into()));
        }
        if self.direction_frequencies > 20 {
            return Err(Error::InvalidConfig("mlp: direction_frequencies must be <= 20".into()));
        }
        Ok(())
    }

    pub fn direction_dim(&self) -> usize {
        SinusoidalConfig {
            num_frequencies: self.direction_frequencies,
        }
        .output_dim(3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl DenseLayer {
    fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

fn chain(inputs: usize, hidden: usize, width: usize, outputs: usize, offset: &mut usize) -> Vec<DenseLayer> {
    let mut dims = vec![inputs];
    dims.extend(std::iter::repeat_n(width, hidden));
    dims.push(outputs);
    dims.windows(2)
        .map(|w| {
            let layer = DenseLayer {
                inputs: w[0],
                outputs: w[1],
                weight_offset: *offset,
                bias_offset: *offset + w[0] * w[1],
            };
            *offset += layer.param_count();
            layer
        })
        .collect()
}

/// Flat parameter state θ: every hash-table entry followed by every MLP
/// weight and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(pub Vec<f32>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    /// Bitwise equality (distinguishes `-0.0` from `0.0`, equates NaNs of
    /// the same payload).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Density and color at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldOutput {
    pub sigma: f64,
    pub rgb: [f64; 3],
}

/// Architecture plus parameter layout. Cheap to clone.
#[derive(Clone, Debug)]
pub struct FieldModel {
    grid: HashGrid,
    mlp: MlpConfig,
    volume: Aabb,
    density: Vec<DenseLayer>,
    color: Vec<DenseLayer>,
    table_params: usize,
    total_params: usize,
}

impl FieldModel {
    pub fn new(grid: HashGridConfig, mlp: MlpConfig) -> Result<Self> {
        Self::with_volume(grid, mlp, Aabb::unit_cube())
    }

    pub fn with_volume(grid_cfg: HashGridConfig, mlp: MlpConfig, volume: Aabb) -> Result<Self> {
        mlp.validate()?;
        let grid = HashGrid::new(grid_cfg)?;
        let table_params = grid_cfg.param_count();
        let mut offset = table_params;
        let density = chain(
            grid_cfg.output_dim(),
            mlp.density_hidden_layers,
            mlp.density_hidden_width,
            1 + mlp.geo_feature_dim,
            &mut offset,
        );
        let color = chain(
            mlp.geo_feature_dim + mlp.direction_dim(),
            mlp.color_hidden_layers,
            mlp.color_hidden_width,
            3,
            &mut offset,
        );
        Ok(Self {
            grid,
            mlp,
            volume,
            density,
            color,
            table_params,
            total_params: offset,
        })
    }

    pub fn grid_config(&self) -> &HashGridConfig {
        self.grid.config()
    }

    pub fn grid(&self) -> &HashGrid {
        &self.grid
    }

    pub fn mlp_config(&self) -> &MlpConfig {
        &self.mlp
    }

    pub fn volume(&self) -> &Aabb {
        &self.volume
    }

    pub fn param_count(&self) -> usize {
        self.total_params
    }

    /// Number of leading parameters that are hash-table entries.
    pub fn table_param_count(&self) -> usize {
        self.table_params
    }

    pub fn density_layers(&self) -> &[DenseLayer] {
        &self.density
    }

    pub fn color_layers(&self) -> &[DenseLayer] {
        &self.color
    }

    pub fn check_params(&self, len: usize) -> Result<()> {
        if len != self.total_params {
            return Err(Error::LengthMismatch {
                expected: self.total_params,
                actual: len,
            });
        }
        Ok(())
    }

    /// Random baseline initialization: tables uniform in ±1e-4, weights
    /// uniform in `±1/√fan_in`, biases zero.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; self.total_params];
        for v in &mut params[..self.table_params] {
            *v = rng.gen_range(-TABLE_INIT_RANGE..=TABLE_INIT_RANGE) as f32;
        }
        for layer in self.density.iter().chain(&self.color) {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            let w = &mut params[layer.weight_offset..layer.bias_offset];
            for v in w {
                *v = rng.gen_range(-bound..=bound) as f32;
            }
        }
        ParamVector(params)
    }

    /// Encoded view direction (`2·3·direction_frequencies` values).
    pub fn direction_features<R: Real>(&self, d: &Vec3) -> Vec<R> {
        let cfg = SinusoidalConfig {
            num_frequencies: self.mlp.direction_frequencies,
        };
        sinusoidal_encode(&[d.x, d.y, d.z], &cfg).into_iter().map(R::from_f64).collect()
    }

    /// Position in `[0,1]³` for the encoder; errors outside the volume.
    pub fn normalize_position(&self, x: &Vec3) -> Result<[f64; 3]> {
        let u = self.volume.normalize(x);
        HashGrid::check_domain([u.x, u.y, u.z])
    }

    /// Single-point evaluation.
    pub fn field_forward<R: Real>(&self, x: &Vec3, d: &Vec3, params: &[R]) -> Result<FieldOutput> {
        self.check_params(params.len())?;
        let pos = self.normalize_position(x)?;
        let mut batch = FieldBatch::new(self, 1);
        batch.positions[0] = pos;
        batch.dirs.copy_from_slice(&self.direction_features::<R>(d));
        batch.forward(self, params);
        Ok(FieldOutput {
            sigma: batch.sigma[0].to_f64(),
            rgb: [batch.rgb[0].to_f64(), batch.rgb[1].to_f64(), batch.rgb[2].to_f64()],
        })
    }
}

/// Forward cache for a batch of field queries.
pub struct FieldBatch<R: Real> {
    n: usize,
    /// Normalized positions in `[0,1]³`.
    pub positions: Vec<[f64; 3]>,
    /// Encoded directions, `n x direction_dim`.
    pub dirs: Vec<R>,
    corners: Vec<LevelCorners>,
    /// Inputs to each density layer followed by the raw density output.
    density_acts: Vec<Vec<R>>,
    /// Inputs to each color layer followed by the raw color output.
    color_acts: Vec<Vec<R>>,
    pub sigma: Vec<R>,
    pub rgb: Vec<R>,
}

impl<R: Real> FieldBatch<R> {
    pub fn new(model: &FieldModel, n: usize) -> Self {
        Self {
            n,
            positions: vec![[0.0; 3]; n],
            dirs: vec![R::zero(); n * model.mlp.direction_dim()],
            corners: Vec::new(),
            density_acts: Vec::new(),
            color_acts: Vec::new(),
            sigma: Vec::new(),
            rgb: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&mut self, model: &FieldModel, params: &[R]) {
        let n = self.n;
        let levels = model.grid.config().levels;
        let enc_dim = model.grid.config().output_dim();
        let geo = model.mlp.geo_feature_dim;
        let dir_dim = model.mlp.direction_dim();

        self.corners.clear();
        self.corners.resize(n * levels, [(0, 0.0); 8]);
        let mut enc = vec![R::zero(); n * enc_dim];
        let tables = &params[..model.table_params];
        for i in 0..n {
            let corners = &mut self.corners[i * levels..(i + 1) * levels];
            model.grid.corners(self.positions[i], corners);
            model.grid.gather(corners, tables, &mut enc[i * enc_dim..(i + 1) * enc_dim]);
        }

        self.density_acts = forward_chain(&model.density, params, enc, n);
        let raw = self.density_acts.last().expect("density chain is nonempty");
        let stride = 1 + geo;
        let mut color_in = vec![R::zero(); n * (geo + dir_dim)];
        self.sigma = Vec::with_capacity(n);
        for i in 0..n {
            self.sigma.push(raw[i * stride].softplus());
            let row = &mut color_in[i * (geo + dir_dim)..(i + 1) * (geo + dir_dim)];
            row[..geo].copy_from_slice(&raw[i * stride + 1..(i + 1) * stride]);
            row[geo..].copy_from_slice(&self.dirs[i * dir_dim..(i + 1) * dir_dim]);
        }
        self.color_acts = forward_chain(&model.color, params, color_in, n);
        self.rgb = self.color_acts.last().expect("color chain is nonempty").iter().map(|v| v.sigmoid()).collect();
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂σ` (`n`) and `∂L/∂rgb`
    /// (`n x 3`). Must follow [`FieldBatch::forward`] with the same params.
    pub fn backward(&self, model: &FieldModel, params: &[R], d_sigma: &[R], d_rgb: &[R], grad: &mut [R]) {
        let n = self.n;
        let geo = model.mlp.geo_feature_dim;
        let dir_dim = model.mlp.direction_dim();
        let levels = model.grid.config().levels;
        let enc_dim = model.grid.config().output_dim();

        let d_raw_rgb: Vec<R> = d_rgb
            .iter()
            .zip(&self.rgb)
            .map(|(&g, &s)| g * s * (R::one() - s))
            .collect();
        let d_color_in = backward_chain(&model.color, params, &self.color_acts, d_raw_rgb, grad);

        let raw = self.density_acts.last().expect("density chain is nonempty");
        let stride = 1 + geo;
        let mut d_raw_density = vec![R::zero(); n * stride];
        for i in 0..n {
            d_raw_density[i * stride] = d_sigma[i] * raw[i * stride].sigmoid();
            d_raw_density[i * stride + 1..(i + 1) * stride]
                .copy_from_slice(&d_color_in[i * (geo + dir_dim)..i * (geo + dir_dim) + geo]);
        }
        let d_enc = backward_chain(&model.density, params, &self.density_acts, d_raw_density, grad);

        let table_grad = &mut grad[..model.table_params];
        for i in 0..n {
            model.grid.scatter(
                &self.corners[i * levels..(i + 1) * levels],
                &d_enc[i * enc_dim..(i + 1) * enc_dim],
                table_grad,
            );
        }
    }
}

/// Returns `[input, act_1, ..., raw_output]`; ReLU on all but the last layer.
fn forward_chain<R: Real>(layers: &[DenseLayer], params: &[R], input: Vec<R>, n: usize) -> Vec<Vec<R>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input);
    for (idx, layer) in layers.iter().enumerate() {
        let x = acts.last().expect("seeded with input");
        let mut y = vec![R::zero(); n * layer.outputs];
        let bias = &params[layer.bias_offset..layer.bias_offset + layer.outputs];
        for row in y.chunks_exact_mut(layer.outputs) {
            row.copy_from_slice(bias);
        }
        let w = &params[layer.weight_offset..layer.bias_offset];
        // y (n x out) += x (n x in) · Wᵀ, W stored out x in row-major.
        R::gemm(n, layer.inputs, layer.outputs, R::one(), x, layer.inputs, 1, w, 1, layer.inputs, R::one(), &mut y, layer.outputs, 1);
        if idx + 1 < layers.len() {
            y.iter_mut().for_each(|v| *v = v.relu());
        }
        acts.push(y);
    }
    acts
}

/// Backpropagates `d_out` (gradient w.r.t. the raw output) and returns the
/// gradient w.r.t. the chain input. Weight and bias gradients are added to
/// `grad`.
fn backward_chain<R: Real>(layers: &[DenseLayer], params: &[R], acts: &[Vec<R>], d_out: Vec<R>, grad: &mut [R]) -> Vec<R> {
    let mut delta = d_out;
    for (idx, layer) in layers.iter().enumerate().rev() {
        let x = &acts[idx];
        let n = x.len() / layer.inputs;
        {
            let (gw, gb) = grad[layer.weight_offset..layer.bias_offset + layer.outputs].split_at_mut(layer.inputs * layer.outputs);
            // gW (out x in) += deltaᵀ (out x n) · x (n x in)
            R::gemm(layer.outputs, n, layer.inputs, R::one(), &delta, 1, layer.outputs, x, layer.inputs, 1, R::one(), gw, layer.inputs, 1);
            for row in delta.chunks_exact(layer.outputs) {
                for (b, &d) in gb.iter_mut().zip(row) {
                    *b += d;
                }
            }
        }
        let w = &params[layer.weight_offset..layer.bias_offset];
        let mut d_in = vec![R::zero(); n * layer.inputs];
        // d_in (n x in) = delta (n x out) · W (out x in)
        R::gemm(n, layer.outputs, layer.inputs, R::one(), &delta, layer.outputs, 1, w, layer.inputs, 1, R::zero(), &mut d_in, layer.inputs, 1);
        if idx > 0 {
            // x is the post-ReLU output of the previous layer.
            for (d, &a) in d_in.iter_mut().zip(x) {
                if !(a > R::zero()) {
                    *d = R::zero();
                }
            }
        }
        delta = d_in;
    }
    delta
}

/// One supervised pixel ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayTarget {
    pub ray: Ray,
    pub rgb: [f64; 3],
}

/// Per-ray sample layout inside a chunk.
struct ChunkSamples {
    /// `(first sample, sample count)` per ray; count 0 for rays that miss.
    spans: Vec<(usize, usize)>,
    deltas: Vec<f64>,
}

fn build_samples<R: Real>(
    model: &FieldModel,
    rays: &[Ray],
    cfg: &RenderConfig,
    jitter_seed: Option<u64>,
    first_ray_index: usize,
) -> (FieldBatch<R>, ChunkSamples) {
    let dir_dim = model.mlp.direction_dim();
    let mut positions = Vec::new();
    let mut dirs = Vec::new();
    let mut spans = Vec::with_capacity(rays.len());
    let mut deltas = Vec::new();
    for (i, ray) in rays.iter().enumerate() {
        let jitter = jitter_seed.filter(|_| cfg.jitter).map(|s| crate::seed::derive(s, &[first_ray_index as u64 + i as u64]));
        match sample_ray(ray, model.volume(), cfg.samples_per_ray, jitter) {
            Some((ts, ds)) => {
                spans.push((positions.len(), ts.len()));
                let dir_feat = model.direction_features::<R>(&ray.direction);
                for &t in &ts {
                    let u = model.volume.normalize(&ray.at(t));
                    positions.push([u.x.clamp(0.0, 1.0), u.y.clamp(0.0, 1.0), u.z.clamp(0.0, 1.0)]);
                    dirs.extend_from_slice(&dir_feat);
                }
                deltas.extend(ds);
            }
            None => spans.push((positions.len(), 0)),
        }
    }
    let mut batch = FieldBatch::new(model, positions.len());
    batch.positions = positions;
    debug_assert_eq!(dirs.len(), batch.len() * dir_dim);
    batch.dirs = dirs;
    (batch, ChunkSamples { spans, deltas })
}

fn chunk_colors<R: Real>(batch: &FieldBatch<R>, samples: &ChunkSamples, background: [R; 3]) -> Vec<([R; 3], R)> {
    samples
        .spans
        .iter()
        .map(|&(start, count)| {
            if count == 0 {
                return (background, R::one());
            }
            let deltas: Vec<R> = samples.deltas[start..start + count].iter().map(|&d| R::from_f64(d)).collect();
            composite(
                &batch.sigma[start..start + count],
                &batch.rgb[start * 3..(start + count) * 3],
                &deltas,
                background,
            )
            .expect("sample buffers have matching lengths")
        })
        .collect()
}

fn background<R: Real>(cfg: &RenderConfig) -> [R; 3] {
    cfg.background.map(R::from_f64)
}

/// Renders a set of rays (forward only). Chunks are processed in parallel
/// on the current rayon pool.
pub fn render_rays<R: Real>(model: &FieldModel, params: &[R], rays: &[Ray], cfg: &RenderConfig, jitter_seed: Option<u64>) -> Vec<[R; 3]> {
    rays.par_chunks(RAY_CHUNK)
        .enumerate()
        .flat_map_iter(|(c, chunk)| {
            let (mut batch, samples) = build_samples::<R>(model, chunk, cfg, jitter_seed, c * RAY_CHUNK);
            batch.forward(model, params);
            chunk_colors(&batch, &samples, background(cfg)).into_iter().map(|(rgb, _)| rgb)
        })
        .collect()
}

/// Mean squared error over batch and channels, and its exact gradient with
/// respect to every parameter. `jitter_seed` of `None` uses stratum
/// midpoints.
pub fn loss_and_gradient<R: Real>(
    model: &FieldModel,
    params: &[R],
    batch: &[RayTarget],
    cfg: &RenderConfig,
    jitter_seed: Option<u64>,
) -> Result<(R, Vec<R>)> {
    model.check_params(params.len())?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    let scale = R::from_f64(2.0 / (3.0 * batch.len() as f64));
    let partials: Vec<(R, Vec<R>)> = batch
        .par_chunks(RAY_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let rays: Vec<Ray> = chunk.iter().map(|rt| rt.ray).collect();
            let (mut fb, samples) = build_samples::<R>(model, &rays, cfg, jitter_seed, c * RAY_CHUNK);
            fb.forward(model, params);
            let colors = chunk_colors(&fb, &samples, background(cfg));

            let mut sse = R::zero();
            let mut d_sigma = vec![R::zero(); fb.len()];
            let mut d_rgb = vec![R::zero(); fb.len() * 3];
            for ((rt, &(start, count)), (rgb, _)) in chunk.iter().zip(&samples.spans).zip(&colors) {
                let mut d_color = [R::zero(); 3];
                for ch in 0..3 {
                    let diff = rgb[ch] - R::from_f64(rt.rgb[ch]);
                    sse += diff * diff;
                    d_color[ch] = scale * diff;
                }
                if count == 0 {
                    continue;
                }
                let deltas: Vec<R> = samples.deltas[start..start + count].iter().map(|&d| R::from_f64(d)).collect();
                composite_backward(
                    &fb.sigma[start..start + count],
                    &fb.rgb[start * 3..(start + count) * 3],
                    &deltas,
                    background(cfg),
                    d_color,
                    &mut d_sigma[start..start + count],
                    &mut d_rgb[start * 3..(start + count) * 3],
                );
            }
            let mut grad = vec![R::zero(); params.len()];
            fb.backward(model, params, &d_sigma, &d_rgb, &mut grad);
            (sse, grad)
        })
        .collect();

    let mut iter = partials.into_iter();
    let (mut sse, mut grad) = iter.next().expect("batch is nonempty");
    for (s, g) in iter {
        sse += s;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((sse / R::from_f64(3.0 * batch.len() as f64), grad))
}

/// Loss only, through the same sampling path as [`loss_and_gradient`].
pub fn loss<R: Real>(model: &FieldModel, params: &[R], batch: &[RayTarget], cfg: &RenderConfig, jitter_seed: Option<u64>) -> Result<R> {
    model.check_params(params.len())?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    let rays: Vec<Ray> = batch.iter().map(|rt| rt.ray).collect();
    let colors = render_rays(model, params, &rays, cfg, jitter_seed);
    let mut sse = R::zero();
    for (rt, rgb) in batch.iter().zip(&colors) {
        for ch in 0..3 {
            let diff = rgb[ch] - R::from_f64(rt.rgb[ch]);
            sse += diff * diff;
        }
    }
    Ok(sse / R::from_f64(3.0 * batch.len() as f64))
}
