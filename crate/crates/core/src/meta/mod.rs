//! Per-scene fitting (inner loop) and the outer-loop rules that learn a
//! shared initialization: Reptile, first-order MAML and second-order MAML.

mod task;
pub mod toy;
mod unroll;

pub use task::{MetaTask, SceneTask, Subset};
pub use unroll::{unrolled_meta_gradient, unrolled_objective};

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldModel, ParamVector};
use crate::metrics::{psnr, ssim, SsimConfig};
use crate::optim::{Optimizer, OptimizerKind, RateGroups};
use crate::render::{render_image, RenderConfig};
use crate::scenes::{split_indices, SceneDataset};
use crate::seed::derive;

/// Upper bound on unrolled inner steps for the second-order rule.
pub const MAX_UNROLLED_STEPS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerLoopConfig {
    pub steps: usize,
    pub rays_per_batch: usize,
    /// Step size for hash-table entries.
    pub learning_rate: f64,
    /// MLP step size relative to `learning_rate`.
    pub mlp_lr_scale: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for InnerLoopConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            rays_per_batch: 1024,
            learning_rate: 1e-2,
            mlp_lr_scale: 0.1,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-15,
        }
    }
}

impl InnerLoopConfig {
    /// The meta-training default with a different step budget.
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("inner loop: {m}")));
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.rays_per_batch == 0 {
            return bad("rays_per_batch must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(self.mlp_lr_scale >= 0.0 && self.mlp_lr_scale.is_finite()) {
            return bad(format!("mlp_lr_scale must be finite and non-negative, got {}", self.mlp_lr_scale));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        Ok(())
    }

    pub fn rates(&self, table_params: usize) -> RateGroups {
        RateGroups {
            split: table_params,
            table_rate: self.learning_rate,
            mlp_rate: self.learning_rate * self.mlp_lr_scale,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Reptile,
    Fomaml,
    Maml2,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Reptile => "reptile",
            Algorithm::Fomaml => "fomaml",
            Algorithm::Maml2 => "maml2",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "reptile" => Ok(Algorithm::Reptile),
            "fomaml" => Ok(Algorithm::Fomaml),
            "maml2" => Ok(Algorithm::Maml2),
            _ => Err(format!("unknown algorithm {s:?} (expected reptile, fomaml or maml2)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuterLoopConfig {
    pub algorithm: Algorithm,
    pub outer_iterations: usize,
    pub scenes_per_iteration: usize,
    /// α: outer step size.
    pub outer_rate: f64,
    /// β: plain gradient-descent step of the unrolled inner loop (second
    /// order only); the MLP group uses `β · mlp_lr_scale`.
    pub second_order_rate: f64,
    pub checkpoint_every: usize,
    /// Largest model the second-order rule accepts.
    pub second_order_param_cap: usize,
}

impl Default for OuterLoopConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Reptile,
            outer_iterations: 64,
            scenes_per_iteration: 5,
            outer_rate: 0.2,
            second_order_rate: 0.1,
            checkpoint_every: 8,
            second_order_param_cap: 100_000,
        }
    }
}

impl OuterLoopConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("outer loop: {m}")));
        if self.scenes_per_iteration == 0 {
            return bad("scenes_per_iteration must be >= 1".into());
        }
        if !(self.outer_rate > 0.0 && self.outer_rate.is_finite()) {
            return bad(format!("outer_rate must be positive, got {}", self.outer_rate));
        }
        if self.algorithm == Algorithm::Maml2 && !(self.second_order_rate > 0.0 && self.second_order_rate.is_finite()) {
            return bad(format!("second_order_rate must be positive, got {}", self.second_order_rate));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be >= 1".into());
        }
        Ok(())
    }

    /// Checks that the second-order rule can run on a model of this size
    /// with this many inner steps.
    pub fn check_second_order(&self, param_count: usize, inner_steps: usize) -> Result<()> {
        if self.algorithm != Algorithm::Maml2 {
            return Ok(());
        }
        if inner_steps > MAX_UNROLLED_STEPS {
            return Err(Error::TooManySteps {
                steps: inner_steps,
                max: MAX_UNROLLED_STEPS,
            });
        }
        if param_count > self.second_order_param_cap {
            return Err(Error::ModelTooLarge {
                params: param_count,
                cap: self.second_order_param_cap,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptResult {
    pub theta: ParamVector,
    /// Minibatch loss before each update.
    pub loss_curve: Vec<f64>,
    pub wall_time: f64,
}

/// Runs `cfg.steps` optimizer steps from `theta0` on minibatches of
/// `subset`. Step `t` draws its minibatch from `derive(seed, [t])`.
pub fn inner_fit_subset<T: MetaTask + ?Sized>(
    task: &T,
    theta0: &ParamVector,
    cfg: &InnerLoopConfig,
    subset: Subset,
    seed: u64,
) -> Result<AdaptResult> {
    cfg.validate()?;
    if theta0.len() != task.param_count() {
        return Err(Error::LengthMismatch {
            expected: task.param_count(),
            actual: theta0.len(),
        });
    }
    let start = Instant::now();
    let rates = cfg.rates(task.table_param_count());
    let mut theta = theta0.clone();
    let mut opt = Optimizer::new(cfg.optimizer, theta.len(), cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, grad) = task.gradient(theta.as_slice(), subset, cfg.rays_per_batch, derive(seed, &[step as u64]))?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        opt.step(theta.as_mut_slice(), &grad, &rates);
        loss_curve.push(loss);
    }
    Ok(AdaptResult {
        theta,
        loss_curve,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Inner loop on all of the task's data.
pub fn inner_fit<T: MetaTask + ?Sized>(task: &T, theta0: &ParamVector, cfg: &InnerLoopConfig, seed: u64) -> Result<AdaptResult> {
    inner_fit_subset(task, theta0, cfg, Subset::All, seed)
}

fn check_lengths<V: AsRef<[f32]>>(theta: &ParamVector, others: &[V]) -> Result<()> {
    if others.is_empty() {
        return Err(Error::EmptyInput("outer step needs at least one scene"));
    }
    for o in others {
        if o.as_ref().len() != theta.len() {
            return Err(Error::LengthMismatch {
                expected: theta.len(),
                actual: o.as_ref().len(),
            });
        }
    }
    Ok(())
}

/// Per-coordinate mean of `value(j, i)` over `j < k`. The k terms are
/// sorted before summation, so the result does not depend on their order.
fn order_free_mean(n: usize, k: usize, value: impl Fn(usize, usize) -> f64 + Sync) -> Vec<f64> {
    (0..n)
        .into_par_iter()
        .with_min_len(4096)
        .map_init(
            || Vec::with_capacity(k),
            |terms, i| {
                terms.clear();
                terms.extend((0..k).map(|j| value(j, i)));
                terms.sort_by(f64::total_cmp);
                terms.iter().sum::<f64>() / k as f64
            },
        )
        .collect()
}

/// `θ + α·mean_j(θ_j - θ)`.
pub fn reptile_step<V: AsRef<[f32]> + Sync>(theta: &ParamVector, adapted: &[V], alpha: f64) -> Result<ParamVector> {
    check_lengths(theta, adapted)?;
    let t = theta.as_slice();
    let mean = order_free_mean(t.len(), adapted.len(), |j, i| adapted[j].as_ref()[i] as f64 - t[i] as f64);
    Ok(ParamVector(t.iter().zip(mean).map(|(&p, d)| (p as f64 + alpha * d) as f32).collect()))
}

/// `θ - α·mean_j g_j`, with `g_j` the query gradient at scene j's adapted
/// parameters.
pub fn fomaml_step<V: AsRef<[f32]> + Sync>(theta: &ParamVector, gradients: &[V], alpha: f64) -> Result<ParamVector> {
    check_lengths(theta, gradients)?;
    let t = theta.as_slice();
    let mean = order_free_mean(t.len(), gradients.len(), |j, i| gradients[j].as_ref()[i] as f64);
    Ok(ParamVector(t.iter().zip(mean).map(|(&p, g)| (p as f64 - alpha * g) as f32).collect()))
}

/// `θ - α·mean_j G_j` for exact (double precision) meta-gradients.
pub fn second_order_step(theta: &ParamVector, meta_gradients: &[Vec<f64>], alpha: f64) -> Result<ParamVector> {
    if meta_gradients.is_empty() {
        return Err(Error::EmptyInput("outer step needs at least one scene"));
    }
    if let Some(g) = meta_gradients.iter().find(|g| g.len() != theta.len()) {
        return Err(Error::LengthMismatch {
            expected: theta.len(),
            actual: g.len(),
        });
    }
    let t = theta.as_slice();
    let mean = order_free_mean(t.len(), meta_gradients.len(), |j, i| meta_gradients[j][i]);
    Ok(ParamVector(t.iter().zip(mean).map(|(&p, g)| (p as f64 - alpha * g) as f32).collect()))
}

/// Plain gradient-descent rates of the unrolled inner loop.
pub fn second_order_rates(outer: &OuterLoopConfig, inner: &InnerLoopConfig, table_params: usize) -> RateGroups {
    RateGroups {
        split: table_params,
        table_rate: outer.second_order_rate,
        mlp_rate: outer.second_order_rate * inner.mlp_lr_scale,
    }
}

/// One second-order outer update over `tasks`, the j-th using unroll seed
/// `seeds[j]`.
pub fn maml2_step<T: MetaTask>(
    theta: &ParamVector,
    tasks: &[&T],
    seeds: &[u64],
    outer: &OuterLoopConfig,
    inner: &InnerLoopConfig,
) -> Result<(ParamVector, Vec<f64>)> {
    let first = tasks.first().ok_or(Error::EmptyInput("outer step needs at least one scene"))?;
    outer.check_second_order(first.param_count(), inner.steps)?;
    let init = theta.to_f64();
    let results: Vec<(f64, Vec<f64>)> = tasks
        .par_iter()
        .zip(seeds)
        .map(|(task, &seed)| {
            let rates = second_order_rates(outer, inner, task.table_param_count());
            unrolled_meta_gradient(*task, &init, inner.steps, &rates, inner.rays_per_batch, seed).map_err(|e| e.in_scene(task.task_id()))
        })
        .collect::<Result<_>>()?;
    let losses = results.iter().map(|r| r.0).collect();
    let grads: Vec<Vec<f64>> = results.into_iter().map(|r| r.1).collect();
    Ok((second_order_step(theta, &grads, outer.outer_rate)?, losses))
}

/// Summary of one outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub scenes: Vec<String>,
    /// Mean over scenes of the first inner-loop minibatch loss.
    pub mean_initial_loss: f64,
    /// Mean over scenes of the last inner-loop (or query) loss.
    pub mean_final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct MetaTrainResult {
    pub theta: ParamVector,
    pub log: Vec<IterationLog>,
}

const OUTER_SALT: u64 = 0x0A7E;
const INNER_SALT: u64 = 0x1AAE;

/// Meta-trains from `theta0`. `on_checkpoint(i, θ)` is called with the
/// initialization before iteration 0, after every `checkpoint_every`-th
/// iteration and after the last one. `on_iteration` receives each log
/// entry as it completes.
pub fn meta_train<T: MetaTask>(
    tasks: &[T],
    theta0: ParamVector,
    outer: &OuterLoopConfig,
    inner: &InnerLoopConfig,
    seed: u64,
    mut on_checkpoint: impl FnMut(usize, &ParamVector) -> Result<()>,
    mut on_iteration: impl FnMut(&IterationLog),
) -> Result<MetaTrainResult> {
    outer.validate()?;
    inner.validate()?;
    let k = outer.scenes_per_iteration;
    if tasks.len() < k {
        return Err(Error::InvalidConfig(format!("{} scenes available, {k} requested per outer iteration", tasks.len())));
    }
    if let Some(t) = tasks.iter().find(|t| t.param_count() != theta0.len()) {
        return Err(Error::LengthMismatch {
            expected: t.param_count(),
            actual: theta0.len(),
        }
        .in_scene(t.task_id()));
    }
    outer.check_second_order(theta0.len(), inner.steps)?;

    let mut theta = theta0;
    let mut log = Vec::with_capacity(outer.outer_iterations);
    on_checkpoint(0, &theta)?;
    for it in 0..outer.outer_iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[OUTER_SALT, it as u64]));
        let chosen: Vec<usize> = sample(&mut rng, tasks.len(), k).into_vec();
        let seeds: Vec<u64> = (0..k).map(|slot| derive(seed, &[INNER_SALT, it as u64, slot as u64])).collect();
        let picked: Vec<&T> = chosen.iter().map(|&j| &tasks[j]).collect();
        let (next, initial, last) = match outer.algorithm {
            Algorithm::Reptile | Algorithm::Fomaml => {
                let fomaml = outer.algorithm == Algorithm::Fomaml;
                let subset = if fomaml { Subset::Support } else { Subset::All };
                let fits: Vec<(AdaptResult, Option<(f64, Vec<f32>)>)> = picked
                    .par_iter()
                    .zip(&seeds)
                    .map(|(task, &s)| {
                        let run = || -> Result<_> {
                            let fit = inner_fit_subset(*task, &theta, inner, subset, s)?;
                            let query = if fomaml {
                                Some(task.gradient(fit.theta.as_slice(), Subset::Query, inner.rays_per_batch, derive(s, &[u64::MAX]))?)
                            } else {
                                None
                            };
                            Ok((fit, query))
                        };
                        run().map_err(|e| e.in_scene(task.task_id()))
                    })
                    .collect::<Result<_>>()?;
                let initial: Vec<f64> = fits.iter().map(|(f, _)| f.loss_curve[0]).collect();
                if fomaml {
                    let queries: Vec<&(f64, Vec<f32>)> = fits.iter().map(|(_, q)| q.as_ref().expect("query computed")).collect();
                    let grads: Vec<&[f32]> = queries.iter().map(|q| q.1.as_slice()).collect();
                    let last = queries.iter().map(|q| q.0).collect();
                    (fomaml_step(&theta, &grads, outer.outer_rate)?, initial, last)
                } else {
                    let adapted: Vec<&[f32]> = fits.iter().map(|(f, _)| f.theta.as_slice()).collect();
                    let last = fits.iter().map(|(f, _)| *f.loss_curve.last().expect("steps >= 1")).collect();
                    (reptile_step(&theta, &adapted, outer.outer_rate)?, initial, last)
                }
            }
            Algorithm::Maml2 => {
                let init = theta.to_f64();
                let initial = picked
                    .iter()
                    .zip(&seeds)
                    .map(|(task, &s)| {
                        let rates = second_order_rates(outer, inner, task.table_param_count());
                        unrolled_objective(*task, &init, 0, &rates, inner.rays_per_batch, s).map_err(|e| e.in_scene(task.task_id()))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let (next, last) = maml2_step(&theta, &picked, &seeds, outer, inner)?;
                (next, initial, last)
            }
        };
        theta = next;
        let entry = IterationLog {
            iteration: it + 1,
            scenes: picked.iter().map(|t| t.task_id().to_string()).collect(),
            mean_initial_loss: initial.iter().sum::<f64>() / k as f64,
            mean_final_loss: last.iter().sum::<f64>() / k as f64,
        };
        on_iteration(&entry);
        log.push(entry);
        if (it + 1) % outer.checkpoint_every == 0 || it + 1 == outer.outer_iterations {
            on_checkpoint(it + 1, &theta)?;
        }
    }
    Ok(MetaTrainResult { theta, log })
}

/// Fits `dataset` from `theta_meta` using its `n_views` evenly spaced
/// input frames.
pub fn adapt(
    model: &FieldModel,
    render: &RenderConfig,
    theta_meta: &ParamVector,
    dataset: &SceneDataset,
    n_views: usize,
    inner: &InnerLoopConfig,
    seed: u64,
) -> Result<AdaptResult> {
    let views = if n_views == dataset.frames.len() {
        (0..n_views).collect()
    } else {
        split_indices(dataset.frames.len(), n_views)?.0
    };
    let task = SceneTask::new(model, render, dataset, views)?;
    inner_fit(&task, theta_meta, inner, seed)
}

/// Mean PSNR and SSIM of renders at the given frames against their images.
pub fn evaluate_frames(
    model: &FieldModel,
    params: &ParamVector,
    dataset: &SceneDataset,
    frames: &[usize],
    render: &RenderConfig,
    ssim_cfg: &SsimConfig,
) -> Result<(f64, f64)> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames to evaluate"));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for &i in frames {
        let frame = dataset.frames.get(i).ok_or_else(|| Error::InvalidConfig(format!("frame {i} out of range")))?;
        let img = render_image::<f32>(model, params.as_slice(), &frame.pose, &dataset.intrinsics, render, None)?;
        p += psnr(&img, &frame.image)?;
        s += ssim(&img, &frame.image, ssim_cfg)?;
    }
    Ok((p / frames.len() as f64, s / frames.len() as f64))
}

/// At most `max` entries of `frames`, evenly spaced; all when `max` is 0.
pub fn subsample_frames(frames: &[usize], max: usize) -> Vec<usize> {
    if max == 0 || frames.len() <= max {
        return frames.to_vec();
    }
    (0..max).map(|i| frames[i * frames.len() / max]).collect()
}
