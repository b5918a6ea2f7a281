use crate::error::{Error, Result};
use crate::field::{loss_and_gradient, FieldModel, RayTarget};
use crate::geometry::generate_ray;
use crate::real::Dual;
use crate::render::RenderConfig;
use crate::scenes::SceneDataset;
use crate::seed::{derive, Stream};

/// Which part of a task's data a minibatch is drawn from. Support and
/// query are disjoint halves; `All` is their union.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    All,
    Support,
    Query,
}

/// A single task (one scene) seen by the meta-learner.
pub trait MetaTask: Sync {
    fn task_id(&self) -> &str;

    fn param_count(&self) -> usize;

    /// Number of leading parameters trained at the table learning rate.
    fn table_param_count(&self) -> usize;

    /// Minibatch loss and gradient in single precision.
    fn gradient(&self, params: &[f32], subset: Subset, batch_size: usize, seed: u64) -> Result<(f64, Vec<f32>)>;

    /// Minibatch loss and gradient in double precision. The same `seed`
    /// must select the same minibatch as [`MetaTask::gradient`].
    fn gradient_f64(&self, params: &[f64], subset: Subset, batch_size: usize, seed: u64) -> Result<(f64, Vec<f64>)>;

    /// Hessian-vector product of the minibatch loss selected by `seed`.
    fn hvp(&self, params: &[f64], v: &[f64], subset: Subset, batch_size: usize, seed: u64) -> Result<Vec<f64>>;
}

const SPLIT_SALT: u64 = 0x5B1D_0F0E;

/// Pixels of a subset of a scene's frames as supervised rays.
pub struct SceneTask<'a> {
    model: &'a FieldModel,
    render: &'a RenderConfig,
    dataset: &'a SceneDataset,
    views: Vec<usize>,
}

impl<'a> SceneTask<'a> {
    pub fn new(model: &'a FieldModel, render: &'a RenderConfig, dataset: &'a SceneDataset, views: Vec<usize>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::EmptyViews);
        }
        if let Some(&v) = views.iter().find(|&&v| v >= dataset.frames.len()) {
            return Err(Error::InvalidConfig(format!(
                "view index {v} out of range for scene {} with {} frames",
                dataset.scene_id,
                dataset.frames.len()
            )));
        }
        Ok(Self {
            model,
            render,
            dataset,
            views,
        })
    }

    pub fn views(&self) -> &[usize] {
        &self.views
    }

    fn in_subset(&self, pixel_id: u64, subset: Subset) -> bool {
        match subset {
            Subset::All => true,
            Subset::Support => derive(SPLIT_SALT, &[pixel_id]) & 1 == 0,
            Subset::Query => derive(SPLIT_SALT, &[pixel_id]) & 1 == 1,
        }
    }

    /// `n` rays drawn uniformly with replacement from the subset.
    pub fn sample_batch(&self, subset: Subset, n: usize, seed: u64) -> Vec<RayTarget> {
        let intr = &self.dataset.intrinsics;
        let per_view = intr.pixel_count();
        let pool = (self.views.len() * per_view) as f64;
        let mut stream = Stream::new(seed);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let k = ((stream.next_f64() * pool) as usize).min(self.views.len() * per_view - 1);
            let frame = self.views[k / per_view];
            let pixel = k % per_view;
            if !self.in_subset((frame * per_view + pixel) as u64, subset) {
                continue;
            }
            let record = &self.dataset.frames[frame];
            let (x, y) = (pixel % intr.width, pixel / intr.width);
            let rgb = record.image.pixel(x, y);
            out.push(RayTarget {
                ray: generate_ray(x as f64, y as f64, intr, &record.pose),
                rgb: rgb.map(f64::from),
            });
        }
        out
    }

    fn batch(&self, subset: Subset, batch_size: usize, seed: u64) -> (Vec<RayTarget>, Option<u64>) {
        (self.sample_batch(subset, batch_size, derive(seed, &[0])), Some(derive(seed, &[1])))
    }
}

impl MetaTask for SceneTask<'_> {
    fn task_id(&self) -> &str {
        &self.dataset.scene_id
    }

    fn param_count(&self) -> usize {
        self.model.param_count()
    }

    fn table_param_count(&self) -> usize {
        self.model.table_param_count()
    }

    fn gradient(&self, params: &[f32], subset: Subset, batch_size: usize, seed: u64) -> Result<(f64, Vec<f32>)> {
        let (batch, jitter) = self.batch(subset, batch_size, seed);
        let (loss, grad) = loss_and_gradient::<f32>(self.model, params, &batch, self.render, jitter)?;
        Ok((loss as f64, grad))
    }

    fn gradient_f64(&self, params: &[f64], subset: Subset, batch_size: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
        let (batch, jitter) = self.batch(subset, batch_size, seed);
        loss_and_gradient::<f64>(self.model, params, &batch, self.render, jitter)
    }

    fn hvp(&self, params: &[f64], v: &[f64], subset: Subset, batch_size: usize, seed: u64) -> Result<Vec<f64>> {
        if v.len() != params.len() {
            return Err(Error::LengthMismatch {
                expected: params.len(),
                actual: v.len(),
            });
        }
        let (batch, jitter) = self.batch(subset, batch_size, seed);
        let dual: Vec<Dual> = params.iter().zip(v).map(|(&p, &t)| Dual::new(p, t)).collect();
        let (_, grad) = loss_and_gradient::<Dual>(self.model, &dual, &batch, self.render, jitter)?;
        Ok(grad.into_iter().map(|g| g.eps).collect())
    }
}
