//! Exact meta-gradient through an unrolled plain-gradient-descent inner
//! loop.
//!
//! With `θ_{t+1} = θ_t - D ∇L_t(θ_t)` for `t < m` and query loss `L_Q`,
//! the meta-gradient `d L_Q(θ_m) / d θ_0` is obtained by the reverse
//! recursion `v_m = ∇L_Q(θ_m)`, `v_t = v_{t+1} - H_t(θ_t) D v_{t+1}`.

use super::task::{MetaTask, Subset};
use crate::error::{Error, Result};
use crate::optim::RateGroups;
use crate::seed::derive;

/// Query minibatch seed, distinct from every inner step seed.
const QUERY_STEP: u64 = u64::MAX;

fn check_finite(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { step, loss })
    }
}

fn unroll<T: MetaTask + ?Sized>(
    task: &T,
    init: &[f64],
    steps: usize,
    rates: &RateGroups,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(init.to_vec());
    for t in 0..steps {
        let theta = &trajectory[t];
        let (loss, grad) = task.gradient_f64(theta, Subset::Support, batch_size, derive(seed, &[t as u64]))?;
        check_finite(t, loss)?;
        let next = theta
            .iter()
            .zip(&grad)
            .enumerate()
            .map(|(i, (p, g))| p - rates.rate(i) * g)
            .collect();
        trajectory.push(next);
    }
    Ok(trajectory)
}

/// Query loss after `steps` unrolled inner steps from `init`.
pub fn unrolled_objective<T: MetaTask + ?Sized>(
    task: &T,
    init: &[f64],
    steps: usize,
    rates: &RateGroups,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let trajectory = unroll(task, init, steps, rates, batch_size, seed)?;
    let (loss, _) = task.gradient_f64(&trajectory[steps], Subset::Query, batch_size, derive(seed, &[QUERY_STEP]))?;
    Ok(loss)
}

/// Query loss and its exact gradient with respect to `init`.
pub fn unrolled_meta_gradient<T: MetaTask + ?Sized>(
    task: &T,
    init: &[f64],
    steps: usize,
    rates: &RateGroups,
    batch_size: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let trajectory = unroll(task, init, steps, rates, batch_size, seed)?;
    let (loss, mut v) = task.gradient_f64(&trajectory[steps], Subset::Query, batch_size, derive(seed, &[QUERY_STEP]))?;
    check_finite(steps, loss)?;
    for t in (0..steps).rev() {
        let scaled: Vec<f64> = v.iter().enumerate().map(|(i, x)| rates.rate(i) * x).collect();
        let hv = task.hvp(&trajectory[t], &scaled, Subset::Support, batch_size, derive(seed, &[t as u64]))?;
        for (a, b) in v.iter_mut().zip(hv) {
            *a -= b;
        }
    }
    Ok((loss, v))
}
