//! One-parameter quadratic task family `L_a(w) = (w - a)²`, used to check
//! the meta-learning rules against closed-form answers.

use super::task::{MetaTask, Subset};
use crate::error::{Error, Result};
use crate::seed::Stream;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTask {
    pub id: String,
    pub target: f64,
}

impl QuadraticTask {
    pub fn new(target: f64) -> Self {
        Self {
            id: format!("quadratic({target})"),
            target,
        }
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != 1 {
            return Err(Error::LengthMismatch { expected: 1, actual: len });
        }
        Ok(())
    }
}

/// `n` tasks with targets drawn from `U[-1, 1]`.
pub fn quadratic_family(n: usize, seed: u64) -> Vec<QuadraticTask> {
    let mut s = Stream::new(seed);
    (0..n).map(|_| QuadraticTask::new(2.0 * s.next_f64() - 1.0)).collect()
}

impl MetaTask for QuadraticTask {
    fn task_id(&self) -> &str {
        &self.id
    }

    fn param_count(&self) -> usize {
        1
    }

    fn table_param_count(&self) -> usize {
        1
    }

    fn gradient(&self, params: &[f32], _: Subset, _: usize, _: u64) -> Result<(f64, Vec<f32>)> {
        self.check(params.len())?;
        let d = params[0] as f64 - self.target;
        Ok((d * d, vec![(2.0 * d) as f32]))
    }

    fn gradient_f64(&self, params: &[f64], _: Subset, _: usize, _: u64) -> Result<(f64, Vec<f64>)> {
        self.check(params.len())?;
        let d = params[0] - self.target;
        Ok((d * d, vec![2.0 * d]))
    }

    fn hvp(&self, params: &[f64], v: &[f64], _: Subset, _: usize, _: u64) -> Result<Vec<f64>> {
        self.check(params.len())?;
        self.check(v.len())?;
        Ok(vec![2.0 * v[0]])
    }
}
