//! Named parameter storage and the Adam optimizer.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::math;
use crate::matrix::DenseMatrix;
use crate::rng::Stream;

/// Index of a tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Gradient per parameter, produced by a backward pass.
pub type Gradients = BTreeMap<ParamId, DenseMatrix>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<DenseMatrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &DenseMatrix {
        &self.values[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &DenseMatrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar count over `ids`.
    pub fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.get(*id).len()).sum()
    }
}

/// Glorot/Xavier uniform initialization for a `fan_in × fan_out` weight.
pub fn glorot_uniform(stream: &mut Stream, fan_in: usize, fan_out: usize) -> DenseMatrix {
    let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    DenseMatrix::from_fn(fan_in, fan_out, |_, _| stream.uniform_range(-limit, limit))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: BTreeMap<ParamId, (DenseMatrix, DenseMatrix)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, moments: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Updates every parameter that has an entry in `grads`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        for (id, g) in grads {
            if params.get(*id).shape() != g.shape() {
                return Err(shape_err!(
                    "gradient {}x{} for parameter `{}` of shape {}x{}",
                    g.rows(),
                    g.cols(),
                    params.name(*id),
                    params.get(*id).rows(),
                    params.get(*id).cols()
                ));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (id, g) in grads {
            let p = params.get_mut(*id);
            let (m, v) = self
                .moments
                .entry(*id)
                .or_insert_with(|| (DenseMatrix::zeros(g.rows(), g.cols()), DenseMatrix::zeros(g.rows(), g.cols())));
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= self.lr * m_hat / (math::sqrt(v_hat) + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> (ParamSet, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("w", DenseMatrix::filled(1, 1, value));
        (ps, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", DenseMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64));
        let before = ps.clone();
        let mut adam = AdamState::new(0.1);
        let mut g = Gradients::new();
        g.insert(id, DenseMatrix::zeros(2, 3));
        adam.step(&mut ps, &g).unwrap();
        assert_eq!(ps, before);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        // t = 1: m̂ = g, v̂ = g², update = lr·g/(|g| + eps).
        let mut ps = ParamSet::new();
        let id = ps.add("w", DenseMatrix::zeros(1, 4));
        let grads = [3.0, -0.5, 1e-3, -20.0];
        let mut g = Gradients::new();
        g.insert(id, DenseMatrix::from_rows(&[&grads]).unwrap());
        let lr = 0.01;
        let mut adam = AdamState::new(lr);
        adam.step(&mut ps, &g).unwrap();
        for (p, gi) in ps.get(id).data().iter().zip(grads) {
            let oracle = -lr * gi / (gi.abs() + 1e-8);
            assert!((p - oracle).abs() < 1e-15);
            assert!((p + lr * gi.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn minimizes_square() {
        let (mut ps, id) = single(1.0);
        let mut adam = AdamState::new(0.1);
        for _ in 0..100 {
            let w = ps.get(id).get(0, 0);
            let mut g = Gradients::new();
            g.insert(id, DenseMatrix::filled(1, 1, 2.0 * w));
            adam.step(&mut ps, &g).unwrap();
        }
        assert!(ps.get(id).get(0, 0).abs() < 0.1);
        assert_eq!(adam.step_count(), 100);
    }

    #[test]
    fn shape_mismatch_rejected_before_any_update() {
        let (mut ps, id) = single(1.0);
        let mut g = Gradients::new();
        g.insert(id, DenseMatrix::zeros(2, 1));
        let mut adam = AdamState::new(0.1);
        assert!(adam.step(&mut ps, &g).is_err());
        assert_eq!(adam.step_count(), 0);
    }
}
