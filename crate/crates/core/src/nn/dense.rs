use rand::Rng;

use super::{gemm, glorot_uniform, Grads, ParamGroup, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Fully-connected layer, weight stored `in_dim x out_dim` row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Vec<f64>,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = glorot_uniform(rng, in_dim * out_dim, in_dim, out_dim);
        let weight = store.add(format!("{name}.weight"), group, vec![in_dim, out_dim], w);
        let bias = store.add(format!("{name}.bias"), group, vec![out_dim], vec![0.0; out_dim]);
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} inputs", self.in_dim),
                got: x.len().to_string(),
            });
        }
        let mut y = store.get(self.bias).to_vec();
        gemm(1, self.in_dim, self.out_dim, x, false, store.get(self.weight), false, 1.0, &mut y);
        Ok(y)
    }

    pub fn forward_cached(&self, store: &ParamStore, x: Vec<f64>) -> Result<(Vec<f64>, DenseCache)> {
        let y = self.forward(store, &x)?;
        Ok((y, DenseCache { input: x }))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &DenseCache,
        grad_out: &[f64],
        grads: &mut Grads,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        gemm(self.in_dim, 1, self.out_dim, &cache.input, false, grad_out, false, 1.0, grads.get_mut(self.weight));
        for (g, v) in grads.get_mut(self.bias).iter_mut().zip(grad_out) {
            *g += v;
        }
        if !need_input_grad {
            return None;
        }
        let mut dx = vec![0.0; self.in_dim];
        gemm(1, self.out_dim, self.in_dim, grad_out, false, store.get(self.weight), true, 0.0, &mut dx);
        Some(dx)
    }
}
