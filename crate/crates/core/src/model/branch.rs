//! Conv stacks and the dropout + L2 embedding step shared by the branches.

use crate::error::Result;
use crate::nn::{
    dropout_mask, l2_normalize, l2_normalize_backward, relu_backward_inplace, relu_inplace, Conv, ConvCache, Grads,
    ParamStore,
};

/// Conv layers, each followed by a ReLU.
#[derive(Debug, Clone)]
pub(crate) struct ConvStack {
    pub layers: Vec<Conv>,
    pub in_shape: [usize; 3],
}

#[derive(Debug, Clone)]
pub(crate) struct StackTrace {
    caches: Vec<ConvCache>,
    output: Vec<f64>,
}

impl ConvStack {
    pub fn input_len(&self) -> usize {
        self.in_shape.iter().product::<usize>() * self.layers[0].spec.in_channels
    }

    pub fn output_dim(&self) -> usize {
        let mut shape = self.in_shape;
        for l in &self.layers {
            shape = l.spec.output_geometry(shape).expect("validated at construction").0;
        }
        shape.iter().product::<usize>() * self.layers.last().unwrap().spec.out_channels
    }

    pub fn forward(&self, store: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
        let mut shape = self.in_shape;
        let mut x = input.to_vec();
        for l in &self.layers {
            let (mut y, s) = l.forward(store, &x, shape)?;
            relu_inplace(&mut y);
            x = y;
            shape = s;
        }
        Ok(x)
    }

    pub fn forward_traced(&self, store: &ParamStore, input: Vec<f64>) -> Result<(Vec<f64>, StackTrace)> {
        let mut shape = self.in_shape;
        let mut x = input;
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (mut y, s, cache) = l.forward_cached(store, x, shape)?;
            relu_inplace(&mut y);
            caches.push(cache);
            x = y;
            shape = s;
        }
        Ok((
            x.clone(),
            StackTrace {
                caches,
                output: x,
            },
        ))
    }

    /// Backpropagates a gradient w.r.t. the final (rectified) output.
    pub fn backward(&self, store: &ParamStore, trace: &StackTrace, grad_out: Vec<f64>, grads: &mut Grads) {
        let mut g = grad_out;
        let n = self.layers.len();
        for i in (0..n).rev() {
            let post = if i + 1 < n {
                trace.caches[i + 1].input()
            } else {
                &trace.output
            };
            relu_backward_inplace(&mut g, post);
            match self.layers[i].backward(store, &trace.caches[i], &g, grads, i > 0) {
                Some(prev) => g = prev,
                None => break,
            }
        }
    }
}

/// Dropout (training only) followed by L2 normalization.
#[derive(Debug, Clone)]
pub(crate) struct EmbedTrace {
    mask: Option<Vec<f64>>,
    dropped: Vec<f64>,
    norm: f64,
}

pub(crate) fn embed(features: &[f64], dropout: Option<(&mut dyn rand::RngCore, f64)>) -> (Vec<f64>, EmbedTrace) {
    let mask = dropout.map(|(rng, rate)| dropout_mask(rng, features.len(), rate));
    let dropped: Vec<f64> = match &mask {
        Some(m) => features.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => features.to_vec(),
    };
    let (y, norm) = l2_normalize(&dropped);
    (y, EmbedTrace { mask, dropped, norm })
}

pub(crate) fn embed_backward(trace: &EmbedTrace, grad_out: &[f64]) -> Vec<f64> {
    let mut g = l2_normalize_backward(&trace.dropped, trace.norm, grad_out);
    if let Some(m) = &trace.mask {
        for (x, k) in g.iter_mut().zip(m) {
            *x *= k;
        }
    }
    g
}

/// Dropout on a hidden activation; returns the mask when one was applied.
pub(crate) fn apply_dropout(x: &mut [f64], dropout: Option<(&mut dyn rand::RngCore, f64)>) -> Option<Vec<f64>> {
    let (rng, rate) = dropout?;
    let m = dropout_mask(rng, x.len(), rate);
    for (v, k) in x.iter_mut().zip(&m) {
        *v *= k;
    }
    Some(m)
}

/// Dropout is active only in `Train`.
pub enum Mode<'a> {
    Inference,
    Train(&'a mut dyn rand::RngCore),
}

impl Mode<'_> {
    pub(crate) fn dropout(&mut self, rate: f64) -> Option<(&mut dyn rand::RngCore, f64)> {
        match self {
            Mode::Inference => None,
            Mode::Train(rng) if rate > 0.0 => Some((&mut **rng, rate)),
            Mode::Train(_) => None,
        }
    }

    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}
