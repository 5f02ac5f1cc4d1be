//! Minimal CPU neural-network machinery in `f64`: a flat parameter store,
//! convolution and dense layers with hand-written backward passes, the few
//! pointwise ops the network needs, and an Adam optimizer.

mod adam;
mod conv;
mod dense;
mod ops;

pub use adam::{Adam, AdamConfig};
pub use conv::{Conv, ConvCache, ConvSpec, Padding};
pub use dense::{Dense, DenseCache};
pub use ops::{dropout_mask, l2_normalize, l2_normalize_backward, relu_backward_inplace, relu_inplace, softmax};

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Named parameter groups; freezing operates per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    HeadPose,
    HeadMap,
    Geometry,
    Fusion,
    PoseHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param {
            name: name.into(),
            group,
            shape,
            data,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].data
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn find(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn find_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn num_scalars_in(&self, group: ParamGroup) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.data.len())
            .sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            data: self.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    /// Flat view `(tensor, offset)` of scalar `index` in declaration order.
    pub fn locate(&self, mut index: usize) -> Option<(ParamId, usize)> {
        for (i, p) in self.params.iter().enumerate() {
            if index < p.data.len() {
                return Some((ParamId(i), index));
            }
            index -= p.data.len();
        }
        None
    }

    pub fn group_of(&self, id: ParamId) -> ParamGroup {
        self.params[id.0].group
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.data {
            for x in t {
                *x *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}

/// Groups excluded from optimizer updates.
pub type FrozenMask = BTreeSet<ParamGroup>;

/// Glorot-uniform sample of `n` weights.
pub fn glorot_uniform(rng: &mut impl Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major buffers, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: output size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index the strided kernel
    // touches lies inside the three slices, and `c` does not alias `a`/`b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
