use rand::Rng;

use super::{gemm, glorot_uniform, Grads, ParamGroup, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output extent `ceil(input / stride)`, padding split with the extra
    /// cell at the end.
    Same,
    Valid,
}

/// Spatio-temporal convolution over channel-last `(t, h, w, c)` volumes. A
/// 2D convolution is the special case `t = 1`, kernel depth 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(t, h, w)`
    pub kernel: [usize; 3],
    /// `(t, h, w)`
    pub stride: [usize; 3],
    pub padding: Padding,
}

impl ConvSpec {
    pub fn patch_len(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.in_channels
    }

    pub fn num_params(&self) -> usize {
        self.patch_len() * self.out_channels + self.out_channels
    }

    /// Output extent and leading pad along each axis.
    pub fn output_geometry(&self, input: [usize; 3]) -> Result<([usize; 3], [usize; 3])> {
        let mut out = [0; 3];
        let mut pad = [0; 3];
        for d in 0..3 {
            let (n, k, s) = (input[d], self.kernel[d], self.stride[d]);
            match self.padding {
                Padding::Same => {
                    out[d] = n.div_ceil(s);
                    let total = ((out[d] - 1) * s + k).saturating_sub(n);
                    pad[d] = total / 2;
                }
                Padding::Valid => {
                    if n < k {
                        return Err(Error::ShapeMismatch {
                            expected: format!("extent >= kernel {k} on axis {d}"),
                            got: n.to_string(),
                        });
                    }
                    out[d] = (n - k) / s + 1;
                }
            }
        }
        Ok((out, pad))
    }
}

/// A convolution layer whose weights live in a [`ParamStore`]. The weight
/// tensor is laid out `(kt, kh, kw, c_in)` rows by `c_out` columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// What the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    input: Vec<f64>,
    in_shape: [usize; 3],
}

impl ConvCache {
    pub(crate) fn input(&self) -> &[f64] {
        &self.input
    }
}

impl Conv {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let kvol: usize = spec.kernel.iter().product();
        let rows = spec.patch_len();
        let w = glorot_uniform(rng, rows * spec.out_channels, kvol * spec.in_channels, kvol * spec.out_channels);
        let weight = store.add(format!("{name}.weight"), group, vec![rows, spec.out_channels], w);
        let bias = store.add(format!("{name}.bias"), group, vec![spec.out_channels], vec![0.0; spec.out_channels]);
        Self { spec, weight, bias }
    }

    fn check_input(&self, input: &[f64], in_shape: [usize; 3]) -> Result<()> {
        let expected = in_shape.iter().product::<usize>() * self.spec.in_channels;
        if input.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?} x {} = {expected} values", in_shape, self.spec.in_channels),
                got: input.len().to_string(),
            });
        }
        Ok(())
    }

    fn im2col(&self, input: &[f64], in_shape: [usize; 3], out: [usize; 3], pad: [usize; 3]) -> Vec<f64> {
        let s = &self.spec;
        let cin = s.in_channels;
        let rows = out[0] * out[1] * out[2];
        let patch = s.patch_len();
        let mut col = vec![0.0; rows * patch];
        let mut r = 0;
        for ot in 0..out[0] {
            for oh in 0..out[1] {
                for ow in 0..out[2] {
                    let row = &mut col[r * patch..(r + 1) * patch];
                    let mut off = 0;
                    for kt in 0..s.kernel[0] {
                        let it = (ot * s.stride[0] + kt) as isize - pad[0] as isize;
                        for kh in 0..s.kernel[1] {
                            let ih = (oh * s.stride[1] + kh) as isize - pad[1] as isize;
                            for kw in 0..s.kernel[2] {
                                let iw = (ow * s.stride[2] + kw) as isize - pad[2] as isize;
                                if it >= 0
                                    && ih >= 0
                                    && iw >= 0
                                    && (it as usize) < in_shape[0]
                                    && (ih as usize) < in_shape[1]
                                    && (iw as usize) < in_shape[2]
                                {
                                    let src = (((it as usize) * in_shape[1] + ih as usize) * in_shape[2] + iw as usize)
                                        * cin;
                                    row[off..off + cin].copy_from_slice(&input[src..src + cin]);
                                }
                                off += cin;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f64], in_shape: [usize; 3], out: [usize; 3], pad: [usize; 3]) -> Vec<f64> {
        let s = &self.spec;
        let cin = s.in_channels;
        let patch = s.patch_len();
        let mut grad = vec![0.0; in_shape.iter().product::<usize>() * cin];
        let mut r = 0;
        for ot in 0..out[0] {
            for oh in 0..out[1] {
                for ow in 0..out[2] {
                    let row = &col[r * patch..(r + 1) * patch];
                    let mut off = 0;
                    for kt in 0..s.kernel[0] {
                        let it = (ot * s.stride[0] + kt) as isize - pad[0] as isize;
                        for kh in 0..s.kernel[1] {
                            let ih = (oh * s.stride[1] + kh) as isize - pad[1] as isize;
                            for kw in 0..s.kernel[2] {
                                let iw = (ow * s.stride[2] + kw) as isize - pad[2] as isize;
                                if it >= 0
                                    && ih >= 0
                                    && iw >= 0
                                    && (it as usize) < in_shape[0]
                                    && (ih as usize) < in_shape[1]
                                    && (iw as usize) < in_shape[2]
                                {
                                    let dst = (((it as usize) * in_shape[1] + ih as usize) * in_shape[2] + iw as usize)
                                        * cin;
                                    for (g, v) in grad[dst..dst + cin].iter_mut().zip(&row[off..off + cin]) {
                                        *g += v;
                                    }
                                }
                                off += cin;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
        grad
    }

    /// Pre-activation output (channel-last) and its `(t, h, w)` extent.
    pub fn forward(&self, store: &ParamStore, input: &[f64], in_shape: [usize; 3]) -> Result<(Vec<f64>, [usize; 3])> {
        self.check_input(input, in_shape)?;
        let (out, pad) = self.spec.output_geometry(in_shape)?;
        let rows = out.iter().product::<usize>();
        let cout = self.spec.out_channels;
        let col = self.im2col(input, in_shape, out, pad);
        let bias = store.get(self.bias);
        let mut y = Vec::with_capacity(rows * cout);
        for _ in 0..rows {
            y.extend_from_slice(bias);
        }
        gemm(rows, self.spec.patch_len(), cout, &col, false, store.get(self.weight), false, 1.0, &mut y);
        Ok((y, out))
    }

    pub fn forward_cached(
        &self,
        store: &ParamStore,
        input: Vec<f64>,
        in_shape: [usize; 3],
    ) -> Result<(Vec<f64>, [usize; 3], ConvCache)> {
        let (y, out) = self.forward(store, &input, in_shape)?;
        Ok((y, out, ConvCache { input, in_shape }))
    }

    /// Accumulates weight/bias gradients for `grad_out` (w.r.t. the
    /// pre-activation output) and returns the input gradient when asked.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &ConvCache,
        grad_out: &[f64],
        grads: &mut Grads,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (out, pad) = self
            .spec
            .output_geometry(cache.in_shape)
            .expect("shape validated in forward");
        let rows = out.iter().product::<usize>();
        let cout = self.spec.out_channels;
        let patch = self.spec.patch_len();
        debug_assert_eq!(grad_out.len(), rows * cout);
        let col = self.im2col(&cache.input, cache.in_shape, out, pad);
        gemm(patch, rows, cout, &col, true, grad_out, false, 1.0, grads.get_mut(self.weight));
        let gb = grads.get_mut(self.bias);
        for r in grad_out.chunks_exact(cout) {
            for (g, v) in gb.iter_mut().zip(r) {
                *g += v;
            }
        }
        if !need_input_grad {
            return None;
        }
        let mut dcol = col;
        gemm(rows, cout, patch, grad_out, false, store.get(self.weight), true, 0.0, &mut dcol);
        Some(self.col2im(&dcol, cache.in_shape, out, pad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(kernel: [usize; 3], stride: [usize; 3], padding: Padding) -> ConvSpec {
        ConvSpec {
            in_channels: 2,
            out_channels: 3,
            kernel,
            stride,
            padding,
        }
    }

    #[test]
    fn same_and_valid_extents() {
        let s = spec([3, 5, 5], [1, 2, 2], Padding::Same);
        assert_eq!(s.output_geometry([10, 64, 64]).unwrap(), ([10, 32, 32], [1, 1, 1]));
        let s = spec([1, 3, 3], [1, 4, 4], Padding::Same);
        assert_eq!(s.output_geometry([1, 8, 8]).unwrap().0, [1, 2, 2]);
        let s = spec([1, 6, 6], [1, 1, 1], Padding::Valid);
        assert_eq!(s.output_geometry([10, 8, 8]).unwrap().0, [10, 3, 3]);
        assert!(s.output_geometry([10, 4, 8]).is_err());
    }

    /// Direct convolution used as an independent reference.
    fn naive(conv: &Conv, store: &ParamStore, x: &[f64], shape: [usize; 3]) -> Vec<f64> {
        let s = conv.spec;
        let (out, pad) = s.output_geometry(shape).unwrap();
        let w = store.get(conv.weight);
        let b = store.get(conv.bias);
        let mut y = vec![0.0; out.iter().product::<usize>() * s.out_channels];
        for ot in 0..out[0] {
            for oh in 0..out[1] {
                for ow in 0..out[2] {
                    for co in 0..s.out_channels {
                        let mut acc = b[co];
                        for kt in 0..s.kernel[0] {
                            for kh in 0..s.kernel[1] {
                                for kw in 0..s.kernel[2] {
                                    let it = (ot * s.stride[0] + kt) as isize - pad[0] as isize;
                                    let ih = (oh * s.stride[1] + kh) as isize - pad[1] as isize;
                                    let iw = (ow * s.stride[2] + kw) as isize - pad[2] as isize;
                                    if it < 0 || ih < 0 || iw < 0 {
                                        continue;
                                    }
                                    let (it, ih, iw) = (it as usize, ih as usize, iw as usize);
                                    if it >= shape[0] || ih >= shape[1] || iw >= shape[2] {
                                        continue;
                                    }
                                    for ci in 0..s.in_channels {
                                        let xi = ((it * shape[1] + ih) * shape[2] + iw) * s.in_channels + ci;
                                        let wi = (((kt * s.kernel[1] + kh) * s.kernel[2] + kw) * s.in_channels + ci)
                                            * s.out_channels
                                            + co;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        y[((ot * out[1] + oh) * out[2] + ow) * s.out_channels + co] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (kernel, stride, padding) in [
            ([3, 3, 3], [1, 2, 2], Padding::Same),
            ([1, 3, 3], [1, 4, 4], Padding::Same),
            ([1, 2, 3], [1, 1, 1], Padding::Valid),
        ] {
            let mut store = ParamStore::new();
            let conv = Conv::new(&mut store, "c", ParamGroup::HeadMap, spec(kernel, stride, padding), &mut rng);
            for v in store.get_mut(conv.bias) {
                *v = rng.gen_range(-1.0..1.0);
            }
            let shape = [3, 7, 6];
            let x: Vec<f64> = (0..shape.iter().product::<usize>() * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (y, _) = conv.forward(&store, &x, shape).unwrap();
            let r = naive(&conv, &store, &x, shape);
            for (a, b) in y.iter().zip(&r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let conv = Conv::new(&mut store, "c", ParamGroup::HeadPose, spec([3, 3, 3], [1, 2, 2], Padding::Same), &mut rng);
        let shape = [3, 5, 4];
        let x: Vec<f64> = (0..shape.iter().product::<usize>() * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // loss = sum(y * r) for a fixed random r
        let (y0, _) = conv.forward(&store, &x, shape).unwrap();
        let r: Vec<f64> = (0..y0.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |st: &ParamStore, x: &[f64]| -> f64 {
            let (y, _) = conv.forward(st, x, shape).unwrap();
            y.iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let (_, _, cache) = conv.forward_cached(&store, x.clone(), shape).unwrap();
        let mut grads = store.zero_grads();
        let gx = conv.backward(&store, &cache, &r, &mut grads, true).unwrap();
        let h = 1e-6;
        for i in (0..x.len()).step_by(7) {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&store, &xp) - loss(&store, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-7, "input {i}: {fd} vs {}", gx[i]);
        }
        for id in [conv.weight, conv.bias] {
            for i in (0..store.get(id).len()).step_by(5) {
                let mut sp = store.clone();
                sp.get_mut(id)[i] += h;
                let mut sm = store.clone();
                sm.get_mut(id)[i] -= h;
                let fd = (loss(&sp, &x) - loss(&sm, &x)) / (2.0 * h);
                let an = grads.get(id)[i];
                assert!((fd - an).abs() < 1e-7, "param {i}: {fd} vs {an}");
            }
        }
    }
}
