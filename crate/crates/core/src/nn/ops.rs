use rand::Rng;

/// Added to the norm before dividing, so all-zero inputs map to zero.
pub const L2_EPS: f64 = 1e-8;

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` where the rectified output was not positive.
pub fn relu_backward_inplace(grad: &mut [f64], output: &[f64]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, n: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// `v / (||v|| + eps)`; also returns `||v||`.
pub fn l2_normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d = norm + L2_EPS;
    (v.iter().map(|x| x / d).collect(), norm)
}

pub fn l2_normalize_backward(v: &[f64], norm: f64, grad_out: &[f64]) -> Vec<f64> {
    let d = norm + L2_EPS;
    if norm == 0.0 {
        return grad_out.iter().map(|g| g / d).collect();
    }
    let dot: f64 = v.iter().zip(grad_out).map(|(a, b)| a * b).sum();
    let c = dot / (norm * d * d);
    v.iter().zip(grad_out).map(|(x, g)| g / d - x * c).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.3, 0.3]), vec![0.5, 0.5]);
        let p = softmax(&[0.0, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let p = softmax(&[1000.0, -1000.0]);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn l2_unit_norm_and_zero_vector() {
        let (y, _) = l2_normalize(&[3.0, 4.0]);
        let n: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        let (z, n) = l2_normalize(&[0.0; 4]);
        assert_eq!(n, 0.0);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l2_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |v: &[f64]| l2_normalize(v).0.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let (_, n) = l2_normalize(&v);
        let g = l2_normalize_backward(&v, n, &r);
        for i in 0..6 {
            let mut p = v.clone();
            p[i] += 1e-6;
            let mut m = v.clone();
            m[i] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn dropout_keeps_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = dropout_mask(&mut rng, 20000, 0.5);
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 1.0).abs() < 0.05);
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
