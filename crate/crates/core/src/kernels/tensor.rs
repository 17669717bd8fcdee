//! Small dense tensor math for the CNN kernels: same-padded convolution,
//! 2x2 max pooling, relu, fully connected layers and softmax, plus the
//! f32 <-> little-endian byte codec used on the wire.
//!
//! Accumulation order is part of the contract. Convolution sums over
//! (dy, dx, channel) with out-of-range taps skipped, dense layers sum over
//! ascending input index, and softmax normalizes in ascending index order.
//! Any implementation change that reorders a sum changes results at the
//! last bit and breaks cross-device digest equality.

use crate::rng::Rng;

pub fn f32s_to_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn bytes_to_f32s(bytes: &[u8]) -> Vec<f32> {
    assert!(bytes.len() % 4 == 0, "byte length {} not a multiple of 4", bytes.len());
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Row-major height x width x channels tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Tensor {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn from_data(h: usize, w: usize, c: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w * c, "tensor data length mismatch");
        Tensor { h, w, c, data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, ch: usize) -> &mut f32 {
        &mut self.data[(y * self.w + x) * self.c + ch]
    }
}

/// Convolution weights, laid out `[filter][dy][dx][in_channel]`.
#[derive(Debug, Clone)]
pub struct ConvWeights {
    pub filters: usize,
    pub ksize: usize,
    pub in_c: usize,
    pub w: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvWeights {
    #[inline]
    fn tap(&self, f: usize, dy: usize, dx: usize, ci: usize) -> f32 {
        self.w[((f * self.ksize + dy) * self.ksize + dx) * self.in_c + ci]
    }
}

/// Draws weights then biases from one seeded stream, scaled by the inverse
/// square root of the fan-in so activations stay O(1).
pub fn seeded_conv_weights(filters: usize, ksize: usize, in_c: usize, seed: u64) -> ConvWeights {
    let mut rng = Rng::seeded(seed);
    let scale = 1.0 / ((ksize * ksize * in_c) as f32).sqrt();
    let w = (0..filters * ksize * ksize * in_c)
        .map(|_| rng.symmetric_f32() * scale)
        .collect();
    let bias = (0..filters).map(|_| rng.symmetric_f32() * scale).collect();
    ConvWeights {
        filters,
        ksize,
        in_c,
        w,
        bias,
    }
}

/// Same-padded 2D convolution: output spatial size equals input size, taps
/// falling outside the input are skipped. The accumulator runs bias first,
/// then (dy, dx, ci) in ascending order.
pub fn conv2d_same(x: &Tensor, wts: &ConvWeights) -> Tensor {
    assert_eq!(x.c, wts.in_c, "channel mismatch");
    let pad = wts.ksize / 2;
    let mut out = Tensor::zeros(x.h, x.w, wts.filters);
    for oy in 0..x.h {
        for ox in 0..x.w {
            for f in 0..wts.filters {
                let mut acc = wts.bias[f];
                for dy in 0..wts.ksize {
                    let iy = oy + dy;
                    if iy < pad || iy - pad >= x.h {
                        continue;
                    }
                    let iy = iy - pad;
                    for dx in 0..wts.ksize {
                        let ix = ox + dx;
                        if ix < pad || ix - pad >= x.w {
                            continue;
                        }
                        let ix = ix - pad;
                        let row = &x.data[(iy * x.w + ix) * x.c..(iy * x.w + ix) * x.c + x.c];
                        for (ci, &v) in row.iter().enumerate() {
                            acc += v * wts.tap(f, dy, dx, ci);
                        }
                    }
                }
                *out.at_mut(oy, ox, f) = acc;
            }
        }
    }
    out
}

/// 2x2 max pooling with stride 2. Requires even spatial dimensions.
pub fn maxpool2(x: &Tensor) -> Tensor {
    assert!(x.h % 2 == 0 && x.w % 2 == 0, "maxpool2 needs even dimensions");
    let mut out = Tensor::zeros(x.h / 2, x.w / 2, x.c);
    for oy in 0..out.h {
        for ox in 0..out.w {
            for ch in 0..x.c {
                let m = x
                    .at(2 * oy, 2 * ox, ch)
                    .max(x.at(2 * oy, 2 * ox + 1, ch))
                    .max(x.at(2 * oy + 1, 2 * ox, ch))
                    .max(x.at(2 * oy + 1, 2 * ox + 1, ch));
                *out.at_mut(oy, ox, ch) = m;
            }
        }
    }
    out
}

pub fn relu(values: &mut [f32]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Fully connected weights, laid out `[out][in]`.
#[derive(Debug, Clone)]
pub struct DenseWeights {
    pub in_f: usize,
    pub out_f: usize,
    pub w: Vec<f32>,
    pub bias: Vec<f32>,
}

pub fn seeded_dense_weights(in_f: usize, out_f: usize, seed: u64) -> DenseWeights {
    let mut rng = Rng::seeded(seed);
    let scale = 1.0 / (in_f as f32).sqrt();
    let w = (0..in_f * out_f).map(|_| rng.symmetric_f32() * scale).collect();
    let bias = (0..out_f).map(|_| rng.symmetric_f32() * scale).collect();
    DenseWeights { in_f, out_f, w, bias }
}

/// out[j] = bias[j] + sum over ascending i of x[i] * w[j][i].
pub fn dense(x: &[f32], wts: &DenseWeights) -> Vec<f32> {
    assert_eq!(x.len(), wts.in_f, "dense input length mismatch");
    let mut out = Vec::with_capacity(wts.out_f);
    for j in 0..wts.out_f {
        let row = &wts.w[j * wts.in_f..(j + 1) * wts.in_f];
        let mut acc = wts.bias[j];
        for (v, t) in x.iter().zip(row) {
            acc += v * t;
        }
        out.push(acc);
    }
    out
}

/// Numerically stable softmax: shift by the maximum, exponentiate,
/// normalize. Sums run in ascending index order.
pub fn softmax(x: &mut [f32]) {
    if x.is_empty() {
        return;
    }
    let mut m = x[0];
    for &v in x.iter() {
        if v > m {
            m = v;
        }
    }
    let mut sum = 0.0f32;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent per-element definitions of the layers, written straight
    // from the math. The fast paths must agree with these bit for bit.

    fn oracle_conv_at(x: &Tensor, wts: &ConvWeights, oy: usize, ox: usize, f: usize) -> f32 {
        let pad = wts.ksize / 2;
        let mut acc = wts.bias[f];
        for dy in 0..wts.ksize {
            for dx in 0..wts.ksize {
                let iy = (oy + dy) as isize - pad as isize;
                let ix = (ox + dx) as isize - pad as isize;
                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                    continue;
                }
                for ci in 0..x.c {
                    acc += x.at(iy as usize, ix as usize, ci) * wts.tap(f, dy, dx, ci);
                }
            }
        }
        acc
    }

    fn oracle_dense_at(x: &[f32], wts: &DenseWeights, j: usize) -> f32 {
        let mut acc = wts.bias[j];
        for i in 0..wts.in_f {
            acc += x[i] * wts.w[j * wts.in_f + i];
        }
        acc
    }

    fn random_tensor(h: usize, w: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = Rng::seeded(seed);
        Tensor::from_data(h, w, c, (0..h * w * c).map(|_| rng.symmetric_f32()).collect())
    }

    #[test]
    fn conv_matches_per_element_oracle_bit_for_bit() {
        let x = random_tensor(7, 5, 3, 11);
        let wts = seeded_conv_weights(4, 5, 3, 12);
        let out = conv2d_same(&x, &wts);
        assert_eq!((out.h, out.w, out.c), (7, 5, 4));
        for oy in 0..out.h {
            for ox in 0..out.w {
                for f in 0..out.c {
                    let want = oracle_conv_at(&x, &wts, oy, ox, f);
                    let got = out.at(oy, ox, f);
                    assert_eq!(
                        got.to_bits(),
                        want.to_bits(),
                        "mismatch at ({oy},{ox},{f}): {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn conv_1x1_kernel_is_a_weighted_sum() {
        let x = Tensor::from_data(1, 1, 2, vec![2.0, -3.0]);
        let wts = ConvWeights {
            filters: 1,
            ksize: 1,
            in_c: 2,
            w: vec![3.0, 0.5],
            bias: vec![0.25],
        };
        let out = conv2d_same(&x, &wts);
        // 0.25 + 2*3 + (-3)*0.5 = 4.75
        assert_eq!(out.data, vec![4.75]);
    }

    #[test]
    fn conv_border_taps_are_skipped() {
        // 3x3 ones through a 3x3 all-ones filter: the center sees all nine
        // taps, a corner only the four that stay in range.
        let x = Tensor::from_data(3, 3, 1, vec![1.0; 9]);
        let wts = ConvWeights {
            filters: 1,
            ksize: 3,
            in_c: 1,
            w: vec![1.0; 9],
            bias: vec![0.0],
        };
        let out = conv2d_same(&x, &wts);
        assert_eq!(out.at(1, 1, 0), 9.0);
        assert_eq!(out.at(0, 0, 0), 4.0);
        assert_eq!(out.at(0, 1, 0), 6.0);
    }

    #[test]
    fn maxpool_picks_the_block_maximum() {
        let x = Tensor::from_data(2, 4, 1, vec![1.0, 5.0, -2.0, 0.0, 3.0, 4.0, -1.0, -8.0]);
        let out = maxpool2(&x);
        assert_eq!((out.h, out.w, out.c), (1, 2, 1));
        assert_eq!(out.data, vec![5.0, 0.0]);
    }

    #[test]
    fn maxpool_matches_oracle_on_random_input() {
        let x = random_tensor(6, 8, 3, 21);
        let out = maxpool2(&x);
        for oy in 0..3 {
            for ox in 0..4 {
                for ch in 0..3 {
                    let mut m = f32::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.at(2 * oy + dy, 2 * ox + dx, ch));
                        }
                    }
                    assert_eq!(out.at(oy, ox, ch).to_bits(), m.to_bits());
                }
            }
        }
    }

    #[test]
    fn relu_clamps_negatives_only() {
        let mut v = vec![-1.5, 0.0, 2.5, -0.0];
        relu(&mut v);
        assert_eq!(v, vec![0.0, 0.0, 2.5, -0.0]);
    }

    #[test]
    fn dense_matches_per_element_oracle_bit_for_bit() {
        let mut rng = Rng::seeded(31);
        let x: Vec<f32> = (0..40).map(|_| rng.symmetric_f32()).collect();
        let wts = seeded_dense_weights(40, 7, 32);
        let out = dense(&x, &wts);
        for j in 0..7 {
            assert_eq!(out[j].to_bits(), oracle_dense_at(&x, &wts, j).to_bits());
        }
    }

    #[test]
    fn dense_hand_example() {
        let wts = DenseWeights {
            in_f: 2,
            out_f: 1,
            w: vec![2.0, -1.0],
            bias: vec![0.5],
        };
        assert_eq!(dense(&[3.0, 4.0], &wts), vec![2.5]);
    }

    #[test]
    fn softmax_is_a_probability_vector() {
        let mut v = vec![1.0, 2.0, 3.0, 4.0];
        softmax(&mut v);
        let sum: f32 = v.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(v.windows(2).all(|w| w[0] < w[1]), "order preserved: {v:?}");
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut v = vec![0.0, 0.0];
        softmax(&mut v);
        assert_eq!(v, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut v = vec![1000.0, 999.0, 500.0];
        softmax(&mut v);
        assert!(v.iter().all(|x| x.is_finite()));
        assert!((v.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn codec_round_trips_every_bit_pattern_class() {
        let values = vec![0.0f32, -0.0, 1.5, -2.25e-12, f32::MAX, f32::MIN_POSITIVE];
        let bytes = f32s_to_bytes(&values);
        assert_eq!(bytes.len(), values.len() * 4);
        let back = bytes_to_f32s(&bytes);
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn seeded_weights_are_reproducible() {
        let a = seeded_conv_weights(2, 3, 2, 5);
        let b = seeded_conv_weights(2, 3, 2, 5);
        assert_eq!(a.w, b.w);
        assert_eq!(a.bias, b.bias);
        let c = seeded_conv_weights(2, 3, 2, 6);
        assert_ne!(a.w, c.w);
    }
}
