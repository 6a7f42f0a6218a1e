//! Dense and depthwise 2D convolutions with "same" padding.
//!
//! Dense convolution is im2col + GEMM; depthwise is a direct loop that
//! vectorizes over the contiguous channel axis. Padding follows the
//! TensorFlow SAME convention: `out = ceil(in / stride)` with any odd excess
//! padded at the bottom/right.

use super::{truncated_normal, Param, ParamVisitor};
use crate::scalar::Real;
use ndarray::{Array2, Array3, Ix1, Ix2};
use rand_chacha::ChaCha8Rng;

fn same_padding(input: usize, k: usize, stride: usize) -> (usize, usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(input);
    (out, total / 2, total - total / 2)
}

/// Dense convolution, weight layout (k·k·c_in, c_out).
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    cache: Option<ConvCache<T>>,
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    patches: Array2<T>,
    in_h: usize,
    in_w: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv2d {
            weight: Param::new(truncated_normal(rng, 0.02, &[k * k * c_in, c_out])),
            bias: Param::zeros(&[c_out]),
            k,
            c_in,
            c_out,
            stride,
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<T>) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    fn im2col(&self, x: &Array3<T>) -> (Array2<T>, usize, usize) {
        let (in_h, in_w, c) = x.dim();
        assert_eq!(c, self.c_in, "Conv2d: input channel mismatch");
        let (out_h, pad_top, _) = same_padding(in_h, self.k, self.stride);
        let (out_w, pad_left, _) = same_padding(in_w, self.k, self.stride);
        let mut patches = Array2::zeros((out_h * out_w, self.k * self.k * self.c_in));
        for oh in 0..out_h {
            for ow in 0..out_w {
                let row = oh * out_w + ow;
                for kh in 0..self.k {
                    let ih = (oh * self.stride + kh) as isize - pad_top as isize;
                    if ih < 0 || ih >= in_h as isize {
                        continue;
                    }
                    for kw in 0..self.k {
                        let iw = (ow * self.stride + kw) as isize - pad_left as isize;
                        if iw < 0 || iw >= in_w as isize {
                            continue;
                        }
                        let base = (kh * self.k + kw) * self.c_in;
                        let src = x.slice(ndarray::s![ih as usize, iw as usize, ..]);
                        let mut dst = patches.slice_mut(ndarray::s![row, base..base + self.c_in]);
                        dst.assign(&src);
                    }
                }
            }
        }
        (patches, out_h, out_w)
    }

    pub fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        let (in_h, in_w, _) = x.dim();
        let (patches, out_h, out_w) = self.im2col(x);
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y2 = patches.dot(&w);
        for mut row in y2.rows_mut() {
            row += &b;
        }
        self.cache = Some(ConvCache {
            patches,
            in_h,
            in_w,
        });
        y2.into_shape_with_order((out_h, out_w, self.c_out)).unwrap()
    }

    pub fn backward(&mut self, gy: &Array3<T>) -> Array3<T> {
        let cache = self.cache.take().expect("Conv2d::backward before forward");
        let (out_h, out_w, c_out) = gy.dim();
        assert_eq!(c_out, self.c_out);
        let gy2 = gy
            .view()
            .into_shape_with_order((out_h * out_w, c_out))
            .unwrap();

        // Parameter gradients.
        let gw = cache.patches.t().dot(&gy2);
        let mut w_grad = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
        w_grad += &gw;
        let mut b_grad = self.bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
        for row in gy2.rows() {
            b_grad += &row;
        }

        // Input gradient: gcols = gy · wᵀ, then scatter back (col2im).
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let gcols = gy2.dot(&w.t());
        let (_, pad_top, _) = same_padding(cache.in_h, self.k, self.stride);
        let (_, pad_left, _) = same_padding(cache.in_w, self.k, self.stride);
        let mut gx = Array3::zeros((cache.in_h, cache.in_w, self.c_in));
        for oh in 0..out_h {
            for ow in 0..out_w {
                let row = oh * out_w + ow;
                for kh in 0..self.k {
                    let ih = (oh * self.stride + kh) as isize - pad_top as isize;
                    if ih < 0 || ih >= cache.in_h as isize {
                        continue;
                    }
                    for kw in 0..self.k {
                        let iw = (ow * self.stride + kw) as isize - pad_left as isize;
                        if iw < 0 || iw >= cache.in_w as isize {
                            continue;
                        }
                        let base = (kh * self.k + kw) * self.c_in;
                        let src = gcols.slice(ndarray::s![row, base..base + self.c_in]);
                        let mut dst =
                            gx.slice_mut(ndarray::s![ih as usize, iw as usize, ..]);
                        dst += &src;
                    }
                }
            }
        }
        gx
    }
}

/// Depthwise convolution, weight layout (k·k, c).
#[derive(Debug, Clone)]
pub struct DepthwiseConv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub k: usize,
    pub c: usize,
    pub stride: usize,
    cache: Option<Array3<T>>,
}

impl<T: Real> DepthwiseConv2d<T> {
    pub fn new(c: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        DepthwiseConv2d {
            weight: Param::new(truncated_normal(rng, 0.02, &[k * k, c])),
            bias: Param::zeros(&[c]),
            k,
            c,
            stride,
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<T>) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        let (in_h, in_w, c) = x.dim();
        assert_eq!(c, self.c, "DepthwiseConv2d: input channel mismatch");
        let (out_h, pad_top, _) = same_padding(in_h, self.k, self.stride);
        let (out_w, pad_left, _) = same_padding(in_w, self.k, self.stride);
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = Array3::zeros((out_h, out_w, c));
        for oh in 0..out_h {
            for ow in 0..out_w {
                let mut acc = y.slice_mut(ndarray::s![oh, ow, ..]);
                acc.assign(&b);
                for kh in 0..self.k {
                    let ih = (oh * self.stride + kh) as isize - pad_top as isize;
                    if ih < 0 || ih >= in_h as isize {
                        continue;
                    }
                    for kw in 0..self.k {
                        let iw = (ow * self.stride + kw) as isize - pad_left as isize;
                        if iw < 0 || iw >= in_w as isize {
                            continue;
                        }
                        let xr = x.slice(ndarray::s![ih as usize, iw as usize, ..]);
                        let wr = w.row(kh * self.k + kw);
                        acc.zip_mut_with(&(&xr * &wr), |a, v| *a += *v);
                    }
                }
            }
        }
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Array3<T>) -> Array3<T> {
        let x = self.cache.take().expect("DepthwiseConv2d::backward before forward");
        let (in_h, in_w, c) = x.dim();
        let (out_h, out_w, _) = gy.dim();
        let (_, pad_top, _) = same_padding(in_h, self.k, self.stride);
        let (_, pad_left, _) = same_padding(in_w, self.k, self.stride);
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
        let mut gb = self.bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
        let mut gx = Array3::zeros((in_h, in_w, c));
        for oh in 0..out_h {
            for ow in 0..out_w {
                let g = gy.slice(ndarray::s![oh, ow, ..]);
                gb += &g;
                for kh in 0..self.k {
                    let ih = (oh * self.stride + kh) as isize - pad_top as isize;
                    if ih < 0 || ih >= in_h as isize {
                        continue;
                    }
                    for kw in 0..self.k {
                        let iw = (ow * self.stride + kw) as isize - pad_left as isize;
                        if iw < 0 || iw >= in_w as isize {
                            continue;
                        }
                        let xr = x.slice(ndarray::s![ih as usize, iw as usize, ..]);
                        let mut gwr = gw.row_mut(kh * self.k + kw);
                        gwr.zip_mut_with(&(&xr * &g), |a, v| *a += *v);
                        let wr = w.row(kh * self.k + kw);
                        let mut gxr = gx.slice_mut(ndarray::s![ih as usize, iw as usize, ..]);
                        gxr.zip_mut_with(&(&wr * &g), |a, v| *a += *v);
                    }
                }
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};

    #[test]
    fn same_padding_shapes() {
        assert_eq!(same_padding(480, 3, 2).0, 240);
        assert_eq!(same_padding(15, 3, 1), (15, 1, 1));
        assert_eq!(same_padding(15, 4, 1), (15, 1, 2));
        assert_eq!(same_padding(30, 3, 2).0, 15);
        assert_eq!(same_padding(15, 7, 1), (15, 3, 3));
    }

    #[test]
    fn conv_identity_kernel() {
        // 1×1 conv with identity weight reproduces the input.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f64>::new(3, 3, 1, 1, &mut rng);
        let mut w = Array2::zeros((3, 3));
        for i in 0..3 {
            w[[i, i]] = 1.0;
        }
        conv.weight.value = w.into_dyn();
        let x = Array::from_shape_fn((4, 5, 3), |(h, w_, c)| (h * 15 + w_ * 3 + c) as f64);
        let y = conv.forward(&x);
        assert_eq!(y, x);
    }

    /// Finite-difference check of both convolution backward passes.
    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array::from_shape_fn((5, 5, 2), |_| rng.random_range(-1.0..1.0));
        let gy = Array::from_shape_fn((3, 3, 3), |_| rng.random_range(-1.0..1.0));

        let mut conv = Conv2d::<f64>::new(2, 3, 3, 2, &mut rng);
        let loss = |c: &mut Conv2d<f64>, x: &Array3<f64>| -> f64 {
            let y = c.forward(x);
            (&y * &gy).sum()
        };
        let _ = loss(&mut conv, &x);
        let gx = conv.backward(&gy);

        let eps = 1e-6;
        // Input gradient.
        for idx in [(0, 0, 0), (2, 3, 1), (4, 4, 0)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&mut conv, &xp) - loss(&mut conv, &xm)) / (2.0 * eps);
            assert!((gx[idx] - fd).abs() < 1e-6, "gx mismatch at {idx:?}");
        }
        // Weight gradient.
        for flat in [0usize, 7, 17] {
            let orig = conv.weight.value.as_slice().unwrap()[flat];
            conv.weight.value.as_slice_mut().unwrap()[flat] = orig + eps;
            let lp = loss(&mut conv, &x);
            conv.weight.value.as_slice_mut().unwrap()[flat] = orig - eps;
            let lm = loss(&mut conv, &x);
            conv.weight.value.as_slice_mut().unwrap()[flat] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = conv.weight.grad.as_slice().unwrap()[flat];
            assert!((an - fd).abs() < 1e-6, "gw mismatch at {flat}");
        }
    }

    #[test]
    fn depthwise_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array::from_shape_fn((6, 6, 3), |_| rng.random_range(-1.0..1.0));
        let gy_full = Array::from_shape_fn((6, 6, 3), |_| rng.random_range(-1.0..1.0));

        let mut conv = DepthwiseConv2d::<f64>::new(3, 3, 1, &mut rng);
        let loss = |c: &mut DepthwiseConv2d<f64>, x: &Array3<f64>| -> f64 {
            let y = c.forward(x);
            (&y * &gy_full).sum()
        };
        let _ = loss(&mut conv, &x);
        let gx = conv.backward(&gy_full);

        let eps = 1e-6;
        for idx in [(0, 0, 0), (3, 2, 2), (5, 5, 1)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&mut conv, &xp) - loss(&mut conv, &xm)) / (2.0 * eps);
            assert!((gx[idx] - fd).abs() < 1e-6, "gx mismatch at {idx:?}");
        }
        for flat in [0usize, 13, 26] {
            let orig = conv.weight.value.as_slice().unwrap()[flat];
            conv.weight.value.as_slice_mut().unwrap()[flat] = orig + eps;
            let lp = loss(&mut conv, &x);
            conv.weight.value.as_slice_mut().unwrap()[flat] = orig - eps;
            let lm = loss(&mut conv, &x);
            conv.weight.value.as_slice_mut().unwrap()[flat] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = conv.weight.grad.as_slice().unwrap()[flat];
            assert!((an - fd).abs() < 1e-6, "gw mismatch at {flat}");
        }
    }

    #[test]
    fn depthwise_stride2_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = DepthwiseConv2d::<f32>::new(4, 3, 2, &mut rng);
        let x = Array3::<f32>::zeros((30, 30, 4));
        assert_eq!(conv.forward(&x).dim(), (15, 15, 4));
    }
}
