//! Elementwise and channelwise activations. Stateless free functions; the
//! caller caches whichever side (input or output) the backward form needs.

use crate::scalar::{real, Real};
use ndarray::Array3;

pub fn relu6<T: Real>(x: &Array3<T>) -> Array3<T> {
    let six = real::<T>(6.0);
    x.mapv(|v| v.max(T::zero()).min(six))
}

/// Backward through relu6 given the forward *input*.
pub fn relu6_backward<T: Real>(x: &Array3<T>, gy: &Array3<T>) -> Array3<T> {
    let six = real::<T>(6.0);
    let mut gx = gy.clone();
    gx.zip_mut_with(x, |g, &v| {
        if v <= T::zero() || v >= six {
            *g = T::zero();
        }
    });
    gx
}

#[inline]
fn gelu_scalar<T: Real>(v: T) -> T {
    // tanh approximation: 0.5·x·(1 + tanh(√(2/π)(x + 0.044715x³)))
    let c = real::<T>(0.797_884_560_802_865_4); // √(2/π)
    let a = real::<T>(0.044715);
    let half = real::<T>(0.5);
    let u = c * (v + a * v * v * v);
    half * v * (T::one() + u.tanh())
}

#[inline]
fn gelu_grad_scalar<T: Real>(v: T) -> T {
    let c = real::<T>(0.797_884_560_802_865_4);
    let a = real::<T>(0.044715);
    let half = real::<T>(0.5);
    let three = real::<T>(3.0);
    let u = c * (v + a * v * v * v);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * v * sech2 * c * (T::one() + three * a * v * v)
}

pub fn gelu<T: Real>(x: &Array3<T>) -> Array3<T> {
    x.mapv(gelu_scalar)
}

/// Backward through GELU given the forward *input*.
pub fn gelu_backward<T: Real>(x: &Array3<T>, gy: &Array3<T>) -> Array3<T> {
    let mut gx = gy.clone();
    gx.zip_mut_with(x, |g, &v| *g *= gelu_grad_scalar(v));
    gx
}

pub fn sigmoid<T: Real>(x: &Array3<T>) -> Array3<T> {
    x.mapv(|v| T::one() / (T::one() + (-v).exp()))
}

/// Backward through sigmoid given the forward *output*.
pub fn sigmoid_backward<T: Real>(y: &Array3<T>, gy: &Array3<T>) -> Array3<T> {
    let mut gx = gy.clone();
    gx.zip_mut_with(y, |g, &a| *g *= a * (T::one() - a));
    gx
}

/// Softmax over the channel axis at every spatial position.
pub fn softmax_channels<T: Real>(x: &Array3<T>) -> Array3<T> {
    let mut y = x.clone();
    for mut cell in y.rows_mut() {
        let max = cell.iter().cloned().fold(T::neg_infinity(), T::max);
        cell.mapv_inplace(|v| (v - max).exp());
        let sum = cell.iter().cloned().fold(T::zero(), |a, b| a + b);
        cell.mapv_inplace(|v| v / sum);
    }
    y
}

/// Backward through channelwise softmax given the forward *output*:
/// gx_i = y_i (gy_i − Σ_j gy_j y_j).
pub fn softmax_channels_backward<T: Real>(y: &Array3<T>, gy: &Array3<T>) -> Array3<T> {
    let mut gx = gy.clone();
    let (h, w, _) = y.dim();
    for i in 0..h {
        for j in 0..w {
            let yr = y.slice(ndarray::s![i, j, ..]);
            let gr = gy.slice(ndarray::s![i, j, ..]);
            let dot = yr
                .iter()
                .zip(gr.iter())
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            let mut out = gx.slice_mut(ndarray::s![i, j, ..]);
            for (o, (&a, &g)) in out.iter_mut().zip(yr.iter().zip(gr.iter())) {
                *o = a * (g - dot);
            }
        }
    }
    gx
}
