//! Layer normalization over the channel axis at each spatial position, with
//! learnable per-channel scale and shift.

use super::{Param, ParamVisitor};
use crate::scalar::{real, Real};
use ndarray::{Array3, Ix1};

#[derive(Debug, Clone)]
pub struct LayerNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub c: usize,
    eps: T,
    cache: Option<NormCache<T>>,
}

#[derive(Debug, Clone)]
struct NormCache<T> {
    x_hat: Array3<T>,
    inv_std: Array3<T>, // (h, w, 1)
}

impl<T: Real> LayerNorm<T> {
    pub fn new(c: usize) -> Self {
        LayerNorm {
            gamma: Param::new(ndarray::ArrayD::from_elem(vec![c], T::one())),
            beta: Param::zeros(&[c]),
            c,
            eps: real(1e-6),
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<T>) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }

    pub fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        let (h, w, c) = x.dim();
        assert_eq!(c, self.c, "LayerNorm: channel mismatch");
        let n = real::<T>(c as f64);
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();

        let mut x_hat = x.clone();
        let mut inv_std = Array3::zeros((h, w, 1));
        for i in 0..h {
            for j in 0..w {
                let mut cell = x_hat.slice_mut(ndarray::s![i, j, ..]);
                let mean = cell.iter().cloned().fold(T::zero(), |a, b| a + b) / n;
                cell.mapv_inplace(|v| v - mean);
                let var = cell.iter().fold(T::zero(), |a, &b| a + b * b) / n;
                let is = T::one() / (var + self.eps).sqrt();
                cell.mapv_inplace(|v| v * is);
                inv_std[[i, j, 0]] = is;
            }
        }
        let mut y = x_hat.clone();
        for mut cell in y.rows_mut() {
            cell.zip_mut_with(&gamma, |v, &g| *v *= g);
            cell += &beta;
        }
        self.cache = Some(NormCache { x_hat, inv_std });
        y
    }

    pub fn backward(&mut self, gy: &Array3<T>) -> Array3<T> {
        let cache = self.cache.take().expect("LayerNorm::backward before forward");
        let (h, w, c) = gy.dim();
        let n = real::<T>(c as f64);
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut g_gamma = self.gamma.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
        let mut g_beta = self.beta.grad.view_mut().into_dimensionality::<Ix1>().unwrap();

        let mut gx = Array3::zeros((h, w, c));
        for i in 0..h {
            for j in 0..w {
                let gyc = gy.slice(ndarray::s![i, j, ..]);
                let xh = cache.x_hat.slice(ndarray::s![i, j, ..]);
                g_beta += &gyc;
                g_gamma.zip_mut_with(&(&gyc * &xh), |a, v| *a += *v);

                // dL/dx = inv_std · (g − mean(g) − x̂ · mean(g·x̂)), g = gy·γ
                let g = &gyc * &gamma;
                let mean_g = g.iter().cloned().fold(T::zero(), |a, b| a + b) / n;
                let mean_gx = g
                    .iter()
                    .zip(xh.iter())
                    .fold(T::zero(), |a, (&u, &v)| a + u * v)
                    / n;
                let is = cache.inv_std[[i, j, 0]];
                let mut out = gx.slice_mut(ndarray::s![i, j, ..]);
                for (o, (&gv, &xv)) in out.iter_mut().zip(g.iter().zip(xh.iter())) {
                    *o = is * (gv - mean_g - xv * mean_gx);
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
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalizes_each_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array::from_shape_fn((3, 3, 8), |_| rng.random_range(-5.0..5.0));
        let mut ln = LayerNorm::<f64>::new(8);
        let y = ln.forward(&x);
        for cell in y.rows() {
            let mean: f64 = cell.sum() / 8.0;
            let var: f64 = cell.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array::from_shape_fn((2, 2, 5), |_| rng.random_range(-2.0..2.0));
        let gy = Array::from_shape_fn((2, 2, 5), |_| rng.random_range(-1.0..1.0));
        let mut ln = LayerNorm::<f64>::new(5);
        for v in ln.gamma.value.iter_mut() {
            *v = rng.random_range(0.5..1.5);
        }
        let loss = |ln: &mut LayerNorm<f64>, x: &Array3<f64>| (&ln.forward(x) * &gy).sum();
        let _ = loss(&mut ln, &x);
        let gx = ln.backward(&gy);

        let eps = 1e-6;
        for idx in [(0, 0, 0), (1, 1, 4), (0, 1, 2)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&mut ln, &xp) - loss(&mut ln, &xm)) / (2.0 * eps);
            assert!((gx[idx] - fd).abs() < 1e-6, "gx mismatch at {idx:?}");
        }
        for flat in [0usize, 3] {
            let orig = ln.gamma.value.as_slice().unwrap()[flat];
            ln.gamma.value.as_slice_mut().unwrap()[flat] = orig + eps;
            let lp = loss(&mut ln, &x);
            ln.gamma.value.as_slice_mut().unwrap()[flat] = orig - eps;
            let lm = loss(&mut ln, &x);
            ln.gamma.value.as_slice_mut().unwrap()[flat] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = ln.gamma.grad.as_slice().unwrap()[flat];
            assert!((an - fd).abs() < 1e-6, "g_gamma mismatch");
        }
    }
}
