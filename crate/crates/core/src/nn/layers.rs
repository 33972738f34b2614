//! Dense kernels and their hand-derived backward passes.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::params::{Grads, ParamStore};
use super::tensor::{Scalar, Tensor2};

/// Standard deviation of the truncated-normal weight initialization.
pub const INIT_STD: f64 = 0.02;

/// `y = x W + b`, bias broadcast over rows.
pub fn linear_forward<T: Scalar>(x: &Tensor2<T>, w: &Tensor2<T>, b: &[T]) -> Result<Tensor2<T>> {
    let mut y = x.matmul(w)?;
    y.add_row(b)?;
    Ok(y)
}

/// Per-row normalization cache for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub xhat: Tensor2<T>,
    pub rstd: Vec<T>,
}

/// `(x - mean) / sqrt(var + eps) * gamma + beta`, population variance.
pub fn layernorm_forward<T: Scalar>(
    x: &Tensor2<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<(Tensor2<T>, LayerNormCache<T>)> {
    let d = x.cols;
    if d == 0 || gamma.len() != d || beta.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "layer norm over {d} columns with gamma {} / beta {}",
            gamma.len(),
            beta.len()
        )));
    }
    let inv_d = T::one() / T::c(d as f64);
    let mut y = Tensor2::zeros(x.rows, d);
    let mut xhat = Tensor2::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for (o, &v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * rs;
        }
        let yr = y.row_mut(r);
        for c in 0..d {
            yr[c] = xhat.data[r * d + c] * gamma[c] + beta[c];
        }
    }
    Ok((y, LayerNormCache { xhat, rstd }))
}

pub fn layernorm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &[T],
    dy: &Tensor2<T>,
) -> (Tensor2<T>, Tensor2<T>, Tensor2<T>) {
    let d = dy.cols;
    let inv_d = T::one() / T::c(d as f64);
    let mut dx = Tensor2::zeros(dy.rows, d);
    let mut dgamma = Tensor2::zeros(1, d);
    let mut dbeta = Tensor2::zeros(1, d);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..dy.rows {
        let g = dy.row(r);
        let xh = cache.xhat.row(r);
        for c in 0..d {
            dgamma.data[c] += g[c] * xh[c];
            dbeta.data[c] += g[c];
            dxhat[c] = g[c] * gamma[c];
        }
        let mean_dxhat = dxhat.iter().copied().sum::<T>() * inv_d;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
        let rs = cache.rstd[r];
        let out = dx.row_mut(r);
        for c in 0..d {
            out[c] = rs * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    let u = T::c(GELU_K) * (x + T::c(GELU_A) * x * x * x);
    half * x * (T::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    let u = T::c(GELU_K) * (x + T::c(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::c(GELU_K) * (T::one() + T::c(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// Linear map whose weight and bias live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(prefix: &str, din: usize, dout: usize) -> Self {
        Self {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            din,
            dout,
        }
    }

    pub fn init<T: Scalar>(&self, ps: &mut ParamStore<T>, rng: &mut SeededRng) {
        ps.insert_normal(&self.weight, self.din, self.dout, INIT_STD, rng);
        ps.insert_vector(&self.bias, self.dout, 0.0);
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor2<T>) -> Result<Tensor2<T>> {
        linear_forward(x, ps.value(&self.weight), &ps.value(&self.bias).data)
    }

    /// Accumulates `dW = x^T dy`, `db = sum(dy)` and returns `dy W^T`.
    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor2<T>,
        dy: &Tensor2<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor2<T>> {
        grads.add(&self.weight, &x.matmul_tn(dy)?);
        grads.add(&self.bias, &dy.sum_rows());
        dy.matmul_nt(ps.value(&self.weight))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(prefix: &str, dim: usize, eps: f64) -> Self {
        Self {
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
            dim,
            eps,
        }
    }

    pub fn init<T: Scalar>(&self, ps: &mut ParamStore<T>) {
        ps.insert_vector(&self.gamma, self.dim, 1.0);
        ps.insert_vector(&self.beta, self.dim, 0.0);
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor2<T>) -> Result<(Tensor2<T>, LayerNormCache<T>)> {
        layernorm_forward(
            x,
            &ps.value(&self.gamma).data,
            &ps.value(&self.beta).data,
            T::c(self.eps),
        )
    }

    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        cache: &LayerNormCache<T>,
        dy: &Tensor2<T>,
        grads: &mut Grads<T>,
    ) -> Tensor2<T> {
        let (dx, dgamma, dbeta) = layernorm_backward(cache, &ps.value(&self.gamma).data, dy);
        grads.add(&self.gamma, &dgamma);
        grads.add(&self.beta, &dbeta);
        dx
    }
}

/// Two linear maps with a GELU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    x: Tensor2<T>,
    pre: Tensor2<T>,
    act: Tensor2<T>,
}

impl Mlp {
    pub fn new(prefix: &str, dim: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::new(&format!("{prefix}.fc1"), dim, hidden),
            fc2: Linear::new(&format!("{prefix}.fc2"), hidden, dim),
        }
    }

    pub fn init<T: Scalar>(&self, ps: &mut ParamStore<T>, rng: &mut SeededRng) {
        self.fc1.init(ps, rng);
        self.fc2.init(ps, rng);
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor2<T>) -> Result<(Tensor2<T>, MlpCache<T>)> {
        let pre = self.fc1.forward(ps, x)?;
        let act = Tensor2 {
            rows: pre.rows,
            cols: pre.cols,
            data: pre.data.iter().map(|&v| gelu(v)).collect(),
        };
        let y = self.fc2.forward(ps, &act)?;
        Ok((y, MlpCache { x: x.clone(), pre, act }))
    }

    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        cache: &MlpCache<T>,
        dy: &Tensor2<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor2<T>> {
        let mut dact = self.fc2.backward(ps, &cache.act, dy, grads)?;
        dact.data
            .iter_mut()
            .zip(&cache.pre.data)
            .for_each(|(g, &p)| *g *= gelu_grad(p));
        self.fc1.backward(ps, &cache.x, &dact, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_examples() {
        let x = Tensor2::new(1, 2, vec![1.0, 2.0]).unwrap();
        let w = Tensor2::identity(2);
        assert_eq!(linear_forward(&x, &w, &[0.0, 0.0]).unwrap(), x);
        assert_eq!(linear_forward(&x, &w, &[3.0, 3.0]).unwrap().data, vec![4.0, 5.0]);
        let zero = Tensor2::zeros(3, 2);
        let y = linear_forward(&zero, &w, &[1.5, -2.0]).unwrap();
        assert!(y.data.chunks(2).all(|r| r == [1.5, -2.0]));
        assert!(linear_forward(&x, &Tensor2::identity(3), &[0.0; 3]).is_err());
    }

    #[test]
    fn linear_weight_grad_closed_form() {
        // loss = sum(y): dW = x^T 1
        let x = Tensor2::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let lin = Linear::new("l", 3, 2);
        let mut ps = ParamStore::<f64>::new();
        lin.init(&mut ps, &mut SeededRng::new(0, 0));
        let mut grads = Grads::new();
        lin.backward(&ps, &x, &Tensor2::filled(2, 2, 1.0), &mut grads).unwrap();
        assert_eq!(grads.get("l.weight").unwrap().data, vec![5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
        assert_eq!(grads.get("l.bias").unwrap().data, vec![2.0, 2.0]);
    }

    #[test]
    fn layernorm_examples() {
        let ones = [1.0f64, 1.0];
        let zeros = [0.0, 0.0];
        let c = Tensor2::new(1, 2, vec![3.0, 3.0]).unwrap();
        assert_eq!(
            layernorm_forward(&c, &ones, &zeros, 1e-5).unwrap().0.data,
            vec![0.0, 0.0]
        );
        let x = Tensor2::new(1, 2, vec![1.0, -1.0]).unwrap();
        let y = layernorm_forward(&x, &ones, &zeros, 1e-12).unwrap().0;
        assert!((y.data[0] - 1.0).abs() < 1e-9 && (y.data[1] + 1.0).abs() < 1e-9);
        let y = layernorm_forward(&x, &zeros, &[5.0, 5.0], 1e-5).unwrap().0;
        assert_eq!(y.data, vec![5.0, 5.0]);
    }

    #[test]
    fn layernorm_moments() {
        let x = Tensor2::new(1, 5, vec![0.3, -1.2, 4.0, 2.2, 0.1]).unwrap();
        let y = layernorm_forward(&x, &[1.0; 5], &[0.0; 5], 1e-12).unwrap().0;
        let mean = y.data.iter().sum::<f64>() / 5.0;
        let var = y.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert!(mean.abs() <= 1e-10);
        assert!((var - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_191_990_608_276_8).abs() < 1e-12);
        let h = 1e-6;
        for x in [-2.0f64, -0.3, 0.0, 0.7, 3.1] {
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - num).abs() < 1e-8);
        }
    }
}
