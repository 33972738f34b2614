//! Dense multi-head self-attention without masking.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::layers::INIT_STD;
use super::params::{Grads, ParamStore};
use super::tensor::{Scalar, Tensor2};

/// Row-wise softmax, max-shifted.
pub fn softmax_rows<T: Scalar>(s: &mut Tensor2<T>) {
    for r in 0..s.rows {
        let row = s.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    x: Tensor2<T>,
    q: Tensor2<T>,
    k: Tensor2<T>,
    v: Tensor2<T>,
    /// Attention weights per head, `n x n`.
    probs: Vec<Tensor2<T>>,
    concat: Tensor2<T>,
}

impl<T> AttentionCache<T> {
    pub fn probs(&self) -> &[Tensor2<T>] {
        &self.probs
    }
}

fn check_square<T: Scalar>(name: &str, w: &Tensor2<T>, d: usize) -> Result<()> {
    if w.shape() != (d, d) {
        return Err(Error::ShapeMismatch(format!(
            "{name} is {:?}, expected {d}x{d}",
            w.shape()
        )));
    }
    Ok(())
}

/// Per head `softmax(Q K^T / sqrt(d/h)) V`, heads concatenated and
/// projected by `Wo`.
pub fn attention_forward<T: Scalar>(
    x: &Tensor2<T>,
    wq: &Tensor2<T>,
    wk: &Tensor2<T>,
    wv: &Tensor2<T>,
    wo: &Tensor2<T>,
    heads: usize,
) -> Result<(Tensor2<T>, AttentionCache<T>)> {
    let d = x.cols;
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::ShapeMismatch(format!("{d} columns over {heads} heads")));
    }
    for (name, w) in [("Wq", wq), ("Wk", wk), ("Wv", wv), ("Wo", wo)] {
        check_square(name, w, d)?;
    }
    let dh = d / heads;
    let scale = T::one() / T::c(dh as f64).sqrt();
    let q = x.matmul(wq)?;
    let k = x.matmul(wk)?;
    let v = x.matmul(wv)?;
    let mut concat = Tensor2::zeros(x.rows, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.cols_slice(h * dh, dh);
        let kh = k.cols_slice(h * dh, dh);
        let vh = v.cols_slice(h * dh, dh);
        let mut s = qh.matmul_nt(&kh)?;
        s.scale(scale);
        softmax_rows(&mut s);
        concat.set_cols(h * dh, &s.matmul(&vh)?);
        probs.push(s);
    }
    let y = concat.matmul(wo)?;
    Ok((
        y,
        AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            concat,
        },
    ))
}

/// Returns `(dx, dWq, dWk, dWv, dWo)`.
pub fn attention_backward<T: Scalar>(
    cache: &AttentionCache<T>,
    wq: &Tensor2<T>,
    wk: &Tensor2<T>,
    wv: &Tensor2<T>,
    wo: &Tensor2<T>,
    dy: &Tensor2<T>,
) -> Result<[Tensor2<T>; 5]> {
    let heads = cache.probs.len();
    let d = cache.x.cols;
    let dh = d / heads;
    let scale = T::one() / T::c(dh as f64).sqrt();
    let dwo = cache.concat.matmul_tn(dy)?;
    let dconcat = dy.matmul_nt(wo)?;
    let n = cache.x.rows;
    let mut dq = Tensor2::zeros(n, d);
    let mut dk = Tensor2::zeros(n, d);
    let mut dv = Tensor2::zeros(n, d);
    for (h, p) in cache.probs.iter().enumerate() {
        let qh = cache.q.cols_slice(h * dh, dh);
        let kh = cache.k.cols_slice(h * dh, dh);
        let vh = cache.v.cols_slice(h * dh, dh);
        let doh = dconcat.cols_slice(h * dh, dh);
        let dp = doh.matmul_nt(&vh)?;
        dv.set_cols(h * dh, &p.matmul_tn(&doh)?);
        // softmax Jacobian per row: ds = p * (dp - <dp, p>)
        let mut ds = Tensor2::zeros(n, n);
        for r in 0..n {
            let pr = p.row(r);
            let dpr = dp.row(r);
            let dot: T = pr.iter().zip(dpr).map(|(&a, &b)| a * b).sum();
            let out = ds.row_mut(r);
            for c in 0..n {
                out[c] = pr[c] * (dpr[c] - dot) * scale;
            }
        }
        dq.set_cols(h * dh, &ds.matmul(&kh)?);
        dk.set_cols(h * dh, &ds.matmul_tn(&qh)?);
    }
    let dwq = cache.x.matmul_tn(&dq)?;
    let dwk = cache.x.matmul_tn(&dk)?;
    let dwv = cache.x.matmul_tn(&dv)?;
    let mut dx = dq.matmul_nt(wq)?;
    dx.add_assign(&dk.matmul_nt(wk)?)?;
    dx.add_assign(&dv.matmul_nt(wv)?)?;
    Ok([dx, dwq, dwk, dwv, dwo])
}

/// Self-attention with weights named `<prefix>.{wq,wk,wv,wo}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub wq: String,
    pub wk: String,
    pub wv: String,
    pub wo: String,
    pub dim: usize,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new(prefix: &str, dim: usize, heads: usize) -> Self {
        Self {
            wq: format!("{prefix}.wq"),
            wk: format!("{prefix}.wk"),
            wv: format!("{prefix}.wv"),
            wo: format!("{prefix}.wo"),
            dim,
            heads,
        }
    }

    fn names(&self) -> [&str; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }

    pub fn init<T: Scalar>(&self, ps: &mut ParamStore<T>, rng: &mut SeededRng) {
        for name in self.names() {
            ps.insert_normal(name, self.dim, self.dim, INIT_STD, rng);
        }
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor2<T>) -> Result<(Tensor2<T>, AttentionCache<T>)> {
        attention_forward(
            x,
            ps.value(&self.wq),
            ps.value(&self.wk),
            ps.value(&self.wv),
            ps.value(&self.wo),
            self.heads,
        )
    }

    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        cache: &AttentionCache<T>,
        dy: &Tensor2<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor2<T>> {
        let [dx, dwq, dwk, dwv, dwo] = attention_backward(
            cache,
            ps.value(&self.wq),
            ps.value(&self.wk),
            ps.value(&self.wv),
            ps.value(&self.wo),
            dy,
        )?;
        grads.add(&self.wq, &dwq);
        grads.add(&self.wk, &dwk);
        grads.add(&self.wv, &dwv);
        grads.add(&self.wo, &dwo);
        Ok(dx)
    }
}
