use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::attention::{AttentionCache, SelfAttention};
use super::layers::{LayerNorm, LayerNormCache, Mlp, MlpCache};
use super::params::{Grads, ParamStore};
use super::tensor::{Scalar, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerBlockConfig {
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub eps: f64,
}

impl TransformerBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.mlp_ratio.is_nan() || self.mlp_ratio <= 0.0 || self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("mlp_ratio and eps must be positive".into()));
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        ((self.dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

/// Pre-norm residual block: `x + Attn(LN1(x))`, then `+ Mlp(LN2(.))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    mlp: MlpCache<T>,
}

impl TransformerBlock {
    pub fn new(prefix: &str, cfg: &TransformerBlockConfig) -> Self {
        Self {
            ln1: LayerNorm::new(&format!("{prefix}.ln1"), cfg.dim, cfg.eps),
            attn: SelfAttention::new(&format!("{prefix}.attn"), cfg.dim, cfg.heads),
            ln2: LayerNorm::new(&format!("{prefix}.ln2"), cfg.dim, cfg.eps),
            mlp: Mlp::new(&format!("{prefix}.mlp"), cfg.dim, cfg.hidden()),
        }
    }

    pub fn init<T: Scalar>(&self, ps: &mut ParamStore<T>, rng: &mut SeededRng) {
        self.ln1.init(ps);
        self.attn.init(ps, rng);
        self.ln2.init(ps);
        self.mlp.init(ps, rng);
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor2<T>) -> Result<(Tensor2<T>, BlockCache<T>)> {
        let (h1, ln1) = self.ln1.forward(ps, x)?;
        let (a, attn) = self.attn.forward(ps, &h1)?;
        let x1 = x.add(&a)?;
        let (h2, ln2) = self.ln2.forward(ps, &x1)?;
        let (m, mlp) = self.mlp.forward(ps, &h2)?;
        let out = x1.add(&m)?;
        Ok((out, BlockCache { ln1, attn, ln2, mlp }))
    }

    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        cache: &BlockCache<T>,
        dy: &Tensor2<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor2<T>> {
        let dh2 = self.mlp.backward(ps, &cache.mlp, dy, grads)?;
        let mut dx1 = self.ln2.backward(ps, &cache.ln2, &dh2, grads);
        dx1.add_assign(dy)?;
        let dh1 = self.attn.backward(ps, &cache.attn, &dx1, grads)?;
        let mut dx = self.ln1.backward(ps, &cache.ln1, &dh1, grads);
        dx.add_assign(&dx1)?;
        Ok(dx)
    }
}

/// A sequence of blocks sharing one config.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStack {
    pub blocks: Vec<TransformerBlock>,
}

impl BlockStack {
    pub fn new(prefix: &str, depth: usize, cfg: &TransformerBlockConfig) -> Self {
        Self {
            blocks: (0..depth)
                .map(|i| TransformerBlock::new(&format!("{prefix}.{i:02}"), cfg))
                .collect(),
        }
    }

    pub fn init<T: Scalar>(&self, ps: &mut ParamStore<T>, rng: &mut SeededRng) {
        self.blocks.iter().for_each(|b| b.init(ps, rng));
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: Tensor2<T>) -> Result<(Tensor2<T>, Vec<BlockCache<T>>)> {
        let mut h = x;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, c) = b.forward(ps, &h)?;
            caches.push(c);
            h = next;
        }
        Ok((h, caches))
    }

    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        caches: &[BlockCache<T>],
        dy: Tensor2<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor2<T>> {
        let mut g = dy;
        for (b, c) in self.blocks.iter().zip(caches).rev() {
            g = b.backward(ps, c, &g, grads)?;
        }
        Ok(g)
    }
}
