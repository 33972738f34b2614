//! Per-token autoencoder trained on uncorrupted inputs.

use crate::error::{Error, Result};
use crate::nn::{gelu, gelu_grad, Grads, Linear, ParamStore, Scalar, Tensor2};
use crate::rng::{streams, SeededRng};
use crate::tokenizer::TokenGrid;

use super::config::{Activation, BaselineConfig};

#[derive(Debug, Clone)]
pub struct BaselineAE<T> {
    cfg: BaselineConfig,
    params: ParamStore<T>,
    layers: [Linear; 4],
}

#[derive(Debug, Clone)]
pub struct BaselineCache<T> {
    /// Input of each linear layer.
    inputs: Vec<Tensor2<T>>,
    /// Pre-activation output of each linear layer.
    pre: Vec<Tensor2<T>>,
}

impl<T: Scalar> BaselineAE<T> {
    pub fn new(cfg: BaselineConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.token_len();
        let layers = [
            Linear::new("ae.enc1", n, cfg.hidden),
            Linear::new("ae.enc2", cfg.hidden, cfg.bottleneck),
            Linear::new("ae.dec1", cfg.bottleneck, cfg.hidden),
            Linear::new("ae.dec2", cfg.hidden, n),
        ];
        let mut rng = SeededRng::new(cfg.init_seed, streams::INIT);
        let mut params = ParamStore::new();
        for l in &layers {
            l.init(&mut params, &mut rng);
        }
        Ok(Self { cfg, params, layers })
    }

    pub fn from_params(cfg: BaselineConfig, params: ParamStore<T>) -> Result<Self> {
        let mut ae = Self::new(cfg)?;
        ae.params.load_values(&params)?;
        Ok(ae)
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn layers(&self) -> &[Linear; 4] {
        &self.layers
    }

    // activation follows layers 0 and 2 (the two hidden widths)
    fn activated(i: usize) -> bool {
        i == 0 || i == 2
    }

    fn act(&self, x: &Tensor2<T>) -> Tensor2<T> {
        match self.cfg.activation {
            Activation::Identity => x.clone(),
            Activation::Gelu => Tensor2 {
                rows: x.rows,
                cols: x.cols,
                data: x.data.iter().map(|&v| gelu(v)).collect(),
            },
        }
    }

    /// Encode and decode every row of `x` (`n x p^3`).
    pub fn forward_rows(&self, x: &Tensor2<T>) -> Result<(Tensor2<T>, BaselineCache<T>)> {
        if x.cols != self.cfg.token_len() {
            return Err(Error::ShapeMismatch(format!(
                "baseline expects tokens of length {}, got {}",
                self.cfg.token_len(),
                x.cols
            )));
        }
        let mut inputs = Vec::with_capacity(4);
        let mut pre = Vec::with_capacity(4);
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let y = l.forward(&self.params, &h)?;
            let next = if Self::activated(i) { self.act(&y) } else { y.clone() };
            inputs.push(h);
            pre.push(y);
            h = next;
        }
        Ok((h, BaselineCache { inputs, pre }))
    }

    pub fn backward(&self, cache: &BaselineCache<T>, dy: &Tensor2<T>) -> Result<Grads<T>> {
        let mut grads = Grads::new();
        let mut g = dy.clone();
        for i in (0..4).rev() {
            if Self::activated(i) && self.cfg.activation == Activation::Gelu {
                g.data
                    .iter_mut()
                    .zip(&cache.pre[i].data)
                    .for_each(|(a, &p)| *a *= gelu_grad(p));
            }
            g = self.layers[i].backward(&self.params, &cache.inputs[i], &g, &mut grads)?;
        }
        Ok(grads)
    }

    pub fn tokens_tensor(tokens: &TokenGrid) -> Result<Tensor2<T>> {
        Tensor2::new(
            tokens.len(),
            tokens.token_len(),
            tokens.tokens.iter().map(|&v| T::from_f32(v)).collect(),
        )
    }
}

/// Per-token reconstruction of unmasked input, `N x p^3`.
pub fn baseline_forward<T: Scalar>(ae: &BaselineAE<T>, tokens: &TokenGrid) -> Result<Tensor2<T>> {
    if tokens.patch_edge != ae.config().patch_edge {
        return Err(Error::ShapeMismatch(format!(
            "patch edge {} vs baseline {}",
            tokens.patch_edge,
            ae.config().patch_edge
        )));
    }
    let x = BaselineAE::tokens_tensor(tokens)?;
    ae.forward_rows(&x).map(|(y, _)| y)
}
