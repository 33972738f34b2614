//! Masked autoencoder over one superpatch's token grid.
//!
//! Forward pipeline:
//!
//! ```text
//! visible tokens ─ patch_embed ─ + enc_pos ─ encoder blocks ─ encoder.norm
//!   ─ enc_to_dec ─ scatter (mask_token at masked slots) ─ + dec_pos
//!   ─ decoder blocks ─ decoder.norm ─ predictor ─> N x p^3, original order
//! ```
//!
//! The patch embedding acts per token, so embedding only the visible rows
//! equals embedding every token and gathering afterwards.

use crate::error::{Error, Result};
use crate::masking::{gather_rows, MaskPlan};
use crate::nn::{
    BlockCache, BlockStack, Grads, LayerNorm, LayerNormCache, Linear, ParamStore, Scalar, Tensor2, INIT_STD,
};
use crate::rng::{streams, SeededRng};
use crate::tokenizer::{positional_encoding, TokenGrid};

use super::config::MaesilConfig;

pub const MASK_TOKEN: &str = "mask_token";
pub const ENC_POS: &str = "encoder.pos";
pub const DEC_POS: &str = "decoder.pos";

#[derive(Debug, Clone)]
pub struct MaesilModel<T> {
    cfg: MaesilConfig,
    params: ParamStore<T>,
    patch_embed: Linear,
    encoder: BlockStack,
    enc_norm: LayerNorm,
    enc_to_dec: Linear,
    decoder: BlockStack,
    dec_norm: LayerNorm,
    predictor: Linear,
    enc_pos: Tensor2<T>,
    dec_pos: Tensor2<T>,
}

/// Predictions and encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct MaesilOutput<T> {
    /// `N x p^3`, row `i` is the prediction for token `i`.
    pub pred: Tensor2<T>,
    /// `visible x enc_dim`, encoder output after the final norm.
    pub latent: Tensor2<T>,
}

/// Everything the backward pass needs from one forward.
#[derive(Debug, Clone)]
pub struct MaesilCache<T> {
    visible: Vec<usize>,
    masked: Vec<usize>,
    input: Tensor2<T>,
    enc_blocks: Vec<BlockCache<T>>,
    enc_norm: LayerNormCache<T>,
    latent: Tensor2<T>,
    dec_blocks: Vec<BlockCache<T>>,
    dec_norm: LayerNormCache<T>,
    dec_out: Tensor2<T>,
}

fn sinusoid_table<T: Scalar>(grid: [usize; 3], dim: usize) -> Result<Tensor2<T>> {
    let pe = positional_encoding(grid, dim)?;
    let rows = pe.rows();
    Ok(Tensor2 {
        rows,
        cols: dim,
        data: pe.table.iter().map(|&v| T::c(v)).collect(),
    })
}

fn check_tokens(cfg: &MaesilConfig, tokens: &TokenGrid, plan: &MaskPlan) -> Result<()> {
    if plan.grid != tokens.grid {
        return Err(Error::GridMismatch {
            plan: (plan.grid[0], plan.grid[1], plan.grid[2]),
            tokens: (tokens.grid[0], tokens.grid[1], tokens.grid[2]),
        });
    }
    if tokens.grid != cfg.token_grid() || tokens.patch_edge != cfg.patch_edge {
        return Err(Error::ShapeMismatch(format!(
            "token grid {:?} with patch edge {} does not match model grid {:?} / {}",
            tokens.grid,
            tokens.patch_edge,
            cfg.token_grid(),
            cfg.patch_edge
        )));
    }
    if tokens.tokens.len() != cfg.num_tokens() * cfg.token_len() {
        return Err(Error::MalformedTokenGrid(format!(
            "{} values for {} tokens",
            tokens.tokens.len(),
            cfg.num_tokens()
        )));
    }
    Ok(())
}

impl<T: Scalar> MaesilModel<T> {
    /// Fresh model with weights drawn from `cfg.init_seed`.
    pub fn new(cfg: MaesilConfig) -> Result<Self> {
        cfg.validate()?;
        let mut model = Self::skeleton(cfg)?;
        let mut rng = SeededRng::new(model.cfg.init_seed, streams::INIT);
        let mut ps = ParamStore::new();
        model.patch_embed.init(&mut ps, &mut rng);
        model.encoder.init(&mut ps, &mut rng);
        model.enc_norm.init(&mut ps);
        model.enc_to_dec.init(&mut ps, &mut rng);
        ps.insert_normal(MASK_TOKEN, 1, model.cfg.dec_dim, INIT_STD, &mut rng);
        model.decoder.init(&mut ps, &mut rng);
        model.dec_norm.init(&mut ps);
        model.predictor.init(&mut ps, &mut rng);
        if model.cfg.learnable_pos {
            ps.insert(ENC_POS, model.enc_pos.clone(), 2);
            ps.insert(DEC_POS, model.dec_pos.clone(), 2);
        }
        model.params = ps;
        Ok(model)
    }

    /// Model with the given parameters; names and shapes must match `cfg`.
    pub fn from_params(cfg: MaesilConfig, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(cfg)?;
        model.params.load_values(&params)?;
        Ok(model)
    }

    fn skeleton(cfg: MaesilConfig) -> Result<Self> {
        let grid = cfg.token_grid();
        let enc_pos = sinusoid_table(grid, cfg.enc_dim)?;
        let dec_pos = sinusoid_table(grid, cfg.dec_dim)?;
        Ok(Self {
            patch_embed: Linear::new("patch_embed", cfg.token_len(), cfg.enc_dim),
            encoder: BlockStack::new("encoder.blocks", cfg.enc_layers, &cfg.encoder_block()),
            enc_norm: LayerNorm::new("encoder.norm", cfg.enc_dim, cfg.norm_eps),
            enc_to_dec: Linear::new("enc_to_dec", cfg.enc_dim, cfg.dec_dim),
            decoder: BlockStack::new("decoder.blocks", cfg.dec_layers, &cfg.decoder_block()),
            dec_norm: LayerNorm::new("decoder.norm", cfg.dec_dim, cfg.norm_eps),
            predictor: Linear::new("predictor", cfg.dec_dim, cfg.token_len()),
            enc_pos,
            dec_pos,
            params: ParamStore::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &MaesilConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    fn enc_pos(&self) -> &Tensor2<T> {
        if self.cfg.learnable_pos {
            self.params.value(ENC_POS)
        } else {
            &self.enc_pos
        }
    }

    fn dec_pos(&self) -> &Tensor2<T> {
        if self.cfg.learnable_pos {
            self.params.value(DEC_POS)
        } else {
            &self.dec_pos
        }
    }

    pub fn forward(&self, tokens: &TokenGrid, plan: &MaskPlan) -> Result<MaesilOutput<T>> {
        self.forward_cached(tokens, plan).map(|(out, _)| out)
    }

    /// Forward from a visible sequence supplied in arbitrary order.
    ///
    /// `rows` holds one flattened token per entry of `indices`; the pair is
    /// put back in original token order before encoding, so the output does
    /// not depend on the supplied order.
    pub fn forward_sequence(
        &self,
        tokens: &TokenGrid,
        plan: &MaskPlan,
        rows: &[f32],
        indices: &[usize],
    ) -> Result<MaesilOutput<T>> {
        let p3 = self.cfg.token_len();
        if rows.len() != indices.len() * p3 {
            return Err(Error::LengthMismatch {
                expected: indices.len() * p3,
                actual: rows.len(),
            });
        }
        let mut order: Vec<usize> = (0..indices.len()).collect();
        order.sort_by_key(|&i| indices[i]);
        let visible: Vec<usize> = order.iter().map(|&i| indices[i]).collect();
        if visible != plan.visible_indices() {
            return Err(Error::ShapeMismatch(
                "index list does not match the plan's visible set".into(),
            ));
        }
        let input = gather_rows(rows, p3, &order);
        self.run(tokens, plan, visible, input).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, tokens: &TokenGrid, plan: &MaskPlan) -> Result<(MaesilOutput<T>, MaesilCache<T>)> {
        check_tokens(&self.cfg, tokens, plan)?;
        let visible = plan.visible_indices();
        let input = gather_rows(&tokens.tokens, self.cfg.token_len(), &visible);
        self.run(tokens, plan, visible, input)
    }

    fn run(
        &self,
        tokens: &TokenGrid,
        plan: &MaskPlan,
        visible: Vec<usize>,
        input: Vec<f32>,
    ) -> Result<(MaesilOutput<T>, MaesilCache<T>)> {
        check_tokens(&self.cfg, tokens, plan)?;
        let ps = &self.params;
        let p3 = self.cfg.token_len();
        let v = visible.len();

        let input = Tensor2::new(v, p3, input.into_iter().map(T::from_f32).collect())?;
        let mut emb = self.patch_embed.forward(ps, &input)?;
        let enc_pos = self.enc_pos();
        for (r, &t) in visible.iter().enumerate() {
            emb.row_mut(r)
                .iter_mut()
                .zip(enc_pos.row(t))
                .for_each(|(a, &b)| *a += b);
        }

        let (h, enc_blocks) = self.encoder.forward(ps, emb)?;
        let (latent, enc_norm) = self.enc_norm.forward(ps, &h)?;
        let z = self.enc_to_dec.forward(ps, &latent)?;

        let n = plan.len();
        let dd = self.cfg.dec_dim;
        let mask_token = ps.value(MASK_TOKEN).row(0);
        let mut full = Tensor2::zeros(n, dd);
        let mut masked = Vec::with_capacity(n - v);
        for t in 0..n {
            if !plan.visible[t] {
                full.row_mut(t).copy_from_slice(mask_token);
                masked.push(t);
            }
        }
        for (r, &t) in visible.iter().enumerate() {
            full.row_mut(t).copy_from_slice(z.row(r));
        }
        full.add_assign(self.dec_pos())?;

        let (g, dec_blocks) = self.decoder.forward(ps, full)?;
        let (dec_out, dec_norm) = self.dec_norm.forward(ps, &g)?;
        let pred = self.predictor.forward(ps, &dec_out)?;

        let cache = MaesilCache {
            visible,
            masked,
            input,
            enc_blocks,
            enc_norm,
            latent: latent.clone(),
            dec_blocks,
            dec_norm,
            dec_out,
        };
        Ok((MaesilOutput { pred, latent }, cache))
    }

    /// Gradients of a scalar loss given `dloss/dpred`.
    pub fn backward(&self, cache: &MaesilCache<T>, dpred: &Tensor2<T>) -> Result<Grads<T>> {
        let ps = &self.params;
        let mut grads = Grads::new();
        let ddec_out = self.predictor.backward(ps, &cache.dec_out, dpred, &mut grads)?;
        let dg = self.dec_norm.backward(ps, &cache.dec_norm, &ddec_out, &mut grads);
        let dfull = self.decoder.backward(ps, &cache.dec_blocks, dg, &mut grads)?;
        if self.cfg.learnable_pos {
            grads.add(DEC_POS, &dfull);
        }

        let dd = self.cfg.dec_dim;
        let mut dmask = Tensor2::zeros(1, dd);
        for &t in &cache.masked {
            dmask.data.iter_mut().zip(dfull.row(t)).for_each(|(a, &b)| *a += b);
        }
        grads.add(MASK_TOKEN, &dmask);

        let dz = Tensor2::new(cache.visible.len(), dd, gather_rows(&dfull.data, dd, &cache.visible))?;
        let dlatent = self.enc_to_dec.backward(ps, &cache.latent, &dz, &mut grads)?;
        let dh = self.enc_norm.backward(ps, &cache.enc_norm, &dlatent, &mut grads);
        let demb = self.encoder.backward(ps, &cache.enc_blocks, dh, &mut grads)?;
        if self.cfg.learnable_pos {
            let mut dpos = Tensor2::zeros(self.cfg.num_tokens(), self.cfg.enc_dim);
            for (r, &t) in cache.visible.iter().enumerate() {
                dpos.row_mut(t).copy_from_slice(demb.row(r));
            }
            grads.add(ENC_POS, &dpos);
        }
        self.patch_embed.backward(ps, &cache.input, &demb, &mut grads)?;
        Ok(grads)
    }
}
