use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::MaskRatios;
use crate::nn::TransformerBlockConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    MaskedOnly,
    AllTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaesilConfig {
    pub superpatch_edge: usize,
    pub patch_edge: usize,
    pub enc_dim: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub dec_dim: usize,
    pub dec_layers: usize,
    pub dec_heads: usize,
    pub mlp_ratio: f64,
    pub norm_eps: f64,
    pub mask: MaskRatios,
    pub loss_scope: LossScope,
    /// Normalize each target patch to zero mean / unit variance in the loss.
    #[serde(default)]
    pub normalize_targets: bool,
    /// Train the positional tables instead of keeping them fixed.
    #[serde(default)]
    pub learnable_pos: bool,
    pub init_seed: u64,
}

impl MaesilConfig {
    /// Full-size configuration: 128^3 superpatches, 8^3 patches, 768-wide
    /// encoder, per-stage masking ratios.
    pub fn full() -> Self {
        Self {
            superpatch_edge: 128,
            patch_edge: 8,
            enc_dim: 768,
            enc_layers: 12,
            enc_heads: 12,
            // 528 is the nearest width to 512 that splits into three even
            // sinusoid blocks and 16 heads
            dec_dim: 528,
            dec_layers: 8,
            dec_heads: 16,
            mlp_ratio: 4.0,
            norm_eps: 1e-6,
            mask: MaskRatios::PAPER_STAGES,
            loss_scope: LossScope::MaskedOnly,
            normalize_targets: false,
            learnable_pos: false,
            init_seed: 0,
        }
    }

    /// 32^3 superpatches (64 tokens), width 24, 2 + 2 layers, 4 heads.
    pub fn tiny() -> Self {
        Self {
            superpatch_edge: 32,
            patch_edge: 8,
            enc_dim: 24,
            enc_layers: 2,
            enc_heads: 4,
            dec_dim: 24,
            dec_layers: 2,
            dec_heads: 4,
            mlp_ratio: 4.0,
            norm_eps: 1e-6,
            mask: MaskRatios::PAPER_STAGES,
            loss_scope: LossScope::MaskedOnly,
            normalize_targets: false,
            learnable_pos: false,
            init_seed: 0,
        }
    }

    pub fn token_grid(&self) -> [usize; 3] {
        let t = self.superpatch_edge / self.patch_edge;
        [t, t, t]
    }

    pub fn num_tokens(&self) -> usize {
        self.token_grid().iter().product()
    }

    pub fn token_len(&self) -> usize {
        self.patch_edge.pow(3)
    }

    pub fn encoder_block(&self) -> TransformerBlockConfig {
        TransformerBlockConfig {
            dim: self.enc_dim,
            heads: self.enc_heads,
            mlp_ratio: self.mlp_ratio,
            eps: self.norm_eps,
        }
    }

    pub fn decoder_block(&self) -> TransformerBlockConfig {
        TransformerBlockConfig {
            dim: self.dec_dim,
            heads: self.dec_heads,
            mlp_ratio: self.mlp_ratio,
            eps: self.norm_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_edge == 0 || !self.superpatch_edge.is_multiple_of(self.patch_edge) {
            return Err(Error::Config(format!(
                "superpatch edge {} is not a multiple of patch edge {}",
                self.superpatch_edge, self.patch_edge
            )));
        }
        for (what, d) in [("enc_dim", self.enc_dim), ("dec_dim", self.dec_dim)] {
            if d == 0 || d % 6 != 0 {
                return Err(Error::Config(format!(
                    "{what} = {d} must split into three even sinusoid blocks (multiple of 6)"
                )));
            }
        }
        self.encoder_block().validate()?;
        self.decoder_block().validate()?;
        self.mask.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Identity,
}

/// Per-token autoencoder: `p^3 -> hidden -> bottleneck -> hidden -> p^3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub patch_edge: usize,
    pub hidden: usize,
    pub bottleneck: usize,
    pub activation: Activation,
    pub init_seed: u64,
}

impl BaselineConfig {
    /// Hidden width `p^3 / 2`, bottleneck `p^3 / 4`.
    pub fn for_patch(patch_edge: usize) -> Self {
        let n = patch_edge.pow(3);
        Self {
            patch_edge,
            hidden: (n / 2).max(1),
            bottleneck: (n / 4).max(1),
            activation: Activation::Gelu,
            init_seed: 0,
        }
    }

    pub fn token_len(&self) -> usize {
        self.patch_edge.pow(3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_edge == 0 || self.hidden == 0 || self.bottleneck == 0 {
            return Err(Error::Config("baseline widths must be positive".into()));
        }
        Ok(())
    }
}

/// Architecture tag stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum ModelSpec {
    Maesil(MaesilConfig),
    BaselineAe(BaselineConfig),
}
