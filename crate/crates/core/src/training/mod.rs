//! Optimization loop, Adam and checkpoints.
//!
//! Superpatches from every volume are indexed globally in dataset order
//! (volume, then x-fastest superpatch index). Epoch `e` visits them in the
//! order of a permutation drawn from `hash64(run_seed, e, 0)`; step `s`
//! (1-based) takes positions `(s-1)*B .. s*B` of the concatenated epoch
//! orders, so a batch may straddle an epoch boundary. The superpatch with
//! global index `g` drawn in epoch `e` is masked with
//! `superpatch_seed(run_seed, g, e)`.
//!
//! Per-superpatch gradients may be computed in parallel; they are summed in
//! batch order and divided by `B`, so the result does not depend on the
//! thread count.

mod adam;
mod checkpoint;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointConfig,
    FORMAT_VERSION, MAGIC,
};

use crate::error::{Error, Result};
use crate::masking::{sample_mask, MaskPlan, MaskRatios};
use crate::model::{loss_and_grad, BaselineAE, LossScope, MaesilModel, ModelSpec};
use crate::nn::{Grads, ParamStore, Scalar, Tensor2};
use crate::rng::{hash64, streams, superpatch_seed, SeededRng};
use crate::tokenizer::{extract_superpatch, partition, patchify_at, TokenGrid};
use crate::volume_io::Volume;

fn default_log_every() -> u64 {
    10
}

fn default_preset() -> String {
    "tiny-test".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub steps: u64,
    /// Superpatches per step.
    pub batch_size: usize,
    pub run_seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default = "default_preset")]
    pub preset: String,
    /// Global gradient-norm clip; off when absent.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            lr: a.lr,
            betas: (a.beta1, a.beta2),
            eps: a.eps,
            weight_decay: a.weight_decay,
            steps: 1000,
            batch_size: 4,
            run_seed: 0,
            log_every: default_log_every(),
            preset: default_preset(),
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// A model the loop can optimize.
pub trait Trainable<T: Scalar>: Sync {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    fn spec(&self) -> ModelSpec;
    fn mask_ratios(&self) -> MaskRatios;
    /// Loss on one superpatch and the gradient of every parameter.
    fn loss_and_grads(&self, tokens: &TokenGrid, plan: &MaskPlan) -> Result<(T, Grads<T>)>;
}

impl<T: Scalar> Trainable<T> for MaesilModel<T> {
    fn params(&self) -> &ParamStore<T> {
        MaesilModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        MaesilModel::params_mut(self)
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::Maesil(self.config().clone())
    }

    fn mask_ratios(&self) -> MaskRatios {
        self.config().mask
    }

    fn loss_and_grads(&self, tokens: &TokenGrid, plan: &MaskPlan) -> Result<(T, Grads<T>)> {
        let cfg = self.config();
        let (out, cache) = self.forward_cached(tokens, plan)?;
        let (loss, dpred) = loss_and_grad(&out.pred, tokens, plan, cfg.loss_scope, cfg.normalize_targets)?;
        Ok((loss, self.backward(&cache, &dpred)?))
    }
}

/// The autoencoder is fit to uncorrupted tokens; the mask plan is ignored.
impl<T: Scalar> Trainable<T> for BaselineAE<T> {
    fn params(&self) -> &ParamStore<T> {
        BaselineAE::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        BaselineAE::params_mut(self)
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::BaselineAe(self.config().clone())
    }

    fn mask_ratios(&self) -> MaskRatios {
        MaskRatios { plane: 0.0, axis: 0.0 }
    }

    fn loss_and_grads(&self, tokens: &TokenGrid, _plan: &MaskPlan) -> Result<(T, Grads<T>)> {
        let x = BaselineAE::tokens_tensor(tokens)?;
        let (y, cache) = self.forward_rows(&x)?;
        let all = MaskPlan::all_visible(tokens.grid);
        let (loss, dy) = loss_and_grad(&y, tokens, &all, LossScope::AllTokens, false)?;
        Ok((loss, self.backward(&cache, &dy)?))
    }
}

/// Tokenized superpatches of a dataset in global index order.
#[derive(Debug, Clone)]
pub struct SuperpatchSet {
    pub items: Vec<TokenGrid>,
}

impl SuperpatchSet {
    /// Volumes must already be fitted to multiples of `superpatch_edge`.
    pub fn from_volumes(volumes: &[Volume], superpatch_edge: usize, patch_edge: usize) -> Result<Self> {
        let mut items = Vec::new();
        for vol in volumes {
            let grid = partition(vol, superpatch_edge)?;
            for idx in grid.positions() {
                let cube = extract_superpatch(vol, &grid, idx)?;
                items.push(patchify_at(&cube, patch_edge, idx)?);
            }
        }
        if items.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Global superpatch index and epoch for every draw of step `step` (1-based).
pub fn batch_schedule(n: usize, cfg: &TrainConfig, step: u64) -> Vec<(usize, u64)> {
    let b = cfg.batch_size as u64;
    let n64 = n as u64;
    let mut cached: (u64, Vec<usize>) = (u64::MAX, Vec::new());
    ((step - 1) * b..step * b)
        .map(|q| {
            let epoch = q / n64;
            if cached.0 != epoch {
                let mut rng = SeededRng::new(hash64(cfg.run_seed, epoch, 0), streams::SHUFFLE);
                cached = (epoch, rng.permutation(n));
            }
            (cached.1[(q % n64) as usize], epoch)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M, T> {
    pub model: M,
    pub optimizer: AdamState<T>,
    /// `(step, mean batch loss)` for every step run.
    pub losses: Vec<(u64, f64)>,
}

/// Train from scratch for `cfg.steps` steps.
pub fn train<T: Scalar, M: Trainable<T>>(
    model: M,
    data: &SuperpatchSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M, T>> {
    let opt = AdamState::for_params(model.params());
    train_from(model, opt, data, cfg)
}

/// Continue from `optimizer.t` completed steps up to `cfg.steps`.
pub fn train_from<T: Scalar, M: Trainable<T>>(
    mut model: M,
    mut optimizer: AdamState<T>,
    data: &SuperpatchSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M, T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let adam = cfg.adam();
    let ratios = model.mask_ratios();
    let inv_b = T::c(1.0 / cfg.batch_size as f64);
    let mut losses = Vec::new();
    for step in optimizer.t + 1..=cfg.steps {
        let at = |source: Error| Error::AtStep {
            step,
            source: Box::new(source),
        };
        let schedule = batch_schedule(data.len(), cfg, step);
        let m = &model;
        let results: Vec<Result<(T, Grads<T>)>> = schedule
            .par_iter()
            .map(|&(g, epoch)| {
                let tokens = &data.items[g];
                let seed = superpatch_seed(cfg.run_seed, g as u64, epoch);
                let plan = sample_mask(tokens.grid, ratios.plane, ratios.axis, seed)?;
                m.loss_and_grads(tokens, &plan)
            })
            .collect();
        let mut total = T::zero();
        let mut grads = Grads::new();
        for r in results {
            let (l, g) = r.map_err(at)?;
            total += l;
            grads.merge(&g);
        }
        grads.scale(inv_b);
        let loss = (total * inv_b).f64();
        if !loss.is_finite() {
            return Err(at(Error::NonFiniteLoss));
        }
        if let Some(c) = cfg.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        adam_step(model.params_mut(), &grads, &mut optimizer, &adam).map_err(at)?;
        losses.push((step, loss));
    }
    Ok(TrainOutcome {
        model,
        optimizer,
        losses,
    })
}

/// `step,loss` rows for every `log_every`-th step and the final step.
pub fn loss_csv(losses: &[(u64, f64)], log_every: u64) -> String {
    let mut s = String::from("step,loss\n");
    let last = losses.last().map(|l| l.0);
    for &(step, loss) in losses {
        if step % log_every.max(1) == 0 || Some(step) == last {
            let _ = writeln!(s, "{step},{loss:.6}");
        }
    }
    s
}

/// Snapshot a trained model (values cast to f32) with its optimizer state.
pub fn to_checkpoint<T: Scalar, M: Trainable<T>>(
    model: &M,
    optimizer: &AdamState<T>,
    train: Option<TrainConfig>,
) -> Checkpoint {
    let cast =
        |m: &std::collections::BTreeMap<String, Tensor2<T>>| m.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
    Checkpoint {
        config: CheckpointConfig {
            model: model.spec(),
            train,
        },
        params: model.params().cast(),
        optimizer: AdamState {
            m: cast(&optimizer.m),
            v: cast(&optimizer.v),
            t: optimizer.t,
        },
        step: optimizer.t,
    }
}
