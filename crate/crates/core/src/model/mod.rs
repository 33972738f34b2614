//! Encoder–decoder model, comparison autoencoder, reconstruction loss and
//! whole-volume reconstruction.

mod baseline;
mod config;
mod maesil;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use baseline::{baseline_forward, BaselineAE, BaselineCache};
pub use config::{Activation, BaselineConfig, LossScope, MaesilConfig, ModelSpec};
pub use maesil::{MaesilCache, MaesilModel, MaesilOutput, DEC_POS, ENC_POS, MASK_TOKEN};

use crate::error::{Error, Result};
use crate::masking::{sample_mask, MaskPlan, MaskRatios};
use crate::nn::{Scalar, Tensor2};
use crate::rng::superpatch_seed;
use crate::tokenizer::{assemble, extract_superpatch, partition, patchify_at, unpatchify, Cube, TokenGrid};
use crate::volume_io::Volume;

const TARGET_NORM_EPS: f64 = 1e-6;

fn target_row<T: Scalar>(token: &[f32], normalize: bool) -> Vec<T> {
    let row: Vec<T> = token.iter().map(|&v| T::from_f32(v)).collect();
    if !normalize {
        return row;
    }
    let n = T::c(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let rs = T::one() / (var + T::c(TARGET_NORM_EPS)).sqrt();
    row.into_iter().map(|v| (v - mean) * rs).collect()
}

fn selected_tokens(plan: &MaskPlan, scope: LossScope) -> Result<Vec<usize>> {
    let sel: Vec<usize> = match scope {
        LossScope::MaskedOnly => (0..plan.len()).filter(|&i| !plan.visible[i]).collect(),
        LossScope::AllTokens => (0..plan.len()).collect(),
    };
    if sel.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(sel)
}

/// Mean squared error over the selected tokens' voxels, and its gradient
/// with respect to `pred`.
pub fn loss_and_grad<T: Scalar>(
    pred: &Tensor2<T>,
    target: &TokenGrid,
    plan: &MaskPlan,
    scope: LossScope,
    normalize_targets: bool,
) -> Result<(T, Tensor2<T>)> {
    let p3 = target.token_len();
    if pred.shape() != (target.len(), p3) || plan.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs {} tokens of length {p3} (plan {})",
            pred.shape(),
            target.len(),
            plan.len()
        )));
    }
    let sel = selected_tokens(plan, scope)?;
    let count = T::c((sel.len() * p3) as f64);
    let two_over = T::c(2.0) / count;
    let mut total = T::zero();
    let mut dpred = Tensor2::zeros(pred.rows, pred.cols);
    for &t in &sel {
        let tgt: Vec<T> = target_row(target.token(t), normalize_targets);
        let pr = pred.row(t);
        let g = dpred.row_mut(t);
        for c in 0..p3 {
            let e = pr[c] - tgt[c];
            total += e * e;
            g[c] = two_over * e;
        }
    }
    let loss = total / count;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((loss, dpred))
}

pub fn loss<T: Scalar>(pred: &Tensor2<T>, target: &TokenGrid, plan: &MaskPlan, scope: LossScope) -> Result<T> {
    loss_and_grad(pred, target, plan, scope, false).map(|(l, _)| l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PastePolicy {
    PredEverywhere,
    PredMaskedOnly,
}

impl std::str::FromStr for PastePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pred_everywhere" | "everywhere" => Ok(Self::PredEverywhere),
            "pred_masked_only" | "masked_only" => Ok(Self::PredMaskedOnly),
            other => Err(Error::Config(format!("unknown paste policy {other:?}"))),
        }
    }
}

/// Anything that maps a token grid and a mask plan to per-token voxel
/// predictions (`N * p^3`, original order).
pub trait TokenPredictor: Sync {
    fn patch_edge(&self) -> usize;
    fn predict(&self, tokens: &TokenGrid, plan: &MaskPlan) -> Result<Vec<f32>>;
}

impl<T: Scalar> TokenPredictor for MaesilModel<T> {
    fn patch_edge(&self) -> usize {
        self.config().patch_edge
    }

    fn predict(&self, tokens: &TokenGrid, plan: &MaskPlan) -> Result<Vec<f32>> {
        let out = self.forward(tokens, plan)?;
        Ok(out.pred.data.iter().map(|&v| Scalar::to_f32(v)).collect())
    }
}

/// The autoencoder sees the same corrupted input as the masked model:
/// masked tokens are zeroed before encoding.
impl<T: Scalar> TokenPredictor for BaselineAE<T> {
    fn patch_edge(&self) -> usize {
        self.config().patch_edge
    }

    fn predict(&self, tokens: &TokenGrid, plan: &MaskPlan) -> Result<Vec<f32>> {
        if plan.len() != tokens.len() {
            return Err(Error::LengthMismatch {
                expected: tokens.len(),
                actual: plan.len(),
            });
        }
        let mut corrupted = tokens.clone();
        let l = tokens.token_len();
        for (t, &vis) in plan.visible.iter().enumerate() {
            if !vis {
                corrupted.tokens[t * l..(t + 1) * l].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let y = baseline_forward(self, &corrupted)?;
        Ok(y.data.iter().map(|&v| Scalar::to_f32(v)).collect())
    }
}

/// A reconstructed volume plus the voxel-level mask it was produced under.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub volume: Volume,
    /// `true` where the voxel's token was masked.
    pub masked: Vec<bool>,
    pub plans: Vec<MaskPlan>,
}

fn token_mask_cube(plan: &MaskPlan, patch_edge: usize) -> Result<Cube> {
    let tg = TokenGrid {
        tokens: plan
            .visible
            .iter()
            .flat_map(|&v| std::iter::repeat_n(if v { 0.0 } else { 1.0 }, patch_edge.pow(3)))
            .collect(),
        grid: plan.grid,
        patch_edge,
        superpatch_index: [0; 3],
    };
    unpatchify(&tg)
}

/// Mask, predict and reassemble every superpatch of a fitted volume.
///
/// Superpatch `l` (x-fastest linear index) is masked with seed
/// `superpatch_seed(mask_seed, l, 0)`. Predictions are clamped to `[0, 1]`.
pub fn reconstruct_with<P: TokenPredictor + ?Sized>(
    predictor: &P,
    vol: &Volume,
    superpatch_edge: usize,
    ratios: MaskRatios,
    mask_seed: u64,
    paste: PastePolicy,
) -> Result<Reconstruction> {
    let grid = partition(vol, superpatch_edge)?;
    let p = predictor.patch_edge();
    let results: Vec<Result<(Cube, Cube, MaskPlan)>> = (0..grid.len())
        .into_par_iter()
        .map(|l| {
            let idx = grid.position(l);
            let cube = extract_superpatch(vol, &grid, idx)?;
            let tokens = patchify_at(&cube, p, idx)?;
            let plan = sample_mask(
                tokens.grid,
                ratios.plane,
                ratios.axis,
                superpatch_seed(mask_seed, l as u64, 0),
            )?;
            let mut pred = predictor.predict(&tokens, &plan)?;
            if pred.len() != tokens.tokens.len() {
                return Err(Error::LengthMismatch {
                    expected: tokens.tokens.len(),
                    actual: pred.len(),
                });
            }
            pred.iter_mut()
                .for_each(|v| *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
            if paste == PastePolicy::PredMaskedOnly {
                let len = tokens.token_len();
                for (t, &vis) in plan.visible.iter().enumerate() {
                    if vis {
                        pred[t * len..(t + 1) * len].copy_from_slice(tokens.token(t));
                    }
                }
            }
            let out = unpatchify(&TokenGrid { tokens: pred, ..tokens })?;
            let mask = token_mask_cube(&plan, p)?;
            Ok((out, mask, plan))
        })
        .collect();

    let mut cubes = Vec::with_capacity(grid.len());
    let mut masks = Vec::with_capacity(grid.len());
    let mut plans = Vec::with_capacity(grid.len());
    for r in results {
        let (c, m, plan) = r?;
        cubes.push(c);
        masks.push(m);
        plans.push(plan);
    }
    let data = assemble(&grid, &cubes)?;
    let masked = assemble(&grid, &masks)?.into_iter().map(|v| v > 0.5).collect();
    let volume = Volume::new(data, vol.dims(), vol.spacing())?.with_provenance(vol.source_range(), vol.window());
    Ok(Reconstruction { volume, masked, plans })
}

/// [`reconstruct_with`] using the model's own superpatch edge and mask ratios.
pub fn reconstruct_volume<T: Scalar>(
    model: &MaesilModel<T>,
    vol: &Volume,
    mask_seed: u64,
    paste: PastePolicy,
) -> Result<Reconstruction> {
    let cfg = model.config();
    reconstruct_with(model, vol, cfg.superpatch_edge, cfg.mask, mask_seed, paste)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::sample_mask;
    use crate::tokenizer::patchify;

    fn tokens(seed: u64) -> TokenGrid {
        let mut rng = crate::rng::SeededRng::new(seed, 0);
        let cube = Cube::new(32, (0..32 * 32 * 32).map(|_| rng.unit_f64() as f32).collect()).unwrap();
        patchify(&cube, 8).unwrap()
    }

    fn tiny() -> MaesilConfig {
        MaesilConfig::tiny()
    }

    #[test]
    fn loss_examples() {
        let tg = tokens(1);
        let plan = sample_mask(tg.grid, 0.75, 0.5, 3).unwrap();
        let exact: Tensor2<f64> = Tensor2::new(tg.len(), 512, tg.tokens.iter().map(|&v| v as f64).collect()).unwrap();
        assert_eq!(loss(&exact, &tg, &plan, LossScope::MaskedOnly).unwrap(), 0.0);
        let mut off = exact.clone();
        off.data.iter_mut().for_each(|v| *v += 0.1);
        for scope in [LossScope::MaskedOnly, LossScope::AllTokens] {
            assert!((loss(&off, &tg, &plan, scope).unwrap() - 0.01).abs() < 1e-12);
        }
        let all = MaskPlan::all_visible(tg.grid);
        assert!(matches!(
            loss(&exact, &tg, &all, LossScope::MaskedOnly),
            Err(Error::EmptySelection)
        ));
    }

    #[test]
    fn single_masked_token_loss() {
        let tg = tokens(2);
        let mut vis = vec![true; 64];
        vis[17] = false;
        let plan = MaskPlan::from_visibility(tg.grid, vis).unwrap();
        let mut pred: Tensor2<f64> = Tensor2::zeros(64, 512);
        pred.data.iter_mut().for_each(|v| *v = 0.5);
        let expect = tg.token(17).iter().map(|&v| (0.5 - v as f64).powi(2)).sum::<f64>() / 512.0;
        let got = loss(&pred, &tg, &plan, LossScope::MaskedOnly).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn masked_loss_ignores_visible_predictions() {
        let tg = tokens(3);
        let plan = sample_mask(tg.grid, 0.75, 0.5, 4).unwrap();
        let mut a: Tensor2<f64> = Tensor2::filled(64, 512, 0.3);
        let la = loss(&a, &tg, &plan, LossScope::MaskedOnly).unwrap();
        for t in plan.visible_indices() {
            a.row_mut(t).iter_mut().for_each(|v| *v = 42.0);
        }
        assert_eq!(loss(&a, &tg, &plan, LossScope::MaskedOnly).unwrap(), la);
    }

    #[test]
    fn normalized_targets_have_unit_scale() {
        let row = target_row::<f64>(&[0.0, 1.0, 0.0, 1.0], true);
        let mean = row.iter().sum::<f64>() / 4.0;
        let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn forward_shapes() {
        let model = MaesilModel::<f32>::new(tiny()).unwrap();
        let tg = tokens(5);
        let plan = sample_mask(tg.grid, 0.75, 0.5, 6).unwrap();
        let out = model.forward(&tg, &plan).unwrap();
        assert_eq!(out.pred.shape(), (64, 512));
        assert_eq!(out.latent.shape(), (plan.visible_count(), 24));
        assert_eq!(plan.visible_count(), 8);
    }

    #[test]
    fn all_masked_forward_is_finite_and_position_dependent() {
        let model = MaesilModel::<f64>::new(tiny()).unwrap();
        let tg = tokens(7);
        let plan = MaskPlan::all_masked(tg.grid);
        let out = model.forward(&tg, &plan).unwrap();
        assert_eq!(out.latent.rows, 0);
        assert!(out.pred.is_finite());
        assert_ne!(out.pred.row(0), out.pred.row(63));
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let model = MaesilModel::<f32>::new(tiny()).unwrap();
        let tg = tokens(8);
        let plan = MaskPlan::all_visible([4, 4, 2]);
        assert!(matches!(model.forward(&tg, &plan), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn mask_token_receives_gradient() {
        let model = MaesilModel::<f64>::new(tiny()).unwrap();
        let tg = tokens(9);
        let plan = sample_mask(tg.grid, 0.75, 0.5, 10).unwrap();
        let (out, cache) = model.forward_cached(&tg, &plan).unwrap();
        let (_, dpred) = loss_and_grad(&out.pred, &tg, &plan, LossScope::MaskedOnly, false).unwrap();
        let grads = model.backward(&cache, &dpred).unwrap();
        let g = grads.get(MASK_TOKEN).unwrap();
        assert!(g.data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn mask_token_changes_masked_predictions() {
        let mut model = MaesilModel::<f64>::new(tiny()).unwrap();
        let tg = tokens(11);
        let plan = sample_mask(tg.grid, 0.75, 0.5, 12).unwrap();
        let before = model.forward(&tg, &plan).unwrap().pred;
        model.params_mut().value_mut(MASK_TOKEN).data[0] += 0.5;
        let after = model.forward(&tg, &plan).unwrap().pred;
        let t = (0..64).find(|&t| !plan.visible[t]).unwrap();
        assert_ne!(before.row(t), after.row(t));
    }

    #[test]
    fn visible_order_does_not_matter() {
        let model = MaesilModel::<f32>::new(tiny()).unwrap();
        let tg = tokens(13);
        let plan = sample_mask(tg.grid, 0.5, 0.25, 14).unwrap();
        let base = model.forward(&tg, &plan).unwrap();
        let mut idx = plan.visible_indices();
        idx.reverse();
        idx.rotate_left(3);
        let rows = gather_rows_f32(&tg, &idx);
        let permuted = model.forward_sequence(&tg, &plan, &rows, &idx).unwrap();
        assert_eq!(base, permuted);
    }

    fn gather_rows_f32(tg: &TokenGrid, idx: &[usize]) -> Vec<f32> {
        idx.iter().flat_map(|&i| tg.token(i).to_vec()).collect()
    }

    #[test]
    fn encoder_length_follows_visible_count() {
        let model = MaesilModel::<f32>::new(tiny()).unwrap();
        let tg = tokens(15);
        for (rp, ra) in [(0.0, 0.0), (0.5, 0.5), (0.75, 0.5)] {
            let plan = sample_mask(tg.grid, rp, ra, 1).unwrap();
            let out = model.forward(&tg, &plan).unwrap();
            assert_eq!(out.latent.rows, plan.visible_count());
        }
    }

    #[test]
    fn baseline_identity_and_zero() {
        let cfg = BaselineConfig {
            patch_edge: 2,
            hidden: 8,
            bottleneck: 8,
            activation: Activation::Identity,
            init_seed: 0,
        };
        let mut ae = BaselineAE::<f32>::new(cfg.clone()).unwrap();
        let names: Vec<String> = ae.params().names().cloned().collect();
        for n in &names {
            let p = ae.params_mut().get_mut(n).unwrap();
            if n.ends_with(".weight") {
                p.value = Tensor2::identity(8);
            } else {
                p.value.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let cube = Cube::new(4, (0..64).map(|i| i as f32 / 64.0).collect()).unwrap();
        let tg = patchify(&cube, 2).unwrap();
        assert_eq!(baseline_forward(&ae, &tg).unwrap().data, tg.tokens);

        let mut ae = BaselineAE::<f32>::new(BaselineConfig::for_patch(2)).unwrap();
        let names: Vec<String> = ae.params().names().cloned().collect();
        for n in &names {
            if n.ends_with(".weight") {
                ae.params_mut().value_mut(n).data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        ae.params_mut().value_mut("ae.dec2.bias").data = (0..8).map(|i| i as f32).collect();
        let y = baseline_forward(&ae, &tg).unwrap();
        for r in 0..y.rows {
            assert_eq!(y.row(r), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        }
    }

    #[test]
    fn reconstruct_all_visible_is_identity() {
        let model = MaesilModel::<f32>::new(tiny()).unwrap();
        let mut rng = crate::rng::SeededRng::new(1, 1);
        let vol = Volume::new(
            (0..64 * 32 * 32).map(|_| rng.unit_f64() as f32).collect(),
            [64, 32, 32],
            [1.0; 3],
        )
        .unwrap();
        let none = MaskRatios { plane: 0.0, axis: 0.0 };
        let r = reconstruct_with(&model, &vol, 32, none, 0, PastePolicy::PredMaskedOnly).unwrap();
        assert_eq!(r.volume.data(), vol.data());
        assert!(r.masked.iter().all(|m| !m));
        let r = reconstruct_volume(&model, &vol, 0, PastePolicy::PredEverywhere).unwrap();
        assert_eq!(r.volume.dims(), vol.dims());
        assert_eq!(r.plans.len(), 2);
    }
}
