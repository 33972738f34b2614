//! Sampled central-difference checks for the model variants the full
//! acceptance check does not cover.

use maesil::masking::sample_mask;
use maesil::model::{BaselineAE, BaselineConfig, LossScope, MaesilConfig, MaesilModel};
use maesil::phantom::{phantom, PhantomConfig};
use maesil::rng::SeededRng;
use maesil::tokenizer::{patchify, Cube, TokenGrid};
use maesil::training::Trainable;

fn tokens(edge: usize, patch: usize) -> TokenGrid {
    let v = phantom(&PhantomConfig::cube(edge), 21, 0).unwrap();
    patchify(&Cube::new(edge, v.data().to_vec()).unwrap(), patch).unwrap()
}

/// Worst `|a - n| / max(1, |n|)` and worst `|a - n| / max(|a|, |n|)` over
/// coordinates whose gradient exceeds 1e-4.
fn check<M: Trainable<f64>>(model: &mut M, tg: &TokenGrid, plan_seed: u64, samples: usize) -> (f64, f64) {
    let plan = sample_mask(tg.grid, 0.75, 0.5, plan_seed).unwrap();
    let (_, grads) = model.loss_and_grads(tg, &plan).unwrap();
    let names: Vec<String> = model.params().names().cloned().collect();
    let mut rng = SeededRng::new(plan_seed, 55);
    let (mut loose, mut tight) = (0.0f64, 0.0f64);
    let h = 1e-5;
    for name in &names {
        let len = model.params().value(name).data.len();
        let picks: Vec<usize> = if len <= samples {
            (0..len).collect()
        } else {
            (0..samples).map(|_| rng.below(len as u64) as usize).collect()
        };
        for i in picks {
            let orig = model.params().value(name).data[i];
            model.params_mut().value_mut(name).data[i] = orig + h;
            let lp = model.loss_and_grads(tg, &plan).unwrap().0;
            model.params_mut().value_mut(name).data[i] = orig - h;
            let lm = model.loss_and_grads(tg, &plan).unwrap().0;
            model.params_mut().value_mut(name).data[i] = orig;
            let n = (lp - lm) / (2.0 * h);
            let a = grads.get(name).map_or(0.0, |g| g.data[i]);
            let err = (a - n).abs();
            loose = loose.max(err / n.abs().max(1.0));
            let mag = a.abs().max(n.abs());
            if mag >= 1e-4 {
                tight = tight.max(err / mag);
            }
        }
    }
    (loose, tight)
}

fn small() -> MaesilConfig {
    MaesilConfig {
        superpatch_edge: 16,
        patch_edge: 4,
        enc_dim: 12,
        enc_heads: 2,
        dec_dim: 12,
        dec_heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        ..MaesilConfig::tiny()
    }
}

#[test]
fn baseline_autoencoder() {
    let mut ae = BaselineAE::<f64>::new(BaselineConfig::for_patch(4)).unwrap();
    let (loose, tight) = check(&mut ae, &tokens(16, 4), 1, 40);
    assert!(loose <= 1e-6 && tight <= 1e-4, "{loose:e} {tight:e}");
}

#[test]
fn learnable_positions() {
    let mut m = MaesilModel::<f64>::new(MaesilConfig {
        learnable_pos: true,
        ..small()
    })
    .unwrap();
    assert!(m.params().contains("encoder.pos") && m.params().contains("decoder.pos"));
    let (loose, tight) = check(&mut m, &tokens(16, 4), 2, 30);
    assert!(loose <= 1e-6 && tight <= 1e-4, "{loose:e} {tight:e}");
}

#[test]
fn loss_over_all_tokens() {
    let mut m = MaesilModel::<f64>::new(MaesilConfig {
        loss_scope: LossScope::AllTokens,
        ..small()
    })
    .unwrap();
    let (loose, tight) = check(&mut m, &tokens(16, 4), 3, 30);
    assert!(loose <= 1e-6 && tight <= 1e-4, "{loose:e} {tight:e}");
}

#[test]
fn normalized_targets() {
    let mut m = MaesilModel::<f64>::new(MaesilConfig {
        normalize_targets: true,
        ..small()
    })
    .unwrap();
    let (loose, tight) = check(&mut m, &tokens(16, 4), 4, 30);
    assert!(loose <= 1e-6 && tight <= 1e-4, "{loose:e} {tight:e}");
}
