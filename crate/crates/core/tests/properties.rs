use maesil::masking::{gather_rows, round_half_up, sample_mask, scatter_full, MaskPlan};
use maesil::metrics::{psnr, ssim};
use maesil::rng::SeededRng;
use maesil::tokenizer::{assemble, extract_superpatch, partition, patchify_at, unpatchify, Cube};
use maesil::volume_io::Volume;
use proptest::prelude::*;

fn noise_volume(dims: [usize; 3], seed: u64) -> Volume {
    let mut rng = SeededRng::new(seed, 900);
    let n = dims.iter().product();
    Volume::new((0..n).map(|_| rng.unit_f64() as f32).collect(), dims, [1.0; 3]).unwrap()
}

fn perturb(v: &Volume, amp: f64, seed: u64) -> Volume {
    let mut rng = SeededRng::new(seed, 901);
    let data = v
        .data()
        .iter()
        .map(|&x| (x as f64 + amp * (rng.unit_f64() * 2.0 - 1.0)).clamp(0.0, 1.0) as f32)
        .collect();
    Volume::new(data, v.dims(), [1.0; 3]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tokenization_roundtrip(
        (s, p) in prop_oneof![Just((8usize, 2usize)), Just((8, 4)), Just((16, 4)), Just((16, 8))],
        m in prop::array::uniform3(1usize..3),
        seed in any::<u64>(),
    ) {
        let vol = noise_volume([s * m[0], s * m[1], s * m[2]], seed);
        let grid = partition(&vol, s).unwrap();
        let cubes: Vec<Cube> = grid
            .positions()
            .map(|idx| {
                let tg = patchify_at(&extract_superpatch(&vol, &grid, idx).unwrap(), p, idx).unwrap();
                prop_assert_eq!(tg.superpatch_index, idx);
                prop_assert_eq!(tg.len(), (s / p).pow(3));
                Ok(unpatchify(&tg).unwrap())
            })
            .collect::<Result<_, TestCaseError>>()?;
        prop_assert_eq!(assemble(&grid, &cubes).unwrap(), vol.data().to_vec());
    }

    #[test]
    fn mask_counts_and_axis_block(
        g in prop::array::uniform3(2usize..9),
        plane in 0.0f64..=1.0,
        axis in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let plan = sample_mask(g, plane, axis, seed).unwrap();
        let (tx, ty, tz) = (g[0], g[1], g[2]);
        let b = round_half_up(axis * tz as f64).min(tz);
        let k = round_half_up(plane * (tx * ty) as f64).min(tx * ty);
        prop_assert_eq!(plan.masked_count(), b * tx * ty + (tz - b) * k);
        let block: Vec<usize> = (0..tz).filter(|&z| plan.in_axis_block(z)).collect();
        prop_assert_eq!(block.len(), b);
        prop_assert!(block.windows(2).all(|w| w[1] == w[0] + 1));
        for z in 0..tz {
            let planar = (0..tx * ty).filter(|&i| plan.plane_masked[z * tx * ty + i]).count();
            prop_assert_eq!(planar, k);
        }
        prop_assert_eq!(plan, sample_mask(g, plane, axis, seed).unwrap());
    }

    #[test]
    fn gather_then_scatter_restores_visible_rows(
        g in prop::array::uniform3(1usize..5),
        d in 1usize..6,
        seed in any::<u64>(),
    ) {
        let plan = sample_mask(g, 0.6, 0.3, seed).unwrap();
        let n = plan.len();
        let rows: Vec<i64> = (0..(n * d) as i64).collect();
        let mask_token = vec![-1i64; d];
        let vis = gather_rows(&rows, d, &plan.visible_indices());
        let full = scatter_full(&vis, &plan, &mask_token).unwrap();
        for t in 0..n {
            let row = &full[t * d..(t + 1) * d];
            if plan.visible[t] {
                prop_assert_eq!(row, &rows[t * d..(t + 1) * d]);
            } else {
                prop_assert_eq!(row, mask_token.as_slice());
            }
        }
    }

    #[test]
    fn psnr_symmetric_and_falls_with_noise(seed in any::<u64>()) {
        let a = noise_volume([12, 12, 4], seed);
        let small = perturb(&a, 0.02, seed ^ 1);
        let large = perturb(&a, 0.2, seed ^ 1);
        let p = psnr(&a, &small).unwrap();
        prop_assert!((p - psnr(&small, &a).unwrap()).abs() < 1e-12);
        prop_assert!(p > psnr(&a, &large).unwrap());
        prop_assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_is_bounded_and_symmetric(seed in any::<u64>(), amp in 0.0f64..0.5) {
        let a = noise_volume([12, 12, 3], seed);
        let b = perturb(&a, amp, seed ^ 7);
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn all_masked_and_all_visible_plans() {
    let g = [3, 4, 5];
    assert_eq!(MaskPlan::all_visible(g).masked_count(), 0);
    assert_eq!(MaskPlan::all_masked(g).visible_count(), 0);
    assert_eq!(sample_mask(g, 1.0, 0.0, 3).unwrap().masked_count(), 60);
    assert_eq!(sample_mask(g, 0.0, 1.0, 3).unwrap().masked_count(), 60);
}
