//! Synthetic test volumes: a linear intensity gradient with a few
//! uniform spheres on top. Values stay in `[0, 1]`.

use crate::error::Result;
use crate::rng::{hash64, streams, SeededRng};
use crate::volume_io::Volume;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub min_spheres: usize,
    pub max_spheres: usize,
    /// Radius range in voxels.
    pub radius: (f64, f64),
    /// Background value range along the gradient.
    pub background: (f64, f64),
    /// Sphere intensity range.
    pub intensity: (f64, f64),
}

impl PhantomConfig {
    pub fn cube(edge: usize) -> Self {
        let e = edge as f64;
        Self {
            dims: [edge; 3],
            min_spheres: 1,
            max_spheres: 2,
            radius: (0.12 * e, 0.25 * e),
            background: (0.0, 0.8),
            intensity: (0.6, 0.95),
        }
    }
}

fn uniform(rng: &mut SeededRng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.unit_f64()
}

/// Deterministic phantom number `index` of the family `seed`.
pub fn phantom(cfg: &PhantomConfig, seed: u64, index: u64) -> Result<Volume> {
    let mut rng = SeededRng::new(hash64(seed, index, 0), streams::PHANTOM);
    let [dx, dy, dz] = cfg.dims;

    // random unit direction for the gradient
    let mut dir = [0.0f64; 3];
    loop {
        for d in dir.iter_mut() {
            *d = 2.0 * rng.unit_f64() - 1.0;
        }
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 {
            dir.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let (b_lo, b_hi) = cfg.background;
    let ext: [f64; 3] = [dx as f64, dy as f64, dz as f64];
    let proj = |p: [f64; 3]| (0..3).map(|i| dir[i] * p[i] / ext[i].max(1.0)).sum::<f64>();
    let corners: Vec<f64> = (0..8)
        .map(|c| {
            proj([
                (c & 1) as f64 * ext[0],
                (c >> 1 & 1) as f64 * ext[1],
                (c >> 2 & 1) as f64 * ext[2],
            ])
        })
        .collect();
    let lo = corners.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let span = cfg.max_spheres.saturating_sub(cfg.min_spheres) as u64;
    let count = cfg.min_spheres + rng.below(span + 1) as usize;
    let spheres: Vec<([f64; 3], f64, f64)> = (0..count)
        .map(|_| {
            let r = uniform(&mut rng, cfg.radius);
            let c = [
                uniform(&mut rng, (r, ext[0] - r)),
                uniform(&mut rng, (r, ext[1] - r)),
                uniform(&mut rng, (r, ext[2] - r)),
            ];
            (c, r, uniform(&mut rng, cfg.intensity))
        })
        .collect();

    let mut data = Vec::with_capacity(dx * dy * dz);
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                let p = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                let t = if hi > lo { (proj(p) - lo) / (hi - lo) } else { 0.5 };
                let mut v = b_lo + (b_hi - b_lo) * t;
                for (c, r, val) in &spheres {
                    let d2: f64 = (0..3).map(|i| (p[i] - c[i]).powi(2)).sum();
                    if d2 <= r * r {
                        v = *val;
                    }
                }
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Volume::new(data, cfg.dims, [1.0; 3])
}

/// `count` phantoms of one family.
pub fn phantom_set(cfg: &PhantomConfig, seed: u64, count: usize) -> Result<Vec<Volume>> {
    (0..count as u64).map(|i| phantom(cfg, seed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let cfg = PhantomConfig::cube(32);
        let a = phantom(&cfg, 1, 0).unwrap();
        assert_eq!(a, phantom(&cfg, 1, 0).unwrap());
        assert_ne!(a, phantom(&cfg, 1, 1).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.data().iter().any(|&v| v >= 0.6));
        assert!(a.data().iter().any(|&v| v <= 0.4));
    }
}
