//! Dual masking over a token grid: one contiguous run of fully masked
//! axial planes along z, unioned with an independent random subset inside
//! every axial plane.
//!
//! Sampling order for a given seed, all from one `SeededRng` on the
//! [`streams::MASK`] stream:
//!
//! 1. `b = round_half_up(axis_ratio * tz)`, `start = below(tz - b + 1)`.
//! 2. For `z` in `0..tz`: partial Fisher–Yates over the `tx * ty` plane
//!    positions, the first `round_half_up(plane_ratio * tx * ty)` are
//!    masked. Planes already covered by the axis block are still drawn so
//!    the stream position never depends on `start`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, SeededRng};
use crate::tokenizer::{token_coord, TokenGrid};

/// `floor(x + 0.5)`, the rounding used for every masked count.
#[inline]
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Plane-wise and axis-wise ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRatios {
    pub plane: f64,
    pub axis: f64,
}

impl MaskRatios {
    /// 75% per plane, 50% of planes along z (87.5% in union).
    pub const PAPER_STAGES: Self = Self { plane: 0.75, axis: 0.5 };
    /// 50% per plane, 50% of planes along z: exactly 75% in union.
    pub const PAPER_TOTAL_75: Self = Self { plane: 0.5, axis: 0.5 };

    pub fn from_preset(name: &str) -> Option<Self> {
        match name {
            "paper-stages" | "tiny-test" => Some(Self::PAPER_STAGES),
            "paper-total-75" => Some(Self::PAPER_TOTAL_75),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.plane, self.axis] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::BadRatio(r));
            }
        }
        Ok(())
    }

    /// Masked token count implied by the union rule.
    pub fn masked_count(&self, grid: [usize; 3]) -> usize {
        let [tx, ty, tz] = grid;
        let b = round_half_up(self.axis * tz as f64);
        let k = round_half_up(self.plane * (tx * ty) as f64);
        b * tx * ty + (tz - b) * k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub visible: Vec<bool>,
    /// Tokens selected by the plane-wise stage, whether or not the axis
    /// stage also covers them.
    pub plane_masked: Vec<bool>,
    pub plane_ratio: f64,
    pub axis_ratio: f64,
    pub axis_block_start: usize,
    pub axis_block_len: usize,
    pub seed: u64,
    pub grid: [usize; 3],
}

impl MaskPlan {
    pub fn all_visible(grid: [usize; 3]) -> Self {
        let n = grid.iter().product();
        Self {
            visible: vec![true; n],
            plane_masked: vec![false; n],
            plane_ratio: 0.0,
            axis_ratio: 0.0,
            axis_block_start: 0,
            axis_block_len: 0,
            seed: 0,
            grid,
        }
    }

    pub fn all_masked(grid: [usize; 3]) -> Self {
        let n = grid.iter().product();
        Self {
            visible: vec![false; n],
            plane_masked: vec![true; n],
            plane_ratio: 1.0,
            axis_ratio: 1.0,
            axis_block_start: 0,
            axis_block_len: grid[2],
            seed: 0,
            grid,
        }
    }

    /// Explicit visibility, no stage provenance.
    pub fn from_visibility(grid: [usize; 3], visible: Vec<bool>) -> Result<Self> {
        let n: usize = grid.iter().product();
        if visible.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: visible.len(),
            });
        }
        let plane_masked = visible.iter().map(|v| !v).collect();
        Ok(Self {
            visible,
            plane_masked,
            plane_ratio: f64::NAN,
            axis_ratio: f64::NAN,
            axis_block_start: 0,
            axis_block_len: 0,
            seed: 0,
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn masked_count(&self) -> usize {
        self.len() - self.visible_count()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked_count() as f64 / self.len() as f64
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.visible[i]).collect()
    }

    pub fn in_axis_block(&self, z: usize) -> bool {
        (self.axis_block_start..self.axis_block_start + self.axis_block_len).contains(&z)
    }

    /// `z` indices of planes with every token masked.
    pub fn fully_masked_planes(&self) -> Vec<usize> {
        let plane = self.grid[0] * self.grid[1];
        (0..self.grid[2])
            .filter(|&z| self.visible[z * plane..(z + 1) * plane].iter().all(|v| !v))
            .collect()
    }
}

pub fn sample_mask(grid: [usize; 3], plane_ratio: f64, axis_ratio: f64, seed: u64) -> Result<MaskPlan> {
    let ratios = MaskRatios {
        plane: plane_ratio,
        axis: axis_ratio,
    };
    ratios.validate()?;
    if grid.contains(&0) {
        return Err(Error::MalformedTokenGrid(format!("empty grid {grid:?}")));
    }
    let [tx, ty, tz] = grid;
    let plane = tx * ty;
    let n = plane * tz;
    let mut rng = SeededRng::new(seed, streams::MASK);

    let block = round_half_up(axis_ratio * tz as f64).min(tz);
    let start = rng.below((tz - block + 1) as u64) as usize;

    let per_plane = round_half_up(plane_ratio * plane as f64).min(plane);
    let mut plane_masked = vec![false; n];
    let mut order: Vec<usize> = Vec::with_capacity(plane);
    for z in 0..tz {
        order.clear();
        order.extend(0..plane);
        rng.partial_shuffle(&mut order, per_plane);
        for &p in &order[..per_plane] {
            plane_masked[z * plane + p] = true;
        }
    }

    let visible = (0..n)
        .map(|t| {
            let z = t / plane;
            let in_block = (start..start + block).contains(&z);
            !(in_block || plane_masked[t])
        })
        .collect();

    Ok(MaskPlan {
        visible,
        plane_masked,
        plane_ratio,
        axis_ratio,
        axis_block_start: start,
        axis_block_len: block,
        seed,
        grid,
    })
}

fn check_plan_grid(plan: &MaskPlan, grid: [usize; 3]) -> Result<()> {
    if plan.grid != grid {
        return Err(Error::GridMismatch {
            plan: (plan.grid[0], plan.grid[1], plan.grid[2]),
            tokens: (grid[0], grid[1], grid[2]),
        });
    }
    Ok(())
}

/// Visible tokens in original order, flattened, plus their token indices.
pub fn gather_visible(tokens: &TokenGrid, plan: &MaskPlan) -> Result<(Vec<f32>, Vec<usize>)> {
    check_plan_grid(plan, tokens.grid)?;
    let indices = plan.visible_indices();
    Ok((gather_rows(&tokens.tokens, tokens.token_len(), &indices), indices))
}

/// Copy the listed rows of a row-major buffer.
pub fn gather_rows<T: Copy>(data: &[T], row_len: usize, indices: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(indices.len() * row_len);
    for &i in indices {
        out.extend_from_slice(&data[i * row_len..(i + 1) * row_len]);
    }
    out
}

/// Full `N x d` sequence: visible rows in place, `mask_token` elsewhere.
pub fn scatter_full<T: Copy>(visible_embeds: &[T], plan: &MaskPlan, mask_token: &[T]) -> Result<Vec<T>> {
    let d = mask_token.len();
    let vis = plan.visible_count();
    if visible_embeds.len() != vis * d {
        return Err(Error::LengthMismatch {
            expected: vis * d,
            actual: visible_embeds.len(),
        });
    }
    let mut out = Vec::with_capacity(plan.len() * d);
    let mut next = 0;
    for &v in &plan.visible {
        if v {
            out.extend_from_slice(&visible_embeds[next * d..(next + 1) * d]);
            next += 1;
        } else {
            out.extend_from_slice(mask_token);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskStats {
    /// Fraction of plans masking each token (final union mask).
    pub per_token_mask_frequency: Vec<f64>,
    /// Fraction of plans whose plane-wise stage selected each token.
    pub plane_stage_frequency: Vec<f64>,
    /// Histogram of `axis_block_start` over `0..=tz - b`.
    pub axis_start_histogram: Vec<usize>,
    pub effective_ratio: f64,
    pub ensemble_size: usize,
    pub grid: [usize; 3],
}

pub fn mask_statistics(grid: [usize; 3], plane_ratio: f64, axis_ratio: f64, seeds: &[u64]) -> Result<MaskStats> {
    if seeds.is_empty() {
        return Err(Error::Config("mask statistics need at least one seed".into()));
    }
    let n: usize = grid.iter().product();
    let mut masked = vec![0usize; n];
    let mut plane_hits = vec![0usize; n];
    let block = round_half_up(axis_ratio * grid[2] as f64).min(grid[2]);
    let mut hist = vec![0usize; grid[2] - block + 1];
    let mut ratio_sum = 0.0;
    for &seed in seeds {
        let plan = sample_mask(grid, plane_ratio, axis_ratio, seed)?;
        for t in 0..n {
            masked[t] += usize::from(!plan.visible[t]);
            plane_hits[t] += usize::from(plan.plane_masked[t]);
        }
        hist[plan.axis_block_start] += 1;
        ratio_sum += plan.masked_fraction();
    }
    let m = seeds.len() as f64;
    Ok(MaskStats {
        per_token_mask_frequency: masked.iter().map(|&c| c as f64 / m).collect(),
        plane_stage_frequency: plane_hits.iter().map(|&c| c as f64 / m).collect(),
        axis_start_histogram: hist,
        effective_ratio: ratio_sum / m,
        ensemble_size: seeds.len(),
        grid,
    })
}

impl MaskStats {
    /// CSV with header `token_index,x,y,z,mask_frequency`, one row per token,
    /// then a trailing `effective_ratio,<value>` line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("token_index,x,y,z,mask_frequency\n");
        for (t, f) in self.per_token_mask_frequency.iter().enumerate() {
            let [x, y, z] = token_coord(self.grid, t);
            out.push_str(&format!("{t},{x},{y},{z},{f:.6}\n"));
        }
        out.push_str(&format!("effective_ratio,{:.6}\n", self.effective_ratio));
        out
    }
}
