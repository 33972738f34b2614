//! Reconstruction quality on `[0, 1]`-normalized volumes.
//!
//! SSIM is computed in 2D on every axial (z) slice with an 11x11 Gaussian
//! window (sigma 1.5), `C1 = 0.01^2`, `C2 = 0.03^2`, and the slice scores
//! are averaged. Borders use half-sample symmetric reflection
//! (`d c b a | a b c d | d c b a`), the same rule as
//! `scipy.ndimage`'s `reflect` mode. All arithmetic is in f64.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume_io::Volume;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Stand-in for an infinite PSNR when values are compared or averaged.
pub const PSNR_CAP_DB: f64 = 99.0;

fn check_dims(a: &Volume, b: &Volume) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn psnr_from_sse(sse: f64, n: usize, max_val: f64) -> f64 {
    let mse = sse / n as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

/// `10 log10(max_val^2 / MSE)`; `+inf` when the volumes are identical.
pub fn psnr_with_max(a: &Volume, b: &Volume, max_val: f64) -> Result<f64> {
    check_dims(a, b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(psnr_from_sse(sse, a.len(), max_val))
}

pub fn psnr(a: &Volume, b: &Volume) -> Result<f64> {
    psnr_with_max(a, b, 1.0)
}

/// PSNR over the voxels where `mask` is true.
pub fn masked_psnr(a: &Volume, b: &Volume, mask: &[bool]) -> Result<f64> {
    check_dims(a, b)?;
    if mask.len() != a.len() {
        return Err(Error::DimMismatch(format!(
            "mask has {} voxels, volume {}",
            mask.len(),
            a.len()
        )));
    }
    let mut sse = 0.0;
    let mut n = 0usize;
    for ((&x, &y), &m) in a.data().iter().zip(b.data()).zip(mask) {
        if m {
            let d = x as f64 - y as f64;
            sse += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(psnr_from_sse(sse, n, 1.0))
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Half-sample symmetric index into `0..n`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

// separable filter of a w x h image (x fastest)
fn blur(img: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * row[reflect_index(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * tmp[reflect_index(y as isize + k as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM of two `w x h` images.
pub fn ssim_2d(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<f64> {
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::SliceTooSmall { width: w, height: h });
    }
    if a.len() != w * h || b.len() != w * h {
        return Err(Error::DimMismatch(format!(
            "{} / {} pixels for {w}x{h}",
            a.len(),
            b.len()
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = blur(a, w, h, &taps);
    let mu_b = blur(b, w, h, &taps);
    let aa = blur(&sq(a), w, h, &taps);
    let bb = blur(&sq(b), w, h, &taps);
    let abm = blur(&ab, w, h, &taps);
    let mut total = 0.0;
    for i in 0..w * h {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = abm[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / (w * h) as f64)
}

/// SSIM of every axial slice, in z order.
pub fn ssim_per_slice(a: &Volume, b: &Volume) -> Result<Vec<f64>> {
    check_dims(a, b)?;
    let [dx, dy, dz] = a.dims();
    if dx < SSIM_WINDOW || dy < SSIM_WINDOW {
        return Err(Error::SliceTooSmall { width: dx, height: dy });
    }
    let plane = dx * dy;
    (0..dz)
        .into_par_iter()
        .map(|z| {
            let sa: Vec<f64> = a.data()[z * plane..(z + 1) * plane].iter().map(|&v| v as f64).collect();
            let sb: Vec<f64> = b.data()[z * plane..(z + 1) * plane].iter().map(|&v| v as f64).collect();
            ssim_2d(&sa, &sb, dx, dy)
        })
        .collect()
}

pub fn ssim(a: &Volume, b: &Volume) -> Result<f64> {
    let s = ssim_per_slice(a, b)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// `PSNR_CAP_DB` for infinite values.
pub fn capped(db: f64) -> f64 {
    if db.is_finite() {
        db.min(PSNR_CAP_DB)
    } else if db > 0.0 {
        PSNR_CAP_DB
    } else {
        db
    }
}

/// `inf` or six decimals.
pub fn format_db(db: f64) -> String {
    if db.is_infinite() && db > 0.0 {
        "inf".into()
    } else {
        format!("{db:.6}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub volume_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub masked_psnr_db: Option<f64>,
    pub per_slice_ssim: Vec<f64>,
}

impl MetricReport {
    pub fn evaluate(
        volume_id: impl Into<String>,
        reference: &Volume,
        recon: &Volume,
        mask: Option<&[bool]>,
    ) -> Result<Self> {
        let per_slice_ssim = ssim_per_slice(reference, recon)?;
        Ok(Self {
            volume_id: volume_id.into(),
            psnr_db: psnr(reference, recon)?,
            ssim: per_slice_ssim.iter().sum::<f64>() / per_slice_ssim.len() as f64,
            masked_psnr_db: mask.map(|m| masked_psnr(reference, recon, m)).transpose()?,
            per_slice_ssim,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{}",
            self.volume_id,
            format_db(self.psnr_db),
            self.ssim,
            self.masked_psnr_db.map(format_db).unwrap_or_default()
        )
    }
}

pub const CSV_HEADER: &str = "volume_id,psnr_db,ssim,masked_psnr_db";

/// Mean of each column over `reports`, infinite PSNRs taken at the cap.
pub fn mean_report(volume_id: &str, reports: &[MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let masked: Option<Vec<f64>> = reports.iter().map(|r| r.masked_psnr_db.map(capped)).collect();
    Some(MetricReport {
        volume_id: volume_id.into(),
        psnr_db: reports.iter().map(|r| capped(r.psnr_db)).sum::<f64>() / n,
        ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
        masked_psnr_db: masked.map(|m| m.iter().sum::<f64>() / n),
        per_slice_ssim: Vec::new(),
    })
}

/// Header, one row per report, then the aggregate `mean` row.
pub fn reports_csv(reports: &[MetricReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{CSV_HEADER}");
    for r in reports {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    if let Some(m) = mean_report("mean", reports) {
        let _ = writeln!(s, "{}", m.csv_row());
    }
    s
}
