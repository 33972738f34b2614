//! CT volume ingestion: NIfTI-1 and headerless raw readers, Hounsfield
//! windowing, grid fitting and PGM slice export.
//!
//! All voxel buffers are x-fastest: voxel `(x, y, z)` lives at
//! `x + nx * (y + ny * z)`, matching the NIfTI-1 on-disk order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default HU window, `(-1000, 1000)`.
pub const DEFAULT_WINDOW: (f64, f64) = (-1000.0, 1000.0);

/// A normalized scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Vec<f32>,
    dims: [usize; 3],
    spacing: [f64; 3],
    source_range: (f64, f64),
    window: (f64, f64),
}

impl Volume {
    /// Build a volume from already-normalized data.
    pub fn new(data: Vec<f32>, dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::DimMismatch(format!("zero-sized dims {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: data.len(),
            });
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::DimMismatch(format!("non-positive spacing {spacing:?}")));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ShapeMismatch(format!("voxel value {v} outside [0, 1]")));
        }
        Ok(Self {
            data,
            dims,
            spacing,
            source_range: (0.0, 1.0),
            window: (0.0, 1.0),
        })
    }

    /// Build a volume with unit spacing, clamping data into `[0, 1]`.
    pub fn from_clamped(data: Vec<f32>, dims: [usize; 3]) -> Result<Self> {
        let data = data.into_iter().map(clamp_unit).collect();
        Self::new(data, dims, [1.0; 3])
    }

    pub fn with_provenance(mut self, source_range: (f64, f64), window: (f64, f64)) -> Self {
        self.source_range = source_range;
        self.window = window;
        self
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::DimMismatch(format!("non-positive spacing {spacing:?}")));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn source_range(&self) -> (f64, f64) {
        self.source_range
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Extract a 2D slice perpendicular to `axis`.
    ///
    /// Returns `(width, height, pixels)` with pixels row-major. Axis `z`
    /// gives an `x` by `y` image, axis `y` an `x` by `z` image and axis `x`
    /// a `y` by `z` image.
    pub fn slice(&self, axis: Axis, index: usize) -> Result<(usize, usize, Vec<f32>)> {
        let [nx, ny, nz] = self.dims;
        let bound = match axis {
            Axis::X => nx,
            Axis::Y => ny,
            Axis::Z => nz,
        };
        if index >= bound {
            return Err(Error::IndexOutOfRange(format!(
                "slice {index} along {axis:?} (size {bound})"
            )));
        }
        let (w, h) = match axis {
            Axis::X => (ny, nz),
            Axis::Y => (nx, nz),
            Axis::Z => (nx, ny),
        };
        let mut out = Vec::with_capacity(w * h);
        for row in 0..h {
            for col in 0..w {
                let v = match axis {
                    Axis::X => self.get(index, col, row),
                    Axis::Y => self.get(col, index, row),
                    Axis::Z => self.get(col, row, index),
                };
                out.push(v);
            }
        }
        Ok((w, h, out))
    }
}

#[inline]
fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDtype {
    U8,
    I16,
    F32,
}

impl RawDtype {
    pub fn size(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::I16 => 2,
            Self::F32 => 4,
        }
    }
}

impl std::str::FromStr for RawDtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(Self::U8),
            "i16" => Ok(Self::I16),
            "f32" => Ok(Self::F32),
            other => Err(Error::Config(format!("unknown dtype {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endian {
    Le,
    Be,
}

impl std::str::FromStr for Endian {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "le" => Ok(Self::Le),
            "be" => Ok(Self::Be),
            other => Err(Error::Config(format!("unknown endianness {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitPolicy {
    CropCenter,
    PadZero,
}

fn decode_samples(bytes: &[u8], dtype: RawDtype, endian: Endian) -> Vec<f64> {
    match (dtype, endian) {
        (RawDtype::U8, _) => bytes.iter().map(|&b| b as f64).collect(),
        (RawDtype::I16, Endian::Le) => bytes
            .chunks_exact(2)
            .map(|c| LittleEndian::read_i16(c) as f64)
            .collect(),
        (RawDtype::I16, Endian::Be) => bytes.chunks_exact(2).map(|c| BigEndian::read_i16(c) as f64).collect(),
        (RawDtype::F32, Endian::Le) => bytes
            .chunks_exact(4)
            .map(|c| LittleEndian::read_f32(c) as f64)
            .collect(),
        (RawDtype::F32, Endian::Be) => bytes.chunks_exact(4).map(|c| BigEndian::read_f32(c) as f64).collect(),
    }
}

fn value_range(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

/// Linear window: `clamp((v - lo) / (hi - lo), 0, 1)`.
pub fn normalize_hu(raw: &[f64], window: (f64, f64)) -> Result<Vec<f32>> {
    let (lo, hi) = window;
    if !lo.is_finite() || !hi.is_finite() || hi <= lo {
        return Err(Error::DegenerateWindow { lo, hi });
    }
    let scale = 1.0 / (hi - lo);
    Ok(raw
        .iter()
        .map(|&v| {
            if v.is_nan() {
                0.0
            } else {
                ((v - lo) * scale).clamp(0.0, 1.0) as f32
            }
        })
        .collect())
}

fn volume_from_raw(raw: Vec<f64>, dims: [usize; 3], spacing: [f64; 3], window: (f64, f64)) -> Result<Volume> {
    let source_range = value_range(&raw);
    let data = normalize_hu(&raw, window)?;
    Ok(Volume::new(data, dims, spacing)?.with_provenance(source_range, window))
}

/// Read a headerless volume, x-fastest.
pub fn read_raw(path: impl AsRef<Path>, dims: [usize; 3], dtype: RawDtype, endian: Endian) -> Result<Volume> {
    read_raw_windowed(path, dims, dtype, endian, DEFAULT_WINDOW)
}

pub fn read_raw_windowed(
    path: impl AsRef<Path>,
    dims: [usize; 3],
    dtype: RawDtype,
    endian: Endian,
    window: (f64, f64),
) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    let expected = dims.iter().product::<usize>() * dtype.size();
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    volume_from_raw(decode_samples(&bytes, dtype, endian), dims, [1.0; 3], window)
}

/// Write voxel values as raw `f32`.
pub fn write_raw_f32(vol: &Volume, path: impl AsRef<Path>, endian: Endian) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = vec![0u8; vol.len() * 4];
    match endian {
        Endian::Le => LittleEndian::write_f32_into(vol.data(), &mut bytes),
        Endian::Be => BigEndian::write_f32_into(vol.data(), &mut bytes),
    }
    fs::write(path, bytes).map_err(|e| Error::io_at(path, e))
}

/// JSON sidecar written next to cached `f32` volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub window: (f64, f64),
    pub source_range: (f64, f64),
    pub dtype: RawDtype,
    pub endian: Endian,
    /// Raw payload file name, relative to the sidecar.
    pub data_file: String,
}

/// Write `<dir>/<stem>.raw` and `<dir>/<stem>.json`; returns the sidecar path.
pub fn save_cached(vol: &Volume, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    let data_file = format!("{stem}.raw");
    write_raw_f32(vol, dir.join(&data_file), Endian::Le)?;
    let sidecar = VolumeSidecar {
        dims: vol.dims(),
        spacing: vol.spacing(),
        window: vol.window(),
        source_range: vol.source_range(),
        dtype: RawDtype::F32,
        endian: Endian::Le,
        data_file,
    };
    let json_path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&json_path, text).map_err(|e| Error::io_at(&json_path, e))?;
    Ok(json_path)
}

/// Load a volume cached by [`save_cached`].
pub fn load_cached(sidecar_path: impl AsRef<Path>) -> Result<Volume> {
    let sidecar_path = sidecar_path.as_ref();
    let text = fs::read_to_string(sidecar_path).map_err(|e| Error::io_at(sidecar_path, e))?;
    let sidecar: VolumeSidecar =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", sidecar_path.display())))?;
    let data_path = sidecar_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&sidecar.data_file);
    // window (0, 1) is the identity on normalized data
    let vol = read_raw_windowed(&data_path, sidecar.dims, sidecar.dtype, sidecar.endian, (0.0, 1.0))?;
    Ok(vol
        .with_spacing(sidecar.spacing)?
        .with_provenance(sidecar.source_range, sidecar.window))
}

/// Decoded NIfTI-1 header fields.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub magic: [u8; 4],
    pub endian: Endian,
}

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const MAGIC: usize = 344;
}

pub const NIFTI1_HEADER_SIZE: usize = 348;

impl NiftiHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < NIFTI1_HEADER_SIZE {
            return Err(Error::BadMagic(format!(
                "header is {} bytes, expected {NIFTI1_HEADER_SIZE}",
                bytes.len()
            )));
        }
        let endian = if LittleEndian::read_i32(bytes) == NIFTI1_HEADER_SIZE as i32 {
            Endian::Le
        } else if BigEndian::read_i32(bytes) == NIFTI1_HEADER_SIZE as i32 {
            Endian::Be
        } else {
            return Err(Error::BadMagic(format!(
                "sizeof_hdr is neither 348 LE nor BE (raw {:?})",
                &bytes[..4]
            )));
        };
        match endian {
            Endian::Le => Self::parse_with::<LittleEndian>(bytes, endian),
            Endian::Be => Self::parse_with::<BigEndian>(bytes, endian),
        }
    }

    fn parse_with<B: ByteOrder>(bytes: &[u8], endian: Endian) -> Result<Self> {
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[offsets::MAGIC..offsets::MAGIC + 4]);
        if &magic != b"n+1\0" && &magic != b"ni1\0" {
            return Err(Error::BadMagic(format!("{magic:?}")));
        }
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = B::read_i16(&bytes[offsets::DIM + 2 * i..]);
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = B::read_f32(&bytes[offsets::PIXDIM + 4 * i..]);
        }
        Ok(Self {
            sizeof_hdr: B::read_i32(&bytes[offsets::SIZEOF_HDR..]),
            dim,
            datatype: B::read_i16(&bytes[offsets::DATATYPE..]),
            bitpix: B::read_i16(&bytes[offsets::BITPIX..]),
            pixdim,
            vox_offset: B::read_f32(&bytes[offsets::VOX_OFFSET..]),
            scl_slope: B::read_f32(&bytes[offsets::SCL_SLOPE..]),
            scl_inter: B::read_f32(&bytes[offsets::SCL_INTER..]),
            magic,
            endian,
        })
    }

    pub fn is_single_file(&self) -> bool {
        &self.magic == b"n+1\0"
    }

    fn dtype(&self) -> Result<RawDtype> {
        match self.datatype {
            2 => Ok(RawDtype::U8),
            4 => Ok(RawDtype::I16),
            16 => Ok(RawDtype::F32),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    fn volume_dims(&self) -> Result<[usize; 3]> {
        if self.dim[0] != 3 {
            return Err(Error::DimMismatch(format!(
                "dim[0] = {}, only 3D volumes are accepted",
                self.dim[0]
            )));
        }
        let mut dims = [0usize; 3];
        for (i, d) in dims.iter_mut().enumerate() {
            let v = self.dim[i + 1];
            if v < 1 {
                return Err(Error::DimMismatch(format!("dim[{}] = {v}", i + 1)));
            }
            *d = v as usize;
        }
        Ok(dims)
    }

    fn spacing(&self) -> [f64; 3] {
        let mut s = [1.0; 3];
        for (i, v) in s.iter_mut().enumerate() {
            let p = self.pixdim[i + 1].abs() as f64;
            if p > 0.0 && p.is_finite() {
                *v = p;
            }
        }
        s
    }
}

/// Read a NIfTI-1 volume with the default HU window.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    read_nifti_windowed(path, DEFAULT_WINDOW)
}

pub fn read_nifti_windowed(path: impl AsRef<Path>, window: (f64, f64)) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    let header = NiftiHeader::parse(&bytes)?;
    let dtype = header.dtype()?;
    let dims = header.volume_dims()?;
    let needed = dims.iter().product::<usize>() * dtype.size();

    let payload_owned;
    let payload: &[u8] = if header.is_single_file() {
        let offset = header.vox_offset.max(NIFTI1_HEADER_SIZE as f32) as usize;
        bytes.get(offset..).unwrap_or(&[])
    } else {
        let img = path.with_extension("img");
        payload_owned = fs::read(&img).map_err(|e| Error::io_at(&img, e))?;
        let offset = header.vox_offset.max(0.0) as usize;
        payload_owned.get(offset..).unwrap_or(&[])
    };
    if payload.len() < needed {
        return Err(Error::TruncatedFile {
            expected: needed,
            actual: payload.len(),
        });
    }

    let mut raw = decode_samples(&payload[..needed], dtype, header.endian);
    let (slope, inter) = (header.scl_slope as f64, header.scl_inter as f64);
    if slope != 0.0 && slope.is_finite() {
        let inter = if inter.is_finite() { inter } else { 0.0 };
        raw.iter_mut().for_each(|v| *v = *v * slope + inter);
    }
    volume_from_raw(raw, dims, header.spacing(), window)
}

/// Crop or pad each axis to a multiple of `edge`, symmetrically.
///
/// When the margin is odd the extra voxel goes to the high side.
pub fn fit_to_grid(vol: &Volume, edge: usize, policy: FitPolicy) -> Result<Volume> {
    if edge == 0 {
        return Err(Error::Config("superpatch edge must be positive".into()));
    }
    let src = vol.dims();
    let mut out_dims = [0usize; 3];
    // signed offset: output coord + offset = source coord
    let mut offset = [0isize; 3];
    for a in 0..3 {
        let d = src[a];
        match policy {
            FitPolicy::CropCenter => {
                if d < edge {
                    return Err(Error::TooSmall { dim: d, edge });
                }
                out_dims[a] = d / edge * edge;
                offset[a] = ((d - out_dims[a]) / 2) as isize;
            }
            FitPolicy::PadZero => {
                out_dims[a] = d.div_ceil(edge) * edge;
                offset[a] = -(((out_dims[a] - d) / 2) as isize);
            }
        }
    }
    if out_dims == src {
        return Ok(vol.clone());
    }
    let mut data = vec![0f32; out_dims.iter().product()];
    let mut i = 0;
    for z in 0..out_dims[2] {
        let sz = z as isize + offset[2];
        for y in 0..out_dims[1] {
            let sy = y as isize + offset[1];
            for x in 0..out_dims[0] {
                let sx = x as isize + offset[0];
                let inside = (0..src[0] as isize).contains(&sx)
                    && (0..src[1] as isize).contains(&sy)
                    && (0..src[2] as isize).contains(&sz);
                if inside {
                    data[i] = vol.get(sx as usize, sy as usize, sz as usize);
                }
                i += 1;
            }
        }
    }
    Ok(Volume::new(data, out_dims, vol.spacing())?.with_provenance(vol.source_range(), vol.window()))
}

/// Encode a slice as 16-bit binary PGM bytes.
pub fn encode_pgm16(width: usize, height: usize, pixels: &[f32]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(pixels.len() * 2);
    for &v in pixels {
        let q = (clamp_unit(v) as f64 * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn write_slice_pgm(vol: &Volume, axis: Axis, index: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h, pixels) = vol.slice(axis, index)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io_at(path, e))?;
    f.write_all(&encode_pgm16(w, h, &pixels))
        .map_err(|e| Error::io_at(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn ramp(dims: [usize; 3]) -> Volume {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|i| i as f32 / n as f32).collect();
        Volume::new(data, dims, [1.0; 3]).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let out = normalize_hu(&[-1000.0, 1000.0, 0.0, -3000.0, 4000.0], DEFAULT_WINDOW).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn normalize_rejects_degenerate_window() {
        assert!(matches!(
            normalize_hu(&[0.0], (5.0, 5.0)),
            Err(Error::DegenerateWindow { .. })
        ));
        assert!(matches!(
            normalize_hu(&[0.0], (5.0, 1.0)),
            Err(Error::DegenerateWindow { .. })
        ));
    }

    #[test]
    fn raw_u8_is_x_fastest() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.raw");
        fs::write(&p, [0u8, 1, 2, 3, 4, 5, 6, 7]).unwrap();
        let vol = read_raw_windowed(&p, [2, 2, 2], RawDtype::U8, Endian::Le, (0.0, 7.0)).unwrap();
        assert_eq!(vol.get(1, 1, 1), 1.0);
        assert_eq!(vol.get(1, 0, 0), 1.0 / 7.0);
        assert_eq!(vol.get(0, 1, 0), 2.0 / 7.0);
        assert_eq!(vol.get(0, 0, 1), 4.0 / 7.0);
    }

    #[test]
    fn raw_size_mismatch() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.raw");
        fs::write(&p, [0u8; 15]).unwrap();
        assert!(matches!(
            read_raw(&p, [2, 2, 2], RawDtype::I16, Endian::Le),
            Err(Error::SizeMismatch {
                expected: 16,
                actual: 15
            })
        ));
    }

    #[test]
    fn raw_air_maps_to_zero() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.raw");
        let bytes: Vec<u8> = (0..8).flat_map(|_| (-1000i16).to_le_bytes()).collect();
        fs::write(&p, bytes).unwrap();
        let vol = read_raw(&p, [2, 2, 2], RawDtype::I16, Endian::Le).unwrap();
        assert!(vol.data().iter().all(|&v| v == 0.0));
        assert_eq!(vol.source_range(), (-1000.0, -1000.0));
    }

    #[test]
    fn fit_unchanged_when_divisible() {
        let vol = ramp([16, 16, 16]);
        for policy in [FitPolicy::CropCenter, FitPolicy::PadZero] {
            assert_eq!(fit_to_grid(&vol, 8, policy).unwrap(), vol);
        }
    }

    #[test]
    fn crop_center_removes_symmetric_margins() {
        let vol = ramp([10, 8, 8]);
        let out = fit_to_grid(&vol, 8, FitPolicy::CropCenter).unwrap();
        assert_eq!(out.dims(), [8, 8, 8]);
        assert_eq!(out.get(0, 0, 0), vol.get(1, 0, 0));
        assert_eq!(out.get(7, 3, 2), vol.get(8, 3, 2));
    }

    #[test]
    fn pad_zero_appends_symmetric_slabs() {
        let data = vec![1.0; 8 * 16 * 16];
        let vol = Volume::new(data, [8, 16, 16], [1.0; 3]).unwrap();
        let out = fit_to_grid(&vol, 16, FitPolicy::PadZero).unwrap();
        assert_eq!(out.dims(), [16, 16, 16]);
        for x in 0..16 {
            let expect = if (4..12).contains(&x) { 1.0 } else { 0.0 };
            assert_eq!(out.get(x, 5, 5), expect, "x = {x}");
        }
    }

    #[test]
    fn crop_too_small() {
        let vol = ramp([4, 8, 8]);
        assert!(matches!(
            fit_to_grid(&vol, 8, FitPolicy::CropCenter),
            Err(Error::TooSmall { dim: 4, edge: 8 })
        ));
    }

    #[test]
    fn pgm_values() {
        let bytes = encode_pgm16(2, 2, &[0.0, 0.5, 0.5, 1.0]);
        let header = b"P5\n2 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let px: Vec<u16> = bytes[header.len()..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![0, 32768, 32768, 65535]);
    }

    #[test]
    fn pgm_constant_slices() {
        let zeros = Volume::new(vec![0.0; 27], [3, 3, 3], [1.0; 3]).unwrap();
        let ones = Volume::new(vec![1.0; 27], [3, 3, 3], [1.0; 3]).unwrap();
        let dir = tempdir().unwrap();
        let p0 = dir.path().join("z.pgm");
        let p1 = dir.path().join("o.pgm");
        write_slice_pgm(&zeros, Axis::Z, 1, &p0).unwrap();
        write_slice_pgm(&ones, Axis::X, 2, &p1).unwrap();
        let b0 = fs::read(p0).unwrap();
        let b1 = fs::read(p1).unwrap();
        let hl = "P5\n3 3\n65535\n".len();
        assert!(b0[hl..].iter().all(|&b| b == 0));
        assert!(b1[hl..].chunks_exact(2).all(|c| c == [0xFF, 0xFF]));
        assert!(matches!(
            write_slice_pgm(&zeros, Axis::Y, 3, dir.path().join("bad.pgm")),
            Err(Error::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn slice_orientation() {
        let vol = ramp([2, 3, 4]);
        let (w, h, px) = vol.slice(Axis::Y, 1).unwrap();
        assert_eq!((w, h), (2, 4));
        assert_eq!(px[2 + 1], vol.get(1, 1, 1));
        let (w, h, px) = vol.slice(Axis::X, 0).unwrap();
        assert_eq!((w, h), (3, 4));
        assert_eq!(px[3 * 2 + 1], vol.get(0, 1, 2));
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempdir().unwrap();
        let vol = ramp([4, 4, 4]).with_provenance((-1024.0, 3071.0), DEFAULT_WINDOW);
        let json = save_cached(&vol, dir.path(), "ct").unwrap();
        let back = load_cached(&json).unwrap();
        assert_eq!(back, vol);
    }
}
