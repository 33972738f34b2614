//! Superpatch partitioning, dense patch tokenization and 3D sinusoidal
//! positional encodings.
//!
//! Voxels inside a token and tokens inside a grid are both ordered x-fastest.

use crate::error::{Error, Result};
use crate::volume_io::Volume;

/// Tiling of a volume into cubic superpatches of edge `edge`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuperpatchGrid {
    pub counts: [usize; 3],
    pub edge: usize,
    pub source_dims: [usize; 3],
}

impl SuperpatchGrid {
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear (x-fastest) index of superpatch `(i, j, k)`.
    pub fn linear(&self, [i, j, k]: [usize; 3]) -> usize {
        i + self.counts[0] * (j + self.counts[1] * k)
    }

    pub fn position(&self, linear: usize) -> [usize; 3] {
        let [cx, cy, _] = self.counts;
        [linear % cx, (linear / cx) % cy, linear / (cx * cy)]
    }

    pub fn positions(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        (0..self.len()).map(|l| self.position(l))
    }
}

/// A cubic block of voxels, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub edge: usize,
    pub data: Vec<f32>,
}

impl Cube {
    pub fn new(edge: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != edge * edge * edge {
            return Err(Error::LengthMismatch {
                expected: edge * edge * edge,
                actual: data.len(),
            });
        }
        Ok(Self { edge, data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[x + self.edge * (y + self.edge * z)]
    }
}

pub fn partition(vol: &Volume, edge: usize) -> Result<SuperpatchGrid> {
    let dims = vol.dims();
    if edge == 0 {
        return Err(Error::NotDivisible {
            value: dims[0],
            divisor: 0,
        });
    }
    let mut counts = [0; 3];
    for a in 0..3 {
        if !dims[a].is_multiple_of(edge) {
            return Err(Error::NotDivisible {
                value: dims[a],
                divisor: edge,
            });
        }
        counts[a] = dims[a] / edge;
    }
    Ok(SuperpatchGrid {
        counts,
        edge,
        source_dims: dims,
    })
}

fn check_grid(vol: &Volume, grid: &SuperpatchGrid) -> Result<()> {
    if vol.dims() != grid.source_dims {
        return Err(Error::DimMismatch(format!(
            "volume {:?} vs grid source {:?}",
            vol.dims(),
            grid.source_dims
        )));
    }
    Ok(())
}

pub fn extract_superpatch(vol: &Volume, grid: &SuperpatchGrid, index: [usize; 3]) -> Result<Cube> {
    check_grid(vol, grid)?;
    if (0..3).any(|a| index[a] >= grid.counts[a]) {
        return Err(Error::IndexOutOfRange(format!(
            "superpatch {index:?} in grid {:?}",
            grid.counts
        )));
    }
    let s = grid.edge;
    let [ox, oy, oz] = [index[0] * s, index[1] * s, index[2] * s];
    let mut data = Vec::with_capacity(s * s * s);
    for c in 0..s {
        for b in 0..s {
            let row = vol.index(ox, oy + b, oz + c);
            data.extend_from_slice(&vol.data()[row..row + s]);
        }
    }
    Ok(Cube { edge: s, data })
}

/// Inverse of extracting every superpatch: `cubes[l]` fills linear slot `l`.
pub fn assemble(grid: &SuperpatchGrid, cubes: &[Cube]) -> Result<Vec<f32>> {
    if cubes.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            actual: cubes.len(),
        });
    }
    let [nx, ny, nz] = grid.source_dims;
    let s = grid.edge;
    let mut out = vec![0f32; nx * ny * nz];
    for (l, cube) in cubes.iter().enumerate() {
        if cube.edge != s {
            return Err(Error::ShapeMismatch(format!(
                "cube edge {} in grid of edge {s}",
                cube.edge
            )));
        }
        let [i, j, k] = grid.position(l);
        for c in 0..s {
            for b in 0..s {
                let dst = i * s + nx * ((j * s + b) + ny * (k * s + c));
                let src = s * (b + s * c);
                out[dst..dst + s].copy_from_slice(&cube.data[src..src + s]);
            }
        }
    }
    Ok(out)
}

/// Flattened local patches of one superpatch.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    /// `N * patch_edge^3` values, token-major.
    pub tokens: Vec<f32>,
    pub grid: [usize; 3],
    pub patch_edge: usize,
    pub superpatch_index: [usize; 3],
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token_len(&self) -> usize {
        self.patch_edge.pow(3)
    }

    pub fn token(&self, i: usize) -> &[f32] {
        let l = self.token_len();
        &self.tokens[i * l..(i + 1) * l]
    }

    /// Grid coordinate of token `t`.
    pub fn coord(&self, t: usize) -> [usize; 3] {
        token_coord(self.grid, t)
    }
}

#[inline]
pub fn token_coord(grid: [usize; 3], t: usize) -> [usize; 3] {
    [t % grid[0], (t / grid[0]) % grid[1], t / (grid[0] * grid[1])]
}

pub fn patchify(sp: &Cube, patch_edge: usize) -> Result<TokenGrid> {
    patchify_at(sp, patch_edge, [0; 3])
}

pub fn patchify_at(sp: &Cube, patch_edge: usize, superpatch_index: [usize; 3]) -> Result<TokenGrid> {
    let s = sp.edge;
    let p = patch_edge;
    if p == 0 || !s.is_multiple_of(p) {
        return Err(Error::NotDivisible { value: s, divisor: p });
    }
    let t = s / p;
    let mut tokens = Vec::with_capacity(s * s * s);
    for w in 0..t {
        for v in 0..t {
            for u in 0..t {
                for c in 0..p {
                    for b in 0..p {
                        let start = u * p + s * ((v * p + b) + s * (w * p + c));
                        tokens.extend_from_slice(&sp.data[start..start + p]);
                    }
                }
            }
        }
    }
    Ok(TokenGrid {
        tokens,
        grid: [t, t, t],
        patch_edge: p,
        superpatch_index,
    })
}

pub fn unpatchify(tg: &TokenGrid) -> Result<Cube> {
    let p = tg.patch_edge;
    let [tx, ty, tz] = tg.grid;
    if p == 0 || tx != ty || ty != tz {
        return Err(Error::MalformedTokenGrid(format!(
            "grid {:?} with patch edge {p} is not a cube",
            tg.grid
        )));
    }
    let expected = tx * ty * tz * p * p * p;
    if tg.tokens.len() != expected {
        return Err(Error::MalformedTokenGrid(format!(
            "{} values for {} tokens of length {}",
            tg.tokens.len(),
            tx * ty * tz,
            p * p * p
        )));
    }
    let s = tx * p;
    let mut data = vec![0f32; s * s * s];
    let mut src = 0;
    for w in 0..tz {
        for v in 0..ty {
            for u in 0..tx {
                for c in 0..p {
                    for b in 0..p {
                        let dst = u * p + s * ((v * p + b) + s * (w * p + c));
                        data[dst..dst + p].copy_from_slice(&tg.tokens[src..src + p]);
                        src += p;
                    }
                }
            }
        }
    }
    Ok(Cube { edge: s, data })
}

/// Fixed separable 3D sinusoidal table, `N x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    pub table: Vec<f64>,
    pub dim: usize,
    pub axis_dim: usize,
}

impl PositionalEncoding {
    pub fn rows(&self) -> usize {
        self.table.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.table[i * self.dim..(i + 1) * self.dim]
    }
}

/// Per axis block of width `d/3`: `[2m] = sin(c / 10000^(2m/(d/3)))`,
/// `[2m+1] = cos(...)`; rows are `x || y || z`.
pub fn positional_encoding(grid: [usize; 3], dim: usize) -> Result<PositionalEncoding> {
    if dim == 0 || !dim.is_multiple_of(6) {
        return Err(Error::BadDim(dim));
    }
    let axis_dim = dim / 3;
    let freqs: Vec<f64> = (0..axis_dim / 2)
        .map(|m| 1.0 / 10000f64.powf(2.0 * m as f64 / axis_dim as f64))
        .collect();
    let n: usize = grid.iter().product();
    let mut table = Vec::with_capacity(n * dim);
    for t in 0..n {
        for c in token_coord(grid, t) {
            for &f in &freqs {
                let angle = c as f64 * f;
                table.push(angle.sin());
                table.push(angle.cos());
            }
        }
    }
    Ok(PositionalEncoding { table, dim, axis_dim })
}
