//! Binary snapshot format.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 16 | magic `QKINETIC-SNAP-01` |
//! | 8 | format version (u64) |
//! | 8, 8 | row and column counts (u64) |
//! | 8, 8 | row and column extents (f64) |
//! | 8 | time or parameter value (f64) |
//! | 8 | seed (u64) |
//! | 64 | config hash (ASCII hex) |
//! | 16 per entry | row-major complex values as (re, im) f64 pairs |

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{DensityMatrixGrid, GridGeometry};

pub const MAGIC: &[u8; 16] = b"QKINETIC-SNAP-01";
pub const VERSION: u64 = 1;
pub const HASH_LEN: usize = 64;
pub const HEADER_LEN: usize = 16 + 8 * 7 + HASH_LEN;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub rows: usize,
    pub cols: usize,
    pub row_extent: f64,
    pub col_extent: f64,
    pub time: f64,
    pub seed: u64,
    pub config_hash: String,
    pub values: Array2<Complex64>,
}

impl Snapshot {
    pub fn from_grid(rho: &DensityMatrixGrid, seed: u64, config_hash: &str) -> Self {
        let g = rho.geometry;
        Self {
            rows: g.nr,
            cols: g.ns,
            row_extent: g.r_extent,
            col_extent: g.s_extent,
            time: rho.time,
            seed,
            config_hash: config_hash.to_string(),
            values: rho.values.clone(),
        }
    }

    pub fn to_grid(&self) -> Result<DensityMatrixGrid> {
        let geo = GridGeometry::new(self.rows, self.cols, self.row_extent, self.col_extent)?;
        DensityMatrixGrid::new(geo, self.values.clone(), self.time)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        if self.config_hash.len() != HASH_LEN || !self.config_hash.is_ascii() {
            return Err(Error::Snapshot(format!("config hash must be {HASH_LEN} ASCII characters")));
        }
        if self.values.dim() != (self.rows, self.cols) {
            return Err(Error::Snapshot("value array does not match the declared shape".into()));
        }
        let mut buf = Vec::with_capacity(HEADER_LEN + 16 * self.rows * self.cols);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.rows as u64).to_le_bytes());
        buf.extend_from_slice(&(self.cols as u64).to_le_bytes());
        buf.extend_from_slice(&self.row_extent.to_le_bytes());
        buf.extend_from_slice(&self.col_extent.to_le_bytes());
        buf.extend_from_slice(&self.time.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(self.config_hash.as_bytes());
        for v in self.values.iter() {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|e| Error::Snapshot(format!("truncated header: {e}")))?;
        if &header[..16] != MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let word = |i: usize| -> [u8; 8] { header[16 + 8 * i..24 + 8 * i].try_into().unwrap() };
        let version = u64::from_le_bytes(word(0));
        if version != VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let rows = u64::from_le_bytes(word(1)) as usize;
        let cols = u64::from_le_bytes(word(2)) as usize;
        let row_extent = f64::from_le_bytes(word(3));
        let col_extent = f64::from_le_bytes(word(4));
        let time = f64::from_le_bytes(word(5));
        let seed = u64::from_le_bytes(word(6));
        let config_hash = std::str::from_utf8(&header[72..72 + HASH_LEN])
            .map_err(|_| Error::Snapshot("config hash is not ASCII".into()))?
            .to_string();
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Snapshot("shape overflows".into()))?;
        let mut data = vec![0u8; 16 * n];
        r.read_exact(&mut data)
            .map_err(|e| Error::Snapshot(format!("truncated data: {e}")))?;
        let values: Vec<Complex64> = data
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        let values = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Snapshot(e.to_string()))?;
        Ok(Self {
            rows,
            cols,
            row_extent,
            col_extent,
            time,
            seed,
            config_hash,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GaussianState;

    fn hash() -> String {
        "ab".repeat(32)
    }

    #[test]
    fn round_trip_is_exact() {
        let geo = GridGeometry::new(8, 16, 4.0, 6.0).unwrap();
        let mut rho = GaussianState { q0: 0.3, p0: 1.0, sigma_q: 1.0, sigma_p: 1.0 }.density(geo, 1.0).unwrap();
        rho.time = 1.25;
        let snap = Snapshot::from_grid(&rho, 99, &hash());
        let mut bytes = Vec::new();
        snap.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 16 * 8 * 16);
        assert_eq!(&bytes[..16], MAGIC);
        let back = Snapshot::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.to_grid().unwrap(), rho);
    }

    #[test]
    fn corrupt_input_rejected() {
        let geo = GridGeometry::new(4, 4, 4.0, 4.0).unwrap();
        let rho = GaussianState { q0: 0.0, p0: 0.0, sigma_q: 1.0, sigma_p: 1.0 }.density(geo, 1.0).unwrap();
        let mut bytes = Vec::new();
        Snapshot::from_grid(&rho, 1, &hash()).write_to(&mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Snapshot::read_from(bad.as_slice()), Err(Error::Snapshot(_))));
        assert!(matches!(Snapshot::read_from(&bytes[..bytes.len() - 1]), Err(Error::Snapshot(_))));
        let mut wrong_version = bytes.clone();
        wrong_version[16] = 9;
        assert!(matches!(Snapshot::read_from(wrong_version.as_slice()), Err(Error::Snapshot(_))));
    }
}
