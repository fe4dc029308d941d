//! Binary snapshot format for [`SpectralVelocity`].
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic b"SNSD"
//! 4       4     version (u32) = 1
//! 8       4     n_per_axis (u32)
//! 12      8     box_length (f64)
//! 20      8     mode count M (u64)
//! 28      M*60  records: k (3 × i32), then Re c_x, Im c_x, Re c_y, Im c_y,
//!               Re c_z, Im c_z (6 × f64)
//! ```
//!
//! Records are written in the grid's mode order (`|k|^2`, then
//! lexicographic). Readers accept any order and any subset of the retained
//! modes; missing modes are zero.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;

use super::grid::Grid;
use super::velocity::SpectralVelocity;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SNSD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;
pub const RECORD_LEN: usize = 60;

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotHeader {
    pub version: u32,
    pub n_per_axis: u32,
    pub box_length: f64,
    pub mode_count: u64,
}

pub fn write_snapshot<W: Write>(w: &mut W, u: &SpectralVelocity) -> Result<()> {
    let g = u.grid();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(g.n() as u32).to_le_bytes())?;
    w.write_all(&g.box_length().to_le_bytes())?;
    w.write_all(&(g.n_modes() as u64).to_le_bytes())?;
    for (k, c) in g.modes().iter().zip(u.coeffs()) {
        for ki in k {
            w.write_all(&ki.to_le_bytes())?;
        }
        for ci in c {
            w.write_all(&ci.re.to_le_bytes())?;
            w.write_all(&ci.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_header<R: Read>(r: &mut R) -> Result<SnapshotHeader> {
    let mut buf = [0u8; HEADER_LEN];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Snapshot(format!("short header: {e}")))?;
    if &buf[0..4] != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    Ok(SnapshotHeader {
        version,
        n_per_axis: u32::from_le_bytes(buf[8..12].try_into().unwrap()),
        box_length: f64::from_le_bytes(buf[12..20].try_into().unwrap()),
        mode_count: u64::from_le_bytes(buf[20..28].try_into().unwrap()),
    })
}

/// Read a snapshot onto `grid`, which must match the header's resolution and
/// box length and retain every stored wavevector.
pub fn read_snapshot<R: Read>(r: &mut R, grid: &Arc<Grid>) -> Result<SpectralVelocity> {
    let h = read_header(r)?;
    if h.n_per_axis as usize != grid.n() || h.box_length != grid.box_length() {
        return Err(Error::GridMismatch(format!(
            "snapshot is n={} L={}, grid is n={} L={}",
            h.n_per_axis,
            h.box_length,
            grid.n(),
            grid.box_length()
        )));
    }
    let mut coeffs = vec![[Complex64::new(0.0, 0.0); 3]; grid.n_modes()];
    let mut rec = [0u8; RECORD_LEN];
    for _ in 0..h.mode_count {
        r.read_exact(&mut rec)
            .map_err(|e| Error::Snapshot(format!("truncated record: {e}")))?;
        let i32_at = |o: usize| i32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(rec[o..o + 8].try_into().unwrap());
        let k = [i32_at(0), i32_at(4), i32_at(8)];
        let m = grid
            .mode_index(k)
            .ok_or_else(|| Error::Snapshot(format!("wavevector {k:?} not retained by grid")))?;
        for (i, c) in coeffs[m].iter_mut().enumerate() {
            *c = Complex64::new(f64_at(12 + 16 * i), f64_at(20 + 16 * i));
        }
    }
    let u = SpectralVelocity::from_coeffs_unchecked(grid.clone(), coeffs);
    if !u.is_finite() {
        return Err(Error::Snapshot("non-finite coefficient".into()));
    }
    if u.hermitian_defect() > 1e-12 * u.h_norm_sq().sqrt().max(1e-300) || u.max_divergence() > 1e-12 {
        return Err(Error::Snapshot("field is not Hermitian and divergence-free".into()));
    }
    Ok(u)
}
