//! Binary container for matrix product states.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic          4 bytes  "MPSB"
//! version        u32      currently 1
//! n              u64      number of sites
//! physical_dims  n × u64
//! shapes         n × 3 × u64   (left, physical, right) per site
//! ortho_center   i64      -1 when unset
//! log2_scale     f64
//! amplitudes     per site, row-major, (re: f64, im: f64) pairs
//! ```
//!
//! Real states are stored with zero imaginary parts. A JSON sidecar with the
//! same path plus `.json` carries human-readable metadata.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{MagicError, Result};
use crate::mps::Mps;
use crate::tensor::Field;

pub const MAGIC: &[u8; 4] = b"MPSB";
pub const FORMAT_VERSION: u32 = 1;

/// Metadata stored next to the binary container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub physical_dims: Vec<usize>,
    pub bond_dims: Vec<usize>,
    pub ortho_center: Option<usize>,
    pub log2_scale: f64,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_mps<T: Field>(psi: &Mps<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(psi.len() as u64).to_le_bytes());
    for d in psi.physical_dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for a in psi.sites() {
        let (l, p, r) = a.dim();
        for x in [l, p, r] {
            out.extend_from_slice(&(x as u64).to_le_bytes());
        }
    }
    let center = psi.ortho_center().map_or(-1i64, |c| c as i64);
    out.extend_from_slice(&center.to_le_bytes());
    out.extend_from_slice(&psi.log2_scale().to_le_bytes());
    for a in psi.sites() {
        for x in a.iter() {
            out.extend_from_slice(&x.re().to_le_bytes());
            out.extend_from_slice(&x.im().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| MagicError::Parse("truncated MPS container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| MagicError::Parse("size does not fit usize".into()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_mps<T: Field>(bytes: &[u8]) -> Result<Mps<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(MagicError::Parse("not an MPS container (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(MagicError::Parse(format!("unsupported container version {version}")));
    }
    let n = r.usize()?;
    if n == 0 || n > bytes.len() {
        return Err(MagicError::Parse(format!("implausible site count {n}")));
    }
    let dims = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let shapes = (0..n)
        .map(|_| Ok((r.usize()?, r.usize()?, r.usize()?)))
        .collect::<Result<Vec<_>>>()?;
    for (j, (s, d)) in shapes.iter().zip(&dims).enumerate() {
        if s.1 != *d {
            return Err(MagicError::Parse(format!("site {j}: shape {s:?} disagrees with dim {d}")));
        }
    }
    let center = r.i64()?;
    let log2_scale = r.f64()?;
    let mut sites = Vec::with_capacity(n);
    for &(l, p, rr) in &shapes {
        let count = l
            .checked_mul(p)
            .and_then(|x| x.checked_mul(rr))
            .filter(|&c| c <= bytes.len() / 16)
            .ok_or_else(|| MagicError::Parse("site tensor larger than the file".into()))?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let (re, im) = (r.f64()?, r.f64()?);
            let x = T::from_parts(re, im);
            if x.im() != im {
                return Err(MagicError::Parse("complex amplitudes cannot be read as real".into()));
            }
            data.push(x);
        }
        sites.push(Array3::from_shape_vec((l, p, rr), data)?);
    }
    if r.pos != bytes.len() {
        return Err(MagicError::Parse("trailing bytes after MPS container".into()));
    }
    let ortho_center = match center {
        -1 => None,
        c if c >= 0 && (c as usize) < n => Some(c as usize),
        c => return Err(MagicError::Parse(format!("orthogonality center {c} out of range"))),
    };
    let psi = Mps::from_sites(sites)?;
    let (sites, _, _) = psi.into_parts();
    Ok(Mps::set_sites_raw(sites, ortho_center, log2_scale))
}

pub fn sidecar_for<T: Field>(psi: &Mps<T>, metadata: serde_json::Value) -> Sidecar {
    Sidecar {
        format: "MPSB".into(),
        version: FORMAT_VERSION,
        n: psi.len(),
        physical_dims: psi.physical_dims(),
        bond_dims: psi.bond_dims(),
        ortho_center: psi.ortho_center(),
        log2_scale: psi.log2_scale(),
        metadata,
    }
}

/// Writes the container and its JSON sidecar.
pub fn write_mps<T: Field>(path: &Path, psi: &Mps<T>, metadata: serde_json::Value) -> Result<()> {
    fs::write(path, encode_mps(psi))?;
    let side = serde_json::to_string_pretty(&sidecar_for(psi, metadata))?;
    fs::write(sidecar_path(path), side)?;
    Ok(())
}

/// Reads a container; the sidecar is optional.
pub fn read_mps<T: Field>(path: &Path) -> Result<(Mps<T>, Option<Sidecar>)> {
    let psi = decode_mps(&fs::read(path)?)?;
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        Some(serde_json::from_str(&fs::read_to_string(side)?)?)
    } else {
        None
    };
    Ok((psi, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bit_exact_round_trip() {
        let mut psi = Mps::<Complex64>::random(7, 2, 5, &mut ChaCha8Rng::seed_from_u64(3));
        psi.scale_log2(-123.25);
        let bytes = encode_mps(&psi);
        let back: Mps<Complex64> = decode_mps(&bytes).unwrap();
        assert_eq!(back.ortho_center(), psi.ortho_center());
        assert_eq!(back.log2_scale().to_bits(), psi.log2_scale().to_bits());
        for (a, b) in psi.sites().iter().zip(back.sites()) {
            assert_eq!(a.dim(), b.dim());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
        assert_eq!(encode_mps(&back), bytes);
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.mps");
        let psi = Mps::<f64>::random(5, 4, 3, &mut ChaCha8Rng::seed_from_u64(4));
        write_mps(&path, &psi, serde_json::json!({"source": "test"})).unwrap();
        let (back, side) = read_mps::<f64>(&path).unwrap();
        assert_eq!(back, psi);
        let side = side.unwrap();
        assert_eq!(side.physical_dims, vec![4; 5]);
        assert_eq!(side.metadata["source"], "test");
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let psi = Mps::<Complex64>::random(3, 2, 2, &mut ChaCha8Rng::seed_from_u64(5));
        let bytes = encode_mps(&psi);
        assert!(decode_mps::<Complex64>(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_mps::<Complex64>(&bad).is_err());
        assert!(decode_mps::<f64>(&bytes).is_err());
    }
}
