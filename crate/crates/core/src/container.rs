//! Named-matrix binary container used for model files (TV model, LDA
//! transform, SUV model, GPLDA model). Same style as the IVEC container:
//! magic, version, then named f64 matrix sections.
//!
//! Layout: `NMAT` | version u32=1 | section count u32 | per section:
//! name length u32, UTF-8 name, rows u32, cols u32, rows*cols f64
//! little-endian row-major.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::util::atomic_write;

const MAGIC: &[u8; 4] = b"NMAT";
const VERSION: u32 = 1;

pub fn sections_to_bytes(sections: &[(&str, &DMatrix<f64>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, m) in sections {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }
    out
}

pub fn write_sections(sections: &[(&str, &DMatrix<f64>)], destination: &Path) -> Result<()> {
    atomic_write(destination, &sections_to_bytes(sections))
}

pub fn sections_from_bytes(bytes: &[u8]) -> Result<Vec<(String, DMatrix<f64>)>> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::format(format!(
                "truncated NMAT file at offset {}",
                *pos
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };

    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::format("bad magic, expected \"NMAT\""));
    }
    let version = read_u32(&mut pos)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported NMAT version {version}")));
    }
    let n_sections = read_u32(&mut pos)? as usize;
    let mut sections = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        let name_len = read_u32(&mut pos)? as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|e| Error::format(format!("section name: {e}")))?
            .to_string();
        let rows = read_u32(&mut pos)? as usize;
        let cols = read_u32(&mut pos)? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::format("section too large"))?;
        let data = take(&mut pos, n)?;
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!(
                "section {name:?} contains non-finite values"
            )));
        }
        sections.push((name, DMatrix::from_row_slice(rows, cols, &values)));
    }
    if pos != bytes.len() {
        return Err(Error::format("trailing bytes after last section"));
    }
    Ok(sections)
}

pub fn read_sections(source: &Path) -> Result<Vec<(String, DMatrix<f64>)>> {
    sections_from_bytes(&std::fs::read(source)?)
}

/// Looks up a section by name.
pub fn find<'a>(
    sections: &'a [(String, DMatrix<f64>)],
    name: &str,
) -> Result<&'a DMatrix<f64>> {
    sections
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| Error::format(format!("missing section {name:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = DMatrix::from_element(1, 1, 0.25);
        let bytes = sections_to_bytes(&[("A", &a), ("ridge", &b)]);
        let back = sections_from_bytes(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(find(&back, "A").unwrap(), &a);
        assert_eq!(find(&back, "ridge").unwrap(), &b);
    }

    #[test]
    fn truncation_rejected() {
        let a = DMatrix::from_element(4, 4, 1.0);
        let bytes = sections_to_bytes(&[("A", &a)]);
        assert!(sections_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
