//! Binary containers for probe-batch features (`FMX1`) and binary codes (`BCX1`).
//!
//! Both share the same layout: 4 magic bytes, little-endian `u32` row count `n`,
//! little-endian `u32` column count `d`, then `n·d` row-major payload cells.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const FEATURE_MAGIC: &[u8; 4] = b"FMX1";
pub const CODE_MAGIC: &[u8; 4] = b"BCX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixHeader {
    pub magic: [u8; 4],
    pub rows: usize,
    pub cols: usize,
}

/// Probe-batch binary codes, one row per probe example, cells in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodes {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
}

impl BinaryCodes {
    pub fn new(rows: usize, cols: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "code buffer of {} cells for {rows}x{cols}",
                bits.len()
            )));
        }
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidArgument(format!("code cell value {bad} not in {{0,1}}")));
        }
        Ok(BinaryCodes { rows, cols, bits })
    }

    /// Codes from features: 1 where the activation is strictly positive.
    pub fn from_features(features: &Mat<f64>) -> Self {
        BinaryCodes {
            rows: features.rows(),
            cols: features.cols(),
            bits: features.as_slice().iter().map(|&v| u8::from(v > 0.0)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bits
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut bits = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            bits.extend_from_slice(self.row(r));
        }
        BinaryCodes {
            rows: idx.len(),
            cols: self.cols,
            bits,
        }
    }

    /// Column-wise concatenation of code segments sharing a row count.
    pub fn hstack(parts: &[&BinaryCodes]) -> Result<Self> {
        let rows = parts
            .first()
            .map(|p| p.rows)
            .ok_or_else(|| Error::InvalidArgument("no code segments".into()))?;
        if let Some(p) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::DimensionMismatch(format!(
                "code segment has {} rows, expected {rows}",
                p.rows
            )));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut bits = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                bits.extend_from_slice(p.row(r));
            }
        }
        Ok(BinaryCodes { rows, cols, bits })
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn read_header_from(reader: &mut impl Read, path: &Path) -> Result<MatrixHeader> {
    let mut buf = [0u8; 12];
    reader.read_exact(&mut buf).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: "truncated header".into(),
    })?;
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&buf[..4]);
    let rows = u32::from_le_bytes([buf[4], buf[5], buf[6], buf[7]]) as usize;
    let cols = u32::from_le_bytes([buf[8], buf[9], buf[10], buf[11]]) as usize;
    Ok(MatrixHeader { magic, rows, cols })
}

fn expect_magic(header: &MatrixHeader, magic: &[u8; 4], path: &Path) -> Result<()> {
    if &header.magic != magic {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&header.magic),
                String::from_utf8_lossy(magic)
            ),
        });
    }
    Ok(())
}

/// Reads only the 12-byte header and checks the magic and file length.
pub fn read_header(path: &Path, magic: &[u8; 4]) -> Result<MatrixHeader> {
    let mut reader = open(path)?;
    let header = read_header_from(&mut reader, path)?;
    expect_magic(&header, magic, path)?;
    let cell = if magic == FEATURE_MAGIC { 4 } else { 1 };
    let expected = 12 + (header.rows * header.cols * cell) as u64;
    let actual = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    if actual != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("file is {actual} bytes, header implies {expected}"),
        });
    }
    Ok(header)
}

fn write_header(w: &mut impl Write, magic: &[u8; 4], rows: usize, cols: usize) -> std::io::Result<()> {
    let rows = u32::try_from(rows).map_err(|_| std::io::Error::other("row count exceeds u32"))?;
    let cols = u32::try_from(cols).map_err(|_| std::io::Error::other("column count exceeds u32"))?;
    w.write_all(magic)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())
}

pub fn write_features(path: &Path, m: &Mat<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        write_header(w, FEATURE_MAGIC, m.rows(), m.cols())?;
        for v in m.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    };
    run(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Mat<f32>> {
    let header = read_header(path, FEATURE_MAGIC)?;
    let mut reader = open(path)?;
    read_header_from(&mut reader, path)?;
    let mut raw = vec![0u8; header.rows * header.cols * 4];
    reader.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Mat::from_vec(header.rows, header.cols, data))
}

pub fn write_codes(path: &Path, codes: &BinaryCodes) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        write_header(w, CODE_MAGIC, codes.rows, codes.cols)?;
        w.write_all(&codes.bits)?;
        w.flush()
    };
    run(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_codes(path: &Path) -> Result<BinaryCodes> {
    let header = read_header(path, CODE_MAGIC)?;
    let mut reader = open(path)?;
    read_header_from(&mut reader, path)?;
    let mut bits = vec![0u8; header.rows * header.cols];
    reader.read_exact(&mut bits).map_err(|e| Error::io(path, e))?;
    BinaryCodes::new(header.rows, header.cols, bits).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_file_layout_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.fmx");
        let m = Mat::from_vec(2, 2, vec![1.0f32, -2.5, 0.0, 3.25]);
        write_features(&p, &m).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"FMX1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 12 + 16);
        assert_eq!(read_features(&p).unwrap(), m);
    }

    #[test]
    fn code_file_rejects_non_binary_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bcx");
        let mut bytes = b"BCX1".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2]);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_codes(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bcx");
        let codes = BinaryCodes::new(2, 3, vec![1, 0, 1, 1, 1, 0]).unwrap();
        write_codes(&p, &codes).unwrap();
        assert_eq!(read_codes(&p).unwrap(), codes);
        assert!(read_header(&p, FEATURE_MAGIC).is_err());
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, bytes).unwrap();
        assert!(read_header(&p, CODE_MAGIC).is_err());
    }

    #[test]
    fn hstack_codes() {
        let a = BinaryCodes::new(2, 1, vec![1, 0]).unwrap();
        let b = BinaryCodes::new(2, 2, vec![0, 1, 1, 1]).unwrap();
        let h = BinaryCodes::hstack(&[&a, &b]).unwrap();
        assert_eq!(h.as_slice(), &[1, 0, 1, 0, 1, 1]);
    }
}
