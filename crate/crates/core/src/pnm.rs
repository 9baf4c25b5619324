//! Minimal binary Netpbm codec: P6 (PPM, RGB) and P5 (PGM, grayscale),
//! 8-bit only. Headers are written in a single canonical form so files
//! are byte-reproducible.

use std::io::{BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::num::Scalar;
use crate::synth::RgbImage;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, PnmError>;

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", img.w, img.h)?;
    w.write_all(&img.data)?;
    w.flush()?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (w, h, data) = parse_pnm(&bytes, b"P6", 3)?;
    Ok(RgbImage { w, h, data })
}

/// 8-bit grayscale buffer (masks, heat-maps).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub w: usize,
    pub h: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    /// Binary mask tensor `[1,H,W]`: bytes >= 128 load as pristine (1).
    pub fn to_mask_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .data
            .iter()
            .map(|&b| if b >= 128 { T::one() } else { T::zero() })
            .collect();
        Tensor::new(&[1, self.h, self.w], data).expect("mask tensor")
    }

    /// Store a {0,1} mask tensor as {0,255} bytes.
    pub fn from_mask_tensor<T: Scalar>(mask: &Tensor<T>) -> GrayImage {
        let s = mask.shape();
        assert_eq!(s.len(), 3, "mask tensor must be [1,H,W]");
        assert_eq!(s[0], 1, "mask tensor must be single-channel");
        let data = mask
            .data()
            .iter()
            .map(|&v| if v == T::zero() { 0u8 } else { 255u8 })
            .collect();
        GrayImage {
            w: s[2],
            h: s[1],
            data,
        }
    }
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", img.w, img.h)?;
    w.write_all(&img.data)?;
    w.flush()?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (w, h, data) = parse_pnm(&bytes, b"P5", 1)?;
    Ok(GrayImage { w, h, data })
}

/// Parse header (magic, width, height, maxval) then raw samples.
/// Whitespace and `#` comments between header tokens are accepted.
fn parse_pnm(bytes: &[u8], magic: &[u8], channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(PnmError::Parse(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut next_token = |bytes: &[u8]| -> Result<usize> {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(PnmError::Parse("expected integer in header".to_string()));
        }
        std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PnmError::Parse("bad integer in header".to_string()))
    };
    let w = next_token(bytes)?;
    let h = next_token(bytes)?;
    let maxval = next_token(bytes)?;
    if maxval != 255 {
        return Err(PnmError::Parse(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates header from samples
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(PnmError::Parse("missing header terminator".to_string()));
    }
    pos += 1;
    let need = w * h * channels;
    if bytes.len() - pos < need {
        return Err(PnmError::Parse(format!(
            "truncated pixel data: need {need}, have {}",
            bytes.len() - pos
        )));
    }
    Ok((w, h, bytes[pos..pos + need].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        let img = RgbImage {
            w: 3,
            h: 2,
            data: (0..18).collect(),
        };
        write_ppm(&p, &img).unwrap();
        assert_eq!(read_ppm(&p).unwrap(), img);
    }

    #[test]
    fn pgm_roundtrip_and_mask_conversion() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let img = GrayImage {
            w: 4,
            h: 2,
            data: vec![0, 255, 0, 255, 255, 0, 255, 0],
        };
        write_pgm(&p, &img).unwrap();
        let back = read_pgm(&p).unwrap();
        assert_eq!(back, img);
        let t = back.to_mask_tensor::<f32>();
        assert_eq!(t.shape(), &[1, 2, 4]);
        assert_eq!(GrayImage::from_mask_tensor(&t), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5\n# a comment\n2 1\n255\nAB".to_vec();
        let (w, h, data) = parse_pnm(&bytes, b"P5", 1).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(data, b"AB");
    }

    #[test]
    fn truncated_file_is_error() {
        let bytes = b"P5\n4 4\n255\nxx".to_vec();
        assert!(parse_pnm(&bytes, b"P5", 1).is_err());
    }
}
