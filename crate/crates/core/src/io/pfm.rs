//! Grayscale PFM (portable float map): `Pf`, ASCII dims, scale `-1.0`
//! (little-endian), then rows of f32 stored bottom-to-top.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PfmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a grayscale PFM (expected 'Pf' magic)")]
    BadMagic,
    #[error("malformed PFM header: {0}")]
    BadHeader(String),
    #[error("truncated PFM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// Writes `data` (top-down row-major, `width*height` values) as PFM.
pub fn write_pfm(path: &Path, width: usize, height: usize, data: &[f32]) -> Result<(), PfmError> {
    assert_eq!(data.len(), width * height, "pfm: data length mismatch");
    let mut out = Vec::with_capacity(32 + data.len() * 4);
    write!(out, "Pf\n{width} {height}\n-1.0\n")?;
    for row in (0..height).rev() {
        for col in 0..width {
            out.extend_from_slice(&data[row * width + col].to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn take_token<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a [u8], PfmError> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(PfmError::BadHeader(format!("missing {what}")));
    }
    Ok(&bytes[start..*pos])
}

/// Reads a grayscale PFM; returns `(width, height, data)` with `data`
/// top-down row-major.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>), PfmError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 2 || &bytes[..2] != b"Pf" {
        return Err(PfmError::BadMagic);
    }
    let mut pos = 2usize;
    let parse = |tok: &[u8], what: &str| -> Result<f64, PfmError> {
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| PfmError::BadHeader(format!("unparseable {what}")))
    };
    let width = parse(take_token(&bytes, &mut pos, "width")?, "width")? as usize;
    let height = parse(take_token(&bytes, &mut pos, "height")?, "height")? as usize;
    let scale = parse(take_token(&bytes, &mut pos, "scale")?, "scale")?;
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let expected = width * height * 4;
    let found = bytes.len().saturating_sub(pos);
    if found < expected {
        return Err(PfmError::Truncated { expected, found });
    }
    let little_endian = scale < 0.0;
    let mut data = vec![0.0f32; width * height];
    for row in 0..height {
        let src_row = height - 1 - row;
        for col in 0..width {
            let off = pos + (src_row * width + col) * 4;
            let raw: [u8; 4] = bytes[off..off + 4].try_into().unwrap();
            data[row * width + col] = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    Ok((width, height, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn round_trip_is_bit_exact_for_finite_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pfm");
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let (w, h) = (17, 9);
        // Random finite bit patterns, including subnormals.
        let data: Vec<f32> = (0..w * h)
            .map(|_| loop {
                let v = f32::from_bits(rng.gen::<u32>());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        write_pfm(&path, w, h, &data).unwrap();
        let (rw, rh, rdata) = read_pfm(&path).unwrap();
        assert_eq!((rw, rh), (w, h));
        for (a, b) in rdata.iter().zip(&data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"PF\n1 1\n-1.0\n\x00\x00\x00\x00").unwrap();
        assert!(matches!(read_pfm(&path), Err(PfmError::BadMagic)));
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.pfm");
        std::fs::write(&path, b"Pf\n4 4\n-1.0\n\x00\x00").unwrap();
        assert!(matches!(read_pfm(&path), Err(PfmError::Truncated { .. })));
    }
}
