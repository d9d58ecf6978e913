//! Binary PPM (P6, maxval 255) for RGB frame ingestion and output.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a binary PPM (expected 'P6' magic)")]
    BadMagic,
    #[error("malformed PPM header: {0}")]
    BadHeader(String),
    #[error("unsupported maxval {0} (only 255)")]
    BadMaxval(u32),
    #[error("truncated PPM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), PpmError> {
    assert_eq!(rgb.len(), width * height * 3, "ppm: data length mismatch");
    let mut out = Vec::with_capacity(20 + rgb.len());
    write!(out, "P6\n{width} {height}\n255\n")?;
    out.extend_from_slice(rgb);
    fs::write(path, out)?;
    Ok(())
}

fn take_token<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a [u8], PpmError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(PpmError::BadHeader(format!("missing {what}")));
    }
    Ok(&bytes[start..*pos])
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>), PpmError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(PpmError::BadMagic);
    }
    let mut pos = 2usize;
    let parse = |tok: &[u8], what: &str| -> Result<u32, PpmError> {
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| PpmError::BadHeader(format!("unparseable {what}")))
    };
    let width = parse(take_token(&bytes, &mut pos, "width")?, "width")? as usize;
    let height = parse(take_token(&bytes, &mut pos, "height")?, "height")? as usize;
    let maxval = parse(take_token(&bytes, &mut pos, "maxval")?, "maxval")?;
    if maxval != 255 {
        return Err(PpmError::BadMaxval(maxval));
    }
    pos += 1; // single whitespace after maxval
    let expected = width * height * 3;
    let found = bytes.len().saturating_sub(pos);
    if found < expected {
        return Err(PpmError::Truncated { expected, found });
    }
    Ok((width, height, bytes[pos..pos + expected].to_vec()))
}

/// `[H,W,3]` tensor in [0,1] to 8-bit RGB (round to nearest).
pub fn tensor_to_rgb8(img: &Tensor) -> Vec<u8> {
    img.data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// 8-bit RGB to an `[H,W,3]` tensor in [0,1].
pub fn rgb8_to_tensor(rgb: &[u8], width: usize, height: usize) -> Tensor {
    let data: Vec<f64> = rgb.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(data, &[height, width, 3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let rgb: Vec<u8> = (0..5 * 4 * 3).map(|i| (i * 7 % 256) as u8).collect();
        write_ppm(&path, 5, 4, &rgb).unwrap();
        let (w, h, back) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (5, 4));
        assert_eq!(back, rgb);
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let mut bytes = b"P6\n# a comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        std::fs::write(&path, bytes).unwrap();
        let (w, h, rgb) = read_ppm(&path).unwrap();
        assert_eq!((w, h, rgb), (2, 1, vec![1, 2, 3, 4, 5, 6]));
    }

    #[test]
    fn quantization_error_bounded() {
        let img = Tensor::from_vec(vec![0.0, 0.5, 1.0, 0.123, 0.9999, 0.25], &[1, 2, 3]);
        let rgb = tensor_to_rgb8(&img);
        let back = rgb8_to_tensor(&rgb, 2, 1);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
