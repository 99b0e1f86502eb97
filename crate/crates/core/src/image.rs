//! Minimal binary PPM/PGM writers.

use std::io::Write;

use crate::error::{Error, Result};

/// Writes a binary PPM from planar `[3, H, W]` bytes.
pub fn write_ppm(w: &mut impl Write, height: usize, width: usize, planar: &[u8]) -> Result<()> {
    let plane = height * width;
    if planar.len() != 3 * plane || plane == 0 {
        return Err(Error::InvalidShape { shape: vec![3, height, width], reason: format!("{} bytes", planar.len()) });
    }
    write!(w, "P6\n{width} {height}\n255\n")?;
    let mut row = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        row.extend_from_slice(&[planar[i], planar[plane + i], planar[2 * plane + i]]);
    }
    w.write_all(&row)?;
    Ok(())
}

/// Writes a binary PGM from row-major `[H, W]` bytes.
pub fn write_pgm(w: &mut impl Write, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != height * width || pixels.is_empty() {
        return Err(Error::InvalidShape { shape: vec![height, width], reason: format!("{} bytes", pixels.len()) });
    }
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(pixels)?;
    Ok(())
}

/// Min-max normalizes to `0..=255`; a constant input maps to 0.
pub fn normalize_to_bytes(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_interleaves_planes() {
        let mut out = Vec::new();
        write_ppm(&mut out, 1, 2, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(out, b"P6\n2 1\n255\n\x01\x03\x05\x02\x04\x06");
        assert!(write_ppm(&mut out, 1, 2, &[1]).is_err());
    }

    #[test]
    fn pgm_and_normalize() {
        let mut out = Vec::new();
        write_pgm(&mut out, 1, 3, &normalize_to_bytes(&[-1.0, 0.0, 1.0])).unwrap();
        assert_eq!(out, b"P5\n3 1\n255\n\x00\x80\xff");
        assert_eq!(normalize_to_bytes(&[2.0, 2.0]), vec![0, 0]);
    }
}
