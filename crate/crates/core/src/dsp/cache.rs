//! On-disk feature cache: `"SWFT"`, u32 version, u32 frames, u32 coefficients,
//! u8 kind, then row-major little-endian f32 values.

use std::io::{Read, Write};

use super::features::{FeatureKind, FeatureMatrix};
use super::framing::{FRAME_MS, HOP_MS};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"SWFT";
pub const FEATURE_VERSION: u32 = 1;

pub fn write_features<W: Write>(mut w: W, features: &FeatureMatrix) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(features.n_frames() as u32).to_le_bytes())?;
    w.write_all(&(features.n_coeffs() as u32).to_le_bytes())?;
    w.write_all(&[features.kind.code()])?;
    for &v in features.values() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("truncated feature file"),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_features<R: Read>(mut r: R) -> Result<FeatureMatrix> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::format("bad feature file magic"));
    }
    let version = read_u32(&mut r)?;
    if version != FEATURE_VERSION {
        return Err(Error::format(format!("unsupported feature file version {version}")));
    }
    let frames = read_u32(&mut r)? as usize;
    let coeffs = read_u32(&mut r)? as usize;
    let mut kind = [0u8; 1];
    read_exact(&mut r, &mut kind)?;
    let kind = FeatureKind::from_code(kind[0])
        .ok_or_else(|| Error::format(format!("unknown feature kind {}", kind[0])))?;
    let mut raw = vec![0u8; frames * coeffs * 4];
    read_exact(&mut r, &mut raw)?;
    let values = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    FeatureMatrix::new(values, frames, coeffs, FRAME_MS, HOP_MS, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_and_round_trip() {
        let f = FeatureMatrix::new(vec![0.5, -1.25, 2.0, 3.0, 4.0, 5.5], 2, 3, 25.0, 10.0, FeatureKind::LogMfb).unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, &f).unwrap();
        assert_eq!(&buf[..4], b"SWFT");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &3u32.to_le_bytes());
        assert_eq!(buf[16], 1);
        assert_eq!(buf.len(), 17 + 6 * 4);
        assert_eq!(read_features(&buf[..]).unwrap(), f);
    }

    #[test]
    fn bad_input_is_a_format_error() {
        assert!(matches!(read_features(&b"NOPE"[..]), Err(Error::Format(_))));
        let f = FeatureMatrix::new(vec![1.0; 4], 2, 2, 25.0, 10.0, FeatureKind::Mfcc).unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, &f).unwrap();
        assert!(matches!(read_features(&buf[..buf.len() - 1]), Err(Error::Format(_))));
    }
}
