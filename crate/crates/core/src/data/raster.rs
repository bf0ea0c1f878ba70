//! Binary PGM (P5) masks and PPM (P6) frames.

use std::path::Path;

use super::{ClassMask, ImagePatch};
use crate::error::{Error, Result};

struct PnmHeader {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<PnmHeader> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::Format(format!(
            "expected magic {}, found {found:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // whitespace and `#` comments between tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed PNM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("PNM header value out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Format("missing whitespace after PNM header".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Format("PNM image has zero extent".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "unsupported maxval {maxval} (8-bit only)"
        )));
    }
    Ok(PnmHeader {
        width: width as usize,
        height: height as usize,
        maxval,
        data_offset: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &PnmHeader, channels: usize) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let body = &bytes[h.data_offset..];
    if body.len() != need {
        return Err(Error::Format(format!(
            "PNM payload is {} bytes, header declares {need}",
            body.len()
        )));
    }
    Ok(body)
}

pub fn decode_pgm_mask(bytes: &[u8]) -> Result<ClassMask> {
    let h = parse_header(bytes, b"P5")?;
    let body = payload(bytes, &h, 1)?;
    ClassMask::new(h.width, h.height, body.to_vec())
}

pub fn encode_pgm_mask(mask: &ClassMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend_from_slice(mask.labels());
    out
}

pub fn load_class_mask(path: impl AsRef<Path>) -> Result<ClassMask> {
    let path = path.as_ref();
    decode_pgm_mask(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_class_mask(path: impl AsRef<Path>, mask: &ClassMask) -> Result<()> {
    let path = path.as_ref();
    super::write_atomic(path, &encode_pgm_mask(mask))
}

/// Decodes a P6 image, normalizing intensities by `maxval`.
pub fn decode_ppm(bytes: &[u8]) -> Result<ImagePatch> {
    let h = parse_header(bytes, b"P6")?;
    let body = payload(bytes, &h, 3)?;
    let scale = 1.0 / h.maxval as f64;
    let data = body
        .iter()
        .map(|&b| {
            if b as u32 > h.maxval {
                Err(Error::Validation(format!(
                    "sample {b} exceeds maxval {}",
                    h.maxval
                )))
            } else {
                Ok(b as f64 * scale)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ImagePatch::new(h.width, h.height, data)
}

/// Encodes with maxval 255, rounding each intensity to the nearest level.
pub fn encode_ppm(img: &ImagePatch) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data().iter().map(|&v| (v * 255.0).round() as u8));
    out
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<ImagePatch> {
    let path = path.as_ref();
    decode_ppm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_ppm(path: impl AsRef<Path>, img: &ImagePatch) -> Result<()> {
    let path = path.as_ref();
    super::write_atomic(path, &encode_ppm(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BgClass;

    #[test]
    fn mask_2x2() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0, 1, 2, 3]);
        let m = decode_pgm_mask(&bytes).unwrap();
        assert_eq!(m.get(0, 0), BgClass::Greenery);
        assert_eq!(m.get(1, 0), BgClass::Road);
        assert_eq!(m.get(0, 1), BgClass::Construction);
        assert_eq!(m.get(1, 1), BgClass::Water);
        assert_eq!(encode_pgm_mask(&m), bytes);
    }

    #[test]
    fn mask_pixel_out_of_range() {
        let mut bytes = b"P5\n2 1\n255\n".to_vec();
        bytes.extend([0, 7]);
        assert!(matches!(decode_pgm_mask(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn mask_wrong_magic() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend([0, 0, 0]);
        assert!(matches!(decode_pgm_mask(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn header_comments() {
        let mut bytes = b"P5\n# made by hand\n1 1\n255\n".to_vec();
        bytes.push(2);
        assert_eq!(decode_pgm_mask(&bytes).unwrap().get(0, 0), BgClass::Construction);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([0u8; 11]);
        assert!(matches!(decode_ppm(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn ppm_roundtrip() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend([0, 128, 255, 10, 20, 30]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.get(0, 0, 2), 1.0);
        assert_eq!(encode_ppm(&img), bytes);
    }
}
