//! Minimal binary netpbm codecs: P6 color (maxval 255) and P5 gray
//! (maxval 65535, big-endian samples).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{ColorImage, DepthMap};

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    comments: Vec<String>,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    if bytes.len() < 2 {
        return Err("truncated header".into());
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0u64; 3];
    let mut comments = Vec::new();
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    let start = pos + 1;
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    comments.push(String::from_utf8_lossy(&bytes[start..pos]).trim().to_string());
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(format!("expected a number at byte {start}"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|e| format!("{e}"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing whitespace after maxval".into()),
    }
    Ok(Header {
        magic,
        width: fields[0] as usize,
        height: fields[1] as usize,
        maxval: fields[2] as u32,
        comments,
        data_offset: pos,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<(ColorImage, Vec<String>), String> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err("not a binary P6 file".into());
    }
    if h.maxval != 255 {
        return Err(format!("unsupported maxval {}", h.maxval));
    }
    let n = h.width * h.height;
    let raster = &bytes[h.data_offset..];
    if raster.len() != n * 3 {
        return Err(format!("expected {} raster bytes, found {}", n * 3, raster.len()));
    }
    let data = raster.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok((
        ColorImage {
            width: h.width,
            height: h.height,
            data,
        },
        h.comments,
    ))
}

pub fn decode_pgm16(bytes: &[u8]) -> std::result::Result<DepthMap, String> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err("not a binary P5 file".into());
    }
    if h.maxval != 65535 {
        return Err(format!("unsupported maxval {}", h.maxval));
    }
    let n = h.width * h.height;
    let raster = &bytes[h.data_offset..];
    if raster.len() != n * 2 {
        return Err(format!("expected {} raster bytes, found {}", n * 2, raster.len()));
    }
    let data = raster
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok(DepthMap {
        width: h.width,
        height: h.height,
        data,
    })
}

/// Encodes a P6 image; each comment becomes one `#` header line.
pub fn encode_ppm(img: &ColorImage, comments: &[String]) -> Vec<u8> {
    let mut out = b"P6\n".to_vec();
    for c in comments {
        out.extend_from_slice(format!("# {}\n", c.replace('\n', " ")).as_bytes());
    }
    out.extend_from_slice(format!("{} {}\n255\n", img.width, img.height).as_bytes());
    out.reserve(img.data.len() * 3);
    for p in &img.data {
        out.extend_from_slice(p);
    }
    out
}

pub fn encode_pgm16(depth: &DepthMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    out.reserve(depth.data.len() * 2);
    for d in &depth.data {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out
}

pub fn read_ppm(path: &Path) -> Result<(ColorImage, Vec<String>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|reason| Error::Image {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn read_pgm16(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm16(&bytes).map_err(|reason| Error::Image {
        path: path.to_path_buf(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn ppm_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let mut img = ColorImage::new(w, h);
            for (i, p) in img.data.iter_mut().enumerate() {
                let v = seed.wrapping_mul(i as u64 + 7).to_le_bytes();
                *p = [v[0], v[3], v[6]];
            }
            let comments = vec!["label cup 0.5".to_string()];
            let (back, c) = decode_ppm(&encode_ppm(&img, &comments)).unwrap();
            prop_assert_eq!(back, img);
            prop_assert_eq!(c, comments);
        }

        #[test]
        fn pgm_round_trip(w in 1usize..12, h in 1usize..12, vals in proptest::collection::vec(any::<u16>(), 144)) {
            let depth = DepthMap { width: w, height: h, data: vals[..w * h].to_vec() };
            prop_assert_eq!(decode_pgm16(&encode_pgm16(&depth)).unwrap(), depth);
        }
    }

    #[test]
    fn pgm_is_big_endian() {
        let depth = DepthMap {
            width: 1,
            height: 1,
            data: vec![0x1234],
        };
        let bytes = encode_pgm16(&depth);
        assert_eq!(&bytes[bytes.len() - 2..], &[0x12, 0x34]);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
        assert!(decode_pgm16(b"P5\n1 1\n255\n\0").is_err());
    }
}
