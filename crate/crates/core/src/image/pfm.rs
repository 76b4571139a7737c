//! Portable FloatMap (`PF` colour variant) encode/decode.
//!
//! Written files are little-endian (scale `-1.0`) with rows stored bottom to
//! top as the format requires. Big-endian files are accepted on read.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{CorrespondenceMaps, FloatImage3, ImageError};

pub const PNCC_SUFFIX: &str = ".pncc.pfm";
pub const OFFSET_SUFFIX: &str = ".offset.pfm";

pub fn write_pfm<W: Write>(img: &FloatImage3, mut w: W) -> Result<(), ImageError> {
    write!(w, "PF\n{} {}\n-1.0\n", img.width(), img.height())?;
    let mut row = Vec::with_capacity(img.width() * 12);
    for v in (0..img.height()).rev() {
        row.clear();
        for p in &img.pixels()[v * img.width()..(v + 1) * img.width()] {
            for c in p {
                row.extend_from_slice(&c.to_le_bytes());
            }
        }
        w.write_all(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pfm<R: Read>(r: R) -> Result<FloatImage3, ImageError> {
    let mut r = BufReader::new(r);
    let magic = header_token(&mut r)?;
    match magic.as_str() {
        "PF" => {}
        "Pf" => return Err(ImageError::Format("greyscale PFM not supported".into())),
        other => return Err(ImageError::Format(format!("bad magic {other:?}"))),
    }
    let width: usize = parse(&header_token(&mut r)?)?;
    let height: usize = parse(&header_token(&mut r)?)?;
    let scale: f32 = parse(&header_token(&mut r)?)?;
    if width == 0 || height == 0 || width.saturating_mul(height) > 1 << 28 {
        return Err(ImageError::Format(format!("bad dimensions {width}x{height}")));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(ImageError::Format(format!("bad scale {scale}")));
    }
    let little = scale < 0.0;

    let mut bytes = vec![0u8; width * height * 12];
    r.read_exact(&mut bytes)
        .map_err(|_| ImageError::Format("truncated pixel data".into()))?;
    let mut data = vec![[0f32; 3]; width * height];
    for (k, chunk) in bytes.chunks_exact(12).enumerate() {
        let file_row = k / width;
        let u = k % width;
        let v = height - 1 - file_row;
        let px = &mut data[v * width + u];
        for c in 0..3 {
            let b: [u8; 4] = chunk[4 * c..4 * c + 4].try_into().unwrap();
            px[c] = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    FloatImage3::from_pixels(width, height, data)
}

/// Reads one whitespace-delimited header token, consuming exactly one
/// trailing whitespace byte.
fn header_token<R: BufRead>(r: &mut R) -> Result<String, ImageError> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(ImageError::Format("truncated header".into()));
        }
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(byte[0]);
        if token.len() > 64 {
            return Err(ImageError::Format("header token too long".into()));
        }
    }
    String::from_utf8(token).map_err(|_| ImageError::Format("non-ASCII header".into()))
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, ImageError> {
    s.parse()
        .map_err(|_| ImageError::Format(format!("cannot parse header field {s:?}")))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `<prefix>.pncc.pfm` and `<prefix>.offset.pfm`.
pub fn write_maps(maps: &CorrespondenceMaps, prefix: &Path) -> Result<(), ImageError> {
    write_pfm(
        &maps.pncc,
        BufWriter::new(File::create(with_suffix(prefix, PNCC_SUFFIX))?),
    )?;
    write_pfm(
        &maps.offset,
        BufWriter::new(File::create(with_suffix(prefix, OFFSET_SUFFIX))?),
    )?;
    Ok(())
}

pub fn read_maps(prefix: &Path, valid_eps: f32) -> Result<CorrespondenceMaps, ImageError> {
    let pncc = read_pfm(File::open(with_suffix(prefix, PNCC_SUFFIX))?)?;
    let offset = read_pfm(File::open(with_suffix(prefix, OFFSET_SUFFIX))?)?;
    Ok(CorrespondenceMaps::new(pncc, offset)?.with_valid_eps(valid_eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_row_order() {
        let mut img = FloatImage3::zeros(2, 2);
        img.set(0, 0, [1.0, 2.0, 3.0]);
        let mut buf = Vec::new();
        write_pfm(&img, &mut buf).unwrap();
        let header = b"PF\n2 2\n-1.0\n";
        assert_eq!(&buf[..header.len()], header);
        // Top-left pixel lives in the last stored row.
        let last_row = &buf[header.len() + 24..];
        assert_eq!(&last_row[..4], &1.0f32.to_le_bytes());
    }

    #[test]
    fn reads_big_endian() {
        let mut buf = b"PF\n1 1\n1.0\n".to_vec();
        for c in [0.25f32, 0.5, 0.75] {
            buf.extend_from_slice(&c.to_be_bytes());
        }
        let img = read_pfm(buf.as_slice()).unwrap();
        assert_eq!(img.get(0, 0), [0.25, 0.5, 0.75]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(read_pfm(&b"P6\n1 1\n255\n"[..]).is_err());
        assert!(read_pfm(&b"PF\n2 2\n-1.0\n\0\0\0\0"[..]).is_err());
        assert!(read_pfm(&b"Pf\n1 1\n-1.0\n\0\0\0\0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(w in 1usize..6, h in 1usize..6, seed in any::<u32>()) {
            let data: Vec<[f32; 3]> = (0..w * h)
                .map(|i| {
                    let x = (i as u32).wrapping_mul(2654435761).wrapping_add(seed);
                    [x as f32 * 1e-6, -(x as f32) * 3e-7, (x % 977) as f32]
                })
                .collect();
            let img = FloatImage3::from_pixels(w, h, data).unwrap();
            let mut buf = Vec::new();
            write_pfm(&img, &mut buf).unwrap();
            let back = read_pfm(buf.as_slice()).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
