//! PGM (P5) and grayscale PNG readers/writers.
//!
//! Intensities are rescaled by the container's nominal maximum: 8-bit `v`
//! maps to `v / 255`, 16-bit `v` to `v / 65535`.

use std::fs;
use std::io::{BufReader, Cursor};
use std::path::Path;

use super::{BinaryPattern, GrayImage};
use crate::error::{Error, Result};

/// Loads a PGM or grayscale PNG, optionally checking `(height, width)`.
pub fn load_gray(path: impl AsRef<Path>, expected_dims: Option<(usize, usize)>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = if bytes.starts_with(b"\x89PNG") {
        read_png(&bytes, path)?
    } else if bytes.starts_with(b"P5") {
        read_pgm(&bytes).map_err(|reason| Error::Decode {
            path: path.to_path_buf(),
            reason,
        })?
    } else {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "not a binary PGM (P5) or PNG file".into(),
        });
    };
    if let Some(dims) = expected_dims {
        if img.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: img.dims(),
            });
        }
    }
    Ok(img)
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err("truncated header".into()),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| "malformed header field".to_string())
}

/// Decodes a binary PGM held in memory.
pub fn read_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    if !bytes.starts_with(b"P5") {
        return Err("missing P5 magic".into());
    }
    let mut pos = 2;
    let width = pgm_token(bytes, &mut pos)?;
    let height = pgm_token(bytes, &mut pos)?;
    let maxval = pgm_token(bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let wide = maxval > 255;
    let n = width * height;
    let need = if wide { 2 * n } else { n };
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| format!("raster truncated: need {need} bytes"))?;
    let data: Vec<f64> = if wide {
        raster
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0)
            .collect()
    } else {
        raster.iter().map(|&v| f64::from(v) / 255.0).collect()
    };
    GrayImage::from_clamped(height, width, data).map_err(|e| e.to_string())
}

fn read_png(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    let mut reader = decoder.read_info().map_err(|e| decode_err(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(decode_err(format!(
            "expected single-channel grayscale, found {:?}",
            info.color_type
        )));
    }
    let depth = info.bit_depth;
    let mut buf = vec![
        0;
        reader
            .output_buffer_size()
            .ok_or_else(|| decode_err("image too large".into()))?
    ];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let raster = &buf[..frame.buffer_size()];
    let data: Vec<f64> = match depth {
        png::BitDepth::Eight => raster.iter().map(|&v| f64::from(v) / 255.0).collect(),
        png::BitDepth::Sixteen => raster
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0)
            .collect(),
        other => return Err(decode_err(format!("unsupported bit depth {other:?}"))),
    };
    GrayImage::from_clamped(h, w, data)
}

/// Encodes 8-bit samples as a binary PGM.
pub fn write_pgm_bytes(height: usize, width: usize, samples: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    out
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_gray_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let samples: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    fs::write(path, write_pgm_bytes(img.height(), img.width(), &samples))
        .map_err(|e| Error::io(path, e))
}

/// Writes a mask as PGM with vein pixels at 255.
pub fn save_binary_pgm(pattern: &BinaryPattern, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let samples: Vec<u8> = pattern.data().iter().map(|&v| v * 255).collect();
    fs::write(
        path,
        write_pgm_bytes(pattern.height(), pattern.width(), &samples),
    )
    .map_err(|e| Error::io(path, e))
}

pub fn save_gray_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let samples: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    write_png(path.as_ref(), img.width(), img.height(), png::ColorType::Grayscale, &samples)
}

pub(crate) fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    samples: &[u8],
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(encode_err)?;
    writer.write_image_data(samples).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm8(value: u8) -> Vec<u8> {
        write_pgm_bytes(8, 8, &[value; 64])
    }

    #[test]
    fn pgm_extremes_and_midpoint() {
        assert!(read_pgm(&pgm8(255)).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(read_pgm(&pgm8(0)).unwrap().data().iter().all(|&v| v == 0.0));
        let mid = read_pgm(&pgm8(128)).unwrap();
        assert_eq!(mid.get(0, 0), 128.0 / 255.0);
        assert!((mid.get(0, 0) - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn pgm_sixteen_bit_and_comments() {
        let mut bytes = b"P5\n# comment line\n8 8\n65535\n".to_vec();
        for _ in 0..64 {
            bytes.extend_from_slice(&32768u16.to_be_bytes());
        }
        let img = read_pgm(&bytes).unwrap();
        assert_eq!(img.get(7, 7), 32768.0 / 65535.0);
    }

    #[test]
    fn pgm_truncated_is_error() {
        let mut bytes = pgm8(10);
        bytes.truncate(bytes.len() - 1);
        assert!(read_pgm(&bytes).is_err());
    }

    #[test]
    fn png_round_trip_and_rgb_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(9, 12, |y, x| ((y * 12 + x) as f64) / 255.0).unwrap();
        let p = dir.path().join("g.png");
        save_gray_png(&img, &p).unwrap();
        let back = load_gray(&p, Some((9, 12))).unwrap();
        assert_eq!(back, img);
        assert!(matches!(
            load_gray(&p, Some((12, 9))),
            Err(Error::DimensionMismatch { .. })
        ));

        let rgb = dir.path().join("c.png");
        write_png(&rgb, 8, 8, png::ColorType::Rgb, &[7u8; 8 * 8 * 3]).unwrap();
        assert!(matches!(load_gray(&rgb, None), Err(Error::Decode { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_gray("/nonexistent/x.pgm", None),
            Err(Error::Io { .. })
        ));
    }
}
