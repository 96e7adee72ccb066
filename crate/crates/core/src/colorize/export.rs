//! `.npz` container (three float64 `.npy` planes `L`, `a`, `b`) and a lossy
//! 8-bit PNG preview. The provenance travels as JSON in the zip comment,
//! which NumPy ignores.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

use super::{ChromaPlanes, ColorVein, Provenance};

const PLANE_NAMES: [&str; 3] = ["L.npy", "a.npy", "b.npy"];
const NPY_MAGIC: &[u8] = b"\x93NUMPY";

fn npy_bytes(height: usize, width: usize, data: &[f64]) -> Vec<u8> {
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': ({height}, {width}), }}");
    // magic + version + u16 length + header + '\n' is padded to 64 bytes
    let unpadded = NPY_MAGIC.len() + 2 + 2 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + 8 * data.len());
    out.extend_from_slice(NPY_MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_npy(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<f64>), String> {
    if bytes.len() < 10 || &bytes[..6] != NPY_MAGIC || bytes[6] != 1 {
        return Err("not a version 1 .npy array".into());
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = std::str::from_utf8(bytes.get(10..10 + hlen).ok_or("truncated header")?)
        .map_err(|e| e.to_string())?;
    if !header.contains("'descr': '<f8'") || !header.contains("'fortran_order': False") {
        return Err(format!("unsupported array layout: {}", header.trim()));
    }
    let shape = header
        .split("'shape': (")
        .nth(1)
        .and_then(|s| s.split(')').next())
        .ok_or("missing shape")?;
    let dims: Vec<usize> = shape
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    let [h, w] = dims[..] else {
        return Err(format!("expected a 2-D array, got shape ({shape})"));
    };
    let body = &bytes[10 + hlen..];
    if body.len() != 8 * h * w {
        return Err(format!("expected {} data bytes, found {}", 8 * h * w, body.len()));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((h, w, data))
}

pub fn save_npz(cv: &ColorVein, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = cv.dims();
    let zip_err = |e: zip::result::ZipError| Error::format("npz", e.to_string());
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut zw = ZipWriter::new(file);
    let opts = SimpleFileOptions::default().compression_method(CompressionMethod::Stored);
    for (name, plane) in PLANE_NAMES.iter().zip(cv.planes()) {
        zw.start_file(*name, opts).map_err(zip_err)?;
        zw.write_all(&npy_bytes(h, w, plane)).map_err(|e| Error::io(path, e))?;
    }
    let meta = serde_json::to_string(&cv.provenance()).map_err(|e| Error::format("npz", e.to_string()))?;
    zw.set_comment(meta);
    zw.finish().map_err(zip_err)?;
    Ok(())
}

pub fn load_npz(path: impl AsRef<Path>) -> Result<ColorVein> {
    let path = path.as_ref();
    let bad = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut archive = ZipArchive::new(file).map_err(|e| bad(e.to_string()))?;
    let provenance: Provenance = serde_json::from_slice(archive.comment())
        .map_err(|e| bad(format!("provenance comment: {e}")))?;
    let mut planes = Vec::with_capacity(3);
    for name in PLANE_NAMES {
        let mut entry = archive.by_name(name).map_err(|e| bad(format!("{name}: {e}")))?;
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        planes.push(parse_npy(&bytes).map_err(|e| bad(format!("{name}: {e}")))?);
    }
    let (h, w, l) = planes.remove(0);
    let (ha, wa, a) = planes.remove(0);
    let (hb, wb, b) = planes.remove(0);
    if (ha, wa) != (h, w) || (hb, wb) != (h, w) {
        return Err(bad("planes disagree in shape".into()));
    }
    Ok(ColorVein {
        lightness: GrayImage::new(h, w, l)?,
        chroma: ChromaPlanes::new(h, w, a, b)?,
        provenance,
    })
}

/// Three-channel 8-bit PNG: lightness scaled to `[0, 255]`, chroma mapped
/// linearly from `[-1, 1]`. Lossy; for inspection only.
pub fn save_preview_png(cv: &ColorVein, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = cv.dims();
    let [l, a, b] = cv.planes();
    let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut samples = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        samples.extend([to8(l[i]), to8((a[i] + 1.0) / 2.0), to8((b[i] + 1.0) / 2.0)]);
    }
    crate::imaging::write_png(path.as_ref(), w, h, png::ColorType::Rgb, &samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hints::TokenFingerprint;

    #[test]
    fn npy_header_is_aligned() {
        let b = npy_bytes(3, 5, &[0.0; 15]);
        let hlen = u16::from_le_bytes([b[8], b[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        assert_eq!(b[10 + hlen - 1], b'\n');
        assert_eq!(parse_npy(&b).unwrap(), (3, 5, vec![0.0; 15]));
    }

    #[test]
    fn npz_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let l = GrayImage::from_fn(8, 9, |y, x| (y * 9 + x) as f64 / 72.0).unwrap();
        let a: Vec<f64> = (0..72).map(|i| (i as f64 / 36.0) - 1.0).collect();
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        let cv = ColorVein {
            lightness: l,
            chroma: ChromaPlanes::new(8, 9, a, b).unwrap(),
            provenance: Provenance {
                token_fingerprint: TokenFingerprint([7; 16]),
                offset: (-3, 4),
            },
        };
        let p = dir.path().join("cv.npz");
        save_npz(&cv, &p).unwrap();
        assert_eq!(load_npz(&p).unwrap(), cv);
        save_preview_png(&cv, dir.path().join("cv.png")).unwrap();
    }
}
