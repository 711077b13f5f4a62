//! Binary PGM (P5, 8-bit) import/export for images and camera intensity
//! maps.

use ndarray::Array2;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{DonnError, Result};

/// Write a [0, 1] image as binary PGM; pixels quantize by round(v*255).
pub fn write_pgm<W: Write>(image: &Array2<f32>, mut writer: W) -> Result<()> {
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(DonnError::Encoding("empty image".into()));
    }
    if let Some(bad) = image.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
        return Err(DonnError::Encoding(format!("pixel {bad} outside [0, 1]")));
    }
    write!(writer, "P5\n{w} {h}\n255\n")?;
    let mut row = Vec::with_capacity(w);
    for r in 0..h {
        row.clear();
        row.extend((0..w).map(|c| (image[(r, c)] * 255.0).round() as u8));
        writer.write_all(&row)?;
    }
    Ok(())
}

pub fn write_pgm_path<P: AsRef<Path>>(image: &Array2<f32>, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_pgm(image, std::io::BufWriter::new(file))
}

/// Parse binary PGM with maxval 255. Comments (`#`) in the header are
/// skipped per the format.
pub fn read_pgm<R: Read>(mut reader: R) -> Result<Array2<f32>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and # comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(DonnError::Encoding("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(DonnError::Encoding("not a binary PGM (P5) file".into()));
    }
    let parse_dim = |s: String| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| DonnError::Encoding(format!("bad PGM header token {s:?}")))
    };
    let w = parse_dim(token(&bytes)?)?;
    let h = parse_dim(token(&bytes)?)?;
    let maxval = parse_dim(token(&bytes)?)?;
    if maxval != 255 {
        return Err(DonnError::Encoding(format!("unsupported PGM maxval {maxval}")));
    }
    if h == 0 || w == 0 {
        return Err(DonnError::Encoding(format!("degenerate PGM shape {w}x{h}")));
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let need = h
        .checked_mul(w)
        .ok_or_else(|| DonnError::Encoding("PGM shape overflows".into()))?;
    if bytes.len() < pos + need {
        return Err(DonnError::Encoding(format!(
            "PGM payload truncated: {} of {need} bytes",
            bytes.len().saturating_sub(pos)
        )));
    }
    let payload = &bytes[pos..pos + need];
    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
        f32::from(payload[r * w + c]) / 255.0
    }))
}

pub fn read_pgm_path<P: AsRef<Path>>(path: P) -> Result<Array2<f32>> {
    let file = std::fs::File::open(path)?;
    read_pgm(std::io::BufReader::new(file))
}

/// Export a camera intensity map: normalized by its maximum to use the full
/// 8-bit range, with a sidecar text file (`<path>.txt`) recording the
/// normalization so absolute intensities stay recoverable. Returns the
/// maximum intensity used for scaling.
pub fn write_intensity_pgm<P: AsRef<Path>>(intensity: &Array2<f64>, path: P) -> Result<f64> {
    if let Some(bad) = intensity.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(DonnError::Encoding(format!("intensity {bad} invalid")));
    }
    let max = intensity.iter().cloned().fold(0.0_f64, f64::max);
    let scaled = if max > 0.0 {
        intensity.mapv(|v| (v / max) as f32)
    } else {
        intensity.mapv(|_| 0.0_f32)
    };
    write_pgm_path(&scaled, path.as_ref())?;
    let sidecar = format!("{}.txt", path.as_ref().display());
    std::fs::write(
        sidecar,
        format!(
            "linear intensity, normalized by the maximum value\nmax_intensity = {max:.12e}\npixel_value = intensity / max_intensity * 255\n"
        ),
    )?;
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_reproduces_quantized_pixels() {
        let img = Array2::from_shape_fn((5, 7), |(r, c)| ((r * 7 + c) as f32) / 34.0);
        let mut buf = Vec::new();
        write_pgm(&img, &mut buf).unwrap();
        let back = read_pgm(buf.as_slice()).unwrap();
        assert_eq!(back.dim(), (5, 7));
        for (orig, round) in img.iter().zip(back.iter()) {
            let quantized = (orig * 255.0).round() / 255.0;
            assert_eq!(*round, quantized);
        }
        // second trip is exact (idempotent after quantization)
        let mut buf2 = Vec::new();
        write_pgm(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn header_shape_is_width_then_height() {
        let img = Array2::from_elem((3, 9), 0.5_f32);
        let mut buf = Vec::new();
        write_pgm(&img, &mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf[..12]);
        assert!(text.starts_with("P5\n9 3\n255\n"), "{text}");
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let payload = b"P5\n# made by hand\n2 2\n255\n\x00\x40\x80\xFF";
        let img = read_pgm(&payload[..]).unwrap();
        assert_eq!(img.dim(), (2, 2));
        assert_eq!(img[(0, 0)], 0.0);
        assert_eq!(img[(1, 1)], 1.0);
    }

    #[test]
    fn bad_inputs_error() {
        // out-of-range pixel
        let img = Array2::from_elem((2, 2), 1.5_f32);
        assert!(write_pgm(&img, Vec::new()).is_err());
        // wrong magic
        assert!(read_pgm(&b"P2\n2 2\n255\n"[..]).is_err());
        // 16-bit maxval unsupported
        assert!(read_pgm(&b"P5\n2 2\n65535\n"[..]).is_err());
        // truncated payload
        assert!(read_pgm(&b"P5\n2 2\n255\n\x00\x01"[..]).is_err());
        // truncated header
        assert!(read_pgm(&b"P5\n2"[..]).is_err());
    }

    #[test]
    fn intensity_export_writes_sidecar_with_max() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("camera.pgm");
        let intensity =
            Array2::from_shape_fn((4, 4), |(r, c)| (r * 4 + c) as f64 * 0.125);
        let max = write_intensity_pgm(&intensity, &path).unwrap();
        assert_eq!(max, 15.0 * 0.125);
        let img = read_pgm_path(&path).unwrap();
        assert_eq!(img[(3, 3)], 1.0, "max pixel maps to full scale");
        let sidecar = std::fs::read_to_string(format!("{}.txt", path.display())).unwrap();
        assert!(sidecar.contains("max_intensity = 1.875"));

        // all-dark map: flat zeros, still valid
        let zeros = Array2::from_elem((2, 2), 0.0_f64);
        let max = write_intensity_pgm(&zeros, dir.path().join("dark.pgm")).unwrap();
        assert_eq!(max, 0.0);
    }
}
