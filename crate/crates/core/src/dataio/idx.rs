//! IDX binary container (the MNIST/Fashion-MNIST file format).
//!
//! Layout: 4-byte big-endian magic (0x00000803 for u8 image tensors,
//! 0x00000801 for u8 label vectors), one big-endian u32 per declared
//! dimension, then the raw u8 payload. Parsing validates the declared sizes
//! against the actual byte count before allocating, so truncated or
//! dimension-fuzzed inputs fail with an error instead of a panic or an
//! oversized allocation.

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array2;

use crate::error::{DonnError, Result};

use super::LabeledImageSet;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(cursor: &mut &[u8], what: &str) -> Result<u32> {
    cursor
        .read_u32::<BigEndian>()
        .map_err(|_| DonnError::Idx(format!("truncated before {what}")))
}

/// Parse a pair of IDX files (images + labels) into a labeled set. Pixels
/// are scaled to [0, 1] by /255; labels must be digits 0-9.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8], source: &str) -> Result<LabeledImageSet> {
    let (images, rows, cols) = parse_images(image_bytes)?;
    let labels = parse_labels(label_bytes)?;
    if images.len() != labels.len() {
        return Err(DonnError::Idx(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    LabeledImageSet::new(images, labels, format!("{source} ({rows}x{cols} idx)"))
}

/// Images file only: returns the images plus the declared (rows, cols).
pub fn parse_images(bytes: &[u8]) -> Result<(Vec<Array2<f32>>, usize, usize)> {
    let mut cursor = bytes;
    let magic = read_u32(&mut cursor, "images magic")?;
    if magic != IMAGES_MAGIC {
        return Err(DonnError::Idx(format!(
            "bad images magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32(&mut cursor, "image count")? as usize;
    let rows = read_u32(&mut cursor, "image rows")? as usize;
    let cols = read_u32(&mut cursor, "image cols")? as usize;
    if rows == 0 || cols == 0 {
        return Err(DonnError::Idx(format!("degenerate image shape {rows}x{cols}")));
    }
    let per_image = rows
        .checked_mul(cols)
        .ok_or_else(|| DonnError::Idx("image shape overflows".into()))?;
    let expected = count
        .checked_mul(per_image)
        .ok_or_else(|| DonnError::Idx("declared payload size overflows".into()))?;
    if cursor.len() < expected {
        return Err(DonnError::Idx(format!(
            "payload truncated: {} bytes for {count} {rows}x{cols} images ({expected} needed)",
            cursor.len()
        )));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * per_image;
        let slice = &cursor[start..start + per_image];
        let image = Array2::from_shape_fn((rows, cols), |(r, c)| {
            f32::from(slice[r * cols + c]) / 255.0
        });
        images.push(image);
    }
    Ok((images, rows, cols))
}

/// Labels file only.
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cursor = bytes;
    let magic = read_u32(&mut cursor, "labels magic")?;
    if magic != LABELS_MAGIC {
        return Err(DonnError::Idx(format!(
            "bad labels magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let count = read_u32(&mut cursor, "label count")? as usize;
    if cursor.len() < count {
        return Err(DonnError::Idx(format!(
            "labels truncated: {} bytes for {count} labels",
            cursor.len()
        )));
    }
    let labels = cursor[..count].to_vec();
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(DonnError::Idx(format!("label {bad} outside 0-9")));
    }
    Ok(labels)
}

/// Serialize images to IDX bytes (u8 quantization by round(v*255)). Used to
/// build fixtures and to export synthetic datasets.
pub fn write_idx_images(images: &[Array2<f32>]) -> Result<Vec<u8>> {
    let (rows, cols) = match images.first() {
        Some(img) => img.dim(),
        None => (0, 0),
    };
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for (i, img) in images.iter().enumerate() {
        if img.dim() != (rows, cols) {
            return Err(DonnError::Idx(format!(
                "image {i} is {:?}, expected {rows}x{cols}",
                img.dim()
            )));
        }
        for v in img.iter() {
            if !(0.0..=1.0).contains(v) {
                return Err(DonnError::Idx(format!("pixel {v} outside [0, 1]")));
            }
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        if l > 9 {
            return Err(DonnError::Idx(format!("label {l} outside 0-9")));
        }
        out.push(l);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_image_fixture(fill: u8) -> (Vec<u8>, Vec<u8>) {
        let img = Array2::from_elem((28, 28), f32::from(fill) / 255.0);
        (
            write_idx_images(&[img]).unwrap(),
            write_idx_labels(&[3]).unwrap(),
        )
    }

    #[test]
    fn round_trip_single_zero_image() {
        let (ib, lb) = one_image_fixture(0);
        let set = parse_idx(&ib, &lb, "fixture").unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.labels(), &[3]);
        assert_eq!(set.images()[0].dim(), (28, 28));
        assert!(set.images()[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pixel_scaling_is_div_255() {
        let (ib, lb) = one_image_fixture(51);
        let set = parse_idx(&ib, &lb, "fixture").unwrap();
        assert!(set.images()[0].iter().all(|&v| v == 51.0 / 255.0));
        let (ib, lb) = one_image_fixture(255);
        let set = parse_idx(&ib, &lb, "fixture").unwrap();
        assert!(set.images()[0].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn magic_mismatch_is_an_error() {
        let (ib, lb) = one_image_fixture(0);
        // labels magic on the images argument and vice versa
        assert!(parse_idx(&lb, &lb, "x").is_err());
        assert!(parse_idx(&ib, &ib, "x").is_err());
        let garbage = [0xDE, 0xAD, 0xBE, 0xEF, 0, 0, 0, 0];
        assert!(parse_images(&garbage).is_err());
        assert!(parse_labels(&garbage).is_err());
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let (ib, _) = one_image_fixture(0);
        let two_labels = write_idx_labels(&[1, 2]).unwrap();
        let err = parse_idx(&ib, &two_labels, "x").unwrap_err();
        assert!(err.to_string().contains("1 images but 2 labels"));
    }

    #[test]
    fn truncations_error_cleanly() {
        let (ib, lb) = one_image_fixture(7);
        for cut in [0, 3, 4, 7, 8, 11, 12, 15, 16, 100, ib.len() - 1] {
            assert!(parse_images(&ib[..cut]).is_err(), "cut at {cut}");
        }
        for cut in [0, 3, 4, 7, 8] {
            assert!(parse_labels(&lb[..cut]).is_err(), "cut at {cut}");
        }
        // intact input parses
        assert!(parse_images(&ib).is_ok());
        assert!(parse_labels(&lb).is_ok());
    }

    #[test]
    fn absurd_declared_dimensions_do_not_allocate() {
        // header claims u32::MAX^3 bytes; must error, not OOM or overflow
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        }
        bytes.extend_from_slice(&[0u8; 64]);
        assert!(parse_images(&bytes).is_err());
    }

    #[test]
    fn labels_above_nine_are_rejected() {
        let mut lb = write_idx_labels(&[1]).unwrap();
        *lb.last_mut().unwrap() = 10;
        assert!(parse_labels(&lb).is_err());
        assert!(write_idx_labels(&[10]).is_err());
    }

    #[test]
    fn writer_rejects_ragged_or_out_of_range_images() {
        let a = Array2::from_elem((4, 4), 0.5_f32);
        let b = Array2::from_elem((4, 5), 0.5_f32);
        assert!(write_idx_images(&[a.clone(), b]).is_err());
        let bad = Array2::from_elem((4, 4), 1.5_f32);
        assert!(write_idx_images(&[bad]).is_err());
        assert!(write_idx_images(&[a]).is_ok());
    }

    proptest! {
        /// Arbitrary byte strings never panic the parser.
        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..2048)) {
            let _ = parse_images(&bytes);
            let _ = parse_labels(&bytes);
        }

        /// Any truncation of a valid file errors (and never panics).
        #[test]
        fn truncated_valid_files_always_error(cut in 0usize..800) {
            let (ib, lb) = one_image_fixture(9);
            if cut < ib.len() {
                prop_assert!(parse_images(&ib[..cut]).is_err());
            }
            if cut < lb.len() {
                prop_assert!(parse_labels(&lb[..cut]).is_err());
            }
        }
    }
}
