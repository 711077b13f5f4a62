//! Dataset ingestion and export: IDX parsing, bilinear resampling, label
//! filtering, PGM and CSV output, plus a synthetic digit generator.

pub mod idx;
pub mod pgm;
pub mod synthetic;

pub use idx::{parse_idx, parse_images, parse_labels, write_idx_images, write_idx_labels};
pub use pgm::{read_pgm, read_pgm_path, write_intensity_pgm, write_pgm, write_pgm_path};
pub use synthetic::{synthetic_digit, synthetic_set};

use ndarray::Array2;

use crate::error::{DonnError, Result};
use crate::network::ConfusionMatrix;

/// Images with labels. Images are square, equal-sided, with values in
/// [0, 1]; stored as f32 to keep full MNIST-sized sets (60000 x 28 x 28)
/// comfortably in memory. Physics code converts to f64 at the field
/// boundary.
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    images: Vec<Array2<f32>>,
    labels: Vec<u8>,
    source: String,
}

impl LabeledImageSet {
    pub fn new(images: Vec<Array2<f32>>, labels: Vec<u8>, source: String) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(DonnError::Dataset(format!(
                "{} images with {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            let (h, w) = first.dim();
            if h != w {
                return Err(DonnError::Dataset(format!("images must be square, got {h}x{w}")));
            }
            for (i, img) in images.iter().enumerate() {
                if img.dim() != (h, w) {
                    return Err(DonnError::Dataset(format!(
                        "image {i} is {:?}, expected {h}x{w}",
                        img.dim()
                    )));
                }
                if img.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                    return Err(DonnError::Dataset(format!("image {i} has values outside [0, 1]")));
                }
            }
        }
        for (i, &l) in labels.iter().enumerate() {
            if l > 9 {
                return Err(DonnError::Dataset(format!("label {l} at index {i} outside 0-9")));
            }
        }
        Ok(Self { images, labels, source })
    }

    pub fn images(&self) -> &[Array2<f32>] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Side length of the (square) images; 0 for an empty set.
    pub fn side(&self) -> usize {
        self.images.first().map_or(0, |img| img.dim().0)
    }

    /// Resample every image to `side` x `side`.
    pub fn resampled(&self, side: usize) -> Result<Self> {
        let images = self
            .images
            .iter()
            .map(|img| resample(img, side))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            images,
            self.labels.clone(),
            format!("{} -> {side}x{side}", self.source),
        )
    }

    /// Keep the first `n` samples.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            source: self.source.clone(),
        }
    }
}

/// Bilinear resampling to `side` x `side` with corner alignment, so the
/// identity size is an exact identity and constants stay constant. Output
/// values never leave the input range (bilinear weights are convex).
pub fn resample(image: &Array2<f32>, side: usize) -> Result<Array2<f32>> {
    if side == 0 {
        return Err(DonnError::Dataset("resample target side must be >= 1".into()));
    }
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(DonnError::Dataset("cannot resample an empty image".into()));
    }
    let map = |out: usize, out_side: usize, in_side: usize| -> f64 {
        if out_side == 1 {
            (in_side - 1) as f64 / 2.0
        } else {
            out as f64 * (in_side - 1) as f64 / (out_side - 1) as f64
        }
    };
    let mut out = Array2::zeros((side, side));
    for r in 0..side {
        let y = map(r, side, h);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f64;
        for c in 0..side {
            let x = map(c, side, w);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = x - x0 as f64;
            let v = (1.0 - fy) * (1.0 - fx) * f64::from(image[(y0, x0)])
                + (1.0 - fy) * fx * f64::from(image[(y0, x1)])
                + fy * (1.0 - fx) * f64::from(image[(y1, x0)])
                + fy * fx * f64::from(image[(y1, x1)]);
            out[(r, c)] = (v as f32).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Subset with only the wanted labels, order preserved.
pub fn filter_labels(set: &LabeledImageSet, wanted: &[u8]) -> Result<LabeledImageSet> {
    if wanted.is_empty() {
        return Err(DonnError::Dataset("no labels requested".into()));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (img, &label) in set.images().iter().zip(set.labels()) {
        if wanted.contains(&label) {
            images.push(img.clone());
            labels.push(label);
        }
    }
    if images.is_empty() {
        return Err(DonnError::Dataset(format!(
            "no samples with labels {wanted:?} in {}",
            set.source()
        )));
    }
    LabeledImageSet::new(
        images,
        labels,
        format!("{} filtered to {wanted:?}", set.source()),
    )
}

/// Confusion matrix CSV: header `true_label,slot_0..slot_9,total`, one row
/// per true label, and a final accuracy row.
pub fn write_confusion_csv<W: std::io::Write>(cm: &ConfusionMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n = cm.matrix.dim().0;
    let mut header = vec!["true_label".to_string()];
    header.extend((0..n).map(|s| format!("slot_{s}")));
    header.push("total".into());
    w.write_record(&header)?;
    for row in 0..n {
        let mut rec = vec![row.to_string()];
        let mut total = 0usize;
        for col in 0..n {
            rec.push(cm.matrix[(row, col)].to_string());
            total += cm.matrix[(row, col)];
        }
        rec.push(total.to_string());
        w.write_record(&rec)?;
    }
    let mut acc = vec!["accuracy".to_string()];
    acc.extend(std::iter::repeat(String::new()).take(n));
    acc.push(format!("{:.6}", cm.accuracy));
    w.write_record(&acc)?;
    w.flush()?;
    Ok(())
}
