//! Complex-valued FGSM (C-FGSM): binarized adversarial inputs built from
//! the sign of the real part of the complex input gradient.
//!
//! The gradient sign is taken on the brightness axis (dark grey level ->
//! bright grey level), the way the image itself is parameterized. Brightness
//! x maps to the field value v(x) = 0.0316 + x * (-1 - 0.0316), so the
//! attack gradient is Re(dL/dv) * (-1 - 0.0316): the field-value gradient
//! with its sign flipped. Taking the field-value sign directly would invert
//! the attack for dark pixels (lowering the loss instead of raising it).
//!
//! The attack is epsilon-free because the inputs are two-valued: a pixel
//! whose attack gradient is strictly positive flips between the featured
//! value (-1) and the background value (0.0316). With feature masking on
//! (the default), pixels belonging to the original digit strokes are never
//! touched, so the perturbation hides in the background. (For a bright pixel
//! the uniform positive-sign rule points the wrong way -- it cannot get any
//! brighter -- which is exactly why masking them is the default.)

use ndarray::Array2;
use rayon::prelude::*;

use crate::autodiff::backward;
use crate::error::{DonnError, Result};
use crate::network::{ConfusionMatrix, NetworkModel};
use crate::slm::{EncodedImage, BACKGROUND_VALUE, FEATURED_VALUE};

/// Attack direction. Only loss ascent against the true label is
/// implemented; the enum records the choice in configs and reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TargetMode {
    #[default]
    Untargeted,
}

#[derive(Debug, Clone, Copy)]
pub struct AttackConfig {
    /// Never flip pixels that are featured (-1) in the clean image.
    pub mask_features: bool,
    pub target_mode: TargetMode,
    /// Reserved for sampled-forward attack variants. The standard attack
    /// differentiates the deterministic hard forward and ignores it.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { mask_features: true, target_mode: TargetMode::Untargeted, seed: 0 }
    }
}

/// d(field value)/d(brightness): the chain factor between the complex input
/// gradient and the grey-level axis the flip rule is stated on.
const BRIGHTNESS_SLOPE: f64 = FEATURED_VALUE.re - BACKGROUND_VALUE.re;

/// One adversarial image: gradient of the MSE loss at the true label,
/// computed through the deterministic hard forward, then a full binary flip
/// wherever the brightness-axis gradient is strictly positive (zero
/// gradient never flips). Output is a valid two-valued encoded image.
pub fn cfgsm(
    model: &NetworkModel,
    image: &EncodedImage,
    true_label: u8,
    cfg: &AttackConfig,
) -> Result<EncodedImage> {
    if !model.is_trained() {
        return Err(DonnError::Untrained);
    }
    let slot = model.slot_of_label(true_label)?;
    let trace = model.forward_deterministic(image)?;
    let bundle = backward(model, &trace, slot)?;

    let g = *model.grid();
    let grad = bundle.input.values();
    let mut interior = Array2::from_shape_fn((g.ny, g.nx), |(r, c)| {
        image.values()[(g.pad + r, g.pad + c)]
    });
    for r in 0..g.ny {
        for c in 0..g.nx {
            let p = (g.pad + r, g.pad + c);
            if grad[p].re * BRIGHTNESS_SLOPE > 0.0 {
                let featured = image.feature_mask()[p];
                if featured && cfg.mask_features {
                    continue;
                }
                interior[(r, c)] = if featured { BACKGROUND_VALUE } else { FEATURED_VALUE };
            }
        }
    }
    EncodedImage::from_interior_values(g, &interior)
}

/// Clean and attacked confusion matrices over a labeled set, plus the
/// class-flow table and the total pixel-flip count.
#[derive(Debug, Clone)]
pub struct AttackReport {
    pub clean: ConfusionMatrix,
    pub attacked: ConfusionMatrix,
    pub clean_accuracy: f64,
    pub attacked_accuracy: f64,
    /// Counts of (true label, attacked prediction) pairs; by construction
    /// this equals the attacked confusion matrix.
    pub flow: Array2<usize>,
    pub total_flips: usize,
}

impl AttackReport {
    /// Accuracy lost to the attack, in points of fraction (0.98 -> 0.44
    /// gives 0.54).
    pub fn accuracy_drop(&self) -> f64 {
        self.clean_accuracy - self.attacked_accuracy
    }
}

/// Attack every image (in parallel) and evaluate before/after.
pub fn attack_report(
    model: &NetworkModel,
    images: &[EncodedImage],
    labels: &[u8],
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(DonnError::Dataset(format!(
            "{} images with {} labels",
            images.len(),
            labels.len()
        )));
    }
    let clean = model.confusion_matrix(images, labels)?;
    let adversarial: Vec<EncodedImage> = images
        .par_iter()
        .zip(labels.par_iter())
        .map(|(img, &label)| cfgsm(model, img, label, cfg))
        .collect::<Result<_>>()?;
    let total_flips = images
        .iter()
        .zip(adversarial.iter())
        .map(|(a, b)| a.diff_pixels(b).len())
        .sum();
    let attacked = model.confusion_matrix(&adversarial, labels)?;
    let flow = attacked.matrix.clone();
    Ok(AttackReport {
        clean_accuracy: clean.accuracy,
        attacked_accuracy: attacked.accuracy,
        clean,
        attacked,
        flow,
        total_flips,
    })
}

/// One flipped pixel, in unpadded image coordinates. `old`/`new` are the
/// real parts of the two-valued pixel (-1 or 0.0316).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipRecord {
    pub row: usize,
    pub col: usize,
    pub old: f64,
    pub new: f64,
}

/// Pixel-level difference between a clean image and its adversarial twin.
pub fn flip_records(clean: &EncodedImage, adversarial: &EncodedImage) -> Result<Vec<FlipRecord>> {
    if clean.grid() != adversarial.grid() {
        return Err(DonnError::GridMismatch("flip map needs matching grids".into()));
    }
    let pad = clean.grid().pad;
    Ok(clean
        .diff_pixels(adversarial)
        .into_iter()
        .map(|(r, c)| FlipRecord {
            row: r - pad,
            col: c - pad,
            old: clean.values()[(r, c)].re,
            new: adversarial.values()[(r, c)].re,
        })
        .collect())
}

/// Flip-map CSV: `row,col,old,new`, one line per flipped pixel.
pub fn write_flip_map_csv<W: std::io::Write>(records: &[FlipRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["row", "col", "old", "new"])?;
    for rec in records {
        w.write_record([
            rec.row.to_string(),
            rec.col.to_string(),
            format!("{}", rec.old),
            format!("{}", rec.new),
        ])?;
    }
    w.flush()?;
    Ok(())
}
