//! End-to-end network model: encoded image -> (propagate -> RDA layer)^K ->
//! propagate -> camera intensity -> detector readout -> MSE loss.
//!
//! The camera readout integrates intensity over one rectangular detector
//! region per class label. Two normalizations coexist deliberately:
//! the loss score divides region sums by the TOTAL camera energy (so
//! training is rewarded for steering light into detectors at all), while
//! reported percentages divide by the regions' own total (the natural
//! "share of detected light" figure for a human reading a result).

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use ndarray::Array3;

use crate::error::{DonnError, Result};
use crate::field::{ComplexField, GridSpec};
use crate::propagation::{propagate, PropagationKernel, PropagationMethod};
use crate::slm::{EncodedImage, GumbelLayer};

/// Number of slots in the score vector: one per possible digit label.
pub const NUM_SLOTS: usize = 10;

/// One detector rectangle, in unpadded camera-window coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    fn overlaps(&self, other: &Region) -> bool {
        self.row0 < other.row0 + other.height
            && other.row0 < self.row0 + self.height
            && self.col0 < other.col0 + other.width
            && other.col0 < self.col0 + self.width
    }
}

/// Detector regions and their score-vector slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorLayout {
    regions: Vec<Region>,
    /// slot (= digit label) of each region.
    slots: Vec<usize>,
    num_slots: usize,
}

impl DetectorLayout {
    pub fn new(regions: Vec<Region>, slots: Vec<usize>, num_slots: usize) -> Result<Self> {
        if regions.is_empty() || regions.len() != slots.len() {
            return Err(DonnError::InvalidGrid(format!(
                "{} regions for {} slots entries",
                regions.len(),
                slots.len()
            )));
        }
        if num_slots < regions.len() {
            return Err(DonnError::InvalidGrid(format!(
                "{} regions exceed {num_slots} score slots",
                regions.len()
            )));
        }
        for r in &regions {
            if r.height == 0 || r.width == 0 {
                return Err(DonnError::InvalidGrid("empty detector region".into()));
            }
        }
        for (i, s) in slots.iter().enumerate() {
            if *s >= num_slots {
                return Err(DonnError::InvalidGrid(format!(
                    "region {i} mapped to slot {s} >= {num_slots}"
                )));
            }
            if slots[..i].contains(s) {
                return Err(DonnError::InvalidGrid(format!("slot {s} assigned twice")));
            }
        }
        for i in 0..regions.len() {
            for j in i + 1..regions.len() {
                if regions[i].overlaps(&regions[j]) {
                    return Err(DonnError::InvalidGrid(format!(
                        "detector regions {i} and {j} overlap"
                    )));
                }
            }
        }
        Ok(Self { regions, slots, num_slots })
    }

    /// Default layout: one 10x10 region per label, centered vertically and
    /// evenly spaced horizontally across the unpadded camera window.
    pub fn evenly_spaced(grid: &GridSpec, labels: &[u8]) -> Result<Self> {
        Self::evenly_spaced_with_size(grid, labels, 10, 10)
    }

    pub fn evenly_spaced_with_size(
        grid: &GridSpec,
        labels: &[u8],
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(DonnError::InvalidGrid("no labels".into()));
        }
        if height > grid.ny || width * labels.len() > grid.nx {
            return Err(DonnError::InvalidGrid(format!(
                "{} {height}x{width} regions do not fit the {}x{} window",
                labels.len(),
                grid.ny,
                grid.nx
            )));
        }
        let n = labels.len();
        let row0 = (grid.ny - height) / 2;
        let mut regions = Vec::with_capacity(n);
        for i in 0..n {
            let center = (i as f64 + 0.5) * grid.nx as f64 / n as f64;
            let col0 = (center - width as f64 / 2.0).round().max(0.0) as usize;
            let col0 = col0.min(grid.nx - width);
            regions.push(Region { row0, col0, height, width });
        }
        let slots = labels.iter().map(|&l| l as usize).collect();
        Self::new(regions, slots, NUM_SLOTS)
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    /// All regions lie inside the unpadded window of `grid`.
    pub fn fits(&self, grid: &GridSpec) -> Result<()> {
        for (i, r) in self.regions.iter().enumerate() {
            if r.row0 + r.height > grid.ny || r.col0 + r.width > grid.nx {
                return Err(DonnError::InvalidGrid(format!(
                    "detector region {i} exceeds the {}x{} camera window",
                    grid.ny, grid.nx
                )));
            }
        }
        Ok(())
    }

    /// Intensity integral over each region (camera array is padded).
    pub fn region_sums(&self, intensity: &Array2<f64>, grid: &GridSpec) -> Vec<f64> {
        let pad = grid.pad;
        self.regions
            .iter()
            .map(|r| {
                let mut sum = 0.0;
                for row in 0..r.height {
                    for col in 0..r.width {
                        sum += intensity[(pad + r.row0 + row, pad + r.col0 + col)];
                    }
                }
                sum
            })
            .collect()
    }
}

/// Which transmission the layers apply during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransmissionMode {
    /// One-hot argmax levels (deployment physics).
    Hard,
    /// Softmax relaxation (differentiable surrogate).
    Soft,
}

/// Per-forward options: transmission mode plus optional per-layer Gumbel
/// noise (None = deterministic, g = 0).
pub struct ForwardOptions {
    pub transmission: TransmissionMode,
    pub noise: Option<Vec<Array3<f64>>>,
}

impl ForwardOptions {
    pub fn deterministic() -> Self {
        Self { transmission: TransmissionMode::Hard, noise: None }
    }
}

/// Everything the forward pass produces, retained for backprop and export:
/// the 2K+1 field snapshots, camera intensity, and readout quantities.
pub struct ForwardTrace {
    /// Field arriving at each layer (post-propagation, pre-transmission).
    pub arriving: Vec<ComplexField>,
    /// Field just after each layer's transmission.
    pub transmitted: Vec<ComplexField>,
    /// Camera-plane field after the final propagation.
    pub camera: ComplexField,
    /// |camera|^2.
    pub intensity: Array2<f64>,
    /// Per-region intensity integrals, region order.
    pub region_sums: Vec<f64>,
    /// Slot of each region, aligned with `region_sums`.
    pub region_slots: Vec<usize>,
    /// Loss score vector over all slots: region sum / total camera energy.
    pub score: Vec<f64>,
    /// Reporting percentages per region: share of the regions' own total.
    pub percentages: Vec<f64>,
    /// True when the camera (or every region) is dark.
    pub degenerate: bool,
    /// Mode and noise actually used, for gradient replay.
    pub mode: TransmissionMode,
    pub noise: Option<Vec<Array3<f64>>>,
}

/// Readout of a trace: winning slot and reporting percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    /// Predicted label = winning slot (ties and dark cameras go to the
    /// lowest slot).
    pub label: usize,
    pub percentages: Vec<f64>,
    pub degenerate: bool,
}

/// The complete trainable model.
pub struct NetworkModel {
    grid: GridSpec,
    layers: Vec<GumbelLayer>,
    z: f64,
    method: PropagationMethod,
    kernel: PropagationKernel,
    detectors: DetectorLayout,
    labels: Vec<u8>,
    trained: bool,
}

impl NetworkModel {
    pub fn new(
        grid: GridSpec,
        layers: Vec<GumbelLayer>,
        z: f64,
        method: PropagationMethod,
        detectors: DetectorLayout,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(DonnError::InvalidGrid("need at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if *layer.grid() != grid {
                return Err(DonnError::GridMismatch(format!(
                    "layer {i} grid differs from model grid"
                )));
            }
        }
        detectors.fits(&grid)?;
        if labels.len() != detectors.regions().len() {
            return Err(DonnError::InvalidGrid(format!(
                "{} labels for {} detector regions",
                labels.len(),
                detectors.regions().len()
            )));
        }
        for (i, &l) in labels.iter().enumerate() {
            if detectors.slots()[i] != l as usize {
                return Err(DonnError::InvalidGrid(format!(
                    "label {l} mapped to slot {}",
                    detectors.slots()[i]
                )));
            }
        }
        let kernel = PropagationKernel::build(method, grid, z)?;
        Ok(Self { grid, layers, z, method, kernel, detectors, labels, trained: false })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn layers(&self) -> &[GumbelLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [GumbelLayer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn distance(&self) -> f64 {
        self.z
    }

    pub fn method(&self) -> PropagationMethod {
        self.method
    }

    pub fn kernel(&self) -> &PropagationKernel {
        &self.kernel
    }

    pub fn detectors(&self) -> &DetectorLayout {
        &self.detectors
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    /// Slot index of a class label, or an error for labels this model
    /// does not classify.
    pub fn slot_of_label(&self, label: u8) -> Result<usize> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .map(|i| self.detectors.slots()[i])
            .ok_or_else(|| {
                DonnError::Dataset(format!("label {label} not among {:?}", self.labels))
            })
    }

    /// Fresh per-layer Gumbel noise for one sampled forward.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Array3<f64>> {
        self.layers.iter().map(|l| l.sample_gumbel(rng)).collect()
    }

    /// Forward pass from an arbitrary input field (the image plane value).
    pub fn forward_field(&self, input: &ComplexField, opts: ForwardOptions) -> Result<ForwardTrace> {
        if input.grid() != &self.grid {
            return Err(DonnError::GridMismatch(
                "input field grid differs from model grid".into(),
            ));
        }
        if let Some(noise) = &opts.noise {
            if noise.len() != self.layers.len() {
                return Err(DonnError::ShapeMismatch(format!(
                    "{} noise arrays for {} layers",
                    noise.len(),
                    self.layers.len()
                )));
            }
        }
        let k = self.layers.len();
        let mut arriving = Vec::with_capacity(k);
        let mut transmitted = Vec::with_capacity(k);
        let mut field = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let arrived = propagate(&field, &self.kernel)?;
            let g = opts.noise.as_ref().map(|n| &n[i]);
            let t = match opts.transmission {
                TransmissionMode::Hard => layer.hard_transmission(g),
                TransmissionMode::Soft => layer.soft_transmission(g),
            };
            let out = arrived.clone().elementwise_mul(t.values())?;
            arriving.push(arrived);
            transmitted.push(out.clone());
            field = out;
        }
        let camera = propagate(&field, &self.kernel)?;
        let intensity = camera.intensity();
        let region_sums = self.detectors.region_sums(&intensity, &self.grid);
        let total_energy = camera.total_energy();
        let region_total: f64 = region_sums.iter().sum();
        let degenerate = !(region_total > 0.0) || !(total_energy > 0.0);

        let mut score = vec![0.0; self.detectors.num_slots()];
        if total_energy > 0.0 {
            for (i, &s) in region_sums.iter().enumerate() {
                score[self.detectors.slots()[i]] = s / total_energy;
            }
        }
        let percentages = if degenerate {
            vec![100.0 / region_sums.len() as f64; region_sums.len()]
        } else {
            region_sums.iter().map(|s| 100.0 * s / region_total).collect()
        };

        Ok(ForwardTrace {
            arriving,
            transmitted,
            camera,
            intensity,
            region_sums,
            region_slots: self.detectors.slots().to_vec(),
            score,
            percentages,
            degenerate,
            mode: opts.transmission,
            noise: opts.noise,
        })
    }

    /// Forward pass from an encoded image.
    pub fn forward(&self, image: &EncodedImage, opts: ForwardOptions) -> Result<ForwardTrace> {
        self.forward_field(&image.field(), opts)
    }

    /// Deployment-mode forward: hard levels, no noise.
    pub fn forward_deterministic(&self, image: &EncodedImage) -> Result<ForwardTrace> {
        self.forward(image, ForwardOptions::deterministic())
    }

    /// Training-mode forward: hard levels with fresh Gumbel noise.
    pub fn forward_sampled<R: Rng + ?Sized>(
        &self,
        image: &EncodedImage,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        let noise = self.sample_noise(rng);
        self.forward(
            image,
            ForwardOptions { transmission: TransmissionMode::Hard, noise: Some(noise) },
        )
    }

    /// Prediction for one image in deployment mode.
    pub fn predict(&self, image: &EncodedImage) -> Result<usize> {
        Ok(readout(&self.forward_deterministic(image)?).label)
    }

    /// Confusion matrix and accuracy over a labeled set, evaluated in
    /// deterministic mode. Rows = true label, columns = predicted slot.
    pub fn confusion_matrix(
        &self,
        images: &[EncodedImage],
        labels: &[u8],
    ) -> Result<ConfusionMatrix> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(DonnError::Dataset(format!(
                "{} images with {} labels",
                images.len(),
                labels.len()
            )));
        }
        let predictions: Vec<usize> = images
            .par_iter()
            .map(|img| self.predict(img))
            .collect::<Result<Vec<_>>>()?;
        let mut matrix = Array2::zeros((NUM_SLOTS, NUM_SLOTS));
        let mut correct = 0usize;
        for (&truth, &pred) in labels.iter().zip(predictions.iter()) {
            matrix[(truth as usize, pred)] += 1usize;
            if truth as usize == pred {
                correct += 1;
            }
        }
        Ok(ConfusionMatrix {
            matrix,
            accuracy: correct as f64 / labels.len() as f64,
            total: labels.len(),
        })
    }
}

/// Counts of (true label, predicted slot) pairs plus overall accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    /// 10x10: rows = true label, columns = predicted slot.
    pub matrix: Array2<usize>,
    pub accuracy: f64,
    pub total: usize,
}

/// Winning slot and percentages from a completed trace. Ties break to the
/// lowest slot; a dark camera is flagged and defaults to slot 0.
pub fn readout(trace: &ForwardTrace) -> Readout {
    let label = if trace.degenerate {
        0
    } else {
        let mut best = (usize::MAX, f64::NEG_INFINITY); // (slot, sum)
        for (i, &sum) in trace.region_sums.iter().enumerate() {
            let slot = trace.region_slots[i];
            if sum > best.1 || (sum == best.1 && slot < best.0) {
                best = (slot, sum);
            }
        }
        best.0
    };
    Readout { label, percentages: trace.percentages.clone(), degenerate: trace.degenerate }
}

/// MSE between the slot score vector and the one-hot target slot.
pub fn mse_loss(score: &[f64], target_slot: usize) -> f64 {
    let n = score.len();
    let mut sum = 0.0;
    for (s, &v) in score.iter().enumerate() {
        let t = if s == target_slot { 1.0 } else { 0.0 };
        sum += (v - t) * (v - t);
    }
    sum / n as f64
}
