//! SLM device response: measured lookup tables, Gumbel-Softmax grey-level
//! parameterization, and binary input-image encoding.
//!
//! A twisted-nematic SLM pixel driven at grey level `v` transmits the field
//! factor `T[v] * exp(i * Phi[v])`; `T` and `Phi` come from a measured (or
//! synthetic) [`DeviceLUT`]. Trainable layers hold per-pixel logits over the
//! `k` levels; the forward pass selects levels hard (one-hot argmax of
//! `(log theta + g) / tau`), while training differentiates the softmax
//! relaxation of the same expression (straight-through).
//!
//! The relaxation composes amplitude and phase separately —
//! `value = (p . T) * exp(i * (p . Phi))` — i.e. level probabilities mix in
//! amplitude/phase space, not as an average of complex transmissions.

use std::io::Read;
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{DonnError, Result};
use crate::field::{ComplexField, GridSpec};

/// Field transmission written by a featured (bright, grey 255) image pixel.
pub const FEATURED_VALUE: Complex64 = Complex64::new(-1.0, 0.0);
/// Field transmission written by a background (dark, grey 0) image pixel:
/// amplitude extinction ratio ~31.6, zero phase.
pub const BACKGROUND_VALUE: Complex64 = Complex64::new(0.0316, 0.0);

/// Measured amplitude/phase response of one SLM, indexed by grey level.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceLUT {
    amplitude: Vec<f64>,
    phase: Vec<f64>,
}

impl DeviceLUT {
    /// Validate and wrap amplitude/phase response vectors.
    pub fn new(amplitude: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        if amplitude.len() != phase.len() {
            return Err(DonnError::Lut(format!(
                "amplitude has {} entries, phase has {}",
                amplitude.len(),
                phase.len()
            )));
        }
        if amplitude.len() < 2 {
            return Err(DonnError::Lut(format!(
                "need at least 2 levels, got {}",
                amplitude.len()
            )));
        }
        for (i, &a) in amplitude.iter().enumerate() {
            if !a.is_finite() || !(0.0..=1.05).contains(&a) {
                return Err(DonnError::Lut(format!(
                    "amplitude[{i}] = {a} outside [0, 1.05]"
                )));
            }
        }
        for (i, &p) in phase.iter().enumerate() {
            if !p.is_finite() {
                return Err(DonnError::Lut(format!("phase[{i}] = {p} not finite")));
            }
        }
        Ok(Self { amplitude, phase })
    }

    /// Parse the `level,amplitude,phase_rad` CSV format.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        {
            let headers = rdr.headers().map_err(DonnError::from)?;
            let expect = ["level", "amplitude", "phase_rad"];
            let got: Vec<&str> = headers.iter().collect();
            if got != expect {
                return Err(DonnError::Lut(format!(
                    "LUT header must be 'level,amplitude,phase_rad', got '{}'",
                    got.join(",")
                )));
            }
        }
        let mut amplitude = Vec::new();
        let mut phase = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(DonnError::from)?;
            if record.len() != 3 {
                return Err(DonnError::Lut(format!(
                    "row {row}: expected 3 fields, got {}",
                    record.len()
                )));
            }
            let level: usize = record[0]
                .parse()
                .map_err(|_| DonnError::Lut(format!("row {row}: bad level '{}'", &record[0])))?;
            if level != row {
                return Err(DonnError::Lut(format!(
                    "row {row}: level index {level} out of order (levels must ascend from 0)"
                )));
            }
            let a: f64 = record[1].parse().map_err(|_| {
                DonnError::Lut(format!("row {row}: bad amplitude '{}'", &record[1]))
            })?;
            let p: f64 = record[2]
                .parse()
                .map_err(|_| DonnError::Lut(format!("row {row}: bad phase '{}'", &record[2])))?;
            amplitude.push(a);
            phase.push(p);
        }
        Self::new(amplitude, phase)
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Synthetic intensity-mode curve (input SLM): amplitude rises linearly
    /// from the 0.0316 extinction floor to 1, phase from 0 to pi.
    pub fn intensity_mode(levels: usize) -> Self {
        let span = (levels - 1) as f64;
        let amplitude = (0..levels)
            .map(|v| 0.0316 + (1.0 - 0.0316) * v as f64 / span)
            .collect();
        let phase = (0..levels)
            .map(|v| std::f64::consts::PI * v as f64 / span)
            .collect();
        Self { amplitude, phase }
    }

    /// Synthetic phase-mode curve (RDA SLMs): full 2*pi phase ramp with the
    /// mild coupled amplitude ripple typical of twisted-nematic devices.
    pub fn phase_mode(levels: usize) -> Self {
        let span = (levels - 1) as f64;
        let amplitude = (0..levels)
            .map(|v| 0.9 + 0.1 * (std::f64::consts::PI * v as f64 / span).cos())
            .collect();
        let phase = (0..levels)
            .map(|v| 2.0 * std::f64::consts::PI * v as f64 / span)
            .collect();
        Self { amplitude, phase }
    }

    /// Two-level pure phase-flip device: {(1, 0), (1, pi)}.
    pub fn phase_flip() -> Self {
        Self { amplitude: vec![1.0, 1.0], phase: vec![0.0, std::f64::consts::PI] }
    }

    /// Keep `k` evenly spaced rows (including both endpoints).
    pub fn subsample(&self, k: usize) -> Result<Self> {
        let full = self.levels();
        if k < 2 || k > full {
            return Err(DonnError::Lut(format!(
                "cannot subsample {full}-level LUT to {k} levels"
            )));
        }
        if k == full {
            return Ok(self.clone());
        }
        let pick = |i: usize| (i as f64 * (full - 1) as f64 / (k - 1) as f64).round() as usize;
        let amplitude = (0..k).map(|i| self.amplitude[pick(i)]).collect();
        let phase = (0..k).map(|i| self.phase[pick(i)]).collect();
        Ok(Self { amplitude, phase })
    }

    pub fn levels(&self) -> usize {
        self.amplitude.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn phases(&self) -> &[f64] {
        &self.phase
    }

    /// Complex transmission `T[v] * exp(i Phi[v])` of one grey level.
    pub fn transmission(&self, level: usize) -> Complex64 {
        Complex64::from_polar(self.amplitude[level], self.phase[level])
    }
}

/// Load a [`DeviceLUT`] from its CSV file format.
pub fn load_lut<P: AsRef<Path>>(path: P) -> Result<DeviceLUT> {
    DeviceLUT::from_csv_path(path)
}

/// Soft-relaxation intermediates for one layer: per-pixel level
/// probabilities and the mixed amplitude/phase they produce.
pub struct SoftEval {
    /// Softmax probabilities, shape `(padded_ny, padded_nx, k)`.
    pub probabilities: Array3<f64>,
    /// `p . T` per pixel.
    pub amplitude: Array2<f64>,
    /// `p . Phi` per pixel.
    pub phase: Array2<f64>,
}

/// One trainable diffractive layer: per-pixel logits over `k` grey levels.
///
/// The whole padded grid is trainable — the physical device's active region
/// includes the padding ring around the image aperture.
#[derive(Debug, Clone)]
pub struct GumbelLayer {
    grid: GridSpec,
    lut: DeviceLUT,
    /// `log theta`, shape `(padded_ny, padded_nx, k)`.
    logits: Array3<f64>,
    temperature: f64,
}

impl GumbelLayer {
    fn logits_shape(grid: &GridSpec, lut: &DeviceLUT) -> (usize, usize, usize) {
        (grid.padded_ny(), grid.padded_nx(), lut.levels())
    }

    /// Fresh layer with logits iid uniform in [-0.1, 0.1].
    pub fn init<R: Rng + ?Sized>(
        grid: GridSpec,
        lut: DeviceLUT,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = Self::logits_shape(&grid, &lut);
        let logits = Array3::from_shape_fn(shape, |_| rng.gen_range(-0.1..0.1));
        Self::from_logits(grid, lut, temperature, logits)
    }

    pub fn from_logits(
        grid: GridSpec,
        lut: DeviceLUT,
        temperature: f64,
        logits: Array3<f64>,
    ) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(DonnError::Numeric(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        let shape = Self::logits_shape(&grid, &lut);
        if logits.dim() != shape {
            return Err(DonnError::ShapeMismatch(format!(
                "logits are {:?}, layer expects {:?}",
                logits.dim(),
                shape
            )));
        }
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(DonnError::Numeric("non-finite logit".into()));
        }
        Ok(Self { grid, lut, logits, temperature })
    }

    /// Layer whose argmax reproduces `levels` exactly (25-logit margin), for
    /// loading deployed grey-level maps without stored logits.
    pub fn from_levels(
        grid: GridSpec,
        lut: DeviceLUT,
        temperature: f64,
        levels: &Array2<usize>,
    ) -> Result<Self> {
        let shape = Self::logits_shape(&grid, &lut);
        if levels.dim() != (shape.0, shape.1) {
            return Err(DonnError::ShapeMismatch(format!(
                "level map is {:?}, layer expects {:?}",
                levels.dim(),
                (shape.0, shape.1)
            )));
        }
        let mut logits = Array3::zeros(shape);
        for ((r, c), &v) in levels.indexed_iter() {
            if v >= shape.2 {
                return Err(DonnError::Lut(format!(
                    "level {v} at ({r},{c}) exceeds LUT size {}",
                    shape.2
                )));
            }
            logits[(r, c, v)] = 25.0;
        }
        Self::from_logits(grid, lut, temperature, logits)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn lut(&self) -> &DeviceLUT {
        &self.lut
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn levels(&self) -> usize {
        self.lut.levels()
    }

    pub fn logits(&self) -> &Array3<f64> {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Array3<f64> {
        &mut self.logits
    }

    /// Draw iid Gumbel(0, 1) noise of logits shape: `-ln(-ln(u))`.
    pub fn sample_gumbel<R: Rng + ?Sized>(&self, rng: &mut R) -> Array3<f64> {
        Array3::from_shape_fn(self.logits.dim(), |_| {
            let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            -(-u.ln()).ln()
        })
    }

    fn perturbed(&self, idx: (usize, usize), g: Option<&Array3<f64>>) -> Vec<f64> {
        let k = self.levels();
        let mut row = Vec::with_capacity(k);
        for v in 0..k {
            let mut l = self.logits[(idx.0, idx.1, v)];
            if let Some(g) = g {
                l += g[(idx.0, idx.1, v)];
            }
            row.push(l / self.temperature);
        }
        row
    }

    /// Per-pixel argmax levels of `(log theta + g) / tau`; ties break to the
    /// lowest level index.
    pub fn hard_levels(&self, g: Option<&Array3<f64>>) -> Array2<usize> {
        let (ny, nx, _) = self.logits.dim();
        Array2::from_shape_fn((ny, nx), |idx| {
            let row = self.perturbed(idx, g);
            argmax_first(&row)
        })
    }

    /// One-hot transmission field: `T[v] * exp(i Phi[v])` at the selected
    /// level of each pixel. `g = None` is the deterministic/inference mode.
    pub fn hard_transmission(&self, g: Option<&Array3<f64>>) -> ComplexField {
        let levels = self.hard_levels(g);
        let values = levels.mapv(|v| self.lut.transmission(v));
        ComplexField::from_values(self.grid, values).expect("logits shape matches grid")
    }

    /// Softmax probabilities over levels at every pixel.
    pub fn soft_probabilities(&self, g: Option<&Array3<f64>>) -> Array3<f64> {
        self.soft_eval(g).probabilities
    }

    /// Full soft relaxation: probabilities plus the mixed amplitude/phase.
    pub fn soft_eval(&self, g: Option<&Array3<f64>>) -> SoftEval {
        let (ny, nx, k) = self.logits.dim();
        let mut probabilities = Array3::zeros((ny, nx, k));
        let mut amplitude = Array2::zeros((ny, nx));
        let mut phase = Array2::zeros((ny, nx));
        let t = self.lut.amplitudes();
        let f = self.lut.phases();
        for r in 0..ny {
            for c in 0..nx {
                let row = self.perturbed((r, c), g);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in 0..k {
                    let e = (row[v] - max).exp();
                    probabilities[(r, c, v)] = e;
                    sum += e;
                }
                let mut a = 0.0;
                let mut p = 0.0;
                for v in 0..k {
                    let prob = probabilities[(r, c, v)] / sum;
                    probabilities[(r, c, v)] = prob;
                    a += prob * t[v];
                    p += prob * f[v];
                }
                amplitude[(r, c)] = a;
                phase[(r, c)] = p;
            }
        }
        SoftEval { probabilities, amplitude, phase }
    }

    /// Relaxed transmission field `(p.T) * exp(i (p.Phi))` per pixel.
    pub fn soft_transmission(&self, g: Option<&Array3<f64>>) -> ComplexField {
        let eval = self.soft_eval(g);
        let values = ndarray::Zip::from(&eval.amplitude)
            .and(&eval.phase)
            .map_collect(|&a, &p| Complex64::from_polar(a, p));
        ComplexField::from_values(self.grid, values).expect("logits shape matches grid")
    }
}

/// Index of the maximum entry; first occurrence wins ties.
pub(crate) fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Binarized input image on the intensity-mode SLM: featured pixels transmit
/// -1 (grey 255), background pixels 0.0316 (grey 0), and the padding ring
/// outside the image aperture is opaque (0).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedImage {
    grid: GridSpec,
    values: Array2<Complex64>,
    feature_mask: Array2<bool>,
}

impl EncodedImage {
    /// Threshold a `[0, 1]` image (already at the grid's unpadded size):
    /// brightness strictly above 0.5 is featured.
    pub fn encode(raw: &Array2<f32>, grid: GridSpec) -> Result<Self> {
        if raw.dim() != (grid.ny, grid.nx) {
            return Err(DonnError::Encoding(format!(
                "image is {:?}, grid interior is {:?}",
                raw.dim(),
                (grid.ny, grid.nx)
            )));
        }
        if let Some(bad) = raw.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(DonnError::Encoding(format!(
                "brightness {bad} outside [0, 1]"
            )));
        }
        let interior = raw.mapv(|b| if b > 0.5 { FEATURED_VALUE } else { BACKGROUND_VALUE });
        Self::from_interior_values(grid, &interior)
    }

    /// Wrap an interior array that is already two-valued {-1, 0.0316}.
    pub fn from_interior_values(grid: GridSpec, interior: &Array2<Complex64>) -> Result<Self> {
        if interior.dim() != (grid.ny, grid.nx) {
            return Err(DonnError::Encoding(format!(
                "interior is {:?}, grid expects {:?}",
                interior.dim(),
                (grid.ny, grid.nx)
            )));
        }
        if let Some(bad) = interior
            .iter()
            .find(|v| **v != FEATURED_VALUE && **v != BACKGROUND_VALUE)
        {
            return Err(DonnError::Encoding(format!(
                "value {bad} is neither -1 nor 0.0316"
            )));
        }
        let field = ComplexField::from_interior(grid, interior)?;
        let values = field.into_values();
        let feature_mask = values.mapv(|v| v == FEATURED_VALUE);
        Ok(Self { grid, values, feature_mask })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Padded complex value array (two-valued interior, zero ring).
    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    /// Padded boolean mask, true exactly where the value is -1.
    pub fn feature_mask(&self) -> &Array2<bool> {
        &self.feature_mask
    }

    /// The image as a propagable field.
    pub fn field(&self) -> ComplexField {
        ComplexField::from_values(self.grid, self.values.clone()).expect("shape by construction")
    }

    /// Count of featured pixels.
    pub fn num_featured(&self) -> usize {
        self.feature_mask.iter().filter(|&&m| m).count()
    }

    /// Pixels (padded coordinates, interior only) whose values differ.
    pub fn diff_pixels(&self, other: &EncodedImage) -> Vec<(usize, usize)> {
        self.values
            .indexed_iter()
            .zip(other.values.iter())
            .filter(|((_, a), b)| a != b)
            .map(|((idx, _), _)| idx)
            .collect()
    }
}

/// Spec'd operation name for [`EncodedImage::encode`].
pub fn encode_image(raw: &Array2<f32>, grid: GridSpec) -> Result<EncodedImage> {
    EncodedImage::encode(raw, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(n: usize, pad: usize) -> GridSpec {
        GridSpec::square(n, 36e-6, 532e-9, pad).unwrap()
    }

    #[test]
    fn lut_csv_round_trip_and_endpoints() {
        let csv = "level,amplitude,phase_rad\n0,0.0316,0.0\n1,0.5,1.0\n2,1.0,3.14159265358979\n";
        let lut = DeviceLUT::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(lut.levels(), 3);
        assert_eq!(lut.amplitudes()[0], 0.0316);
        assert!((lut.transmission(2) - Complex64::new(-1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn lut_csv_rejects_bad_rows() {
        // out-of-range amplitude
        let bad_amp = "level,amplitude,phase_rad\n0,0.5,0.0\n1,1.2,0.0\n";
        assert!(DeviceLUT::from_csv_reader(bad_amp.as_bytes()).is_err());
        // non-monotone level index
        let bad_order = "level,amplitude,phase_rad\n0,0.5,0.0\n2,0.6,0.0\n";
        assert!(DeviceLUT::from_csv_reader(bad_order.as_bytes()).is_err());
        // malformed field
        let bad_field = "level,amplitude,phase_rad\n0,half,0.0\n1,0.6,0.0\n";
        assert!(DeviceLUT::from_csv_reader(bad_field.as_bytes()).is_err());
        // wrong header
        let bad_header = "lvl,amp,phi\n0,0.5,0.0\n1,0.6,0.0\n";
        assert!(DeviceLUT::from_csv_reader(bad_header.as_bytes()).is_err());
        // single level
        let short = "level,amplitude,phase_rad\n0,0.5,0.0\n";
        assert!(DeviceLUT::from_csv_reader(short.as_bytes()).is_err());
    }

    #[test]
    fn intensity_mode_curve_matches_device_endpoints() {
        let lut = DeviceLUT::intensity_mode(256);
        assert!((lut.amplitudes()[0] - 0.0316).abs() < 1e-12);
        assert_eq!(lut.phases()[0], 0.0);
        assert!((lut.amplitudes()[255] - 1.0).abs() < 1e-12);
        assert!((lut.phases()[255] - PI).abs() < 1e-12);
        // grey 255 transmits exactly e^{i pi} = -1 in amplitude terms
        assert!((lut.transmission(255) - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn subsample_keeps_endpoints() {
        let lut = DeviceLUT::intensity_mode(256);
        let sub = lut.subsample(16).unwrap();
        assert_eq!(sub.levels(), 16);
        assert_eq!(sub.amplitudes()[0], lut.amplitudes()[0]);
        assert_eq!(sub.amplitudes()[15], lut.amplitudes()[255]);
        assert_eq!(sub.phases()[15], lut.phases()[255]);
        assert!(lut.subsample(1).is_err());
        assert!(lut.subsample(257).is_err());
    }

    #[test]
    fn hard_transmission_selects_levels() {
        let g = grid(2, 0);
        let lut = DeviceLUT::intensity_mode(256);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = GumbelLayer::init(g, lut, 1.0, &mut rng).unwrap();
        // concentrate pixel (0,0) on level 255
        for v in 0..256 {
            layer.logits_mut()[(0, 0, v)] = if v == 255 { 30.0 } else { 0.0 };
        }
        let field = layer.hard_transmission(None);
        assert!((field.values()[(0, 0)] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        let levels = layer.hard_levels(None);
        assert_eq!(levels[(0, 0)], 255);
    }

    #[test]
    fn uniform_logits_tie_break_to_level_zero() {
        let g = grid(2, 1);
        let lut = DeviceLUT::intensity_mode(8);
        let layer =
            GumbelLayer::from_logits(g, lut.clone(), 1.0, Array3::zeros((4, 4, 8))).unwrap();
        let levels = layer.hard_levels(None);
        assert!(levels.iter().all(|&v| v == 0));
        let field = layer.hard_transmission(None);
        let expect = lut.transmission(0);
        assert!(field.values().iter().all(|v| (v - expect).norm() < 1e-15));
    }

    #[test]
    fn phase_flip_level_one_is_minus_one() {
        let lut = DeviceLUT::phase_flip();
        assert!((lut.transmission(1) - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn soft_uniform_two_level_phase_flip_gives_i() {
        // p = (1/2, 1/2) over {(1,0), (1,pi)}: amplitude 1, phase pi/2 -> i
        let g = grid(2, 0);
        let layer =
            GumbelLayer::from_logits(g, DeviceLUT::phase_flip(), 1.0, Array3::zeros((2, 2, 2)))
                .unwrap();
        let field = layer.soft_transmission(None);
        for v in field.values() {
            assert!((v - Complex64::new(0.0, 1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn soft_with_saturated_logits_equals_hard_exactly() {
        let g = grid(3, 0);
        let lut = DeviceLUT::intensity_mode(4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut logits = Array3::zeros((3, 3, 4));
        for r in 0..3 {
            for c in 0..3 {
                let v = rng.gen_range(0..4);
                logits[(r, c, v)] = 1e4; // exp(-1e4) underflows: exactly one-hot
            }
        }
        let layer = GumbelLayer::from_logits(g, lut, 1.0, logits).unwrap();
        let soft = layer.soft_transmission(None);
        let hard = layer.hard_transmission(None);
        assert_eq!(soft.values(), hard.values());
    }

    #[test]
    fn soft_approaches_hard_as_temperature_drops() {
        let g = grid(4, 0);
        let lut = DeviceLUT::intensity_mode(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = GumbelLayer::init(g, lut.clone(), 1.0, &mut rng).unwrap();
        let noise = base.sample_gumbel(&mut rng);
        let cold = GumbelLayer::from_logits(g, lut, 1e-3, base.logits().clone()).unwrap();
        let soft = cold.soft_transmission(Some(&noise));
        let hard = cold.hard_transmission(Some(&noise));
        for (s, h) in soft.values().iter().zip(hard.values().iter()) {
            assert!((s - h).norm() < 1e-9);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let g = grid(4, 1);
        let lut = DeviceLUT::phase_mode(16);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut logits = Array3::zeros((6, 6, 16));
        logits.mapv_inplace(|_| rng.gen_range(-20.0..20.0));
        for tau in [1e-3, 0.1, 1.0, 10.0] {
            let layer = GumbelLayer::from_logits(g, lut.clone(), tau, logits.clone()).unwrap();
            let p = layer.soft_probabilities(None);
            for r in 0..6 {
                for c in 0..6 {
                    let sum: f64 = (0..16).map(|v| p[(r, c, v)]).sum();
                    assert!((sum - 1.0).abs() < 1e-12, "tau={tau}: sum {sum}");
                }
            }
        }
    }

    #[test]
    fn max_probability_grows_as_temperature_falls() {
        let g = grid(3, 0);
        let lut = DeviceLUT::intensity_mode(8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = GumbelLayer::init(g, lut.clone(), 1.0, &mut rng).unwrap();
        let noise = base.sample_gumbel(&mut rng);
        let mut prev = Array2::zeros((3, 3));
        for tau in [5.0, 1.0, 0.1, 0.01] {
            let layer =
                GumbelLayer::from_logits(g, lut.clone(), tau, base.logits().clone()).unwrap();
            let p = layer.soft_probabilities(Some(&noise));
            for r in 0..3 {
                for c in 0..3 {
                    let maxp = (0..8).map(|v| p[(r, c, v)]).fold(f64::NEG_INFINITY, f64::max);
                    assert!(
                        maxp >= prev[(r, c)] - 1e-12,
                        "tau={tau}: {maxp} < {}",
                        prev[(r, c)]
                    );
                    prev[(r, c)] = maxp;
                }
            }
        }
    }

    #[test]
    fn hard_magnitude_equals_lut_amplitude() {
        let g = grid(4, 0);
        let lut = DeviceLUT::phase_mode(16);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let layer = GumbelLayer::init(g, lut.clone(), 1.0, &mut rng).unwrap();
        let noise = layer.sample_gumbel(&mut rng);
        let levels = layer.hard_levels(Some(&noise));
        let field = layer.hard_transmission(Some(&noise));
        let tmax = lut.amplitudes().iter().cloned().fold(0.0, f64::max);
        for ((r, c), &v) in levels.indexed_iter() {
            let m = field.values()[(r, c)].norm();
            assert!((m - lut.amplitudes()[v]).abs() < 1e-12);
            assert!(m <= tmax + 1e-12);
        }
    }

    #[test]
    fn logit_init_is_within_bounds() {
        let g = grid(8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let layer = GumbelLayer::init(g, DeviceLUT::intensity_mode(16), 1.0, &mut rng).unwrap();
        assert!(layer.logits().iter().all(|&v| (-0.1..0.1).contains(&v)));
        assert!(layer.logits().iter().any(|&v| v.abs() > 1e-3));
    }

    #[test]
    fn layer_construction_rejects_bad_inputs() {
        let g = grid(2, 0);
        let lut = DeviceLUT::phase_flip();
        assert!(GumbelLayer::from_logits(g, lut.clone(), 0.0, Array3::zeros((2, 2, 2))).is_err());
        assert!(GumbelLayer::from_logits(g, lut.clone(), 1.0, Array3::zeros((2, 2, 3))).is_err());
        let mut bad = Array3::zeros((2, 2, 2));
        bad[(0, 0, 0)] = f64::NAN;
        assert!(GumbelLayer::from_logits(g, lut, 1.0, bad).is_err());
    }

    #[test]
    fn encode_thresholds_and_pads() {
        let g = grid(2, 1);
        let raw = ndarray::arr2(&[[0.8_f32, 0.2], [0.5, 1.0]]);
        let img = encode_image(&raw, g).unwrap();
        // interior starts at (1,1) with pad 1
        assert_eq!(img.values()[(1, 1)], FEATURED_VALUE);
        assert_eq!(img.values()[(1, 2)], BACKGROUND_VALUE);
        assert_eq!(img.values()[(2, 1)], BACKGROUND_VALUE, "0.5 is not featured");
        assert_eq!(img.values()[(2, 2)], FEATURED_VALUE);
        assert!(img.feature_mask()[(1, 1)]);
        assert!(!img.feature_mask()[(1, 2)]);
        assert_eq!(img.num_featured(), 2);
        // padding ring is opaque
        for c in 0..4 {
            assert_eq!(img.values()[(0, c)], Complex64::new(0.0, 0.0));
            assert_eq!(img.values()[(3, c)], Complex64::new(0.0, 0.0));
            assert!(!img.feature_mask()[(0, c)]);
        }
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let g = grid(2, 0);
        for bad in [1.2_f32, -0.1, f32::NAN] {
            let raw = ndarray::arr2(&[[bad, 0.0], [0.0, 0.0]]);
            assert!(encode_image(&raw, g).is_err());
        }
        let wrong_size = ndarray::arr2(&[[0.0_f32]]);
        assert!(encode_image(&wrong_size, g).is_err());
    }

    #[test]
    fn two_valued_constructor_validates() {
        let g = grid(2, 0);
        let ok = ndarray::arr2(&[
            [FEATURED_VALUE, BACKGROUND_VALUE],
            [BACKGROUND_VALUE, BACKGROUND_VALUE],
        ]);
        let img = EncodedImage::from_interior_values(g, &ok).unwrap();
        assert_eq!(img.num_featured(), 1);
        let bad = ndarray::arr2(&[
            [FEATURED_VALUE, Complex64::new(0.5, 0.0)],
            [BACKGROUND_VALUE, BACKGROUND_VALUE],
        ]);
        assert!(EncodedImage::from_interior_values(g, &bad).is_err());
    }

    #[test]
    fn diff_pixels_counts_changes() {
        let g = grid(2, 0);
        let a = EncodedImage::from_interior_values(
            g,
            &ndarray::arr2(&[
                [FEATURED_VALUE, BACKGROUND_VALUE],
                [BACKGROUND_VALUE, BACKGROUND_VALUE],
            ]),
        )
        .unwrap();
        let b = EncodedImage::from_interior_values(
            g,
            &ndarray::arr2(&[
                [FEATURED_VALUE, FEATURED_VALUE],
                [BACKGROUND_VALUE, BACKGROUND_VALUE],
            ]),
        )
        .unwrap();
        assert_eq!(a.diff_pixels(&b), vec![(0, 1)]);
        assert!(a.diff_pixels(&a).is_empty());
    }
}
