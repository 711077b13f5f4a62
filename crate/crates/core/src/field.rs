//! Complex optical field on a padded pixel grid.
//!
//! Layout convention, fixed project-wide: arrays are row-major with
//! `(row = y, col = x)`, so an array has shape `(padded_ny, padded_nx)`.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{DonnError, Result};

/// Geometry of the SLM pixel lattice shared by all planes of a model.
///
/// `nx`/`ny` count the unpadded (aperture) pixels; `pad` zero-valued border
/// pixels are added per side, so arrays are `(ny + 2*pad) x (nx + 2*pad)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Pixel edge length in meters.
    pub pitch: f64,
    /// Wavelength in meters.
    pub wavelength: f64,
    /// Zero border pixels added per side.
    pub pad: usize,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, pitch: f64, wavelength: f64, pad: usize) -> Result<Self> {
        if nx < 1 || ny < 1 {
            return Err(DonnError::InvalidGrid(format!(
                "pixel counts must be >= 1, got {nx}x{ny}"
            )));
        }
        if !(pitch > 0.0) || !pitch.is_finite() {
            return Err(DonnError::InvalidGrid(format!("pitch must be > 0, got {pitch}")));
        }
        if !(wavelength > 0.0) || !wavelength.is_finite() {
            return Err(DonnError::InvalidGrid(format!(
                "wavelength must be > 0, got {wavelength}"
            )));
        }
        Ok(Self { nx, ny, pitch, wavelength, pad })
    }

    /// Square grid helper.
    pub fn square(n: usize, pitch: f64, wavelength: f64, pad: usize) -> Result<Self> {
        Self::new(n, n, pitch, wavelength, pad)
    }

    pub fn padded_nx(&self) -> usize {
        self.nx + 2 * self.pad
    }

    pub fn padded_ny(&self) -> usize {
        self.ny + 2 * self.pad
    }

    /// Shape of the padded value array, `(rows, cols) = (padded_ny, padded_nx)`.
    pub fn padded_shape(&self) -> (usize, usize) {
        (self.padded_ny(), self.padded_nx())
    }

    pub fn num_padded_pixels(&self) -> usize {
        self.padded_nx() * self.padded_ny()
    }
}

/// A 2-D grid of complex field amplitudes sampled on the padded pixel lattice.
///
/// Values are immutable in the public contract once constructed; construction
/// helpers take ownership or copy.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    values: Array2<Complex64>,
}

impl ComplexField {
    /// All-zero field of the grid's padded size.
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: Array2::zeros(grid.padded_shape()) }
    }

    /// Wrap an existing value array; dimensions must match the padded grid.
    pub fn from_values(grid: GridSpec, values: Array2<Complex64>) -> Result<Self> {
        if values.dim() != grid.padded_shape() {
            return Err(DonnError::ShapeMismatch(format!(
                "field values are {:?}, grid expects {:?}",
                values.dim(),
                grid.padded_shape()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    /// Mutable view for in-place pixel edits (a view cannot change the shape,
    /// so the grid invariant holds).
    pub fn values_mut(&mut self) -> ndarray::ArrayViewMut2<'_, Complex64> {
        self.values.view_mut()
    }

    pub fn into_values(self) -> Array2<Complex64> {
        self.values
    }

    /// Elementwise |value|^2; same dimensions, all entries >= 0.
    pub fn intensity(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }

    /// Sum of intensity over all padded pixels.
    pub fn total_energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Elementwise product, consuming self. Grids must match.
    pub fn elementwise_mul(mut self, mask: &Array2<Complex64>) -> Result<Self> {
        if mask.dim() != self.values.dim() {
            return Err(DonnError::ShapeMismatch(format!(
                "mask is {:?}, field is {:?}",
                mask.dim(),
                self.values.dim()
            )));
        }
        self.values *= mask;
        Ok(self)
    }

    pub fn scale(mut self, factor: Complex64) -> Self {
        self.values.mapv_inplace(|v| v * factor);
        self
    }

    pub fn add(mut self, other: &ComplexField) -> Result<Self> {
        if other.values.dim() != self.values.dim() {
            return Err(DonnError::ShapeMismatch(format!(
                "operand is {:?}, field is {:?}",
                other.values.dim(),
                self.values.dim()
            )));
        }
        self.values += &other.values;
        Ok(self)
    }

    /// Copy of the unpadded interior region, `ny x nx`.
    pub fn interior(&self) -> Array2<Complex64> {
        let p = self.grid.pad;
        self.values
            .slice(ndarray::s![p..p + self.grid.ny, p..p + self.grid.nx])
            .to_owned()
    }

    /// Build a padded field from an interior-sized array; the padding ring is zero.
    pub fn from_interior(grid: GridSpec, interior: &Array2<Complex64>) -> Result<Self> {
        if interior.dim() != (grid.ny, grid.nx) {
            return Err(DonnError::ShapeMismatch(format!(
                "interior is {:?}, grid expects {:?}",
                interior.dim(),
                (grid.ny, grid.nx)
            )));
        }
        let mut values = Array2::zeros(grid.padded_shape());
        let p = grid.pad;
        values
            .slice_mut(ndarray::s![p..p + grid.ny, p..p + grid.nx])
            .assign(interior);
        Ok(Self { grid, values })
    }

    /// Standard complex inner product `<self, other> = sum self * conj(other)`.
    pub fn inner_product(&self, other: &ComplexField) -> Complex64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a * b.conj())
            .sum()
    }
}
