//! Scalar free-space propagation between parallel planes.
//!
//! Two interchangeable discretizations of the same Fresnel diffraction
//! integral:
//!
//! * [`PropagationMethod::SpectralFresnel`] — multiply the field's 2-D DFT by
//!   the analytic transfer function `H(fx, fy) = exp(i k z) *
//!   exp(-i pi lambda z (fx^2 + fy^2))`. `|H| = 1`, so propagation is unitary
//!   on the padded grid.
//! * [`PropagationMethod::ConvFresnel`] — direct convolution with a kernel
//!   whose entries are exact Fresnel integrals of the quadratic phase over
//!   each source cell. The 2-D kernel separates into two 1-D kernels (one per
//!   axis); each 1-D pass is a zero-padded FFT convolution plus a rank-one
//!   correction that trims the outer half-cells of the first and last samples
//!   so the aperture ends exactly on the outermost sample centers. This is
//!   the discretization a physical bench obeys, and it is not exactly
//!   energy-preserving.
//!
//! Kernels are immutable after [`PropagationKernel::build`] and may be shared
//! across threads; [`propagate`]/[`adjoint_propagate`] allocate their own
//! scratch. The convolution kernel omits the global piston factor
//! `exp(i k z)` carried by the spectral transfer; intensities are unaffected.

pub mod fresnel;

pub use fresnel::{fresnel_integrals, FresnelPair};

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{DonnError, Result};
use crate::field::{ComplexField, GridSpec};

/// Discretization used for plane-to-plane propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationMethod {
    /// Analytic Fresnel transfer function applied in the DFT domain.
    SpectralFresnel,
    /// Separable cell-integrated Fresnel convolution in the spatial domain.
    ConvFresnel,
}

impl PropagationMethod {
    pub fn name(self) -> &'static str {
        match self {
            PropagationMethod::SpectralFresnel => "spectral-fresnel",
            PropagationMethod::ConvFresnel => "conv-fresnel",
        }
    }
}

impl std::str::FromStr for PropagationMethod {
    type Err = DonnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spectral" | "spectral-fresnel" | "spectral_fresnel" => {
                Ok(PropagationMethod::SpectralFresnel)
            }
            "conv" | "conv-fresnel" | "conv_fresnel" => Ok(PropagationMethod::ConvFresnel),
            other => Err(DonnError::InvalidGrid(format!(
                "unknown propagation method '{other}' (expected 'spectral' or 'conv')"
            ))),
        }
    }
}

/// One-axis piece of the separable convolution kernel.
///
/// Forward action on a length-`n` signal `u`:
///
/// ```text
/// out[j] = sum_s u[s] * kappa[(s - j) + n - 1]  -  u[0] * half_left[j]
///                                               -  u[n-1] * half_right[j]
/// ```
///
/// `kappa[d + n - 1]` is the cell-integrated Fresnel factor for source-target
/// offset `d`; the two correction vectors remove the half-cells that stick
/// out past the first and last sample centers.
struct AxisKernel {
    n: usize,
    fft_len: usize,
    /// FFT of the zero-padded, index-reversed `kappa` (forward pass).
    fwd_kernel_fft: Vec<Complex64>,
    /// FFT of the zero-padded conjugated `kappa` (adjoint pass).
    adj_kernel_fft: Vec<Complex64>,
    /// Raw kernel coefficients; retained for dense-matrix cross-checks.
    #[allow(dead_code)]
    kappa: Vec<Complex64>,
    half_left: Vec<Complex64>,
    half_right: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

/// `e^{-i pi/4} / sqrt(2)`: per-axis prefactor after substituting the
/// dimensionless Fresnel variable, i.e. `sqrt(k / (2 pi i z)) * sqrt(lambda z / 2)`.
const CELL_PREFACTOR: Complex64 = Complex64::new(0.5, -0.5);

fn fresnel_f(u: f64) -> Complex64 {
    let p = fresnel_integrals(u);
    Complex64::new(p.c, p.s)
}

impl AxisKernel {
    fn build(planner: &mut FftPlanner<f64>, n: usize, pitch: f64, wavelength: f64, z: f64) -> Self {
        let sigma = (2.0 / (wavelength * z)).sqrt();
        let half = 0.5 * pitch * sigma;

        // Cell integral for offset d = s - j over [d*pitch - pitch/2, d*pitch + pitch/2].
        let mut kappa = Vec::with_capacity(2 * n - 1);
        for d in -(n as isize - 1)..=(n as isize - 1) {
            let center = d as f64 * pitch * sigma;
            kappa.push(CELL_PREFACTOR * (fresnel_f(center + half) - fresnel_f(center - half)));
        }

        // Outer half-cells of source samples 0 and n-1, per target j.
        let mut half_left = Vec::with_capacity(n);
        let mut half_right = Vec::with_capacity(n);
        for j in 0..n {
            let d0 = (0 - j as isize) as f64 * pitch * sigma;
            half_left.push(CELL_PREFACTOR * (fresnel_f(d0) - fresnel_f(d0 - half)));
            let d1 = (n as isize - 1 - j as isize) as f64 * pitch * sigma;
            half_right.push(CELL_PREFACTOR * (fresnel_f(d1 + half) - fresnel_f(d1)));
        }

        // out[j] = linconv(u, rev(kappa))[j + n - 1]; a transform length of at
        // least 2n-1 keeps those output positions free of circular wrap.
        let fft_len = (2 * n - 1).next_power_of_two();
        let fft = planner.plan_fft_forward(fft_len);
        let ifft = planner.plan_fft_inverse(fft_len);

        let mut fwd = vec![Complex64::new(0.0, 0.0); fft_len];
        for (i, &k) in kappa.iter().rev().enumerate() {
            fwd[i] = k;
        }
        fft.process(&mut fwd);

        // Adjoint: out[s] = sum_j conj(A[j][s]) g[j]; the Toeplitz part turns
        // into a convolution with conj(kappa) (reversal and flip cancel).
        let mut adj = vec![Complex64::new(0.0, 0.0); fft_len];
        for (i, &k) in kappa.iter().enumerate() {
            adj[i] = k.conj();
        }
        fft.process(&mut adj);

        AxisKernel {
            n,
            fft_len,
            fwd_kernel_fft: fwd,
            adj_kernel_fft: adj,
            kappa,
            half_left,
            half_right,
            fft,
            ifft,
        }
    }

    /// Dense matrix of the forward action; used by tests and the adjoint
    /// derivation, small-n only.
    #[cfg(test)]
    fn dense_matrix(&self) -> Array2<Complex64> {
        let n = self.n;
        let mut a = Array2::zeros((n, n));
        for j in 0..n {
            for s in 0..n {
                let mut v = self.kappa[s + n - 1 - j];
                if s == 0 {
                    v -= self.half_left[j];
                }
                if s == n - 1 {
                    v -= self.half_right[j];
                }
                a[(j, s)] = v;
            }
        }
        a
    }

    fn apply(&self, input: &[Complex64], output: &mut [Complex64], scratch: &mut [Complex64]) {
        debug_assert_eq!(input.len(), self.n);
        let n = self.n;
        let buf = &mut scratch[..self.fft_len];
        buf[..n].copy_from_slice(input);
        buf[n..].fill(Complex64::new(0.0, 0.0));
        self.fft.process(buf);
        for (b, k) in buf.iter_mut().zip(&self.fwd_kernel_fft) {
            *b *= k;
        }
        self.ifft.process(buf);
        let scale = 1.0 / self.fft_len as f64;
        let u0 = input[0];
        let u_last = input[n - 1];
        for j in 0..n {
            output[j] = buf[j + n - 1] * scale
                - u0 * self.half_left[j]
                - u_last * self.half_right[j];
        }
    }

    fn apply_adjoint(
        &self,
        input: &[Complex64],
        output: &mut [Complex64],
        scratch: &mut [Complex64],
    ) {
        debug_assert_eq!(input.len(), self.n);
        let n = self.n;
        let buf = &mut scratch[..self.fft_len];
        buf[..n].copy_from_slice(input);
        buf[n..].fill(Complex64::new(0.0, 0.0));
        self.fft.process(buf);
        for (b, k) in buf.iter_mut().zip(&self.adj_kernel_fft) {
            *b *= k;
        }
        self.ifft.process(buf);
        let scale = 1.0 / self.fft_len as f64;
        for s in 0..n {
            output[s] = buf[s + n - 1] * scale;
        }
        let mut corr_left = Complex64::new(0.0, 0.0);
        let mut corr_right = Complex64::new(0.0, 0.0);
        for j in 0..n {
            corr_left += self.half_left[j].conj() * input[j];
            corr_right += self.half_right[j].conj() * input[j];
        }
        output[0] -= corr_left;
        output[n - 1] -= corr_right;
    }
}

struct SpectralKernel {
    /// Unit-modulus transfer samples, shape `(padded_ny, padded_nx)`, DC at `[0, 0]`.
    transfer: Array2<Complex64>,
    row_fft: Arc<dyn Fft<f64>>,
    row_ifft: Arc<dyn Fft<f64>>,
    col_fft: Arc<dyn Fft<f64>>,
    col_ifft: Arc<dyn Fft<f64>>,
}

enum KernelInner {
    Spectral(SpectralKernel),
    Conv { x: AxisKernel, y: AxisKernel },
}

/// Precomputed plane-to-plane propagation operator for one grid and distance.
pub struct PropagationKernel {
    method: PropagationMethod,
    grid: GridSpec,
    z: f64,
    inner: KernelInner,
}

/// DFT sample frequency (cycles per meter) for bin `index` of an `n`-point
/// transform with sample spacing `pitch`.
fn dft_frequency(index: usize, n: usize, pitch: f64) -> f64 {
    let i = index as isize;
    let n_i = n as isize;
    let m = if i <= (n_i - 1) / 2 { i } else { i - n_i };
    m as f64 / (n as f64 * pitch)
}

impl PropagationKernel {
    /// Build a kernel for propagating fields on `grid` a distance `z > 0`.
    pub fn build(method: PropagationMethod, grid: GridSpec, z: f64) -> Result<Self> {
        if !z.is_finite() || z <= 0.0 {
            return Err(DonnError::InvalidDistance(z));
        }
        let (rows, cols) = grid.padded_shape();
        let mut planner = FftPlanner::new();
        let inner = match method {
            PropagationMethod::SpectralFresnel => {
                let k = 2.0 * PI / grid.wavelength;
                let mut transfer = Array2::zeros((rows, cols));
                for q in 0..rows {
                    let fy = dft_frequency(q, rows, grid.pitch);
                    for p in 0..cols {
                        let fx = dft_frequency(p, cols, grid.pitch);
                        let phase = k * z - PI * grid.wavelength * z * (fx * fx + fy * fy);
                        transfer[(q, p)] = Complex64::from_polar(1.0, phase);
                    }
                }
                KernelInner::Spectral(SpectralKernel {
                    transfer,
                    row_fft: planner.plan_fft_forward(cols),
                    row_ifft: planner.plan_fft_inverse(cols),
                    col_fft: planner.plan_fft_forward(rows),
                    col_ifft: planner.plan_fft_inverse(rows),
                })
            }
            PropagationMethod::ConvFresnel => KernelInner::Conv {
                x: AxisKernel::build(&mut planner, cols, grid.pitch, grid.wavelength, z),
                y: AxisKernel::build(&mut planner, rows, grid.pitch, grid.wavelength, z),
            },
        };
        Ok(Self { method, grid, z, inner })
    }

    pub fn method(&self) -> PropagationMethod {
        self.method
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn distance(&self) -> f64 {
        self.z
    }

    /// Spectral transfer samples (`None` for the convolution method).
    pub fn transfer_function(&self) -> Option<&Array2<Complex64>> {
        match &self.inner {
            KernelInner::Spectral(s) => Some(&s.transfer),
            KernelInner::Conv { .. } => None,
        }
    }

    fn check_grid(&self, field: &ComplexField) -> Result<()> {
        if *field.grid() != self.grid {
            return Err(DonnError::GridMismatch(format!(
                "field grid {:?} does not match kernel grid {:?}",
                field.grid(),
                self.grid
            )));
        }
        Ok(())
    }

    fn apply_spectral(&self, s: &SpectralKernel, values: &mut Array2<Complex64>, adjoint: bool) {
        let (rows, cols) = values.dim();
        fft2(values, &s.row_fft, &s.col_fft);
        if adjoint {
            for (v, h) in values.iter_mut().zip(s.transfer.iter()) {
                *v *= h.conj();
            }
        } else {
            for (v, h) in values.iter_mut().zip(s.transfer.iter()) {
                *v *= h;
            }
        }
        fft2(values, &s.row_ifft, &s.col_ifft);
        let scale = 1.0 / (rows * cols) as f64;
        values.mapv_inplace(|v| v * scale);
    }

    fn apply_conv(
        &self,
        x: &AxisKernel,
        y: &AxisKernel,
        values: &mut Array2<Complex64>,
        adjoint: bool,
    ) {
        let (rows, cols) = values.dim();
        let mut scratch = vec![Complex64::new(0.0, 0.0); x.fft_len.max(y.fft_len)];
        let mut line = vec![Complex64::new(0.0, 0.0); cols.max(rows)];
        let mut out_line = vec![Complex64::new(0.0, 0.0); cols.max(rows)];

        for mut row in values.rows_mut() {
            let input = &mut line[..cols];
            for (dst, src) in input.iter_mut().zip(row.iter()) {
                *dst = *src;
            }
            let output = &mut out_line[..cols];
            if adjoint {
                x.apply_adjoint(input, output, &mut scratch);
            } else {
                x.apply(input, output, &mut scratch);
            }
            for (dst, src) in row.iter_mut().zip(output.iter()) {
                *dst = *src;
            }
        }

        for mut col in values.columns_mut() {
            let input = &mut line[..rows];
            for (dst, src) in input.iter_mut().zip(col.iter()) {
                *dst = *src;
            }
            let output = &mut out_line[..rows];
            if adjoint {
                y.apply_adjoint(input, output, &mut scratch);
            } else {
                y.apply(input, output, &mut scratch);
            }
            for (dst, src) in col.iter_mut().zip(output.iter()) {
                *dst = *src;
            }
        }
    }

    fn run(&self, field: &ComplexField, adjoint: bool) -> Result<ComplexField> {
        self.check_grid(field)?;
        let mut values = field.values().clone();
        match &self.inner {
            KernelInner::Spectral(s) => self.apply_spectral(s, &mut values, adjoint),
            KernelInner::Conv { x, y } => self.apply_conv(x, y, &mut values, adjoint),
        }
        ComplexField::from_values(self.grid, values)
    }
}

/// In-place 2-D FFT: rows with `row_fft`, then columns with `col_fft`.
/// Unnormalized; callers divide by the pixel count after a round trip.
fn fft2(values: &mut Array2<Complex64>, row_fft: &Arc<dyn Fft<f64>>, col_fft: &Arc<dyn Fft<f64>>) {
    let rows = values.dim().0;
    let mut scratch =
        vec![
            Complex64::new(0.0, 0.0);
            row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len())
        ];
    for mut row in values.rows_mut() {
        let slice = row.as_slice_mut().expect("row-major layout");
        row_fft.process_with_scratch(slice, &mut scratch[..row_fft.get_inplace_scratch_len()]);
    }
    let mut col_buf = vec![Complex64::new(0.0, 0.0); rows];
    for mut col in values.columns_mut() {
        for (b, v) in col_buf.iter_mut().zip(col.iter()) {
            *b = *v;
        }
        col_fft.process_with_scratch(&mut col_buf, &mut scratch[..col_fft.get_inplace_scratch_len()]);
        for (v, b) in col.iter_mut().zip(col_buf.iter()) {
            *v = *b;
        }
    }
}

/// Free-function form of [`PropagationKernel::build`].
pub fn build_kernel(
    method: PropagationMethod,
    grid: GridSpec,
    z: f64,
) -> Result<PropagationKernel> {
    PropagationKernel::build(method, grid, z)
}

/// Propagate `field` forward through `kernel`.
pub fn propagate(field: &ComplexField, kernel: &PropagationKernel) -> Result<ComplexField> {
    kernel.run(field, false)
}

/// Apply the exact conjugate-transpose of [`propagate`]'s linear map.
///
/// Satisfies `<P u, v> = <u, P^H v>` to roundoff; this is what gradient
/// backpropagation uses to pull camera-plane sensitivities back to each
/// modulator plane.
pub fn adjoint_propagate(field: &ComplexField, kernel: &PropagationKernel) -> Result<ComplexField> {
    kernel.run(field, true)
}
