//! Reverse-mode gradients through the optical stack.
//!
//! Gradients of the real-valued loss with respect to complex quantities are
//! stored as `G = dL/dRe + i dL/dIm` (twice the Wirtinger conjugate
//! derivative), so the real and imaginary parts of every gradient array are
//! directly comparable against finite differences of the corresponding real
//! and imaginary input parts.
//!
//! The chain, walked backwards:
//!   * intensity seed `G_w = 2 (dL/dI) w` at the camera, where `dL/dI`
//!     accounts for both the region sums and the total-energy normalizer of
//!     the score vector;
//!   * each propagation is undone by the adjoint kernel (`G_in = P^H G_out`);
//!   * each layer splits `G` into the arriving-field part `conj(t) * G` and
//!     a transmission part `conj(u) * G`, which flows into the logits
//!     through the straight-through estimator: the sampled one-hot forward
//!     is treated as if it had been the softmax relaxation, so the logit
//!     gradient is the exact gradient of `(p.T) exp(i p.Phi)` with
//!     `p = softmax((log theta + g)/tau)`.

pub mod adam;
pub mod train;

pub use adam::{adam_step, AdamParams, AdamState};
pub use train::{train, EpochStats, TrainConfig, TrainReport};

use ndarray::{Array2, Array3, Zip};
use num_complex::Complex64;

use crate::error::{DonnError, Result};
use crate::field::ComplexField;
use crate::network::{mse_loss, ForwardTrace, NetworkModel, TransmissionMode};
use crate::propagation::adjoint_propagate;
use crate::slm::{GumbelLayer, SoftEval};

/// All gradients produced by one backward pass.
pub struct GradientBundle {
    /// dL/d logits for each layer, in layer order.
    pub logits: Vec<Array3<f64>>,
    /// dL/d input field over the padded grid: `dL/dRe + i dL/dIm`.
    pub input: ComplexField,
    /// Loss value of the traced forward pass.
    pub loss: f64,
}

/// Full backward pass: logit gradients for every layer plus the input-field
/// gradient (used by the adversarial attack).
pub fn backward(
    model: &NetworkModel,
    trace: &ForwardTrace,
    target_slot: usize,
) -> Result<GradientBundle> {
    backward_impl(model, trace, target_slot, true)
}

/// Backward pass that skips the final adjoint propagation back to the input
/// plane. Training only updates logits, so this saves one propagation per
/// sample; `bundle.input` is zero.
pub fn backward_logits_only(
    model: &NetworkModel,
    trace: &ForwardTrace,
    target_slot: usize,
) -> Result<GradientBundle> {
    backward_impl(model, trace, target_slot, false)
}

fn backward_impl(
    model: &NetworkModel,
    trace: &ForwardTrace,
    target_slot: usize,
    want_input: bool,
) -> Result<GradientBundle> {
    let k = model.num_layers();
    if trace.arriving.len() != k || trace.transmitted.len() != k {
        return Err(DonnError::ShapeMismatch(format!(
            "trace holds {} layer snapshots, model has {k} layers",
            trace.arriving.len()
        )));
    }
    if let Some(noise) = &trace.noise {
        if noise.len() != k {
            return Err(DonnError::ShapeMismatch(format!(
                "{} noise arrays for {k} layers",
                noise.len()
            )));
        }
    }
    if target_slot >= trace.score.len() {
        return Err(DonnError::Dataset(format!(
            "target slot {target_slot} out of range for {} slots",
            trace.score.len()
        )));
    }
    if !trace.region_slots.contains(&target_slot) {
        return Err(DonnError::Dataset(format!(
            "target slot {target_slot} has no detector region"
        )));
    }

    let grid = *model.grid();
    let loss = mse_loss(&trace.score, target_slot);
    let zeros = || {
        model
            .layers()
            .iter()
            .map(|l| Array3::zeros(l.logits().dim()))
            .collect::<Vec<_>>()
    };

    let energy = trace.camera.total_energy();
    if !(energy > 0.0) {
        // dark camera: the score vector sits on a flat plateau
        return Ok(GradientBundle { logits: zeros(), input: ComplexField::zeros(grid), loss });
    }

    // dL/dI over the padded camera plane. With score_s = S_s / E and E the
    // total energy, dL/dI_p = a_{s(p)}/E - B where a_s = dL/dscore_s and
    // B = sum_s a_s score_s / E hits every pixel through the normalizer.
    let n_slots = trace.score.len() as f64;
    let mut background = 0.0; // -B
    let mut region_coeff = Vec::with_capacity(trace.region_slots.len());
    for &slot in &trace.region_slots {
        let target = if slot == target_slot { 1.0 } else { 0.0 };
        let a = 2.0 * (trace.score[slot] - target) / n_slots;
        background -= a * trace.score[slot] / energy;
        region_coeff.push(a / energy);
    }
    let mut dldi = Array2::from_elem(grid.padded_shape(), background);
    let pad = grid.pad;
    for (region, &coeff) in model.detectors().regions().iter().zip(region_coeff.iter()) {
        for row in 0..region.height {
            for col in 0..region.width {
                dldi[(pad + region.row0 + row, pad + region.col0 + col)] += coeff;
            }
        }
    }

    // intensity seed: I = |w|^2, so G_w = 2 (dL/dI) w
    let gw_values = Zip::from(&dldi)
        .and(trace.camera.values())
        .map_collect(|&d, &w| 2.0 * d * w);
    let gw = ComplexField::from_values(grid, gw_values)?;

    // undo the final propagation
    let mut g = adjoint_propagate(&gw, model.kernel())?;

    let mut logits_rev = Vec::with_capacity(k);
    for l in (0..k).rev() {
        let layer = &model.layers()[l];
        let noise = trace.noise.as_ref().map(|nv| &nv[l]);
        let eval = layer.soft_eval(noise);
        logits_rev.push(logit_gradient(layer, &eval, &trace.arriving[l], &g));

        // gradient w.r.t. the arriving field: conj(t) * G with the
        // transmission the forward pass actually applied
        let t = match trace.mode {
            TransmissionMode::Hard => layer.hard_transmission(noise),
            TransmissionMode::Soft => {
                let values = Zip::from(&eval.amplitude)
                    .and(&eval.phase)
                    .map_collect(|&a, &p| Complex64::from_polar(a, p));
                ComplexField::from_values(grid, values)?
            }
        };
        let gu_values = Zip::from(g.values())
            .and(t.values())
            .map_collect(|&gv, &tv| tv.conj() * gv);
        let gu = ComplexField::from_values(grid, gu_values)?;
        if l > 0 || want_input {
            g = adjoint_propagate(&gu, model.kernel())?;
        } else {
            g = ComplexField::zeros(grid);
        }
    }
    logits_rev.reverse();

    let input = if want_input { g } else { ComplexField::zeros(grid) };
    Ok(GradientBundle { logits: logits_rev, input, loss })
}

/// Straight-through logit gradient for one layer.
///
/// With `G` the gradient at the layer output `f = t * u` (doubled Wirtinger
/// convention), the gradient at the transmission node is `G_t = conj(u) G`.
/// The soft value is `h = A exp(i phi)` with `A = p.T`, `phi = p.Phi`, so
///   dL/dA   = Re(G_t e^{-i phi}),
///   dL/dphi = A Im(G_t e^{-i phi}),
///   dL/dp_v = dL/dA T[v] + dL/dphi Phi[v],
/// and the softmax Jacobian contracts to
///   dL/dlogit_v = p_v (q_v - sum_u q_u p_u) / tau.
fn logit_gradient(
    layer: &GumbelLayer,
    eval: &SoftEval,
    arriving: &ComplexField,
    g_out: &ComplexField,
) -> Array3<f64> {
    let (ny, nx, k) = layer.logits().dim();
    let tau = layer.temperature();
    let amps = layer.lut().amplitudes();
    let phis = layer.lut().phases();
    let mut grad = Array3::zeros((ny, nx, k));
    for r in 0..ny {
        for c in 0..nx {
            let gt = arriving.values()[(r, c)].conj() * g_out.values()[(r, c)];
            let a = eval.amplitude[(r, c)];
            let phi = eval.phase[(r, c)];
            let rotated = gt * Complex64::from_polar(1.0, -phi);
            let dl_da = rotated.re;
            let dl_dphi = a * rotated.im;
            let mut qbar = 0.0;
            for v in 0..k {
                let q = dl_da * amps[v] + dl_dphi * phis[v];
                grad[(r, c, v)] = q;
                qbar += q * eval.probabilities[(r, c, v)];
            }
            for v in 0..k {
                let p = eval.probabilities[(r, c, v)];
                grad[(r, c, v)] = p * (grad[(r, c, v)] - qbar) / tau;
            }
        }
    }
    grad
}
