//! Adam optimizer over per-layer logit arrays.

use ndarray::Array3;

use crate::error::{DonnError, Result};

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array3<f64>>,
    v: Vec<Array3<f64>>,
    step: u64,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 0.5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamState {
    /// Zero-moment state shaped like the parameter arrays.
    pub fn new(shapes: &[Array3<f64>]) -> Self {
        Self {
            m: shapes.iter().map(|p| Array3::zeros(p.dim())).collect(),
            v: shapes.iter().map(|p| Array3::zeros(p.dim())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [Array3<f64>],
    grads: &[Array3<f64>],
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(DonnError::ShapeMismatch(format!(
            "{} parameter arrays, {} gradients, {} states",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
        if p.dim() != g.dim() {
            return Err(DonnError::ShapeMismatch(format!(
                "layer {i}: params {:?} vs grads {:?}",
                p.dim(),
                g.dim()
            )));
        }
        if !g.iter().all(|x| x.is_finite()) {
            return Err(DonnError::Numeric(format!("non-finite gradient in layer {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        ndarray::Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
                *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_of(vals: &[f64]) -> Vec<Array3<f64>> {
        vec![Array3::from_shape_vec((1, 1, vals.len()), vals.to_vec()).unwrap()]
    }

    #[test]
    fn first_step_is_normalized_gradient_direction() {
        let mut params = params_of(&[1.0, -2.0, 0.5]);
        let grads = params_of(&[0.3, -0.7, 0.0]);
        let mut state = AdamState::new(&params);
        let hp = AdamParams { lr: 0.1, ..Default::default() };
        adam_step(&mut params, &grads, &mut state, &hp).unwrap();
        // bias-corrected first step: p -= lr * g / (|g| + eps)
        let expect = [
            1.0 - 0.1 * 0.3 / (0.3 + 1e-8),
            -2.0 + 0.1 * 0.7 / (0.7 + 1e-8),
            0.5,
        ];
        for (p, e) in params[0].iter().zip(expect.iter()) {
            assert!((p - e).abs() < 1e-12, "{p} vs {e}");
        }
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = params_of(&[1.0, 2.0]);
        let before = params.clone();
        let grads = params_of(&[0.0, 0.0]);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &AdamParams::default()).unwrap();
        assert_eq!(params[0], before[0]);
    }

    #[test]
    fn constant_gradient_moves_monotonically_against_sign() {
        let mut params = params_of(&[0.0]);
        let grads = params_of(&[0.4]);
        let mut state = AdamState::new(&params);
        let hp = AdamParams { lr: 0.05, ..Default::default() };
        let mut last = 0.0;
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, &hp).unwrap();
            let now = params[0][(0, 0, 0)];
            assert!(now < last, "positive gradient must decrease the parameter");
            last = now;
        }
    }

    #[test]
    fn shape_and_finiteness_checks() {
        let mut params = params_of(&[1.0, 2.0]);
        let mut state = AdamState::new(&params);
        let wrong_shape = params_of(&[1.0]);
        assert!(adam_step(&mut params, &wrong_shape, &mut state, &AdamParams::default()).is_err());
        let nan = params_of(&[f64::NAN, 0.0]);
        assert!(adam_step(&mut params, &nan, &mut state, &AdamParams::default()).is_err());
        // state untouched by failed calls
        assert_eq!(state.step_count(), 0);
    }
}
