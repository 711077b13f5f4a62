//! Simulation, training, and adversarial-attack toolkit for complex-valued
//! reconfigurable diffractive optical neural networks built from cascaded
//! spatial light modulators (SLMs).
//!
//! The pipeline: a binarized input image is written onto an intensity-mode
//! SLM, the optical field diffracts through a stack of trainable phase-mode
//! SLM layers (reconfigurable diffractive arrays), and a camera integrates
//! the arriving intensity over per-label detector regions. Discrete per-pixel
//! grey levels are trained with a straight-through Gumbel-Softmax estimator,
//! and adversarial inputs are generated from the sign of the real part of the
//! complex input gradient (C-FGSM).
//!
//! Module map:
//! - [`field`]: complex field grids, intensity and energy reductions
//! - [`propagation`]: spectral Fresnel and convolutional Fresnel-Kirchhoff
//!   free-space propagation, plus Fresnel integrals
//! - [`slm`]: device lookup tables, Gumbel-Softmax layers, image encoding
//! - [`network`]: end-to-end forward model, detector readout, MSE loss
//! - [`autodiff`]: reverse-mode gradients through the fixed graph, Adam,
//!   and the training loop
//! - [`adversarial`]: complex-valued FGSM attack and attack reports
//! - [`dataio`]: IDX dataset parsing, resampling, PGM/CSV export, and a
//!   synthetic digit generator for hermetic runs
//! - [`calibrate`]: fringe-shift phase extraction and square-aperture
//!   phase scans
//! - [`checkpoint`]: the binary trained-model container

pub mod adversarial;
pub mod autodiff;
pub mod calibrate;
pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod field;
pub mod network;
pub mod propagation;
pub mod slm;

pub use error::{DonnError, Result};
pub use field::{ComplexField, GridSpec};
pub use propagation::{adjoint_propagate, propagate, PropagationKernel, PropagationMethod};
