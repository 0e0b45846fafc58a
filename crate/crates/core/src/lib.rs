//! Diffusion decoders for quantum LDPC codes.
//!
//! The crate covers GF(2) algebra, CSS and bivariate bicycle code
//! construction, error sampling and detector error models, a small autodiff
//! engine, the masked and continuous diffusion networks, training, classical
//! baselines and experiment drivers.

pub mod baselines;
pub mod codes;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod gf2;
pub mod nn;
pub mod noise;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
