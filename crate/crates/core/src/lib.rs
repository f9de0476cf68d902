//! Unpaired image-to-image translation with a frozen semantic constraint
//! that keeps an unwanted attribute fixed while content and style are
//! disentangled. Tensors, autograd, networks, losses, training and metrics,
//! with no dependency beyond `alloc`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod datasets;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod params;
pub mod rng;
pub mod semext;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use nets::{ArchConfig, Domain, TranslationModel};
pub use tensor::{Float, Tensor};
