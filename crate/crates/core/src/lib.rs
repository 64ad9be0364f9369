//! Compositional steering tokens at desk scale.
//!
//! A small decoder-only language model is pretrained to follow token-level
//! behavior instructions. Steering tokens are then learned by
//! self-distillation: one input embedding per behavior, plus a single
//! `<and>` embedding that composes them, with every model weight frozen.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! and everything else that touches the OS live in the `steertok` crate.
#![no_std]

extern crate alloc;

pub mod behaviors;
pub mod datagen;
pub mod distill;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod rng;
pub mod vocab;

pub use error::{Error, Result};
