pub mod augmenter;
pub mod error;
pub mod evalhost;
pub mod image;
pub mod inversion;
pub mod numerics;
pub mod par;
pub mod saliency;
pub mod scenegen;
pub mod seed;
pub mod semdir;
pub mod stylegan;

pub use error::{Error, Result};
