//! Multi-focal microscope image classification and authentication.

pub mod authentication;
pub mod classifiers;
pub mod error;
pub mod features;
pub mod focus;
pub mod harness;
pub mod image;
pub mod segmentation;
pub mod selection;

pub use error::{Error, Result};
