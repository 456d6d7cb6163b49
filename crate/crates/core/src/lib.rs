// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod analysis;
pub mod circuit;
pub mod cli;
pub mod error;
pub mod intervention;
pub mod model;
pub mod patching;
pub mod report;
pub mod tasks;

pub use error::{Error, Result};
