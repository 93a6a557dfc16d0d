//! The chapters of the guide, included here so `cargo test` runs every Rust
//! sample they contain.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tensors-and-layers.md")]
pub mod tensors_and_layers {}

#[doc = include_str!("../../../book/src/losses-and-optimizer.md")]
pub mod losses_and_optimizer {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}

#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
