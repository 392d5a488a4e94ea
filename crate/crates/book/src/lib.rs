//! Doc-test shim for the guide. Each chapter is included as the docs of a
//! module, so `cargo test -p sbm-mcem-book` compiles and runs every snippet.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/likelihood.md")]
pub mod likelihood {}

#[doc = include_str!("../../../book/src/fitting.md")]
pub mod fitting {}

#[doc = include_str!("../../../book/src/parallel.md")]
pub mod parallel {}

#[doc = include_str!("../../../book/src/model-selection.md")]
pub mod model_selection {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
