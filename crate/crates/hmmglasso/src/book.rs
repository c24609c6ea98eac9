//! Keeps the guide's code in working order: every chapter of `book/` is
//! included as module documentation here, so its Rust snippets run under
//! `cargo test --doc`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/glasso.md")]
pub mod glasso {}

#[doc = include_str!("../../../book/src/em.md")]
pub mod em {}

#[doc = include_str!("../../../book/src/selection.md")]
pub mod selection {}

#[doc = include_str!("../../../book/src/pruning.md")]
pub mod pruning {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
