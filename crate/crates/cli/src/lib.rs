//! Library surface of the intentforge CLI: configuration resolution, the
//! end-to-end pipeline, and the staged ablation runner. The binary in
//! `main.rs` is a thin argument-parsing layer over these functions.

pub mod ablate;
pub mod config;
pub mod pipeline;
