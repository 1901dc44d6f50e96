//! intentforge: learn clustering-friendly utterance embeddings with a staged
//! contrastive training scheme, cluster them with k-means under automatic
//! silhouette-based model selection, and score induced intents against
//! references with Hungarian-aligned metrics.
//!
//! The crate is organized around the pipeline's data flow:
//!
//! - [`corpus`] — dialogue transcripts, task filters, consecutive-pair mining
//! - [`encoder`] — hashed text features plus a trainable projection head
//! - [`augment`] — deterministic token-level augmentation
//! - [`neighborhood`] — exact KNN search and batch adjacency construction
//! - [`contrastive`] — batch contrastive losses and their exact gradients
//! - [`cluster`] — k-means, silhouette scoring, k selection, soft assignments
//! - [`trainer`] — the three training stages and the Adam optimizer
//! - [`metrics`] — Hungarian-aligned ACC/NMI/ARI/P/R/F1 and downstream eval
//! - [`project`] — PCA projection for 2-D diagnostics
//! - [`synth`] — seeded synthetic fixtures for tests and smoke runs

pub mod augment;
pub mod cluster;
pub mod contrastive;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod neighborhood;
pub mod project;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
