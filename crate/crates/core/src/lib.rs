//! Language-derived appearance elements.
//!
//! A pipeline that writes appearance descriptions from a template grammar,
//! embeds them, distills the embeddings into `K` centroids, makes those
//! centroids task-relevant with learnable prompts, and fuses the resulting
//! elements into visual query features through cross-attention trained with
//! a reference loss. Every differentiable piece is checked against finite
//! differences.

pub mod clustering;
pub mod container;
pub mod corpus;
pub mod embedding;
pub mod fidelity;
pub mod integration;
pub mod numerics;
pub mod prompting;
pub mod toy;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/prompting.md")]
    mod prompting {}
    #[doc = include_str!("../../../book/src/integration.md")]
    mod integration {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
