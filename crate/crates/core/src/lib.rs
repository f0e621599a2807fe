//! Order-agnostic masked diffusion over paired antibody chains, with
//! soft-value guided decoding and property-oracle evaluation.
//!
//! The crate is organized as a pipeline:
//!
//! * [`seq`]: the closed 23-token alphabet and the diffusion state.
//! * [`corpus`]: paired FASTA and assay-table ingestion.
//! * [`artifact`]: digest-checked binary container for trained models.
//! * [`denoiser`]: count-based conditional denoiser and pseudo-log-likelihood.
//! * [`sampler`]: temperature softmax, decoding-order policies, generation.
//! * [`oracle`]: k-mer features, ridge property oracles, identity-clustered
//!   cross-validation.
//! * [`guidance`]: soft value-based branch selection during decoding.
//! * [`evalkit`]: pairwise identity, ECDFs, similarity networks, enrichment.
//! * [`toy`]: synthetic corpora with planted family structure for tests and
//!   demos.
//!
//! Every random draw in the crate flows through an explicitly seeded
//! [`ChaCha20Rng`] in a documented order, so all pipelines are replayable
//! bit-for-bit from their seeds.

pub mod artifact;
pub mod corpus;
pub mod denoiser;
pub mod evalkit;
pub mod guidance;
pub mod oracle;
pub mod sampler;
pub mod seq;
pub mod toy;

pub use rand_chacha::ChaCha20Rng;
