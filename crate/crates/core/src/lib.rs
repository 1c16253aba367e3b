//! Diversity-aware subset selection for retrieval pipelines.
//!
//! Retrieval-augmented systems that pick the top-k candidates by relevance
//! score alone tend to return near-duplicates: the score ranks each
//! candidate in isolation, so a pool full of paraphrases of one passage
//! crowds out the complementary evidence a multi-hop question needs. This
//! crate treats context assembly as subset selection under a determinantal
//! point process (DPP): a positive semi-definite kernel scores every subset
//! by the volume its embeddings span, so redundant items shrink the subset's
//! determinant and diverse items grow it.
//!
//! The pieces, bottom to top:
//!
//! * [`kernel`] — Gram/quality kernel construction and subset determinants.
//! * [`map_infer`] — fast greedy MAP selection with incremental Cholesky
//!   updates, plus exhaustive and Schur-complement oracles.
//! * [`adapter`] — a small bottleneck MLP that re-embeds candidates before
//!   kernel construction, with an exact analytic backward pass.
//! * [`objective`] — subset-margin and log-likelihood training objectives,
//!   determinant gradients, and an Adam loop for the adapter.
//! * [`pipeline`] — candidate pools, selection modes, ranking metrics,
//!   margin diagnostics, and a synthetic redundancy benchmark.
//! * [`io`] — JSONL readers/writers for embeddings, scores, tuples, pools.
//! * [`oracle`] — randomized self-checks (partition identity, gradient
//!   finite differences, bound suites) shared by tests and the CLI.

pub mod adapter;
pub mod io;
pub mod kernel;
pub mod map_infer;
pub mod objective;
pub mod oracle;
pub mod pipeline;

mod combi;
mod linalg;
