//! Fairness-aware retrieval-augmented generation toolkit.
//!
//! Ingests a JSONL corpus into overlapping token chunks, retrieves with
//! BM25 or a flat dense cosine index, and improves the fairness of the
//! generating model's answers in two ways: aligning the retriever to the
//! frozen model's fairness preferences by KL-divergence training
//! (`fairft`), or filtering retrieved documents through a two-step
//! fairness/utility prompting pipeline (`fairfilter`). The `evaluation`
//! module measures stereotype agreement rates and QA utility over any
//! pipeline, against a live HTTP model or a deterministic mock.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod fairfilter;
pub mod fairft;
pub mod gateway;
pub mod pipeline;
pub mod retrieval;
pub mod transform;
pub mod util;

pub use error::{FairRagError, Result};
