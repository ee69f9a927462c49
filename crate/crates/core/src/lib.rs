//! Heterogeneous graph-based knowledge transfer for generalized zero-shot
//! learning.
//!
//! The pipeline has four stages, each in its own module:
//!
//! - [`ot`]: entropic optimal transport (Sinkhorn distance, Wasserstein
//!   barycenters, exact 1-D transport used as a test oracle).
//! - [`hgraph`]: the heterogeneous instance graph over seen classes. Each
//!   class is a complete subgraph; the instance closest to the class
//!   Wasserstein barycenter becomes the class representative, and
//!   representatives are linked to their k nearest representatives.
//! - [`gnn`]: the two-layer mean-aggregation network that maps class
//!   attribute vectors to visual-feature embeddings, trained with Adam.
//! - [`zsl`]: inductive embedding of unseen classes from attributes alone,
//!   nearest-embedding prediction and GZSL metrics.
//!
//! [`data`] holds the dataset file formats and the synthetic generator and
//! [`cli`] the command-line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod gnn;
pub mod hgraph;
pub mod ot;
pub mod zsl;

pub use error::{Error, Result};
