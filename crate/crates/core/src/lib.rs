//! Erasure-resilient, X-secure, T-private information retrieval over an
//! N-sum box, simulated exactly over prime fields.
//!
//! The crate is layered bottom-up:
//!
//! * [`gf`] prime-field residues,
//! * [`linalg`] dense matrices over a prime field,
//! * [`codes`] Cauchy-Vandermonde (CSA), GRS and row-scaled CSA generators,
//! * [`nsumbox`] the N-sum box as a linear transfer function `y = M x`,
//! * [`protocol`] rate planning, storage, queries, answers, erasures and decoding,
//! * [`verify`] property suites that produce serializable reports.

pub mod codes;
pub mod gf;
pub mod linalg;
pub mod nsumbox;
pub mod protocol;
pub mod verify;

pub use gf::{Fe, FieldSpec, GfError};
pub use linalg::{LinalgError, Mat};
