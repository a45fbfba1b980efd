//! Hierarchical subspace HMM (H-SHMM) for acoustic unit discovery.
//!
//! Stage one estimates a hyper-subspace shared by transcribed source languages;
//! stage two keeps it frozen and discovers units on an untranscribed target
//! language with a truncated stick-breaking phone loop.

pub mod checkpoint;
pub mod decode;
pub mod error;
pub mod eval;
pub mod features;
pub mod inference;
pub mod math;
pub mod model;
pub mod rng;
pub mod subspace;
pub mod synthgen;

pub use checkpoint::{read_checkpoint, write_checkpoint, HshmmModel, LanguageModel};
pub use error::{Error, ErrorKind, Result};
