//! Leave-out conditional association testing for tree-structured
//! compositional count data.
//!
//! The pipeline runs ingest → distances → PERMANOVA-style R², then asks how
//! much of that association disappears when one taxon (and everything below
//! it) is zeroed out. [`cat::cat_test`] is the entry point for that; the
//! [`simulate`] module drives power studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod betadiv;
pub mod cat;
pub mod error;
pub mod ingest;
pub mod numeric;
pub mod permanova;
pub mod phylo;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
