//! Error-slice discovery over tagged datasets.
//!
//! The pipeline: an attribute schema and a tagged dataset ([`schema`]) are
//! indexed into per-tag bit vectors ([`index`]); every slice with enough
//! samples is enumerated once into a lattice ([`enumerate`]); each model's
//! per-sample performance is attached to rank error slices ([`analyze`]);
//! unseen error slices are predicted ([`predict`]) and new data is selected
//! for repair ([`repair`]). Attribute and tag generation over a multimodal
//! LLM client lives in [`generate`].

pub mod analyze;
pub mod bench;
pub mod bitset;
pub mod enumerate;
pub mod generate;
pub mod index;
pub mod llm;
pub mod predict;
pub mod prompts;
pub mod repair;
pub mod schema;
pub mod service;
pub mod synth;
pub mod workspace;
