//! Multi-stage document processing: classify, split, parse, extract and
//! validate business documents, with a human review loop whose corrections
//! feed versioned prompts back into the pipeline.

pub mod classify;
pub mod config;
pub mod endpoint;
pub mod engine;
pub mod eval;
pub mod events;
pub mod extract;
pub mod fixtures;
pub mod model;
pub mod normalize;
pub mod parse;
pub mod pftfi;
pub mod service;
pub mod split;
pub mod state;
pub mod store;
pub mod sustain;
pub mod validate;
pub mod workspace;
