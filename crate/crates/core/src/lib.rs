//! Core of the slideforge pipeline: turns a slide deck into a structured
//! extract, retrieves supporting references from a local vector index and
//! a web-search API, and drives an LLM chapter by chapter to assemble a
//! Markdown textbook.

pub mod deck;
pub mod exec;
pub mod http;
pub mod kb;
pub mod retrieval;
pub mod textbook;

pub use exec::Execution;
