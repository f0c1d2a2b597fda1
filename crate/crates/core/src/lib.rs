//! Training-free conditional layout generation.
//!
//! The engine retrieves exemplar layouts with a transport-based similarity,
//! asks an LLM for candidate drafts, keeps the best one under a ranker, and
//! refines it through a fixed sequence of staged prompts. Layouts travel to
//! and from the LLM as HTML snippets.

pub mod dataset;
pub mod gateway;
pub mod layout;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod render;
pub mod retrieval;

pub use layout::{BBox, Canvas, Element, Layout};
