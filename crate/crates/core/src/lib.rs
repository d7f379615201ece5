//! Construction, enrichment and evaluation of a multilingual narration
//! corpus: ingest source books, segment them into narrations, align each
//! narration with its source, annotate it, group duplicates and score the
//! result.

pub mod align;
pub mod economics;
pub mod enrich;
pub mod evaluate;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod segment;
pub mod similarity;
pub mod store;
pub mod synthetic;
pub mod text;
