//! Corpus forging and evaluation library for mobile-app UI interaction traces.
//!
//! The pipeline turns raw app interaction traces (screenshots, view
//! hierarchies, tap annotations) into four caption sample sets:
//!
//! * element captions — one short label per filtered view-hierarchy element
//! * element-list captions — the comma-joined element captions of a screen
//! * screen captions — one-sentence summaries fetched from an LLM provider
//! * foresight triplets — (screen, action bbox, caption of the *next* screen)
//!
//! On top of the corpus builders, [`loss`] implements the cross-entropy
//! language-modeling objective (with analytic gradients) used to train on
//! those sets, and [`cider`] / [`tasks`] implement the evaluation protocols
//! for captioning, tappability, and grounding.

pub mod bbox;
pub mod cider;
pub mod elements;
pub mod foresight;
pub mod io;
pub mod loss;
pub mod manifest;
pub mod screens;
pub mod tasks;
pub mod trace;

pub use bbox::BBox;
