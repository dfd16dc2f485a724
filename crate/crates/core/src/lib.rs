//! Mining frequent visiting patterns from presence traces.
//!
//! Pipeline: raw detections ([`ingest`]) become per-day binary interval
//! sequences ([`preprocess`]); a bounded temporal distance ([`tdist`]) is
//! precomputed over a segment tree ([`segtree`]) so any window's distance
//! matrix is a few merges away; sparse affinity propagation
//! ([`appropagation`]) picks a small set of exemplars, and [`patterns`] turns
//! the resulting clusters into per-bin presence probabilities.

pub mod appropagation;
pub mod error;
pub mod evalkit;
pub mod ingest;
pub mod par;
pub mod patterns;
pub mod preprocess;
pub mod segtree;
pub mod synth;
pub mod tdist;

pub use error::{Error, Result};
