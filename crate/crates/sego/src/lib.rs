//! sego: sentence ordering with sentence-entity graphs.
//!
//! Given a shuffled set of annotated sentences, the library builds a graph
//! whose nodes are sentences and repeated-noun entities, encodes it with a
//! gated graph recurrent network on top of Bi-LSTM sentence vectors, and
//! decodes the most coherent order with a pointer network. Everything runs
//! on a small reverse-mode tensor tape, so the whole pipeline trains at
//! desk scale with no external framework.

pub mod bilstm;
pub mod data;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod scalar;
pub mod synth;
pub mod tape;
