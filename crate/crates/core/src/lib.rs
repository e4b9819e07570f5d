//! Explanation bot for learning-path recommendations, grounded in a course
//! knowledge graph.

pub mod bot;
pub mod config;
pub mod context;
pub mod dialogue;
pub mod eval;
pub mod intent;
pub mod kg;
pub mod llm;
pub mod simulate;
pub mod synth;
pub mod text;
