//! Core of a task-oriented chatbot for water-quality, beach-quality and
//! water-availability questions.
//!
//! The pipeline for one user message is [`text`] → [`nlu`] → [`dialogue`]
//! → [`knowledge`], driven by [`engine::ModelBundle`]. Training data
//! formats live in [`corpus`]; metrics and interactive teaching in [`eval`].

pub mod corpus;
pub mod dialogue;
pub mod engine;
pub mod eval;
pub mod knowledge;
pub mod linalg;
pub mod nlu;
pub mod parallel;
pub mod text;
