//! HTTP service and command-line front end for the water-quality assistant.

pub mod app;
pub mod config;
pub mod service;
pub mod store;
