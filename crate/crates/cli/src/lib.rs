//! Command-line front end and loopback service for the vien translation engine.

pub mod app;
pub mod service;
