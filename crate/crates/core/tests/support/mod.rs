//! Shared fixtures and oracles for the acceptance suite.

#![allow(dead_code)]

pub mod fixtures;
pub mod oracle;
pub mod properties;
