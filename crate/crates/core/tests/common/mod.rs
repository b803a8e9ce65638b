//! Helpers shared by the integration test targets.

#![allow(dead_code)]

pub mod gradcheck;
pub mod oracle;
