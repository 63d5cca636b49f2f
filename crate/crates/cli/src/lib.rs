//! Admin commands and simulated participants for the evaluation server.

pub mod harness;
pub mod jobs;
pub mod plan;
