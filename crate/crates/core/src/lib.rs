//! Known-item search evaluation: plans, judging, hint generation, retrieval
//! baseline and result aggregation.

pub mod analytics;
pub mod clock;
pub mod domain;
pub mod evalserver;
pub mod events;
pub mod filters;
pub mod fixtures;
pub mod frame;
pub mod judge;
pub mod retrieval;
pub mod synth;
