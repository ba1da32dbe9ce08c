//! Project store, stage orchestration, report export and the curation HTTP
//! API for the transcript theme pipeline.

pub mod api;
pub mod config;
pub mod export;
pub mod fixture;
pub mod pipeline;
pub mod stage;
pub mod store;
