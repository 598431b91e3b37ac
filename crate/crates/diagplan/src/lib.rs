//! File formats, dataset ingestion, icon retrieval, model clients and the
//! plan-editing service built on `diagplan-core`.

pub mod cli;
pub mod dataset;
pub mod icons;
pub mod io;
pub mod llm_client;
pub mod service;

pub use diagplan_core as core;
