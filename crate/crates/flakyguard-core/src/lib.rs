//! Automated repair pipeline for flaky tests.
//!
//! The flow: reproduce the flaky failure, instrument a shadow copy of the
//! workspace to trace a dynamic call graph of the failing runs, collect a
//! small context of relevant production functions by LLM-guided graph
//! traversal, then run nested generate–apply–validate loops until a patch
//! survives the same rerun budget that reproduced the flake.

pub mod adapter;
pub mod dcg;
pub mod gateway;
pub mod goparse;
pub mod instrument;
pub mod orchestrate;
pub mod prompts;
pub mod reproduce;
pub mod simplify;
pub mod traverse;
