//! Clinical dialogue orchestration and ICD-10 evaluation.
//!
//! Records flow from [`record_pipeline`] into [`orchestrator`] sessions
//! driven by [`llm_client`] backends; [`metrics`] scores the submitted
//! codes with the hierarchy in [`icd10`], and [`rundir`] persists runs.

pub mod batch;
pub mod exact;
pub mod icd10;
pub mod llm_client;
pub mod metrics;
pub mod orchestrator;
pub mod record_pipeline;
pub mod rundir;
