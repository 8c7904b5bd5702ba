//! Deterministic analysis engine for auditing cultural bias in generated images.
//!
//! The pipeline runs in dependency order: [`corpus`] ingestion, latent-mode
//! discovery in [`modes`], country [`proximity`], traditional/modern
//! [`leaning`], culture-aware answer scoring in [`cultscore`], human ratings in
//! [`humaneval`], trajectories and correlations in [`analytics`], and finally
//! the [`report`] layer that orchestrates runs and writes tables.

pub mod analytics;
pub mod corpus;
pub mod cultscore;
pub mod fixture;
pub mod humaneval;
pub mod leaning;
pub mod modes;
pub mod proximity;
pub mod report;
pub mod seed;
pub mod vecmath;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
