//! Toolkit for building, cleaning, scoring and curating multi-turn
//! tool-calling trajectories, and for preparing masked SFT and DPO data.

pub mod augment;
pub mod canonical;
pub mod clean;
pub mod concurrency;
pub mod curation;
pub mod error;
pub mod io;
pub mod judge;
pub mod metrics;
pub mod model;
pub mod preference;
pub mod remote;
pub mod rollout;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use model::{
    Arguments, CategoryRegistry, JudgedMetric, Message, MetricReport, MetricScores, Outcome, Query, Role, Tier,
    ToolCall, ToolCatalog, ToolSpec, Trajectory,
};
