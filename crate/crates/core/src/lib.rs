//! Causal attribution of failures in multi-stage generation pipelines.
//!
//! A pipeline is modelled as a DAG of intermediate features. Intervening on
//! a combination of features (replacing their values with plausible but
//! wrong ones) and rerunning the pipeline tells whether that combination is
//! enough to make the task fail; [`search`] finds the minimal such
//! combinations under an execution budget, and [`aggregate`] and [`apps`]
//! turn per-problem results into feature rankings, pruning plans and repair
//! priorities.

pub mod aggregate;
pub mod apps;
pub mod cli;
pub mod execution;
pub mod influence;
pub mod intervene;
pub mod model;
pub mod oracle;
pub mod par;
pub mod report;
pub mod search;
pub mod seed;
