//! Policy-gradient detection of false positives in distantly supervised
//! relation-extraction data, and their redistribution into the negative set.

pub mod agent;
pub mod cli;
pub mod corpus;
pub mod evaluate;
pub mod config;
pub mod featurize;
pub mod pipeline;
pub mod redistribute;
pub mod rltrain;
pub mod seeds;
pub mod tinynn;
