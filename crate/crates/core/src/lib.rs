//! Synthetic-electorate election forecasting: persona synthesis, prompt
//! pipelines over pluggable backends, electoral tallies and evaluation.

pub mod backends;
pub mod context;
pub mod evaluate;
pub mod normal;
pub mod persona;
pub mod pipeline;
pub mod population;
pub mod respondents;
pub mod sampling;
pub mod seed;
pub mod tally;
