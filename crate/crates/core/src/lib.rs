//! Deterministic simulation of randomized programs over concurrent objects
//! under a strong adversary.

pub mod adversary;
pub mod engine;
pub mod exec;
pub mod lincheck;
pub mod netsim;
pub mod objects;
pub mod progdsl;
pub mod value;
