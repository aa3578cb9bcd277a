//! Updatable learned indexes over sorted 64-bit keys.
//!
//! The crate bundles four things that are usually studied together but
//! rarely ship together:
//!
//! * two concurrent learned ordered indexes — a gapped-array design
//!   ([`GappedIndex`]) and a collision-chain design ([`ChainIndex`]) —
//!   plus a conventional B+-tree baseline ([`BplusTree`]), all behind
//!   one [`OrderedIndex`] contract;
//! * optimal ε-approximate piecewise-linear segmentation of a dataset's
//!   CDF and the derived two-dimensional hardness metric ([`pla`]);
//! * a synthetic key generator that takes target global/local hardness
//!   as input ([`datagen`]);
//! * a benchmark harness reproducing the usual workload mixes, latency
//!   sampling and memory accounting at desk scale ([`bench`]).

pub mod bench;
pub mod btree;
pub mod chain;
pub mod contract;
pub mod dataset;
pub mod datagen;
pub mod gapped;
pub mod oracle;
pub mod pla;
pub mod sync;

pub use btree::BplusTree;
pub use chain::{ChainConfig, ChainIndex};
pub use contract::{CountersSnapshot, OrderedIndex};
pub use dataset::{Dataset, DatasetError, Key, Payload};
pub use gapped::{GappedConfig, GappedIndex};
pub use pla::{HardnessProfile, LinearModel, PlaSegment, PlaSegmentation};
