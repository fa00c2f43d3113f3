//! Experiment substrate: analytic classifiers, tile segmenter, image banks.

pub mod bank;
pub mod classifier;
pub mod segment;

pub use bank::{
    build_bank, compute_stats, filter_active_attributes, select_extremes, BankEntry, BankMeta, BankStats,
    Extremes, ImageBank, LatentMode, Split,
};
pub use classifier::{AttributeSpec, Classifier};
pub use segment::{segment, SemanticMask};
