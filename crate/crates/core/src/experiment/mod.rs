//! End-to-end protocol: synthetic corpora, product holdout, preset sweep and
//! report emission.

mod corpus;
mod holdout;
mod report;

pub use corpus::{
    make_synthetic_corpus, Catalog, Component, ConditionColumnSpec, Corpus, CorpusSpec, TargetColumnSpec, Truth,
};
pub use holdout::{
    dimension_sweep, run_holdout, run_holdout_on, run_holdout_with_models, ColumnHistogram, ExperimentConfig, ExperimentReport,
    ExperimentSeeds, ModelRun, PresetResult, ProductHistograms, ReportProvenance, SweepRow,
};
pub use report::emit_report;

#[cfg(test)]
mod tests;
