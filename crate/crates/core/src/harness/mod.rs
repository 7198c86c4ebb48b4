//! Experiment orchestration and the synthetic data generator.

pub mod dataset;
pub mod experiment;
pub mod synth;

pub use dataset::{
    build_subdataset, load_stack, manifest_features, split_dataset, stack_features, Manifest, ManifestEntry,
    PipelineConfig,
};
pub use experiment::{
    emit_report, load_report, run_authentication_experiment, run_classification_experiment, run_experiment,
    ExperimentConfig, Report, Timing,
};
pub use synth::{synth_field_stack, synth_stack, write_corpus, SynthConfig, SynthStack, TypeProfile};
