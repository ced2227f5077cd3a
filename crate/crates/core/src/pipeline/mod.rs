//! Experiment configuration, dataset construction, training, evaluation,
//! the sparsity study and image export.

mod config;
mod dataset;
mod evaluate;
mod export;
mod stats;
mod study;
mod train;

pub use config::{
    desk_sphere_spec, DatasetSizes, ExperimentConfig, MediumConfig, PhantomConfig, SensorConfig, SimGeometry,
    SimulationConfig, TrainingConfig, SCHEMA_VERSION,
};
pub use dataset::{
    build_dataset, load_manifest, load_split, make_pair, reconstruct, DatasetManifest, Pair, SampleEntry, Split,
    MANIFEST_FILE,
};
pub use evaluate::{column, read_csv, score_images, write_csv, EvalRow, TIME_REVERSAL};
pub use export::{export_image, project, read_pgm, scale_to_u16, write_pgm, ExportMode};
pub use stats::{average_ranks, wilcoxon_signed_rank, Summary, Wilcoxon, EXACT_LIMIT};
pub use study::{
    method_labels, run_level, run_study, summarize_level, Comparison, LevelReport, StudyReport, EVALUATION_FILE,
    SUMMARY_CSV, SUMMARY_TABLE,
};
pub use train::{
    init_seed, predict, run_inference, run_training, train_epochs, Checkpoint, Snapshot, Trainer, TrainingHistory,
    CHECKPOINT_FILE, HISTORY_FILE,
};
