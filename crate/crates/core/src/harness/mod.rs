//! Data collection, training drivers, the four-controller evaluation and
//! artifact emission.

pub mod collect;
pub mod config;
pub mod emit;
pub mod episode;
pub mod evaluate;
pub mod gradcheck;
pub mod pipeline;

pub use config::{digest, output_dir, Config, OUTPUT_DIR_VAR};
pub use emit::{aggregate_and_emit, results_table_csv, TABLE_ROWS};
pub use episode::{run_episode, ControllerSpec, EpisodeOptions, Networks};
pub use evaluate::{directional_checks, exceeds_by, OrderingCheck, run_evaluation, run_evaluation_with, Evaluation, EpisodeSummary, EvaluationReport};
pub use gradcheck::{gradcheck_suite, GradCheckEntry};
pub use pipeline::{CollisionSummary, Pipeline};
