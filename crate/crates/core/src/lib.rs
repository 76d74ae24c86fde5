//! Spatial-relationship prompt corpus and VISOR evaluation.
//!
//! The crate generates prompts that ask for two objects in a given spatial
//! relation, reads object-detector output for the generated images, and
//! aggregates it into object accuracy, VISOR and its variants.

pub mod corpus;
pub mod detection;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod relation;
pub mod report;
pub mod stats;
pub mod vocab;

pub use corpus::{
    enumerate_predicates, generate_corpus, read_corpus, render_prompt, write_corpus, CorpusConfig, Predicate, Prompt,
    PromptVariant, VariantKind,
};
pub use detection::{
    derive_relations, evaluate_image, parse_detections, select_object, BoundingBox, Detection, ImageDetections,
    ImageEvaluation, DEFAULT_THRESHOLD,
};
pub use error::{Error, LineError, Result};
pub use metrics::{consistency, delta_s, MetricsSummary, PromptGroup, ScoreRecord};
pub use pipeline::{evaluate_run, threshold_sweep, EvalOptions, EvaluationRun};
pub use relation::{Relation, RelationSet};
pub use report::{Format, RunReport};
pub use vocab::{ObjectCategory, Vocabulary};
