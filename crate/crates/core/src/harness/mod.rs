//! Experiment orchestration: per-cell pipelines, the full
//! ratio × variant × seed suite, embedding export, and chart rendering.

pub mod charts;
pub mod export;
mod pipeline;
mod suite;

pub use export::{export_embeddings, save_embedding_csv, EmbeddingDump, EmbeddingRow, EmbeddingSource};
pub use pipeline::{
    run_ablation, run_baseline, run_gfn, Pipeline, PipelineConfig, Variant,
};
pub use suite::{
    metrics_csv, persist_record, run_suite, summary_table, write_charts, CellRecord, CellStatus,
    ExperimentConfig, RunRecord, EVAL_SPEAKER_ID_BASE,
};
