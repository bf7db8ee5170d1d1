//! Configuration files, the end-to-end pipeline and fleet reports.

pub mod config;
pub mod fleet;
pub mod pipeline;
pub mod report;

pub use config::{load_config, parse_config, BenchConfig, PipelineSettings, SourceEntry};
pub use fleet::{generate_fleet, FleetSpec, KindTargets, Spread};
pub use pipeline::{analyze_source, run_pipeline, source_stream, PipelineOutcome, SourceArtifacts, SourceFailure};
pub use report::{
    aggregate_benchmark, emit_report, parse_report_csv, parse_report_json, BenchmarkSummary, GroupSummary, Measured,
    ReportFormat, SourceReport, Stat, STD_CONVENTION,
};
