//! File formats, dataset recoding, the microdata pipeline and reports.

mod csv_files;
pub mod pipeline;
pub mod report;
pub mod schema;

pub use csv_files::{
    read_population_csv, read_sample_csv, read_targets_csv, write_matched_csv,
    write_population_csv, write_sample_csv, write_targets_csv, RawTable,
};
pub use pipeline::{render_pipeline_tables, run_pipeline, PipelineSpec, PipelineSummary, SubsetRule};
pub use report::{to_json, write_json, PipelineReport, SimulationReport, SCHEMA_VERSION};
pub use schema::{load_dataset, ColumnKind, ColumnSpec, Dataset, DatasetSchema, DesignSpec, ResponseSpec};
