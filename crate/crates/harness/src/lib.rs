//! Experiment harness: the table grids, a cached stage pipeline and report
//! rendering.

pub mod cache;
mod error;
pub mod grid;
pub mod pipeline;
mod plot;
pub mod reference;
pub mod report;
pub mod spec;

pub use error::{HarnessError, Result, Stage, StageContext};
pub use grid::{grid_rows, table_rows, Grid, GridRow, Table, TestSet, TrainSet};
pub use pipeline::{evaluate_set, run_job, run_pipeline, run_table, run_table1, run_table2, run_table3, JobResult, TestRecord, TrainRecord};
pub use reference::{paper_reference, PAPER_REFERENCE};
pub use report::{render_report, ExperimentReport, Format, ReportRow, BANNER};
pub use spec::ExperimentSpec;
