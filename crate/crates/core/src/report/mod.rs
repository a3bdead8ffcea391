//! CSV matrices, dot-matrix SVG plots and native benchmark source text.

mod csv_out;
mod native;
mod svg;

pub use csv_out::{
    matrix_rows, read_summary_csv, write_results_csv, write_sensitivity_csv, write_summary_csv, Marker, MatrixRow,
    RESULTS_CSV_VERSION, SENSITIVITY_CSV_VERSION, SUMMARY_CSV_VERSION,
};
pub use native::{emit_catalog, emit_native_case, native_file_name, NativeCase};
pub use svg::render_dot_matrix;
