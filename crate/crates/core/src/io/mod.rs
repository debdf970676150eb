//! File formats: binary logit batches, per-token report CSVs and KDE curves.

mod csv_util;
mod kde;
mod logit_file;
mod report;

pub(crate) use csv_util::{read_rows, write_rows};

pub use csv_util::read_comments;
pub use kde::{kde_emit, read_kde, trapezoid, Kde, KdePoint, BANDWIDTH_FLOOR, KDE_HEADER, MIN_GRID_POINTS};
pub use logit_file::{read_logit_file, write_logit_file, LogitFile, FLAG_HAS_STUDENT, LOGIT_MAGIC, LOGIT_VERSION};
pub use report::{read_report, report_rows, write_report, ReportRow, SplitLabel, REPORT_HEADER};
