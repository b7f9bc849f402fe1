//! Objective quality and intelligibility scores, paired significance tests
//! and result tables.

mod aggregate;
mod fwsnr;
mod stoi;
mod ttest;

pub use aggregate::{aggregate, read_pesq_scores, results_csv, EvalRecord, Metric, ResultTable};
pub use fwsnr::{fwsnrseg, FWSNR_BANDS, FWSNR_GAMMA, FWSNR_MAX_DB, FWSNR_MIN_DB};
pub use stoi::stoi;
pub use ttest::{paired_ttest, student_t_two_sided_p, TTestResult, SIGNIFICANCE_LEVEL};
