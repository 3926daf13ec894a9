//! Frame-by-frame evaluation of detectors on rendered sweeps and
//! placements, with missed/total success ratios and transfer pairs.

mod eval;
mod report;

pub use eval::{detect_all, eval_creation, eval_disappearance, eval_threads, eval_transfer};
pub use report::{summary_line, write_report, EvalKind, EvalReport, FrameRecord, ReportFormat, TransferReport};
