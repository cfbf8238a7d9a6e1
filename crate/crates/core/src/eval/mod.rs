//! Detection matching and metrics: precision/recall/F1, all-point AP,
//! FROC, and per-domain breakdowns.

mod matching;
mod metrics;
mod report;

pub use matching::{claim_order, match_all, match_image, Criterion, Flagged, ImageMatch, MatchConfig, MatchResult};
pub use metrics::{average_precision, froc, prf1, Froc, Prf1, FPPI_MAX};
pub use report::{evaluate, per_domain_report, DomainStats, EvalReport};
