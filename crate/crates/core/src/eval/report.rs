use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matching::{match_all, MatchConfig, MatchResult};
use super::metrics::{average_precision, froc, prf1, FPPI_MAX};
use crate::data::DomainTag;
use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub dataset: String,
    pub tumor_type: String,
    pub images: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Counts and prf1 within each domain, sorted by domain.
pub fn per_domain_report(result: &MatchResult, domains: &[DomainTag]) -> Result<Vec<DomainStats>> {
    if domains.len() != result.per_image.len() {
        return Err(Error::Data(format!("{} domain tags for {} images", domains.len(), result.per_image.len())));
    }
    let mut acc: BTreeMap<&DomainTag, (usize, usize, usize, usize)> = BTreeMap::new();
    for (m, d) in result.per_image.iter().zip(domains) {
        if d.dataset.is_empty() {
            return Err(Error::Data("image without a domain tag".into()));
        }
        let e = acc.entry(d).or_default();
        e.0 += 1;
        e.1 += m.tp_count();
        e.2 += m.fp_count();
        e.3 += m.unmatched_gt;
    }
    Ok(acc
        .into_iter()
        .map(|(d, (images, tp, fp, fn_))| {
            let s = prf1(tp, fp, fn_);
            DomainStats {
                dataset: d.dataset.clone(),
                tumor_type: d.tumor_type.clone(),
                images,
                tp,
                fp,
                fn_,
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub matching: MatchConfig,
    pub images: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: f64,
    pub fppi_max: f64,
    pub froc_points: Vec<(f64, f64)>,
    pub froc_auc: f64,
    pub per_domain: Vec<DomainStats>,
}

pub fn evaluate(dets: &[Vec<Detection>], gts: &[Vec<BBox>], domains: &[DomainTag], cfg: &MatchConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let m = match_all(dets, gts, cfg)?;
    let per_domain = per_domain_report(&m, domains)?;
    let s = prf1(m.tp, m.fp, m.fn_);
    let curve = froc(&m.flagged, m.total_gt, dets.len(), FPPI_MAX);
    Ok(EvalReport {
        matching: *cfg,
        images: dets.len(),
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        ap: average_precision(&m.flagged, m.total_gt),
        fppi_max: FPPI_MAX,
        froc_points: curve.points,
        froc_auc: curve.auc,
        per_domain,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn froc_csv(&self) -> String {
        let mut s = String::from("fppi,sensitivity\n");
        for (x, y) in &self.froc_points {
            let _ = writeln!(s, "{x:.6},{y:.6}");
        }
        s
    }

    /// Human-readable summary with the per-domain table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images     {}", self.images);
        let _ = writeln!(s, "tp/fp/fn   {}/{}/{}", self.tp, self.fp, self.fn_);
        let _ = writeln!(s, "precision  {:.4}", self.precision);
        let _ = writeln!(s, "recall     {:.4}", self.recall);
        let _ = writeln!(s, "f1         {:.4}", self.f1);
        let _ = writeln!(s, "ap         {:.4}", self.ap);
        let _ = writeln!(s, "froc_auc   {:.4} (fppi 0..{})", self.froc_auc, self.fppi_max);
        let _ = writeln!(
            s,
            "\n{:<16} {:<12} {:>6} {:>6} {:>6} {:>6} {:>9} {:>9}",
            "dataset", "tumor", "images", "tp", "fp", "fn", "precision", "recall"
        );
        for d in &self.per_domain {
            let _ = writeln!(
                s,
                "{:<16} {:<12} {:>6} {:>6} {:>6} {:>6} {:>9.4} {:>9.4}",
                d.dataset, d.tumor_type, d.images, d.tp, d.fp, d.fn_, d.precision, d.recall
            );
        }
        s
    }
}
