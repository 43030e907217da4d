//! Per-tag and macro-averaged ROC-AUC and PR-AUC (average precision).

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// A tag whose labels make a metric undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Degenerate {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("labels contain no positives")]
    NoPositives,
}

/// Mann-Whitney ROC-AUC: probability that a random positive outranks a
/// random negative, ties counted one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> core::result::Result<f64, Degenerate> {
    assert_eq!(scores.len(), labels.len(), "roc_auc: length mismatch");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Degenerate::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of 1-based average ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        let pos = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum += avg * pos as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Step-wise average precision: mean over positives of the precision at
/// each positive's rank. Descending scores, ties kept in input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> core::result::Result<f64, Degenerate> {
    assert_eq!(scores.len(), labels.len(), "average_precision: length mismatch");
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Degenerate::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Scores and binary labels for `N` clips over `T` tags.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMatrix {
    scores: Tensor<f64>,
    labels: Vec<bool>,
    tag_names: Vec<String>,
}

impl EvalMatrix {
    pub fn new(scores: Tensor<f64>, labels: &Tensor<f64>, tag_names: Vec<String>) -> Result<Self> {
        if scores.ndim() != 2 || scores.shape() != labels.shape() {
            return Err(shape_err("EvalMatrix", scores.shape(), labels.shape()));
        }
        if tag_names.len() != scores.shape()[1] {
            return Err(shape_err("EvalMatrix tags", scores.shape(), &[tag_names.len()]));
        }
        let mut bits = Vec::with_capacity(labels.len());
        for &v in labels.data() {
            match v {
                0.0 => bits.push(false),
                1.0 => bits.push(true),
                other => return Err(Error::Argument(alloc::format!("labels must be 0 or 1, found {other}"))),
            }
        }
        Ok(Self {
            scores,
            labels: bits,
            tag_names,
        })
    }

    pub fn n_clips(&self) -> usize {
        self.scores.shape()[0]
    }

    pub fn n_tags(&self) -> usize {
        self.scores.shape()[1]
    }

    fn column(&self, t: usize) -> (Vec<f64>, Vec<bool>) {
        let nt = self.n_tags();
        (0..self.n_clips())
            .map(|i| (self.scores.data()[i * nt + t], self.labels[i * nt + t]))
            .unzip()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagMetrics {
    pub name: String,
    pub n_pos: usize,
    /// `None` when the tag is single-class.
    pub roc_auc: Option<f64>,
    /// `None` when the tag has no positives.
    pub pr_auc: Option<f64>,
}

impl TagMetrics {
    pub fn is_degenerate(&self) -> bool {
        self.roc_auc.is_none() || self.pr_auc.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroReport {
    pub tags: Vec<TagMetrics>,
    pub macro_roc_auc: f64,
    pub macro_pr_auc: f64,
    /// Tags excluded from the macro means.
    pub degenerate: Vec<String>,
}

/// Per-tag metrics plus unweighted means over the non-degenerate tags.
pub fn macro_metrics(m: &EvalMatrix) -> Result<MacroReport> {
    let mut tags = Vec::with_capacity(m.n_tags());
    for t in 0..m.n_tags() {
        let (s, l) = m.column(t);
        tags.push(TagMetrics {
            name: m.tag_names[t].clone(),
            n_pos: l.iter().filter(|&&v| v).count(),
            roc_auc: roc_auc(&s, &l).ok(),
            pr_auc: average_precision(&s, &l).ok(),
        });
    }
    let valid: Vec<&TagMetrics> = tags.iter().filter(|t| !t.is_degenerate()).collect();
    if valid.is_empty() {
        return Err(Error::Argument("evaluation failed: every tag is degenerate".into()));
    }
    let k = valid.len() as f64;
    let macro_roc_auc = valid.iter().filter_map(|t| t.roc_auc).sum::<f64>() / k;
    let macro_pr_auc = valid.iter().filter_map(|t| t.pr_auc).sum::<f64>() / k;
    let degenerate = tags
        .iter()
        .filter(|t| t.is_degenerate())
        .map(|t| t.name.clone())
        .collect();
    Ok(MacroReport {
        tags,
        macro_roc_auc,
        macro_pr_auc,
        degenerate,
    })
}

impl MacroReport {
    /// `tag  n_pos  roc_auc  pr_auc` rows and a closing `MACRO` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str("# pr_auc is step-wise average precision (not interpolated PR area)\n");
        if !self.degenerate.is_empty() {
            let _ = writeln!(
                out,
                "# degenerate tags excluded from MACRO: {}",
                self.degenerate.join(", ")
            );
        }
        out.push_str("tag\tn_pos\troc_auc\tpr_auc\n");
        let fmt = |v: Option<f64>| v.map_or_else(|| String::from("NA"), |x| alloc::format!("{x:.6}"));
        for t in &self.tags {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", t.name, t.n_pos, fmt(t.roc_auc), fmt(t.pr_auc));
        }
        let total: usize = self.tags.iter().filter(|t| !t.is_degenerate()).map(|t| t.n_pos).sum();
        let _ = writeln!(
            out,
            "MACRO\t{}\t{:.6}\t{:.6}",
            total, self.macro_roc_auc, self.macro_pr_auc
        );
        out
    }
}
