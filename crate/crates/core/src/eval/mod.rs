//! Per-AU confusion counting, mergeable across workers, and F1/accuracy reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::au::AuId;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("truth value {0} is not 0 or 1")]
    Truth(f64),
    #[error("cannot merge counters for AU {0} and AU {1}")]
    AuMismatch(AuId, AuId),
    #[error("accuracy of AU {0} is undefined: no samples")]
    Empty(AuId),
    #[error("report needs at least one AU")]
    NoCounters,
    #[error("{what}: expected {expected} values, got {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// TP/FP/FN/TN tallies for one AU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounter {
    pub au_id: AuId,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounter {
    pub fn new(au_id: AuId) -> Self {
        Self {
            au_id,
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts one prediction; `prob > threshold` means predicted present.
    pub fn update(&mut self, prob: f64, truth: bool, threshold: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&prob) {
            return Err(EvalError::Probability(prob));
        }
        match (prob > threshold, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
        Ok(())
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.au_id != other.au_id {
            return Err(EvalError::AuMismatch(self.au_id, other.au_id));
        }
        Ok(Self {
            au_id: self.au_id,
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        })
    }

    /// `2tp / (2tp + fp + fn)`, 0 when nothing was predicted or present.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(EvalError::Empty(self.au_id)),
            n => Ok((self.tp + self.tn) as f64 / n as f64),
        }
    }
}

/// Merges per-worker counter lists AU by AU.
pub fn merge_all(shards: &[Vec<ConfusionCounter>]) -> Result<Vec<ConfusionCounter>> {
    let Some(first) = shards.first() else {
        return Ok(Vec::new());
    };
    let mut out = first.clone();
    for shard in &shards[1..] {
        if shard.len() != out.len() {
            return Err(EvalError::Shape {
                what: "counter list",
                expected: out.len(),
                found: shard.len(),
            });
        }
        for (acc, c) in out.iter_mut().zip(shard) {
            *acc = acc.merge(c)?;
        }
    }
    Ok(out)
}

/// Counts a `[n, au_ids.len()]` block of probabilities against 0/1 truth;
/// rows with a clear mask bit are skipped.
pub fn count_predictions(
    au_ids: &[AuId],
    probs: &[f64],
    truth: &[f64],
    mask: Option<&[bool]>,
    threshold: f64,
) -> Result<Vec<ConfusionCounter>> {
    let a = au_ids.len();
    if probs.len() != truth.len() || a == 0 || !probs.len().is_multiple_of(a) {
        return Err(EvalError::Shape {
            what: "predictions",
            expected: truth.len(),
            found: probs.len(),
        });
    }
    let n = probs.len() / a;
    if let Some(m) = mask {
        if m.len() != n {
            return Err(EvalError::Shape {
                what: "mask",
                expected: n,
                found: m.len(),
            });
        }
    }
    let mut counters: Vec<ConfusionCounter> = au_ids.iter().map(|&id| ConfusionCounter::new(id)).collect();
    for i in 0..n {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        for (j, c) in counters.iter_mut().enumerate() {
            let t = truth[i * a + j];
            let truth = match t {
                x if x == 1.0 => true,
                x if x == 0.0 => false,
                other => return Err(EvalError::Truth(other)),
            };
            c.update(probs[i * a + j], truth, threshold)?;
        }
    }
    Ok(counters)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuMetrics {
    pub au_id: AuId,
    pub f1: f64,
    pub accuracy: f64,
    pub samples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<ConfusionCounter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub per_au: Vec<AuMetrics>,
    pub macro_f1: f64,
    pub macro_accuracy: f64,
}

impl EvalReport {
    pub fn from_counters(counters: &[ConfusionCounter], threshold: f64) -> Result<Self> {
        let rows = counters
            .iter()
            .map(|c| {
                Ok(AuMetrics {
                    au_id: c.au_id,
                    f1: c.f1(),
                    accuracy: c.accuracy()?,
                    samples: c.total(),
                    counts: Some(*c),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_metrics(rows, threshold)
    }

    /// Builds a report from per-AU values already computed elsewhere.
    pub fn from_metrics(per_au: Vec<AuMetrics>, threshold: f64) -> Result<Self> {
        if per_au.is_empty() {
            return Err(EvalError::NoCounters);
        }
        let n = per_au.len() as f64;
        let macro_f1 = per_au.iter().map(|r| r.f1).sum::<f64>() / n;
        let macro_accuracy = per_au.iter().map(|r| r.accuracy).sum::<f64>() / n;
        Ok(Self {
            threshold,
            per_au,
            macro_f1,
            macro_accuracy,
        })
    }

    pub fn f1_of(&self, au: AuId) -> Option<f64> {
        self.per_au.iter().find(|r| r.au_id == au).map(|r| r.f1)
    }

    /// Plain-text table: one row per AU then the macro average, two decimals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<6} {:>8} {:>8} {:>8}", "AU", "F1", "Accuracy", "N");
        for r in &self.per_au {
            let _ = writeln!(
                out,
                "{:<6} {:>8.2} {:>8.2} {:>8}",
                format!("AU{}", r.au_id),
                r.f1,
                r.accuracy,
                r.samples
            );
        }
        let _ = writeln!(
            out,
            "{:<6} {:>8.2} {:>8.2} {:>8}",
            "Avg", self.macro_f1, self.macro_accuracy, ""
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Two-decimal rendering used for reported values.
pub fn render2(x: f64) -> String {
    format!("{x:.2}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counter(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounter {
        ConfusionCounter {
            au_id: 25,
            tp,
            fp,
            fn_,
            tn,
        }
    }

    #[test]
    fn update_rules() {
        let mut c = ConfusionCounter::new(25);
        c.update(0.9, true, 0.5).unwrap();
        assert_eq!(c.tp, 1);
        c.update(0.5, true, 0.5).unwrap();
        assert_eq!(c.fn_, 1);
        c.update(0.2, false, 0.5).unwrap();
        assert_eq!(c.tn, 1);
        c.update(0.51, false, 0.5).unwrap();
        assert_eq!(c.fp, 1);
        assert_eq!(c.update(1.2, true, 0.5), Err(EvalError::Probability(1.2)));
        assert!(c.update(f64::NAN, true, 0.5).is_err());
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn formulas() {
        assert_eq!(counter(1, 0, 0, 0).f1(), 1.0);
        let c = counter(8, 2, 2, 88);
        assert_eq!(c.f1(), 0.8);
        assert_eq!(c.accuracy().unwrap(), 0.96);
        let c = counter(0, 0, 0, 5);
        assert_eq!(c.f1(), 0.0);
        assert_eq!(c.accuracy().unwrap(), 1.0);
        assert_eq!(ConfusionCounter::new(4).accuracy(), Err(EvalError::Empty(4)));
    }

    #[test]
    fn merge_identity_and_mismatch() {
        let x = counter(3, 1, 4, 1);
        assert_eq!(x.merge(&ConfusionCounter::new(25)).unwrap(), x);
        assert_eq!(x.merge(&ConfusionCounter::new(26)), Err(EvalError::AuMismatch(25, 26)));
    }

    #[test]
    fn table_rendering() {
        let rows = [(25, 0.91, 0.88), (26, 0.89, 0.89), (43, 0.85, 0.79)]
            .into_iter()
            .map(|(au_id, f1, accuracy)| AuMetrics {
                au_id,
                f1,
                accuracy,
                samples: 0,
                counts: None,
            })
            .collect();
        let r = EvalReport::from_metrics(rows, 0.5).unwrap();
        let table = r.render_table();
        let last = table.lines().last().unwrap();
        assert!(
            last.starts_with("Avg") && last.contains("0.88") && last.contains("0.85"),
            "{last}"
        );
        assert_eq!(table.lines().count(), 5);
        assert!(EvalReport::from_metrics(vec![], 0.5).is_err());
    }

    #[test]
    fn counts_respect_mask() {
        let c = count_predictions(
            &[25, 26],
            &[0.9, 0.1, 0.8, 0.8],
            &[1.0, 0.0, 0.0, 0.0],
            Some(&[true, false]),
            0.5,
        )
        .unwrap();
        assert_eq!((c[0].tp, c[1].tn, c[0].total()), (1, 1, 1));
        assert_eq!(
            count_predictions(&[25], &[0.9], &[0.5], None, 0.5),
            Err(EvalError::Truth(0.5))
        );
    }
}
