//! Random attack scheduling, the QBER-threshold abort decision, and
//! confusion/ROC statistics over a run.

use crate::error::{Error, Result};
use crate::randomness::RngSource;

/// Which iterations the eavesdropper attacks.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSchedule {
    pub total_iterations: u64,
    /// Sorted ascending, `round(attack_rate * total)` of them.
    pub attacked_indices: Vec<u64>,
    pub attack_rate: f64,
}

impl AttackSchedule {
    /// Every iteration attacked (eve on, random attacks module off).
    pub fn all(total_iterations: u64) -> Self {
        Self {
            total_iterations,
            attacked_indices: (0..total_iterations).collect(),
            attack_rate: 1.0,
        }
    }

    /// No iteration attacked (eve off).
    pub fn none(total_iterations: u64) -> Self {
        Self {
            total_iterations,
            attacked_indices: Vec::new(),
            attack_rate: 0.0,
        }
    }

    pub fn is_attacked(&self, iteration: u64) -> bool {
        self.attacked_indices.binary_search(&iteration).is_ok()
    }
}

/// Selects `round(attack_rate * total)` distinct iteration indices uniformly.
/// Pseudo-randomness is sufficient here; the choice reflects the attacker's
/// strategy, not a physical process.
pub fn build_attack_schedule(
    total: u64,
    attack_rate: f64,
    rng: &mut RngSource,
) -> Result<AttackSchedule> {
    if !(0.0..=1.0).contains(&attack_rate) {
        return Err(Error::OutOfRange {
            what: "attack rate",
            value: attack_rate,
            expected: "[0, 1]",
        });
    }
    let count = (attack_rate * total as f64).round() as usize;
    let attacked_indices = rng
        .sample_indices(total as usize, count)?
        .into_iter()
        .map(|i| i as u64)
        .collect();
    Ok(AttackSchedule {
        total_iterations: total,
        attacked_indices,
        attack_rate,
    })
}

/// One iteration's abort decision against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRecord {
    pub iteration: u64,
    /// None when the sifted key was empty (no decision possible).
    pub qber_est: Option<f64>,
    pub decided_attacked: bool,
    pub truly_attacked: bool,
}

/// Abort (flag as attacked) iff the estimate strictly exceeds the pre-agreed
/// threshold.
pub fn decide(qber_est: f64, threshold: f64) -> bool {
    qber_est > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

/// Standard 2x2 tally; records without a QBER estimate are excluded.
pub fn confusion_counts(records: &[DecisionRecord]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for r in records {
        if r.qber_est.is_none() {
            continue;
        }
        match (r.decided_attacked, r.truly_attacked) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    /// None when no clean iterations exist.
    pub fpr: Option<f64>,
    /// None when no attacked iterations exist.
    pub tpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Recomputes the decision at each threshold and emits (FPR, TPR) pairs.
/// Thresholds must be sorted ascending; both rates are non-increasing in the
/// threshold. A sub-zero threshold yields the (1,1) endpoint even when clean
/// iterations have an exactly-zero estimate.
pub fn roc_points(records: &[DecisionRecord], thresholds: &[f64]) -> Result<RocCurve> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::OutOfRange {
            what: "roc thresholds",
            value: f64::NAN,
            expected: "sorted ascending",
        });
    }
    let points = thresholds
        .iter()
        .map(|&threshold| {
            let mut tp = 0u64;
            let mut fp = 0u64;
            let mut attacked = 0u64;
            let mut clean = 0u64;
            for r in records {
                let Some(q) = r.qber_est else { continue };
                let positive = q > threshold;
                if r.truly_attacked {
                    attacked += 1;
                    tp += positive as u64;
                } else {
                    clean += 1;
                    fp += positive as u64;
                }
            }
            RocPoint {
                threshold,
                fpr: (clean > 0).then(|| fp as f64 / clean as f64),
                tpr: (attacked > 0).then(|| tp as f64 / attacked as f64),
            }
        })
        .collect();
    Ok(RocCurve { points })
}

/// Default ROC threshold grid: a sub-zero sentinel (all-positive endpoint),
/// then 0.0, 0.025, ..., 1.0.
pub fn default_roc_thresholds() -> Vec<f64> {
    let mut t = vec![-0.025];
    t.extend((0..=40).map(|k| k as f64 * 0.025));
    t
}

/// Area under the ROC curve by trapezoidal integration over defined points.
pub fn roc_auc(curve: &RocCurve) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter_map(|p| Some((p.fpr?, p.tpr?)))
        .collect();
    if pts.is_empty() {
        return None;
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut auc = 0.0;
    let mut prev = (0.0, 0.0);
    for &(x, y) in &pts {
        auc += (x - prev.0) * (y + prev.1) / 2.0;
        prev = (x, y);
    }
    auc += (1.0 - prev.0) * (1.0 + prev.1) / 2.0;
    Some(auc)
}
