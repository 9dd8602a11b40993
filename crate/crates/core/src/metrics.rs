//! Classification metrics and the Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Largest sample size that gets an exact p-value.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class {value} outside 1..={classes}")]
    ClassOutOfRange { value: usize, classes: usize },
    #[error("value at position {0} is not finite")]
    NonFinite(usize),
}

/// `counts[a][b]`: samples of true class `a+1` predicted as `b+1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }

    /// Fraction correct; zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }
}

pub fn confusion(predictions: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), labels.len()));
    }
    let mut counts = vec![vec![0; classes]; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        for value in [p, y] {
            if value == 0 || value > classes {
                return Err(MetricsError::ClassOutOfRange { value, classes });
            }
        }
        counts[y - 1][p - 1] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// Precision, recall and F1 of one class. Zero denominators give 0 and set the
/// matching `*_undefined` flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

pub fn prf1(cm: &ConfusionMatrix, class: usize) -> Result<ClassScores, MetricsError> {
    if class == 0 || class > cm.classes {
        return Err(MetricsError::ClassOutOfRange {
            value: class,
            classes: cm.classes,
        });
    }
    let k = class - 1;
    let tp = cm.counts[k][k] as f64;
    let predicted: usize = (0..cm.classes).map(|a| cm.counts[a][k]).sum();
    let support: usize = cm.counts[k].iter().sum();
    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, support);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ClassScores {
        class,
        precision,
        recall,
        f1,
        support,
        precision_undefined: predicted == 0,
        recall_undefined: support == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// Every paired difference was zero.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

/// Two-sided signed-rank test; exact for up to [`EXACT_LIMIT`] non-zero
/// differences, normal approximation with continuity correction above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, MetricsError> {
    wilcoxon_with(a, b, None)
}

/// As [`wilcoxon_signed_rank`], optionally forcing the p-value method.
pub fn wilcoxon_with(a: &[f64], b: &[f64], method: Option<WilcoxonMethod>) -> Result<WilcoxonResult, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let mut diffs = Vec::with_capacity(a.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let d = x - y;
        if !d.is_finite() {
            return Err(MetricsError::NonFinite(i));
        }
        if d != 0.0 {
            diffs.push(d);
        }
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n: 0,
            p_value: 1.0,
            method: WilcoxonMethod::Degenerate,
        });
    }

    let (doubled, tie_groups) = doubled_ranks(&diffs);
    let w_plus2: u64 = diffs.iter().zip(&doubled).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total2 = (n * (n + 1)) as u64;
    let w_minus2 = total2 - w_plus2;
    let stat2 = w_plus2.min(w_minus2);

    let method = method.unwrap_or(if n <= EXACT_LIMIT {
        WilcoxonMethod::Exact
    } else {
        WilcoxonMethod::Normal
    });
    let p_value = match method {
        WilcoxonMethod::Exact => exact_p(&doubled, stat2),
        _ => {
            let nf = n as f64;
            let mean = nf * (nf + 1.0) / 4.0;
            let ties: f64 = tie_groups.iter().map(|&t| (t * t * t - t) as f64).sum();
            let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
            let w = stat2 as f64 / 2.0;
            if var <= 0.0 {
                1.0
            } else {
                let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
                let normal = Normal::new(0.0, 1.0).expect("standard normal");
                (2.0 * (1.0 - normal.cdf(z))).min(1.0)
            }
        }
    };
    Ok(WilcoxonResult {
        statistic: stat2 as f64 / 2.0,
        w_plus: w_plus2 as f64 / 2.0,
        w_minus: w_minus2 as f64 / 2.0,
        n,
        p_value,
        method,
    })
}

/// Twice the average ranks of `|d|` (integers even with ties) and tie group sizes.
fn doubled_ranks(diffs: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).expect("finite"));
    let mut ranks = vec![0u64; diffs.len()];
    let mut groups = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && diffs[order[end]].abs() == diffs[order[start]].abs() {
            end += 1;
        }
        // Ranks start+1..=end averaged, doubled.
        let doubled = (start + 1 + end) as u64;
        for &k in &order[start..end] {
            ranks[k] = doubled;
        }
        groups.push((end - start) as u64);
        start = end;
    }
    (ranks, groups)
}

/// `P(min(W+, W-) <= observed)` under the sign-flip null, by counting the
/// distribution of doubled positive rank sums.
fn exact_p(doubled: &[u64], observed2: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let hits: u64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as u64).min(total - *s as u64) <= observed2)
        .map(|(_, &c)| c)
        .sum();
    hits as f64 / (1u64 << doubled.len()) as f64
}

/// Per-run evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassScores>,
    /// Mean over samples of the per-tree rank variance.
    pub tree_variance: f64,
    /// Mean over samples of the spread of tree output vectors.
    pub tree_variance_distribution: f64,
    pub samples: usize,
    pub variant: String,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[1, 2, 3], &[1, 2, 3], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let empty = confusion(&[], &[], 2).unwrap();
        assert_eq!(empty.counts, vec![vec![0, 0], vec![0, 0]]);
        assert_eq!(empty.accuracy(), 0.0);
        let cm = confusion(&[1, 2, 2], &[1, 1, 2], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
        assert!((cm.accuracy() - 2.0 / 3.0).abs() < 1e-15);
        assert!(confusion(&[4], &[1], 3).is_err());
        assert!(confusion(&[1], &[], 3).is_err());
    }

    #[test]
    fn prf1_examples() {
        let diag = confusion(&[1, 2, 2], &[1, 2, 2], 2).unwrap();
        for c in 1..=2 {
            let s = prf1(&diag, c).unwrap();
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
        let never = confusion(&[1, 1], &[1, 2], 2).unwrap();
        let s = prf1(&never, 2).unwrap();
        assert_eq!(s.precision, 0.0);
        assert!(s.precision_undefined);

        let cm = ConfusionMatrix {
            classes: 2,
            counts: vec![vec![1, 1], vec![0, 1]],
        };
        let s = prf1(&cm, 2).unwrap();
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_all_positive_n5() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.0625);
        assert_eq!(r.method, WilcoxonMethod::Exact);
    }

    #[test]
    fn wilcoxon_degenerate_and_symmetric() {
        let a = [0.3, 0.1, 0.7];
        let r = wilcoxon_signed_rank(&a, &a).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Degenerate);
        assert_eq!(r.p_value, 1.0);

        let x = [1.0, 2.5, 0.2, 4.0, 3.3, 0.9];
        let y = [0.5, 3.0, 0.1, 1.0, 3.4, 2.0];
        let f = wilcoxon_signed_rank(&x, &y).unwrap();
        let r = wilcoxon_signed_rank(&y, &x).unwrap();
        assert_eq!(f.statistic, r.statistic);
        assert_eq!(f.p_value, r.p_value);
        assert_eq!(f.w_plus, r.w_minus);
    }

    #[test]
    fn tied_magnitudes_use_average_ranks() {
        // |d| = 1, 1, 2 -> ranks 1.5, 1.5, 3
        let r = wilcoxon_signed_rank(&[1.0, -1.0, 2.0], &[0.0; 3]).unwrap();
        assert_eq!(r.w_plus, 4.5);
        assert_eq!(r.w_minus, 1.5);
    }
}
