//! Pairwise and BCubed clustering scores.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Same-cluster pair counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub counts: PairCounts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BCubedScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub pairwise: PairwiseScore,
    pub bcubed: BCubedScore,
    pub n_samples: usize,
    pub n_pred_clusters: usize,
}

impl MetricReport {
    pub fn compute(gt: &[u32], pred: &[u32]) -> Result<Self> {
        let pairwise = pairwise_f(gt, pred)?;
        let bcubed = bcubed_f(gt, pred)?;
        let mut ids: Vec<u32> = pred.to_vec();
        ids.sort_unstable();
        ids.dedup();
        Ok(Self {
            pairwise,
            bcubed,
            n_samples: gt.len(),
            n_pred_clusters: ids.len(),
        })
    }

    /// `key=value` lines, prefixed with `prefix.` when `prefix` is non-empty.
    pub fn to_kv(&self, prefix: &str) -> String {
        let p = if prefix.is_empty() {
            String::new()
        } else {
            format!("{prefix}.")
        };
        let c = self.pairwise.counts;
        format!(
            "{p}n_samples={}\n{p}n_pred_clusters={}\n{p}pairwise.precision={:.6}\n{p}pairwise.recall={:.6}\n{p}pairwise.f={:.6}\n{p}pairwise.tp={}\n{p}pairwise.fp={}\n{p}pairwise.fn={}\n{p}bcubed.precision={:.6}\n{p}bcubed.recall={:.6}\n{p}bcubed.f={:.6}\n",
            self.n_samples,
            self.n_pred_clusters,
            self.pairwise.precision,
            self.pairwise.recall,
            self.pairwise.f,
            c.tp,
            c.fp,
            c.fn_,
            self.bcubed.precision,
            self.bcubed.recall,
            self.bcubed.f,
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "samples {:>6}  predicted clusters {:>6}",
            self.n_samples, self.n_pred_clusters
        )?;
        writeln!(
            f,
            "Pairwise  P {:6.2}  R {:6.2}  F {:6.2}",
            100.0 * self.pairwise.precision,
            100.0 * self.pairwise.recall,
            100.0 * self.pairwise.f
        )?;
        write!(
            f,
            "BCubed    P {:6.2}  R {:6.2}  F {:6.2}",
            100.0 * self.bcubed.precision,
            100.0 * self.bcubed.recall,
            100.0 * self.bcubed.f
        )
    }
}

fn check_lengths(gt: &[u32], pred: &[u32]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::contract(format!(
            "ground truth has {} labels, prediction {}",
            gt.len(),
            pred.len()
        )));
    }
    Ok(())
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

struct Contingency {
    cells: HashMap<(u32, u32), u64>,
    gt_sizes: HashMap<u32, u64>,
    pred_sizes: HashMap<u32, u64>,
}

impl Contingency {
    fn new(gt: &[u32], pred: &[u32]) -> Self {
        let mut cells = HashMap::new();
        let mut gt_sizes = HashMap::new();
        let mut pred_sizes = HashMap::new();
        for (&g, &p) in gt.iter().zip(pred) {
            *cells.entry((g, p)).or_insert(0) += 1;
            *gt_sizes.entry(g).or_insert(0) += 1;
            *pred_sizes.entry(p).or_insert(0) += 1;
        }
        Self {
            cells,
            gt_sizes,
            pred_sizes,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Pairwise (Fowlkes–Mallows) score over all unordered sample pairs.
pub fn pairwise_f(gt: &[u32], pred: &[u32]) -> Result<PairwiseScore> {
    check_lengths(gt, pred)?;
    let table = Contingency::new(gt, pred);
    let tp: u64 = table.cells.values().map(|&c| pairs(c)).sum();
    let pred_pairs: u64 = table.pred_sizes.values().map(|&c| pairs(c)).sum();
    let gt_pairs: u64 = table.gt_sizes.values().map(|&c| pairs(c)).sum();
    let counts = PairCounts {
        tp,
        fp: pred_pairs - tp,
        fn_: gt_pairs - tp,
    };
    Ok(score_from_counts(counts))
}

fn score_from_counts(counts: PairCounts) -> PairwiseScore {
    let PairCounts { tp, fp, fn_ } = counts;
    let radicand = ((tp + fp) as f64) * ((tp + fn_) as f64);
    let f = if tp == 0 || radicand == 0.0 {
        0.0
    } else {
        tp as f64 / radicand.sqrt()
    };
    PairwiseScore {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f,
        counts,
    }
}

/// Literal double loop over every unordered pair.
pub fn pair_oracle(gt: &[u32], pred: &[u32]) -> Result<PairCounts> {
    check_lengths(gt, pred)?;
    let mut c = PairCounts::default();
    for i in 0..gt.len() {
        for j in i + 1..gt.len() {
            match (gt[i] == gt[j], pred[i] == pred[j]) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(c)
}

/// Pairwise score computed from [`pair_oracle`] counts.
pub fn pairwise_f_oracle(gt: &[u32], pred: &[u32]) -> Result<PairwiseScore> {
    pair_oracle(gt, pred).map(score_from_counts)
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// BCubed precision, recall and F. Each point counts itself as a true
/// positive, so per-point scores are always defined.
pub fn bcubed_f(gt: &[u32], pred: &[u32]) -> Result<BCubedScore> {
    check_lengths(gt, pred)?;
    if gt.is_empty() {
        return Err(Error::contract("BCubed needs at least one sample"));
    }
    let table = Contingency::new(gt, pred);
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    for (g, p) in gt.iter().zip(pred) {
        let tp_i = table.cells[&(*g, *p)];
        p_sum += ratio(tp_i, table.pred_sizes[p]);
        r_sum += ratio(tp_i, table.gt_sizes[g]);
    }
    let n = gt.len() as f64;
    let (precision, recall) = (p_sum / n, r_sum / n);
    Ok(BCubedScore {
        precision,
        recall,
        f: harmonic(precision, recall),
    })
}

/// Per-point enumeration form of [`bcubed_f`].
pub fn bcubed_oracle(gt: &[u32], pred: &[u32]) -> Result<BCubedScore> {
    check_lengths(gt, pred)?;
    if gt.is_empty() {
        return Err(Error::contract("BCubed needs at least one sample"));
    }
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    for i in 0..gt.len() {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for j in 0..gt.len() {
            match (gt[i] == gt[j], pred[i] == pred[j]) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        p_sum += ratio(tp, tp + fp);
        r_sum += ratio(tp, tp + fn_);
    }
    let n = gt.len() as f64;
    let (precision, recall) = (p_sum / n, r_sum / n);
    Ok(BCubedScore {
        precision,
        recall,
        f: harmonic(precision, recall),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_labelings() {
        let l = [1, 1, 2, 3, 3, 3];
        let p = pairwise_f(&l, &l).unwrap();
        assert_eq!(p.f, 1.0);
        let b = bcubed_f(&l, &l).unwrap();
        assert_eq!((b.precision, b.recall, b.f), (1.0, 1.0, 1.0));
    }

    #[test]
    fn merged_fixture() {
        let gt = [1, 1, 2];
        let pred = [0, 0, 0];
        let p = pairwise_f(&gt, &pred).unwrap();
        assert_eq!(
            p.counts,
            PairCounts {
                tp: 1,
                fp: 2,
                fn_: 0
            }
        );
        assert_eq!(p.f, 1.0 / 3f64.sqrt());
        let b = bcubed_f(&gt, &pred).unwrap();
        assert!((b.precision - 5.0 / 9.0).abs() < 1e-15);
        assert_eq!(b.recall, 1.0);
        assert!((b.f - 5.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn singleton_predictions() {
        let gt = [4, 4, 4, 9, 9, 1];
        let pred = [0, 1, 2, 3, 4, 5];
        let p = pairwise_f(&gt, &pred).unwrap();
        assert_eq!(p.counts.tp, 0);
        assert_eq!(p.f, 0.0);
        let b = bcubed_f(&gt, &pred).unwrap();
        assert_eq!(b.precision, 1.0);
        let expected = (3.0 * (1.0 / 3.0) + 2.0 * 0.5 + 1.0) / 6.0;
        assert!((b.recall - expected).abs() < 1e-15);
    }

    #[test]
    fn tiny_oracle_cases() {
        assert_eq!(
            pair_oracle(&[1, 1], &[2, 2]).unwrap(),
            PairCounts {
                tp: 1,
                fp: 0,
                fn_: 0
            }
        );
        assert_eq!(
            pair_oracle(&[1, 2], &[3, 4]).unwrap(),
            PairCounts::default()
        );
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(pairwise_f(&[1, 2], &[1]), Err(Error::Contract(_))));
        assert!(matches!(bcubed_f(&[1, 2], &[1]), Err(Error::Contract(_))));
    }

    fn labelings() -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u32..6, n),
                proptest::collection::vec(0u32..6, n),
            )
        })
    }

    proptest! {
        #[test]
        fn swapping_roles_swaps_precision_and_recall((gt, pred) in labelings()) {
            let a = pairwise_f(&gt, &pred).unwrap();
            let b = pairwise_f(&pred, &gt).unwrap();
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
            prop_assert!((a.f - b.f).abs() < 1e-15);
        }

        #[test]
        fn relabeling_is_invisible((gt, pred) in labelings(), shift in 1u32..1000) {
            let renamed: Vec<u32> = pred.iter().map(|p| (p * 7919) ^ shift).collect();
            prop_assert_eq!(pairwise_f(&gt, &pred).unwrap(), pairwise_f(&gt, &renamed).unwrap());
            prop_assert_eq!(bcubed_f(&gt, &pred).unwrap(), bcubed_f(&gt, &renamed).unwrap());
        }

        #[test]
        fn scores_are_bounded((gt, pred) in labelings()) {
            let p = pairwise_f(&gt, &pred).unwrap();
            let b = bcubed_f(&gt, &pred).unwrap();
            for v in [p.precision, p.recall, p.f, b.precision, b.recall, b.f] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn merging_pure_clusters_keeps_recall() {
        // two pure predicted clusters of class 0 merged into one
        let gt = [0, 0, 0, 0, 1, 1];
        let split = [0, 0, 1, 1, 2, 2];
        let merged = [0, 0, 0, 0, 2, 2];
        let a = bcubed_f(&gt, &split).unwrap();
        let b = bcubed_f(&gt, &merged).unwrap();
        assert!(b.recall >= a.recall);
    }
}
