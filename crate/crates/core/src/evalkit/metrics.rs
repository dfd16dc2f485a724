use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predicted cluster ids and ground-truth class ids over the same points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledClustering {
    pub predicted: Vec<usize>,
    pub truth: Vec<usize>,
}

impl LabeledClustering {
    pub fn new(predicted: Vec<usize>, truth: Vec<usize>) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::LengthMismatch {
                left: predicted.len(),
                right: truth.len(),
            });
        }
        Ok(Self { predicted, truth })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    fn contingency(&self) -> HashMap<(usize, usize), u64> {
        let mut table = HashMap::new();
        for (&p, &t) in self.predicted.iter().zip(&self.truth) {
            *table.entry((p, t)).or_insert(0) += 1;
        }
        table
    }

    pub fn confusion(&self) -> ConfusionCounts {
        ConfusionCounts::from_labels(self)
    }
}

/// Pair-counting outcomes over all unordered pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

fn pairs(k: u64) -> u64 {
    k * k.saturating_sub(1) / 2
}

impl ConfusionCounts {
    pub fn from_labels(lc: &LabeledClustering) -> Self {
        let table = lc.contingency();
        let mut by_cluster: HashMap<usize, u64> = HashMap::new();
        let mut by_class: HashMap<usize, u64> = HashMap::new();
        for (&(p, t), &c) in &table {
            *by_cluster.entry(p).or_default() += c;
            *by_class.entry(t).or_default() += c;
        }
        let tp: u64 = table.values().map(|&c| pairs(c)).sum();
        let same_cluster: u64 = by_cluster.values().map(|&c| pairs(c)).sum();
        let same_class: u64 = by_class.values().map(|&c| pairs(c)).sum();
        let total = pairs(lc.len() as u64);
        let fp = same_cluster - tp;
        let fn_ = same_class - tp;
        Self {
            tp,
            tn: total - tp - fp - fn_,
            fp,
            fn_,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Fraction of points that share their cluster's majority class.
pub fn purity(lc: &LabeledClustering) -> Result<f64> {
    if lc.is_empty() {
        return Err(Error::Param("purity of an empty clustering".into()));
    }
    let mut best: HashMap<usize, u64> = HashMap::new();
    for (&(p, _), &c) in &lc.contingency() {
        let e = best.entry(p).or_default();
        *e = (*e).max(c);
    }
    Ok(best.values().sum::<u64>() as f64 / lc.len() as f64)
}

/// `(TP + TN) / pairs`.
pub fn rand_index(lc: &LabeledClustering) -> Result<f64> {
    if lc.len() < 2 {
        return Err(Error::Param("rand index needs at least two points".into()));
    }
    let c = lc.confusion();
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

/// Pairwise F-beta; `beta > 1` weights recall over precision.
pub fn f_measure(lc: &LabeledClustering, beta: f64) -> Result<f64> {
    if lc.len() < 2 {
        return Err(Error::Param("f-measure needs at least two points".into()));
    }
    let c = lc.confusion();
    let (p, r) = (c.precision(), c.recall());
    let b2 = beta * beta;
    let den = b2 * p + r;
    Ok(if den == 0.0 { 0.0 } else { (1.0 + b2) * p * r / den })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Walk every unordered pair directly.
    fn pair_oracle(lc: &LabeledClustering) -> ConfusionCounts {
        let mut c = ConfusionCounts { tp: 0, tn: 0, fp: 0, fn_: 0 };
        for i in 0..lc.len() {
            for j in i + 1..lc.len() {
                let same_p = lc.predicted[i] == lc.predicted[j];
                let same_t = lc.truth[i] == lc.truth[j];
                match (same_p, same_t) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
        }
        c
    }

    #[test]
    fn perfect_clustering() {
        let lc = LabeledClustering::new(vec![5, 5, 7, 7, 9], vec![0, 0, 1, 1, 2]).unwrap();
        assert_eq!(purity(&lc).unwrap(), 1.0);
        assert_eq!(rand_index(&lc).unwrap(), 1.0);
        assert_eq!(f_measure(&lc, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn hand_purity() {
        // clusters {a, b, c} with classes {1, 1, 2} and {d} with class 2
        let lc = LabeledClustering::new(vec![0, 0, 0, 1], vec![1, 1, 2, 2]).unwrap();
        assert_eq!(purity(&lc).unwrap(), 0.75);
    }

    #[test]
    fn four_point_hand_case() {
        let lc = LabeledClustering::new(vec![0, 0, 1, 1], vec![0, 0, 0, 1]).unwrap();
        let c = lc.confusion();
        assert_eq!(c, pair_oracle(&lc));
        // pairs: (01) tp, (02) fn, (03) tn, (12) fn, (13) tn, (23) fp
        assert_eq!(c, ConfusionCounts { tp: 1, tn: 2, fp: 1, fn_: 2 });
        assert_eq!(rand_index(&lc).unwrap(), 0.5);
        // P = 1/2, R = 1/3, beta = 2: 5 * (1/6) / (2 + 1/3) = 5/14
        assert!((f_measure(&lc, 2.0).unwrap() - 5.0 / 14.0).abs() < 1e-12);
    }

    #[test]
    fn small_inputs_rejected() {
        let one = LabeledClustering::new(vec![0], vec![0]).unwrap();
        assert!(rand_index(&one).is_err());
        assert!(purity(&LabeledClustering::new(vec![], vec![]).unwrap()).is_err());
        assert!(LabeledClustering::new(vec![0], vec![]).is_err());
    }

    fn arb_lc() -> impl Strategy<Value = LabeledClustering> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(0usize..5, n),
                prop::collection::vec(0usize..4, n),
            )
                .prop_map(|(p, t)| LabeledClustering { predicted: p, truth: t })
        })
    }

    proptest! {
        #[test]
        fn counts_match_pair_walk(lc in arb_lc()) {
            let c = lc.confusion();
            prop_assert_eq!(c, pair_oracle(&lc));
            let n = lc.len() as u64;
            prop_assert_eq!(c.total(), n * (n - 1) / 2);
            let ri = rand_index(&lc).unwrap();
            prop_assert_eq!(ri, (c.tp + c.tn) as f64 / c.total() as f64);
        }

        #[test]
        fn metrics_bounded_and_relabel_invariant(lc in arb_lc(), shift in 1usize..50) {
            let relabeled = LabeledClustering {
                predicted: lc.predicted.iter().map(|p| (p * 7 + shift) % 101).collect(),
                truth: lc.truth.clone(),
            };
            for m in [purity(&lc).unwrap(), rand_index(&lc).unwrap(), f_measure(&lc, 2.0).unwrap()] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
            prop_assert_eq!(purity(&lc).unwrap(), purity(&relabeled).unwrap());
            prop_assert_eq!(rand_index(&lc).unwrap(), rand_index(&relabeled).unwrap());
            prop_assert_eq!(f_measure(&lc, 2.0).unwrap(), f_measure(&relabeled, 2.0).unwrap());
        }
    }
}
