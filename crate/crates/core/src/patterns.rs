//! Ω-coverings, frequency pruning, and conversion of clusters into
//! per-bin presence-probability patterns.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::appropagation::{self, ApParams, ClusteringResult, PreferenceMode, SimilarityGraph};
use crate::error::{Error, Result};
use crate::preprocess::Bis;
use crate::segtree::SegmentTree;
use crate::tdist::DistanceMatrix;

/// Every sequence within finite distance of `center`, center included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaCovering {
    pub center: usize,
    pub members: Vec<usize>,
    /// Mean distance from the center to the other members (0 if none).
    pub avg_distance: f64,
}

pub fn coverings(m: &DistanceMatrix) -> Vec<OmegaCovering> {
    (0..m.n())
        .map(|c| {
            let members = m.covering_row(c);
            let others: Vec<f64> = members
                .iter()
                .filter(|&&j| j != c)
                .map(|&j| m.get(c, j).expect("finite member").value())
                .collect();
            let avg_distance = if others.is_empty() {
                0.0
            } else {
                others.iter().sum::<f64>() / others.len() as f64
            };
            OmegaCovering {
                center: c,
                members,
                avg_distance,
            }
        })
        .collect()
}

/// Keep frequent coverings (at least `alpha` members) that are not strictly
/// contained in another covering. Of several coverings with the same member
/// set, the one with the lowest average distance survives (then lowest
/// center).
pub fn prune(coverings: &[OmegaCovering], alpha: usize) -> Vec<OmegaCovering> {
    let sets: Vec<BTreeSet<usize>> = coverings
        .iter()
        .map(|c| c.members.iter().copied().collect())
        .collect();
    let mut keep = Vec::new();
    'outer: for (i, cov) in coverings.iter().enumerate() {
        if cov.members.len() < alpha.max(1) {
            continue;
        }
        for (j, other) in coverings.iter().enumerate() {
            if i == j {
                continue;
            }
            let (a, b) = (&sets[i], &sets[j]);
            if a.len() < b.len() && a.is_subset(b) {
                continue 'outer;
            }
            if a == b {
                let better = other
                    .avg_distance
                    .total_cmp(&cov.avg_distance)
                    .then(other.center.cmp(&cov.center))
                    .is_lt();
                if better {
                    continue 'outer;
                }
            }
        }
        keep.push(cov.clone());
    }
    keep
}

/// Presence probability per unit interval, averaged over a cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    /// Unit-interval bounds `[le, ri)`.
    pub window: (usize, usize),
    pub exemplar: usize,
    pub support: usize,
    pub members: Vec<usize>,
    /// Members present in each bin; `probabilities[j] = present[j] / support`.
    pub present: Vec<u32>,
    pub probabilities: Vec<f64>,
}

/// One pattern per cluster of `result`, in exemplar order.
/// `segments[i]` is sequence `i` restricted to `window`.
pub fn extract_patterns(
    result: &ClusteringResult,
    segments: &[&[bool]],
    window: (usize, usize),
) -> Result<Vec<Pattern>> {
    if result.assignment.len() != segments.len() {
        return Err(Error::Contract(format!(
            "clustering covers {} sequences, window has {}",
            result.assignment.len(),
            segments.len()
        )));
    }
    let width = window.1 - window.0;
    result
        .clusters()
        .into_iter()
        .map(|(exemplar, members)| {
            if members.is_empty() {
                return Err(Error::Contract(format!("exemplar {exemplar} has no members")));
            }
            let mut present = vec![0u32; width];
            for &m in &members {
                let seg = segments[m];
                if seg.len() != width {
                    return Err(Error::LengthMismatch {
                        left: seg.len(),
                        right: width,
                    });
                }
                for (p, &b) in present.iter_mut().zip(seg) {
                    *p += u32::from(b);
                }
            }
            let support = members.len();
            let probabilities = present
                .iter()
                .map(|&c| f64::from(c) / support as f64)
                .collect();
            Ok(Pattern {
                window,
                exemplar,
                support,
                members,
                present,
                probabilities,
            })
        })
        .collect()
}

/// Output of one window discovery.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    /// Window after snapping to leaf boundaries.
    pub window: (usize, usize),
    pub clustering: ClusteringResult,
    /// Patterns with support at least `alpha`, by support descending.
    pub patterns: Vec<Pattern>,
    /// All clusters as patterns, including infrequent ones.
    pub all_patterns: Vec<Pattern>,
}

/// Cluster a distance matrix and turn the clusters into patterns.
pub fn discover_from_matrix(
    matrix: &DistanceMatrix,
    bis: &[Bis],
    window: (usize, usize),
    alpha: usize,
    mode: PreferenceMode,
    params: &ApParams,
) -> Result<Discovery> {
    let graph = SimilarityGraph::from_matrix(matrix);
    let pref = mode.preference(&graph);
    let clustering = appropagation::cluster(&graph.with_preference(pref), params)?;
    let segments: Vec<&[bool]> = bis.iter().map(|b| &b.bits[window.0..window.1]).collect();
    let all_patterns = extract_patterns(&clustering, &segments, window)?;
    let mut patterns: Vec<Pattern> = all_patterns
        .iter()
        .filter(|p| p.support >= alpha)
        .cloned()
        .collect();
    patterns.sort_by(|a, b| b.support.cmp(&a.support).then(a.exemplar.cmp(&b.exemplar)));
    Ok(Discovery {
        window,
        clustering,
        patterns,
        all_patterns,
    })
}

/// Window matrix from the tree, then clustering and pattern extraction.
pub fn discover(
    tree: &SegmentTree,
    bis: &[Bis],
    window: (usize, usize),
    alpha: usize,
    mode: PreferenceMode,
    params: &ApParams,
) -> Result<Discovery> {
    if bis.len() != tree.n() {
        return Err(Error::Contract(format!(
            "tree holds {} sequences, got {}",
            tree.n(),
            bis.len()
        )));
    }
    let matrix = tree.window_matrix(window.0, window.1)?;
    let snapped = tree.snap(window.0, window.1);
    discover_from_matrix(&matrix, bis, snapped, alpha, mode, params)
}

/// How sequences are pooled for clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    #[default]
    Pooled,
    PerSubject,
}

impl std::str::FromStr for Grouping {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Self::Pooled),
            "per_subject" => Ok(Self::PerSubject),
            _ => Err(Error::Param(format!("unknown grouping `{s}`"))),
        }
    }
}

/// Index groups to cluster independently, in first-appearance order.
pub fn group_indices(bis: &[Bis], grouping: Grouping) -> Vec<(String, Vec<usize>)> {
    match grouping {
        Grouping::Pooled => vec![("all".to_string(), (0..bis.len()).collect())],
        Grouping::PerSubject => {
            let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
            for (i, b) in bis.iter().enumerate() {
                match groups.iter_mut().find(|g| g.0 == b.key.subject_id) {
                    Some(g) => g.1.push(i),
                    None => groups.push((b.key.subject_id.clone(), vec![i])),
                }
            }
            groups
        }
    }
}
