use crate::appropagation::SimilarityGraph;
use crate::error::{Error, Result};
use crate::tdist::DistanceMatrix;

/// Largest instance the exhaustive search accepts.
pub const ORACLE_LIMIT: usize = 20;

/// A minimum exemplar set and its best assignment score.
#[derive(Debug, Clone, PartialEq)]
pub struct MinCover {
    pub size: usize,
    pub exemplars: Vec<usize>,
    /// Sum of member-to-exemplar similarities under the best assignment.
    pub similarity: f64,
}

/// Exact minimum cover over finite-distance adjacency.
pub fn min_cover_oracle(m: &DistanceMatrix) -> Result<MinCover> {
    let n = m.n();
    search(n, |i, j| m.get(i, j).map(|d| -d.value()))
}

/// Same search over an explicit similarity graph.
pub fn min_cover_graph(g: &SimilarityGraph) -> Result<MinCover> {
    search(g.n(), |i, j| g.similarity(i, j))
}

/// Enumerate subsets by increasing size in lexicographic order. The first
/// size with a feasible set wins; within it, the highest assignment score,
/// then the lexicographically first set.
fn search(n: usize, sim: impl Fn(usize, usize) -> Option<f64>) -> Result<MinCover> {
    if n > ORACLE_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: ORACLE_LIMIT,
        });
    }
    if n == 0 {
        return Ok(MinCover {
            size: 0,
            exemplars: Vec::new(),
            similarity: 0.0,
        });
    }
    let closed: Vec<u32> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| i == j || sim(i, j).is_some())
                .fold(0u32, |m, j| m | (1 << j))
        })
        .collect();
    let full = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };

    for size in 1..=n {
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            let covered = combo.iter().fold(0u32, |m, &e| m | closed[e]);
            if covered == full {
                let score: f64 = (0..n)
                    .filter(|i| !combo.contains(i))
                    .map(|i| {
                        combo
                            .iter()
                            .filter_map(|&e| sim(i, e))
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .sum();
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    best = Some((score, combo.clone()));
                }
            }
            if !next_combination(&mut combo, n) {
                break;
            }
        }
        if let Some((similarity, exemplars)) = best {
            return Ok(MinCover {
                size,
                exemplars,
                similarity,
            });
        }
    }
    unreachable!("the full set always covers")
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
