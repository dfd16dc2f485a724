use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::appropagation::SimilarityGraph;
use crate::error::{Error, Result};
use crate::par;
use crate::tdist;

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Param("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Param(format!("k = {k} exceeds n = {n}")));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&c, &x)| {
            let d = c - if x { 1.0 } else { 0.0 };
            d * d
        })
        .sum()
}

/// Lloyd's k-means on raw bit vectors with k-means++ seeding.
pub fn kmeans_baseline(data: &[&[bool]], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = data.len();
    check_k(n, k)?;
    let dim = data[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_f = |b: &[bool]| -> Vec<f64> { b.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect() };

    let mut centers: Vec<Vec<f64>> = vec![to_f(data[rng.random_range(0..n)])];
    let mut nearest: Vec<f64> = data.iter().map(|p| sq_dist(&centers[0], p)).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        };
        let c = to_f(data[pick]);
        for (d, p) in nearest.iter_mut().zip(data) {
            *d = d.min(sq_dist(&c, p));
        }
        centers.push(c);
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..300 {
        let next = par::map_slice(data, |p| {
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(center, p);
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        });
        if next == labels {
            break;
        }
        labels = next;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &l) in data.iter().zip(&labels) {
            sizes[l] += 1;
            for (s, &x) in sums[l].iter_mut().zip(p.iter()) {
                if x {
                    *s += 1.0;
                }
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            }
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    Complete,
    Single,
    Average,
}

/// Agglomerative clustering under Euclidean distance, cut at `k` clusters.
pub fn hc_baseline(data: &[&[bool]], k: usize, linkage: Linkage) -> Result<Vec<usize>> {
    let n = data.len();
    check_k(n, k)?;
    let mut dist: Vec<Vec<f64>> = par::map_range(n, |i| {
        (0..n)
            .map(|j| {
                let diff = data[i].iter().zip(data[j]).filter(|(a, b)| a != b).count();
                (diff as f64).sqrt()
            })
            .collect()
    });
    // nearest-neighbour chain; all three linkages are reducible
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges: Vec<(f64, usize, usize)> = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push((0..n).find(|&i| active[i]).unwrap());
        }
        let a = *chain.last().unwrap();
        let prev = chain.len().checked_sub(2).map(|i| chain[i]);
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if j == a || !active[j] {
                continue;
            }
            let d = dist[a][j];
            if d < best.0 || (d == best.0 && Some(j) == prev) {
                best = (d, j);
            }
        }
        let b = best.1;
        if Some(b) == prev {
            chain.truncate(chain.len() - 2);
            let (keep, gone) = (a.min(b), a.max(b));
            merges.push((best.0, keep, gone));
            for j in 0..n {
                if !active[j] || j == keep || j == gone {
                    continue;
                }
                let (dk, dg) = (dist[keep][j], dist[gone][j]);
                let d = match linkage {
                    Linkage::Complete => dk.max(dg),
                    Linkage::Single => dk.min(dg),
                    Linkage::Average => {
                        (dk * size[keep] as f64 + dg * size[gone] as f64)
                            / (size[keep] + size[gone]) as f64
                    }
                };
                dist[keep][j] = d;
                dist[j][keep] = d;
            }
            size[keep] += size[gone];
            active[gone] = false;
            remaining -= 1;
        } else {
            chain.push(b);
        }
    }
    // replay merges in height order and stop at k clusters
    merges.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(_, a, b) in merges.iter().take(n - k) {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let mut ids = std::collections::HashMap::new();
    Ok((0..n)
        .map(|i| {
            let r = find(&mut parent, i);
            let next = ids.len();
            *ids.entry(r).or_insert(next)
        })
        .collect())
}

/// Whole-sequence distance for the comparison graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesDistance {
    Euclidean,
    Dtw,
}

impl SeriesDistance {
    pub fn eval(self, a: &[bool], b: &[bool]) -> Result<f64> {
        match self {
            SeriesDistance::Euclidean => tdist::euclidean(a, b),
            SeriesDistance::Dtw => tdist::dtw(a, b),
        }
    }
}

/// All pairs of a dataset ordered by a [`SeriesDistance`], closest first.
/// Ties go to the lower `(i, j)`.
#[derive(Debug, Clone)]
pub struct PairRanking {
    n: usize,
    pairs: Vec<(f64, usize, usize)>,
}

impl PairRanking {
    pub fn new(data: &[&[bool]], metric: SeriesDistance) -> Result<Self> {
        let n = data.len();
        let rows = par::map_range(n, |i| {
            (i + 1..n)
                .map(|j| metric.eval(data[i], data[j]).map(|d| (d, i, j)))
                .collect::<Result<Vec<_>>>()
        });
        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for r in rows {
            pairs.extend(r?);
        }
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        Ok(Self { n, pairs })
    }

    /// Similarity graph over the `keep` closest pairs, similarity `-distance`.
    ///
    /// Passing the edge count of a bounded-distance graph compares the two
    /// distances at equal graph density.
    pub fn graph(&self, keep: usize) -> SimilarityGraph {
        let edges = self.pairs.iter().take(keep).map(|&(d, i, j)| (i, j, -d));
        SimilarityGraph::from_edges(self.n, edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> Vec<Vec<bool>> {
        ["1100000", "1110000", "1100001", "0000111", "0001111", "0000011"]
            .iter()
            .map(|s| s.chars().map(|c| c == '1').collect())
            .collect()
    }

    fn distinct(labels: &[usize]) -> usize {
        let mut l = labels.to_vec();
        l.sort_unstable();
        l.dedup();
        l.len()
    }

    #[test]
    fn kmeans_extremes() {
        let d = data();
        let refs: Vec<&[bool]> = d.iter().map(Vec::as_slice).collect();
        assert_eq!(distinct(&kmeans_baseline(&refs, 1, 3).unwrap()), 1);
        assert_eq!(distinct(&kmeans_baseline(&refs, 6, 3).unwrap()), 6);
        let two = kmeans_baseline(&refs, 2, 3).unwrap();
        assert_eq!(two[0], two[1]);
        assert_ne!(two[0], two[3]);
        assert!(kmeans_baseline(&refs, 7, 3).is_err());
        assert!(kmeans_baseline(&refs, 0, 3).is_err());
    }

    #[test]
    fn hc_extremes() {
        let d = data();
        let refs: Vec<&[bool]> = d.iter().map(Vec::as_slice).collect();
        assert_eq!(distinct(&hc_baseline(&refs, 1, Linkage::Complete).unwrap()), 1);
        assert_eq!(distinct(&hc_baseline(&refs, 6, Linkage::Complete).unwrap()), 6);
        let two = hc_baseline(&refs, 2, Linkage::Complete).unwrap();
        assert_eq!(two, vec![0, 0, 0, 1, 1, 1]);
        assert!(hc_baseline(&refs, 7, Linkage::Complete).is_err());
    }

    #[test]
    fn nearest_pairs_keeps_closest() {
        let d = data();
        let refs: Vec<&[bool]> = d.iter().map(Vec::as_slice).collect();
        let g = PairRanking::new(&refs, SeriesDistance::Euclidean).unwrap().graph(4);
        assert_eq!(g.edge_count(), 4);
        // exactly the four Hamming-1 pairs
        assert_eq!(g.similarity(0, 1), Some(-1.0));
        assert_eq!(g.similarity(3, 4), Some(-1.0));
        assert_eq!(g.similarity(3, 5), Some(-1.0));
        assert_eq!(g.similarity(0, 2), Some(-1.0));
        assert_eq!(g.similarity(1, 2), None);
        let all = PairRanking::new(&refs, SeriesDistance::Dtw).unwrap().graph(usize::MAX);
        assert_eq!(all.edge_count(), 15);
    }
}
