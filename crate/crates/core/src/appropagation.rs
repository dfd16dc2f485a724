//! Sparse affinity propagation over a similarity graph whose edges exist only
//! where the temporal distance is finite.
//!
//! With [`minimizing_preference`] the shared self-similarity dominates every
//! edge, so the objective is governed by the exemplar count and message
//! passing settles on a smallest covering set of exemplars.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tdist::DistanceMatrix;

/// Symmetric sparse similarities plus a common preference.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    adj: Vec<Vec<(usize, f64)>>,
    pub preference: f64,
}

impl SimilarityGraph {
    /// Similarity `-d` on every finite off-diagonal pair.
    pub fn from_matrix(m: &DistanceMatrix) -> Self {
        Self::from_edges(
            m.n(),
            m.finite_pairs().into_iter().map(|(i, j, d)| (i, j, -d.value())),
        )
    }

    /// Undirected edges `(i, j, similarity)`; self-loops are ignored and a
    /// repeated pair keeps its first similarity.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (i, j, s) in edges {
            if i == j {
                continue;
            }
            adj[i].push((j, s));
            adj[j].push((i, s));
        }
        for row in &mut adj {
            row.sort_by_key(|e| e.0);
            row.dedup_by_key(|e| e.0);
        }
        Self {
            adj,
            preference: 0.0,
        }
    }

    pub fn with_preference(mut self, preference: f64) -> Self {
        self.preference = preference;
        self
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    /// `s(i, j)`; the preference on the diagonal, `None` off the graph.
    pub fn similarity(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(self.preference);
        }
        let row = &self.adj[i];
        row.binary_search_by_key(&j, |e| e.0).ok().map(|k| row[k].1)
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Undirected edge similarities, one per pair.
    pub fn edge_similarities(&self) -> Vec<f64> {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().filter(move |e| e.0 > i).map(|e| e.1))
            .collect()
    }
}

/// `-10 * (sum of |s| over edges + 1)`: strictly below any achievable
/// member-to-exemplar similarity total, yet finite.
pub fn minimizing_preference(g: &SimilarityGraph) -> f64 {
    let total: f64 = g.edge_similarities().iter().map(|s| s.abs()).sum();
    -10.0 * (total + 1.0)
}

/// Median of the finite edge similarities (0 for an edgeless graph).
pub fn median_preference(g: &SimilarityGraph) -> f64 {
    let mut s = g.edge_similarities();
    if s.is_empty() {
        return 0.0;
    }
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PreferenceMode {
    #[default]
    Minimizing,
    Median,
}

impl PreferenceMode {
    pub fn preference(self, g: &SimilarityGraph) -> f64 {
        match self {
            PreferenceMode::Minimizing => minimizing_preference(g),
            PreferenceMode::Median => median_preference(g),
        }
    }
}

impl std::str::FromStr for PreferenceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimizing" | "min" => Ok(Self::Minimizing),
            "median" => Ok(Self::Median),
            _ => Err(Error::Param(format!("unknown preference mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApParams {
    pub damping: f64,
    pub max_iter: usize,
    pub stable_iters: usize,
    pub seed: u64,
}

impl Default for ApParams {
    fn default() -> Self {
        Self {
            damping: 0.9,
            max_iter: 1000,
            stable_iters: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    /// Exemplar indices, ascending.
    pub exemplars: Vec<usize>,
    /// Exemplar of each point; exemplars map to themselves.
    pub assignment: Vec<usize>,
    pub net_sim: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusteringResult {
    pub fn cluster_count(&self) -> usize {
        self.exemplars.len()
    }

    /// Members per exemplar, in exemplar order.
    pub fn clusters(&self) -> Vec<(usize, Vec<usize>)> {
        self.exemplars
            .iter()
            .map(|&e| {
                let members = (0..self.assignment.len())
                    .filter(|&i| self.assignment[i] == e)
                    .collect();
                (e, members)
            })
            .collect()
    }

    /// Cluster id (position of the exemplar) per point.
    pub fn labels(&self) -> Vec<usize> {
        self.assignment
            .iter()
            .map(|e| self.exemplars.binary_search(e).expect("assigned to exemplar"))
            .collect()
    }
}

/// Message slots in CSR layout: each row holds its neighbours plus itself.
struct Slots {
    offsets: Vec<usize>,
    target: Vec<usize>,
    sim: Vec<f64>,
    /// Slot of the reverse message `(k, i)` for slot `(i, k)`.
    rev: Vec<usize>,
    self_slot: Vec<usize>,
}

impl Slots {
    fn new(g: &SimilarityGraph, rng: &mut ChaCha8Rng) -> Self {
        let n = g.n();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut target = Vec::new();
        let mut sim = Vec::new();
        let mut self_slot = vec![0; n];
        offsets.push(0);
        for i in 0..n {
            let mut placed = false;
            for &(j, s) in g.neighbors(i) {
                if !placed && j > i {
                    self_slot[i] = target.len();
                    target.push(i);
                    sim.push(g.preference);
                    placed = true;
                }
                target.push(j);
                sim.push(s);
            }
            if !placed {
                self_slot[i] = target.len();
                target.push(i);
                sim.push(g.preference);
            }
            offsets.push(target.len());
        }
        // tie-breaking jitter far below any similarity resolution
        for s in &mut sim {
            *s += (1e-14 * s.abs() + 1e-300) * rng.random::<f64>();
        }
        let mut rev = vec![0; target.len()];
        for i in 0..n {
            for slot in offsets[i]..offsets[i + 1] {
                let k = target[slot];
                let row = &target[offsets[k]..offsets[k + 1]];
                rev[slot] = offsets[k] + row.binary_search(&i).expect("symmetric graph");
            }
        }
        Self {
            offsets,
            target,
            sim,
            rev,
            self_slot,
        }
    }

    fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// Run affinity propagation with the graph's preference.
pub fn cluster(g: &SimilarityGraph, params: &ApParams) -> Result<ClusteringResult> {
    if !(0.5..1.0).contains(&params.damping) {
        return Err(Error::Param(format!(
            "damping {} outside [0.5, 1)",
            params.damping
        )));
    }
    let n = g.n();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let slots = Slots::new(g, &mut rng);
    let m = slots.target.len();
    let mut resp = vec![0.0f64; m];
    let mut avail = vec![0.0f64; m];
    let d = params.damping;

    let mut exemplars: Vec<usize> = Vec::new();
    let mut stable = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;

    for it in 0..params.max_iter {
        iterations = it + 1;
        // responsibilities, row by row
        for i in 0..n {
            let row = slots.row(i);
            let (mut best, mut second, mut arg) = (f64::NEG_INFINITY, f64::NEG_INFINITY, usize::MAX);
            for slot in row.clone() {
                let v = avail[slot] + slots.sim[slot];
                if v > best {
                    second = best;
                    best = v;
                    arg = slot;
                } else if v > second {
                    second = v;
                }
            }
            for slot in row {
                let other = if slot == arg { second } else { best };
                let new = slots.sim[slot] - other;
                resp[slot] = d * resp[slot] + (1.0 - d) * new;
            }
        }
        // availabilities, column by column (column k's incoming slots are the
        // reverses of row k's slots)
        for k in 0..n {
            let kk = slots.self_slot[k];
            let mut positive = 0.0;
            for slot in slots.row(k) {
                if slot != kk {
                    positive += resp[slots.rev[slot]].max(0.0);
                }
            }
            for slot in slots.row(k) {
                let incoming = slots.rev[slot];
                let new = if slot == kk {
                    positive
                } else {
                    (resp[kk] + positive - resp[incoming].max(0.0)).min(0.0)
                };
                avail[incoming] = d * avail[incoming] + (1.0 - d) * new;
            }
        }

        let current: Vec<usize> = (0..n)
            .filter(|&k| {
                let s = slots.self_slot[k];
                resp[s] + avail[s] > 0.0
            })
            .collect();
        if current == exemplars {
            stable += 1;
        } else {
            stable = 0;
            exemplars = current;
        }
        if stable >= params.stable_iters && !exemplars.is_empty() {
            converged = true;
            break;
        }
    }

    if exemplars.is_empty() {
        // no point reached positive self-evidence; fall back to the strongest
        // candidate so assignment still has somewhere to start
        if let Some(k) = (0..n).max_by(|&a, &b| {
            let (sa, sb) = (slots.self_slot[a], slots.self_slot[b]);
            (resp[sa] + avail[sa]).total_cmp(&(resp[sb] + avail[sb])).then(b.cmp(&a))
        }) {
            exemplars.push(k);
        }
    }

    let (exemplars, assignment) = assign(g, &refine(g, exemplars));
    let mut result = ClusteringResult {
        exemplars,
        assignment,
        net_sim: 0.0,
        iterations,
        converged,
    };
    result.net_sim = net_similarity(g, &result)?;
    Ok(result)
}

/// Net similarity of `exemplars` under best assignment, or `None` if some
/// point has no adjacent exemplar.
fn assigned_score(g: &SimilarityGraph, is_ex: &[bool]) -> Option<f64> {
    let mut total = 0.0;
    for i in 0..g.n() {
        if is_ex[i] {
            total += g.preference;
            continue;
        }
        let best = g
            .neighbors(i)
            .iter()
            .filter(|e| is_ex[e.0])
            .map(|e| e.1)
            .max_by(f64::total_cmp)?;
        total += best;
    }
    Some(total)
}

/// Greedily remove exemplars whose removal keeps every point covered and
/// raises net similarity; largest gain first.
fn drop_redundant(g: &SimilarityGraph, exemplars: Vec<usize>) -> Vec<usize> {
    let n = g.n();
    let mut is_ex = vec![false; n];
    for &e in &exemplars {
        is_ex[e] = true;
    }
    let Some(mut score) = assigned_score(g, &is_ex) else {
        return exemplars;
    };
    loop {
        let mut best: Option<(usize, f64)> = None;
        for e in 0..n {
            if !is_ex[e] {
                continue;
            }
            is_ex[e] = false;
            if let Some(s) = assigned_score(g, &is_ex) {
                if s > score && best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((e, s));
                }
            }
            is_ex[e] = true;
        }
        match best {
            Some((e, s)) => {
                is_ex[e] = false;
                score = s;
            }
            None => break,
        }
    }
    (0..n).filter(|&i| is_ex[i]).collect()
}

fn adjacent(g: &SimilarityGraph, i: usize, k: usize) -> bool {
    i == k || g.neighbors(i).binary_search_by_key(&k, |e| e.0).is_ok()
}

/// Exemplar set with per-point bookkeeping for cheap move evaluation.
struct Cover {
    is_ex: Vec<bool>,
    /// Exemplars in each point's closed neighbourhood.
    count: Vec<u32>,
    /// Current exemplar of each point.
    owner: Vec<usize>,
    /// Similarity to the owner (preference for exemplars).
    gain: Vec<f64>,
}

impl Cover {
    fn new(g: &SimilarityGraph, exemplars: &[usize]) -> Self {
        let n = g.n();
        let mut is_ex = vec![false; n];
        for &e in exemplars {
            is_ex[e] = true;
        }
        let mut count = vec![0u32; n];
        for e in exemplars.iter().copied() {
            count[e] += 1;
            for &(j, _) in g.neighbors(e) {
                count[j] += 1;
            }
        }
        let (owner, gain): (Vec<usize>, Vec<f64>) = (0..n)
            .map(|i| {
                if is_ex[i] {
                    return (i, g.preference);
                }
                let (j, s) = g
                    .neighbors(i)
                    .iter()
                    .filter(|e| is_ex[e.0])
                    .fold((usize::MAX, f64::NEG_INFINITY), |b, &(j, s)| if s > b.1 { (j, s) } else { b });
                (j, s)
            })
            .collect();
        Self {
            is_ex,
            count,
            owner,
            gain,
        }
    }

    /// Net-similarity change from replacing the exemplars in `removed` by
    /// point `k`, or `None` if some point would be left uncovered. `members`
    /// lists every point owned by a removed exemplar.
    fn replace_delta(&self, g: &SimilarityGraph, members: &[usize], removed: &[usize], k: usize) -> Option<f64> {
        for &i in members {
            let lost: u32 = removed.iter().map(|&r| u32::from(adjacent(g, i, r))).sum();
            if self.count[i] == lost && !adjacent(g, i, k) {
                return None;
            }
        }
        let mut delta = g.preference - self.gain[k];
        for &i in members {
            if i == k {
                continue;
            }
            let best = g
                .neighbors(i)
                .iter()
                .filter(|e| e.0 == k || (self.is_ex[e.0] && !removed.contains(&e.0)))
                .map(|e| e.1)
                .fold(f64::NEG_INFINITY, f64::max);
            delta += best - self.gain[i];
        }
        for &(i, s) in g.neighbors(k) {
            if !self.is_ex[i] && !removed.contains(&self.owner[i]) && s > self.gain[i] {
                delta += s - self.gain[i];
            }
        }
        Some(delta)
    }

    /// Net-similarity change from handing exemplar `e`'s role to its member
    /// `k`. The two preferences cancel, so only similarities are summed.
    fn swap_delta(&self, g: &SimilarityGraph, members: &[usize], e: usize, k: usize) -> Option<f64> {
        for &i in members {
            if self.count[i] == u32::from(adjacent(g, i, e)) && !adjacent(g, i, k) {
                return None;
            }
        }
        let mut delta = -self.gain[k];
        for &i in members {
            if i == k {
                continue;
            }
            let best = g
                .neighbors(i)
                .iter()
                .filter(|x| x.0 == k || (self.is_ex[x.0] && x.0 != e))
                .map(|x| x.1)
                .fold(f64::NEG_INFINITY, f64::max);
            delta += if i == e { best } else { best - self.gain[i] };
        }
        for &(i, s) in g.neighbors(k) {
            if !self.is_ex[i] && self.owner[i] != e && s > self.gain[i] {
                delta += s - self.gain[i];
            }
        }
        Some(delta)
    }
}

/// Among members giving the same net similarity, hand each exemplar role to
/// the one with the most neighbours, then the lowest index.
fn settle_ties(g: &SimilarityGraph, mut current: Vec<usize>) -> Vec<usize> {
    const TIE: f64 = 1e-9;
    let n = g.n();
    let rank = |i: usize| (std::cmp::Reverse(g.neighbors(i).len()), i);
    'outer: loop {
        let cover = Cover::new(g, &current);
        for (x, &e) in current.iter().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| cover.owner[i] == e).collect();
            for &k in members.iter().filter(|&&k| rank(k) < rank(e)) {
                if cover.swap_delta(g, &members, e, k).is_some_and(|d| d.abs() <= TIE) {
                    current[x] = k;
                    current.sort_unstable();
                    continue 'outer;
                }
            }
        }
        return current;
    }
}

/// Local polish of an exemplar set: drop redundant exemplars, then take the
/// best strictly improving move that replaces one or two exemplars by a
/// single member of their clusters, until none is left.
fn refine(g: &SimilarityGraph, exemplars: Vec<usize>) -> Vec<usize> {
    let n = g.n();
    let (complete, _) = assign(g, &exemplars);
    let mut current = drop_redundant(g, complete);
    loop {
        let cover = Cover::new(g, &current);
        let owned = |r: &[usize]| -> Vec<usize> { (0..n).filter(|&i| r.contains(&cover.owner[i])).collect() };
        let mut moves: Vec<Vec<usize>> = current.iter().map(|&a| vec![a]).collect();
        for (x, &a) in current.iter().enumerate() {
            moves.extend(current[x + 1..].iter().map(|&b| vec![a, b]));
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for (mi, removed) in moves.iter().enumerate() {
            let members = owned(removed);
            for &k in members.iter().filter(|&&k| !cover.is_ex[k]) {
                if let Some(d) = cover.replace_delta(g, &members, removed, k) {
                    if d > 0.0 && best.is_none_or(|bb| d > bb.0) {
                        best = Some((d, mi, k));
                    }
                }
            }
        }
        let Some((_, mi, k)) = best else { break };
        let next: Vec<usize> = current
            .iter()
            .copied()
            .filter(|e| !moves[mi].contains(e))
            .chain(std::iter::once(k))
            .collect();
        let mut next = drop_redundant(g, next);
        next.sort_unstable();
        current = next;
    }
    settle_ties(g, current)
}

/// Attach every point to its most similar adjacent exemplar (lowest index on
/// ties). Points with no adjacent exemplar become exemplars themselves.
fn assign(g: &SimilarityGraph, exemplars: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = g.n();
    let mut is_ex = vec![false; n];
    for &e in exemplars {
        is_ex[e] = true;
    }
    let mut assignment = vec![usize::MAX; n];
    for i in 0..n {
        if is_ex[i] {
            assignment[i] = i;
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for &(j, s) in g.neighbors(i) {
            if is_ex[j] && best.is_none_or(|(_, bs)| s > bs) {
                best = Some((j, s));
            }
        }
        if let Some((j, _)) = best {
            assignment[i] = j;
        }
    }
    for i in 0..n {
        if assignment[i] == usize::MAX {
            assignment[i] = i;
            is_ex[i] = true;
        }
    }
    let exemplars = (0..n).filter(|&i| is_ex[i]).collect();
    (exemplars, assignment)
}

/// Member-to-exemplar similarity over non-exemplars plus one preference per
/// exemplar.
pub fn net_similarity(g: &SimilarityGraph, r: &ClusteringResult) -> Result<f64> {
    if r.assignment.len() != g.n() {
        return Err(Error::Contract(format!(
            "assignment covers {} of {} points",
            r.assignment.len(),
            g.n()
        )));
    }
    let mut total = r.exemplars.len() as f64 * g.preference;
    for (i, &e) in r.assignment.iter().enumerate() {
        if i == e {
            continue;
        }
        total += g.similarity(i, e).ok_or_else(|| {
            Error::Contract(format!("point {i} assigned to non-adjacent exemplar {e}"))
        })?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(g: SimilarityGraph) -> ClusteringResult {
        let p = minimizing_preference(&g);
        cluster(&g.with_preference(p), &ApParams::default()).unwrap()
    }

    #[test]
    fn preference_examples() {
        let g = SimilarityGraph::from_edges(3, []);
        assert_eq!(minimizing_preference(&g), -10.0);
        let g = SimilarityGraph::from_edges(3, [(0, 1, -2.0), (1, 2, -3.0)]);
        assert_eq!(minimizing_preference(&g), -60.0);
        assert_eq!(median_preference(&g), -2.5);
    }

    #[test]
    fn star_needs_its_centre() {
        let r = run(SimilarityGraph::from_edges(3, [(0, 1, -1.0), (0, 2, -1.0)]));
        assert_eq!(r.exemplars, vec![0]);
        assert_eq!(r.assignment, vec![0, 0, 0]);
        assert!(r.converged);
    }

    #[test]
    fn complete_equal_graph_gives_one_cluster() {
        let edges = (0..6).flat_map(|i| (i + 1..6).map(move |j| (i, j, -1.0)));
        let r = run(SimilarityGraph::from_edges(6, edges));
        assert_eq!(r.cluster_count(), 1);
    }

    #[test]
    fn isolated_points_are_singletons() {
        let r = run(SimilarityGraph::from_edges(4, [(0, 1, -0.5)]));
        assert_eq!(r.cluster_count(), 3);
        assert_eq!(r.assignment[2], 2);
        assert_eq!(r.assignment[3], 3);
    }

    #[test]
    fn net_similarity_examples() {
        let g = SimilarityGraph::from_edges(1, []).with_preference(-7.0);
        let r = ClusteringResult {
            exemplars: vec![0],
            assignment: vec![0],
            net_sim: 0.0,
            iterations: 0,
            converged: true,
        };
        assert_eq!(net_similarity(&g, &r).unwrap(), -7.0);

        let g = SimilarityGraph::from_edges(2, [(0, 1, -1.0)]).with_preference(-7.0);
        let one = ClusteringResult {
            exemplars: vec![0],
            assignment: vec![0, 0],
            ..r.clone()
        };
        let two = ClusteringResult {
            exemplars: vec![0, 1],
            assignment: vec![0, 1],
            ..r.clone()
        };
        assert_eq!(net_similarity(&g, &one).unwrap(), -8.0);
        assert!(net_similarity(&g, &two).unwrap() < net_similarity(&g, &one).unwrap());

        let g = SimilarityGraph::from_edges(2, []).with_preference(-7.0);
        assert!(matches!(net_similarity(&g, &one), Err(Error::Contract(_))));
    }

    #[test]
    fn deterministic_for_seed() {
        let edges = [(0, 1, -1.0), (1, 2, -0.5), (2, 3, -1.0), (3, 4, -0.25), (0, 4, -2.0)];
        let g = SimilarityGraph::from_edges(5, edges);
        let g = g.clone().with_preference(median_preference(&g));
        let a = cluster(&g, &ApParams::default()).unwrap();
        let b = cluster(&g, &ApParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_damping() {
        let g = SimilarityGraph::from_edges(2, []);
        let p = ApParams {
            damping: 1.0,
            ..ApParams::default()
        };
        assert!(cluster(&g, &p).is_err());
    }
}
