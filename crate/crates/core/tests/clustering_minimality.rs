use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visitpat::appropagation::{
    cluster, median_preference, minimizing_preference, net_similarity, ApParams, ClusteringResult,
    SimilarityGraph,
};
use visitpat::evalkit::min_cover_graph;

/// Smallest set size dominating every node, by trying all subsets in order
/// of popcount.
fn brute_min_cover(n: usize, adj: &[Vec<bool>]) -> usize {
    let mut best = n;
    for mask in 0u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if size >= best {
            continue;
        }
        let covered = (0..n).all(|i| (0..n).any(|e| mask & (1 << e) != 0 && (e == i || adj[e][i])));
        if covered {
            best = size;
        }
    }
    best
}

fn random_graph(rng: &mut ChaCha8Rng) -> (SimilarityGraph, Vec<Vec<bool>>) {
    let n = rng.random_range(3..=12);
    let p = rng.random_range(0.15..0.6);
    let mut adj = vec![vec![false; n]; n];
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                adj[i][j] = true;
                adj[j][i] = true;
                edges.push((i, j, -f64::from(rng.random_range(0..16u32)) / 2.0));
            }
        }
    }
    (SimilarityGraph::from_edges(n, edges), adj)
}

fn minimizing(g: SimilarityGraph, seed: u64) -> (SimilarityGraph, ClusteringResult) {
    let pref = minimizing_preference(&g);
    let g = g.with_preference(pref);
    let params = ApParams {
        seed,
        ..ApParams::default()
    };
    let r = cluster(&g, &params).unwrap();
    (g, r)
}

fn assert_feasible(g: &SimilarityGraph, r: &ClusteringResult) {
    for (i, &e) in r.assignment.iter().enumerate() {
        assert!(r.exemplars.binary_search(&e).is_ok(), "{i} assigned to non-exemplar {e}");
        assert!(g.similarity(i, e).is_some(), "{i} -> {e} has no edge");
    }
    for &e in &r.exemplars {
        assert_eq!(r.assignment[e], e);
    }
}

#[test]
fn minimizing_mode_meets_minimum_cover() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut hits = 0;
    let total = 200u64;
    for t in 0..total {
        let (g, adj) = random_graph(&mut rng);
        let n = g.n();
        let (g, r) = minimizing(g, t);
        assert_feasible(&g, &r);
        let optimum = brute_min_cover(n, &adj);
        assert_eq!(min_cover_graph(&g).unwrap().size, optimum);
        assert!(r.cluster_count() >= optimum, "undercut on instance {t}");
        hits += u64::from(r.cluster_count() == optimum);
    }
    assert!(hits * 100 >= total * 95, "{hits}/{total} minimal");
}

#[test]
fn median_mode_never_uses_fewer_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..60 {
        let (g, _) = random_graph(&mut rng);
        if g.edge_count() == 0 {
            continue;
        }
        let (_, low) = minimizing(g.clone(), 0);
        let med = median_preference(&g);
        let gm = g.with_preference(med);
        let r = cluster(&gm, &ApParams::default()).unwrap();
        assert_feasible(&gm, &r);
        assert!(r.cluster_count() >= low.cluster_count());
    }
}

#[test]
fn star_graph_uses_its_center() {
    let g = SimilarityGraph::from_edges(3, [(0, 1, -1.0), (0, 2, -1.0)]);
    let (_, r) = minimizing(g, 0);
    assert_eq!(r.exemplars, vec![0]);
    assert_eq!(r.assignment, vec![0, 0, 0]);
}

#[test]
fn equal_complete_graph_is_one_cluster_at_lowest_index() {
    let edges = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j, -1.0)));
    let (_, r) = minimizing(SimilarityGraph::from_edges(5, edges), 0);
    assert_eq!(r.exemplars, vec![0]);
}

#[test]
fn isolated_nodes_are_singletons() {
    let g = SimilarityGraph::from_edges(4, [(0, 1, -2.0)]);
    let (_, r) = minimizing(g, 0);
    assert_eq!(r.cluster_count(), 3);
    assert_eq!(r.assignment[2], 2);
    assert_eq!(r.assignment[3], 3);
}

#[test]
fn net_similarity_examples() {
    let single = SimilarityGraph::from_edges(1, []).with_preference(-7.0);
    let r = cluster(&single, &ApParams::default()).unwrap();
    assert_eq!(net_similarity(&single, &r).unwrap(), -7.0);

    let pair = SimilarityGraph::from_edges(2, [(0, 1, -1.0)]).with_preference(-10.0);
    let r = ClusteringResult {
        exemplars: vec![0],
        assignment: vec![0, 0],
        net_sim: 0.0,
        iterations: 0,
        converged: true,
    };
    assert_eq!(net_similarity(&pair, &r).unwrap(), -11.0);

    let broken = ClusteringResult {
        exemplars: vec![0],
        assignment: vec![0, 0, 0],
        net_sim: 0.0,
        iterations: 0,
        converged: true,
    };
    let sparse = SimilarityGraph::from_edges(3, [(0, 1, -1.0)]).with_preference(-10.0);
    assert!(net_similarity(&sparse, &broken).is_err());
}

#[test]
fn preference_formula() {
    assert_eq!(minimizing_preference(&SimilarityGraph::from_edges(3, [])), -10.0);
    let g = SimilarityGraph::from_edges(3, [(0, 1, -2.0), (1, 2, -3.0)]);
    assert_eq!(minimizing_preference(&g), -60.0);
}

#[test]
fn runs_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (g, _) = random_graph(&mut rng);
    let (_, a) = minimizing(g.clone(), 42);
    let (_, b) = minimizing(g, 42);
    assert_eq!(a, b);
}
