mod common;

use common::*;
use nashseek::graph::{gen_complete, gen_cycle, gen_random, gen_star, read_edge_list, DirectedGraph, GraphSequence};
use proptest::prelude::*;

#[test]
fn exhaustive_small_graphs_match_enumeration() {
    let mut checked = 0;
    for m in 2..=4usize {
        for bits in 0..(1u64 << (m * (m - 1))) {
            let g = graph_from_bits(m, bits);
            match diameter(&g) {
                None => assert!(!g.is_strongly_connected() && g.metrics().is_err()),
                Some(d) => {
                    let metrics = g.metrics().unwrap();
                    assert_eq!(metrics.diameter, d, "bits {bits:b}");
                    assert_eq!(metrics.max_edge_utility, brute_edge_utility(&g), "bits {bits:b}");
                    checked += 1;
                }
            }
        }
    }
    // strongly connected labelled digraphs on 2, 3 and 4 nodes
    assert_eq!(checked, 1 + 18 + 1606);
}

#[test]
fn random_graphs_up_to_six_nodes_match_enumeration() {
    let mut r = rng(11);
    for trial in 0..100 {
        let m = 2 + trial % 5;
        let g = random_strong_graph(&mut r, m, 0.3);
        let metrics = g.metrics().unwrap();
        assert_eq!(Some(metrics.diameter), diameter(&g));
        assert_eq!(metrics.max_edge_utility, brute_edge_utility(&g));
    }
}

#[test]
fn named_topologies() {
    for m in 3..=8 {
        let cycle = gen_cycle(m).unwrap();
        assert_eq!(brute_edge_utility(&cycle), m * (m - 1) / 2);
        assert_eq!(diameter(&cycle), Some(m - 1));
        let star = gen_star(m).unwrap();
        assert_eq!(diameter(&star), Some(2));
        assert_eq!(star.max_edge_utility().unwrap(), brute_edge_utility(&star));
        assert_eq!(brute_edge_utility(&gen_complete(m).unwrap()), 1);
    }
}

#[test]
fn bfs_agrees_with_floyd() {
    let mut r = rng(5);
    for _ in 0..50 {
        let g = random_strong_graph(&mut r, 7, 0.2);
        let d = floyd(&g);
        for (i, row) in g.distances().iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                assert_eq!(x.unwrap(), d[i][j]);
            }
        }
    }
}

proptest! {
    #[test]
    fn random_generator_is_strong_with_requested_degree(m in 2usize..12, d in 1usize..5, seed in any::<u64>()) {
        let d = d.min(m - 1);
        let g = gen_random(m, d, seed).unwrap();
        prop_assert!(g.is_strongly_connected());
        prop_assert!(diameter(&g).is_some());
        for i in 0..m {
            prop_assert!(g.has_edge(i, i));
            prop_assert_eq!(g.out_neighbors(i).filter(|&j| j != i).count(), d);
        }
        prop_assert_eq!(gen_random(m, d, seed).unwrap(), g);
    }

    #[test]
    fn time_varying_rounds_are_strong(m in 2usize..10, d in 1usize..5, seed in any::<u64>(), round in 0usize..500) {
        let seq = GraphSequence::seeded_random(m, d.min(m - 1), seed, 1).unwrap();
        let g = seq.graph_at(round);
        prop_assert!(diameter(&g).is_some());
        prop_assert!(g.out_neighbors(0).filter(|&j| j != 0).count() <= d.min(m - 1));
        prop_assert_eq!(seq.graph_at(round), g);
    }

    #[test]
    fn redraw_period_holds_graphs(m in 3usize..8, seed in any::<u64>(), period in 1usize..5, epoch in 0usize..20) {
        let seq = GraphSequence::seeded_random(m, 2, seed, period).unwrap();
        let first = seq.graph_at(epoch * period);
        for k in epoch * period..(epoch + 1) * period {
            prop_assert_eq!(&seq.graph_at(k), &first);
        }
    }

    #[test]
    fn edge_list_round_trip(m in 2usize..7, seed in any::<u64>(), rounds in 1usize..4) {
        let seq = GraphSequence::seeded_random(m, 2.min(m - 1), seed, 1).unwrap();
        let parsed = read_edge_list(seq.to_edge_list(rounds).as_bytes()).unwrap();
        for k in 0..rounds {
            prop_assert_eq!(parsed.graph_at(k), seq.graph_at(k));
        }
    }

    #[test]
    fn relabelling_preserves_metrics(seed in any::<u64>(), m in 2usize..7) {
        let mut r = rng(seed);
        let g = random_strong_graph(&mut r, m, 0.4);
        let perm: Vec<usize> = rand::seq::index::sample(&mut r, m, m).into_vec();
        let h = DirectedGraph::from_edges(m, g.edges().map(|(a, b)| (perm[a], perm[b]))).unwrap();
        prop_assert_eq!(g.metrics().unwrap(), h.metrics().unwrap());
    }
}
