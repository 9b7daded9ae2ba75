//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use nashseek::graph::DirectedGraph;
use nashseek::mixing::WeightMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// All-pairs distances by Floyd–Warshall; `usize::MAX` for unreachable.
pub fn floyd(g: &DirectedGraph) -> Vec<Vec<usize>> {
    let m = g.num_nodes();
    let inf = usize::MAX;
    let mut d = vec![vec![inf; m]; m];
    for i in 0..m {
        d[i][i] = 0;
        for j in 0..m {
            if i != j && g.has_edge(i, j) {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                if d[i][k] != inf && d[k][j] != inf && d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

pub fn diameter(g: &DirectedGraph) -> Option<usize> {
    let d = floyd(g);
    let mut best = 0;
    for row in &d {
        for &x in row {
            if x == usize::MAX {
                return None;
            }
            best = best.max(x);
        }
    }
    Some(best)
}

/// Every shortest `from → to` path, as its list of edges, found by
/// enumerating all simple paths and keeping the shortest.
pub fn shortest_paths(g: &DirectedGraph, from: usize, to: usize) -> Vec<Vec<(usize, usize)>> {
    let m = g.num_nodes();
    let mut all: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut stack = vec![(from, vec![from])];
    while let Some((node, path)) = stack.pop() {
        if node == to {
            all.push(path.windows(2).map(|w| (w[0], w[1])).collect());
            continue;
        }
        for next in 0..m {
            if next != node && g.has_edge(node, next) && !path.contains(&next) {
                let mut p = path.clone();
                p.push(next);
                stack.push((next, p));
            }
        }
    }
    let best = all.iter().map(Vec::len).min().unwrap_or(0);
    all.retain(|p| p.len() == best);
    all
}

/// Maximal edge utility by enumerating every shortest-path covering.
pub fn brute_edge_utility(g: &DirectedGraph) -> usize {
    let m = g.num_nodes();
    let mut options = Vec::new();
    for j in 0..m {
        for l in 0..m {
            if j != l {
                options.push(shortest_paths(g, j, l));
            }
        }
    }
    let mut counts = vec![0usize; m * m];
    let mut best = 0;
    fn go(idx: usize, options: &[Vec<Vec<(usize, usize)>>], counts: &mut [usize], m: usize, current: usize, best: &mut usize) {
        if current + (options.len() - idx) <= *best {
            return;
        }
        if idx == options.len() {
            *best = (*best).max(current);
            return;
        }
        for path in &options[idx] {
            let mut cur = current;
            for &(a, b) in path {
                counts[a * m + b] += 1;
                cur = cur.max(counts[a * m + b]);
            }
            go(idx + 1, options, counts, m, cur, best);
            for &(a, b) in path {
                counts[a * m + b] -= 1;
            }
        }
    }
    go(0, &options, &mut counts, m, 0, &mut best);
    best
}

/// Graph with self loops and the given off-diagonal adjacency bits.
pub fn graph_from_bits(m: usize, bits: u64) -> DirectedGraph {
    let mut g = DirectedGraph::with_self_loops(m);
    let mut b = 0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                if bits >> b & 1 == 1 {
                    g.add_edge(i, j).unwrap();
                }
                b += 1;
            }
        }
    }
    g
}

pub fn random_strong_graph(rng: &mut impl Rng, m: usize, p: f64) -> DirectedGraph {
    loop {
        let mut g = DirectedGraph::with_self_loops(m);
        for i in 0..m {
            for j in 0..m {
                if i != j && rng.gen_bool(p) {
                    g.add_edge(i, j).unwrap();
                }
            }
        }
        if diameter(&g).is_some() {
            return g;
        }
    }
}

pub fn random_matrix(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

pub fn random_vector(rng: &mut impl Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Positive stochastic vector.
pub fn random_simplex(rng: &mut impl Rng, m: usize) -> DVector<f64> {
    let v = DVector::from_fn(m, |_, _| rng.gen_range(0.05..1.0));
    let s = v.sum();
    v / s
}

use nashseek::game::{AffineGradient, BlockLayout, GameSpec};
use std::sync::Arc;

/// Independent quadratic costs `½ x_i'Q_i x_i + c_i'x_i` on boxes, with the
/// clamped unconstrained minimiser as the equilibrium.
pub fn decoupled_game(rng: &mut impl Rng, m: usize) -> (GameSpec, DVector<f64>) {
    let dims: Vec<usize> = (0..m).map(|_| rng.gen_range(1..4)).collect();
    let layout = BlockLayout::new(dims).unwrap();
    let n = layout.total();
    let q: DVector<f64> = DVector::from_fn(n, |_, _| rng.gen_range(1.0..8.0));
    let c: DVector<f64> = DVector::from_fn(n, |_, _| rng.gen_range(-10.0..10.0));
    let lower = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..0.0));
    let upper = DVector::from_fn(n, |j, _| lower[j] + rng.gen_range(0.5..3.0));
    let closed = DVector::from_fn(n, |j, _| (-c[j] / q[j]).clamp(lower[j], upper[j]));
    let grad = AffineGradient::new(layout.clone(), DMatrix::from_diagonal(&q), c).unwrap();
    (GameSpec::new(layout, lower, upper, Arc::new(grad)).unwrap(), closed)
}

/// Row-stochastic matrix with random positive weights on the support of `g`.
pub fn random_weights(rng: &mut impl Rng, g: &DirectedGraph) -> WeightMatrix {
    let m = g.num_nodes();
    let mut w = DMatrix::zeros(m, m);
    for i in 0..m {
        w[(i, i)] = rng.gen_range(0.2..1.0);
        for j in g.in_neighbors(i) {
            if j != i {
                w[(i, j)] = rng.gen_range(0.2..1.0);
            }
        }
        let s: f64 = w.row(i).sum();
        for j in 0..m {
            w[(i, j)] /= s;
        }
    }
    WeightMatrix::new(w).unwrap()
}

/// `(φ, π)` with `φ'W = π'`, `φ` drawn at random.
pub fn compatible_pair(rng: &mut impl Rng, w: &WeightMatrix) -> (DVector<f64>, DVector<f64>) {
    let phi = random_simplex(rng, w.size());
    let mut pi = w.matrix().tr_mul(&phi);
    let s = pi.sum();
    pi /= s;
    (phi, pi)
}
