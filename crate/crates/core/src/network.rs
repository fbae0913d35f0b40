//! Static Watts-Strogatz topologies and per-message delivery sampling.
//!
//! Connectivity `c` in `[0, 1]` maps to the ring-lattice degree
//! `k = 2 + round(c (n - 3))`, rounded down to even; `c = 1` yields the
//! complete graph and `c = 0` a ring. Reliability `r` is the independent
//! probability that one message on one link is delivered.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::streams::{stream, sub_seed, Purpose};

pub const DEFAULT_REWIRE_PROB: f64 = 0.1;

const MAX_REGENERATIONS: u64 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    adjacency: Vec<Vec<usize>>,
    connectivity: f64,
    rewire_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityModel {
    reliability: f64,
}

impl ReliabilityModel {
    pub fn new(reliability: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&reliability) {
            return Err(invalid(format!("reliability {reliability} outside [0, 1]")));
        }
        Ok(Self { reliability })
    }

    pub fn reliability(&self) -> f64 {
        self.reliability
    }

    /// One Bernoulli draw. Always consumes exactly one value from `rng`.
    pub fn delivers<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        rng.random::<f64>() < self.reliability
    }
}

/// Even ring-lattice degree for `connectivity` on `n` nodes.
pub fn lattice_degree(n: usize, connectivity: f64) -> usize {
    let k = 2 + (connectivity * (n - 3) as f64).round() as usize;
    k - k % 2
}

fn ring_lattice(n: usize, k: usize) -> Vec<BTreeSet<usize>> {
    let mut adj = vec![BTreeSet::new(); n];
    for u in 0..n {
        for j in 1..=k / 2 {
            let v = (u + j) % n;
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    adj
}

fn rewire(adj: &mut [BTreeSet<usize>], k: usize, p: f64, seed: u64) {
    let n = adj.len();
    let mut rng = stream(seed, Purpose::Topology, 1, 0);
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            // Always draw so later edges see the same stream regardless of outcome.
            let roll: f64 = rng.random();
            if roll >= p || !adj[u].contains(&v) || adj[u].len() >= n - 1 {
                continue;
            }
            let candidates: Vec<usize> = (0..n).filter(|&w| w != u && !adj[u].contains(&w)).collect();
            if let Some(&w) = candidates.choose(&mut rng) {
                adj[u].remove(&v);
                adj[v].remove(&u);
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
    }
}

fn is_connected(adj: &[Vec<usize>]) -> bool {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

impl Topology {
    /// Small-world graph on `n >= 3` nodes. Disconnected draws are
    /// regenerated with the next sub-seed.
    pub fn watts_strogatz(n: usize, connectivity: f64, rewire_prob: f64, seed: u64) -> Result<Self> {
        if n < 3 {
            return Err(invalid(format!("topology needs at least 3 nodes, got {n}")));
        }
        if !(0.0..=1.0).contains(&connectivity) {
            return Err(invalid(format!("connectivity {connectivity} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&rewire_prob) {
            return Err(invalid(format!("rewire_prob {rewire_prob} outside [0, 1]")));
        }
        if connectivity == 1.0 {
            let adjacency = (0..n).map(|u| (0..n).filter(|&v| v != u).collect()).collect();
            return Ok(Self {
                adjacency,
                connectivity,
                rewire_prob,
            });
        }
        let k = lattice_degree(n, connectivity);
        for attempt in 0..MAX_REGENERATIONS {
            let mut adj = ring_lattice(n, k);
            rewire(&mut adj, k, rewire_prob, sub_seed(seed, Purpose::Topology, 0, attempt));
            let adjacency: Vec<Vec<usize>> = adj.into_iter().map(|s| s.into_iter().collect()).collect();
            if is_connected(&adjacency) {
                return Ok(Self {
                    adjacency,
                    connectivity,
                    rewire_prob,
                });
            }
        }
        Err(invalid(format!(
            "no connected Watts-Strogatz graph found for n={n}, k={k}, p={rewire_prob}"
        )))
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn connectivity(&self) -> f64 {
        self.connectivity
    }

    pub fn rewire_prob(&self) -> f64 {
        self.rewire_prob
    }

    /// Sorted neighbour ids of `node`.
    pub fn neighbors(&self, node: usize) -> Result<&[usize]> {
        self.adjacency.get(node).map(Vec::as_slice).ok_or(Error::UnknownNode {
            node,
            n_nodes: self.n_nodes(),
        })
    }

    pub fn degree(&self, node: usize) -> Result<usize> {
        self.neighbors(node).map(<[usize]>::len)
    }

    pub fn total_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.total_degree() / 2
    }

    /// Each undirected edge once, as `(low, high)`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (u, ns) in self.adjacency.iter().enumerate() {
            for &v in ns {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        is_connected(&self.adjacency)
    }

    /// Edge list as `source,target` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("source,target\n");
        for (u, v) in self.edges() {
            s.push_str(&format!("{u},{v}\n"));
        }
        s
    }

    /// Neighbours reached by one broadcast from `node`: each included
    /// independently with the model's delivery probability, in neighbour order.
    pub fn sample_reachable<R: Rng + ?Sized>(
        &self,
        reliability: &ReliabilityModel,
        node: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        Ok(self
            .neighbors(node)?
            .iter()
            .copied()
            .filter(|_| reliability.delivers(rng))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::stream;
    use proptest::prelude::*;

    fn check_invariants(t: &Topology) {
        for u in 0..t.n_nodes() {
            let ns = t.neighbors(u).unwrap();
            assert!(!ns.contains(&u), "self loop at {u}");
            assert!(ns.windows(2).all(|w| w[0] < w[1]), "unsorted or duplicate");
            for &v in ns {
                assert!(t.neighbors(v).unwrap().contains(&u), "asymmetric {u}-{v}");
            }
        }
        assert!(t.is_connected());
    }

    #[test]
    fn complete_graph_at_full_connectivity() {
        let t = Topology::watts_strogatz(6, 1.0, 0.1, 3).unwrap();
        assert_eq!(t.edge_count(), 15);
        check_invariants(&t);
        assert_eq!(t.neighbors(2).unwrap(), &[0, 1, 3, 4, 5]);
    }

    #[test]
    fn ring_at_zero_connectivity() {
        let t = Topology::watts_strogatz(6, 0.0, 0.0, 3).unwrap();
        for u in 0..6 {
            assert_eq!(t.degree(u).unwrap(), 2);
        }
        check_invariants(&t);
        let ring5 = Topology::watts_strogatz(5, 0.0, 0.0, 0).unwrap();
        assert_eq!(ring5.neighbors(0).unwrap(), &[1, 4]);
    }

    #[test]
    fn degree_mapping() {
        assert_eq!(lattice_degree(20, 0.0), 2);
        assert_eq!(lattice_degree(20, 0.5), 10);
        assert_eq!(lattice_degree(20, 0.9), 16);
        assert_eq!(lattice_degree(6, 1.0), 4);
    }

    #[test]
    fn too_small_or_out_of_range() {
        assert!(Topology::watts_strogatz(2, 0.5, 0.1, 0).is_err());
        assert!(Topology::watts_strogatz(5, 1.5, 0.1, 0).is_err());
        assert!(Topology::watts_strogatz(5, 0.5, -0.1, 0).is_err());
    }

    #[test]
    fn unknown_node() {
        let t = Topology::watts_strogatz(4, 0.0, 0.0, 0).unwrap();
        assert_eq!(t.neighbors(9), Err(Error::UnknownNode { node: 9, n_nodes: 4 }));
    }

    #[test]
    fn reliability_extremes() {
        let t = Topology::watts_strogatz(8, 0.5, 0.1, 1).unwrap();
        let mut rng = stream(0, Purpose::Delivery, 0, 0);
        let all = ReliabilityModel::new(1.0).unwrap();
        let none = ReliabilityModel::new(0.0).unwrap();
        for u in 0..8 {
            assert_eq!(t.sample_reachable(&all, u, &mut rng).unwrap(), t.neighbors(u).unwrap());
            assert!(t.sample_reachable(&none, u, &mut rng).unwrap().is_empty());
        }
        assert!(ReliabilityModel::new(1.01).is_err());
    }

    #[test]
    fn half_reliability_binomial_mean() {
        // Ring lattice of degree 4: node 0 has 4 neighbours; mean reached is 4 * 0.5.
        let t = Topology::watts_strogatz(10, 2.0 / 7.0, 0.0, 0).unwrap();
        assert_eq!(t.degree(0).unwrap(), 4);
        let half = ReliabilityModel::new(0.5).unwrap();
        let mut rng = stream(5, Purpose::Delivery, 0, 0);
        let trials = 10_000;
        let total: usize = (0..trials)
            .map(|_| t.sample_reachable(&half, 0, &mut rng).unwrap().len())
            .sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 2.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Topology::watts_strogatz(30, 0.3, 0.5, 9).unwrap();
        assert_eq!(a, Topology::watts_strogatz(30, 0.3, 0.5, 9).unwrap());
        assert_ne!(a, Topology::watts_strogatz(30, 0.3, 0.5, 10).unwrap());
    }

    #[test]
    fn edge_csv() {
        let t = Topology::watts_strogatz(3, 0.0, 0.0, 0).unwrap();
        assert_eq!(t.to_csv(), "source,target\n0,1\n0,2\n1,2\n");
    }

    proptest! {
        #[test]
        fn invariants_hold(n in 3usize..40, c in 0.0..1.0f64, p in 0.0..=1.0f64, seed in any::<u64>()) {
            let t = Topology::watts_strogatz(n, c, p, seed).unwrap();
            check_invariants(&t);
            // Rewiring moves edges but never creates or destroys them.
            prop_assert_eq!(t.edge_count(), n * lattice_degree(n, c) / 2);
        }

        #[test]
        fn reachable_is_subset(n in 3usize..20, r in 0.0..=1.0f64, seed in any::<u64>()) {
            let t = Topology::watts_strogatz(n, 0.5, 0.2, seed).unwrap();
            let rel = ReliabilityModel::new(r).unwrap();
            let mut rng = stream(seed, Purpose::Delivery, 1, 1);
            for u in 0..n {
                let reach = t.sample_reachable(&rel, u, &mut rng).unwrap();
                let ns = t.neighbors(u).unwrap();
                prop_assert!(reach.iter().all(|v| ns.contains(v)));
            }
        }

        #[test]
        fn degree_monotone_in_connectivity(n in 4usize..60, a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(lattice_degree(n, lo) <= lattice_degree(n, hi));
            let full = Topology::watts_strogatz(n, 1.0, 0.1, 0).unwrap();
            prop_assert!(lattice_degree(n, hi) <= full.degree(0).unwrap());
        }
    }
}
