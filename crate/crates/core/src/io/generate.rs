//! Seeded synthetic networks with shortest-path routing.

use std::collections::{HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EdgeSpec, IoError, NetworkSpec, RuleSpec, UpdateEvent, UpdateOp};
use crate::prefix::Prefix;

/// Weighted distribution of prefix lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskHistogram(pub Vec<(u8, u32)>);

impl Default for MaskHistogram {
    /// Mostly /24 with a tail of shorter and longer masks, the usual shape
    /// of routed IPv4 prefixes.
    fn default() -> Self {
        Self(vec![(8, 1), (12, 1), (16, 6), (18, 3), (20, 6), (22, 10), (23, 8), (24, 60), (26, 3), (28, 2)])
    }
}

impl MaskHistogram {
    pub fn uniform(lo: u8, hi: u8) -> Self {
        Self((lo..=hi).map(|l| (l, 1)).collect())
    }

    fn sample(&self, rng: &mut impl Rng) -> u8 {
        let total: u32 = self.0.iter().map(|(_, w)| w).sum();
        let mut pick = rng.random_range(0..total);
        for &(len, w) in &self.0 {
            if pick < w {
                return len;
            }
            pick -= w;
        }
        unreachable!("pick is below the total weight")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub nodes: usize,
    pub edges: usize,
    /// Destination prefixes; every router gets one rule for each.
    pub rules_per_node: usize,
    pub width: u8,
    pub masks: MaskHistogram,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn new(nodes: usize, edges: usize, rules_per_node: usize, seed: u64) -> Self {
        Self { nodes, edges, rules_per_node, width: 32, masks: MaskHistogram::default(), seed }
    }
}

/// Connected random graph, prefixes attached to random routers (host port
/// 0), and one shortest-path rule per (router, prefix).
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<NetworkSpec, IoError> {
    let n = cfg.nodes;
    let max_edges = n.saturating_mul(n.saturating_sub(1)) / 2;
    if n > 0 && cfg.edges + 1 < n {
        return Err(IoError::InfeasibleParameters(format!("{} edges cannot connect {n} nodes", cfg.edges)));
    }
    if cfg.edges > max_edges {
        return Err(IoError::InfeasibleParameters(format!("at most {max_edges} edges fit {n} nodes")));
    }
    if cfg.masks.0.is_empty() || cfg.masks.0.iter().any(|&(l, _)| l > cfg.width) || cfg.masks.0.iter().all(|&(_, w)| w == 0) {
        return Err(IoError::InfeasibleParameters("mask histogram does not fit the header width".into()));
    }
    if cfg.rules_per_node > 0 && n == 0 {
        return Err(IoError::InfeasibleParameters("rules need at least one node".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut spec = NetworkSpec { width: cfg.width, routers: (0..n).map(|i| format!("r{i}")).collect(), ..Default::default() };

    // adjacency: (neighbour, local port, neighbour's port)
    let mut adj: Vec<Vec<(usize, u32, u32)>> = vec![Vec::new(); n];
    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(cfg.edges);
    let mut link = |a: usize, b: usize, adj: &mut Vec<Vec<(usize, u32, u32)>>, spec: &mut NetworkSpec| {
        let key = (a.min(b), a.max(b));
        if a == b || !seen.insert(key) {
            return false;
        }
        let (pa, pb) = (adj[a].len() as u32 + 1, adj[b].len() as u32 + 1);
        adj[a].push((b, pa, pb));
        adj[b].push((a, pb, pa));
        spec.edges.push(EdgeSpec { a, port_a: pa, b, port_b: pb });
        true
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for i in 1..n {
        let j = rng.random_range(0..i);
        link(order[i], order[j], &mut adj, &mut spec);
    }
    while spec.edges.len() < cfg.edges {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        link(a, b, &mut adj, &mut spec);
    }
    spec.hosts = (0..n).map(|r| (r, 0)).collect();

    let mut prefixes = Vec::with_capacity(cfg.rules_per_node);
    let mut taken = HashSet::new();
    let mut misses = 0usize;
    while prefixes.len() < cfg.rules_per_node {
        let len = cfg.masks.sample(&mut rng);
        let bits = if len == 0 { 0 } else { rng.random::<u64>() >> (64 - len as u32) };
        let p = Prefix::new(bits, len).expect("bits fit the length");
        if taken.insert(p) {
            prefixes.push((p, rng.random_range(0..n)));
            misses = 0;
        } else {
            misses += 1;
            if misses > 10_000 {
                return Err(IoError::InfeasibleParameters("mask histogram cannot supply enough distinct prefixes".into()));
            }
        }
    }

    // next-hop port towards each owner, by BFS from the owner
    let mut owners: Vec<usize> = prefixes.iter().map(|&(_, o)| o).collect();
    owners.sort_unstable();
    owners.dedup();
    let mut next_hop: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut owner_slot = vec![usize::MAX; n];
    for (slot, &o) in owners.iter().enumerate() {
        owner_slot[o] = slot;
        let mut port = vec![u32::MAX; n];
        port[o] = 0;
        let mut queue = VecDeque::from([o]);
        while let Some(u) = queue.pop_front() {
            for &(v, _, pv) in &adj[u] {
                if port[v] == u32::MAX {
                    port[v] = pv;
                    queue.push_back(v);
                }
            }
        }
        for (r, p) in port.into_iter().enumerate() {
            next_hop[r].push(p);
        }
    }
    spec.rules.reserve(n * prefixes.len());
    for (r, hops) in next_hop.iter().enumerate() {
        for &(prefix, owner) in &prefixes {
            spec.rules.push(RuleSpec { router: r, prefix, port: hops[owner_slot[owner]], pbr: false });
        }
    }
    Ok(spec)
}

/// Holds back a random `fraction` of the rules and returns the reduced spec
/// with a stream that inserts them in random order.
pub fn holdout_stream(spec: &NetworkSpec, fraction: f64, seed: u64) -> (NetworkSpec, Vec<UpdateEvent>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..spec.rules.len()).collect();
    idx.shuffle(&mut rng);
    let k = ((spec.rules.len() as f64) * fraction).round() as usize;
    let held: HashSet<usize> = idx[..k].iter().copied().collect();
    let mut base = spec.clone();
    base.rules = spec.rules.iter().enumerate().filter(|(i, _)| !held.contains(i)).map(|(_, r)| *r).collect();
    let events = idx[..k]
        .iter()
        .enumerate()
        .map(|(seq, &i)| {
            let r = spec.rules[i];
            UpdateEvent { op: UpdateOp::Insert, router: r.router, prefix: r.prefix, port: r.port, seq: seq as u64 }
        })
        .collect();
    (base, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::serialize_network;

    #[test]
    fn minimal_network() {
        let mut cfg = GeneratorConfig::new(2, 1, 2, 7);
        cfg.width = 8;
        cfg.masks = MaskHistogram::uniform(4, 8);
        let spec = generate_synthetic(&cfg).unwrap();
        assert_eq!(spec.routers.len(), 2);
        assert_eq!(spec.edges.len(), 1);
        assert_eq!(spec.rules.len(), 4);
        assert!(spec.rules.iter().all(|r| r.port <= 1));
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = GeneratorConfig::new(30, 80, 20, 42);
        let a = serialize_network(&generate_synthetic(&cfg).unwrap());
        let b = serialize_network(&generate_synthetic(&cfg).unwrap());
        assert_eq!(a, b);
        let other = serialize_network(&generate_synthetic(&GeneratorConfig { seed: 43, ..cfg }).unwrap());
        assert_ne!(a, other);
    }

    #[test]
    fn infeasible_parameters() {
        assert!(generate_synthetic(&GeneratorConfig::new(10, 3, 1, 0)).is_err());
        assert!(generate_synthetic(&GeneratorConfig::new(4, 7, 1, 0)).is_err());
        let mut cfg = GeneratorConfig::new(3, 2, 10, 0);
        cfg.width = 3;
        cfg.masks = MaskHistogram::uniform(1, 2);
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn degree_matches_edge_count() {
        let spec = generate_synthetic(&GeneratorConfig::new(100, 1000, 0, 1)).unwrap();
        let avg = 2.0 * spec.edges.len() as f64 / spec.routers.len() as f64;
        assert_eq!(avg, 20.0);
    }

    #[test]
    fn holdout_splits_rules() {
        let spec = generate_synthetic(&GeneratorConfig::new(10, 15, 10, 3)).unwrap();
        let (base, events) = holdout_stream(&spec, 0.1, 9);
        assert_eq!(base.rules.len() + events.len(), spec.rules.len());
        assert_eq!(events.len(), 10);
    }
}
