#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use dpv_core::io::{
    generate_synthetic, parse_network, AclSpec, EdgeSpec, GeneratorConfig, MaskHistogram, NetworkSpec, RuleSpec,
    XformSpec,
};
use dpv_core::{AclAction, Network, Prefix, RouterId};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data(name: &str) -> String {
    let path = format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub fn spec(name: &str) -> NetworkSpec {
    parse_network(&data(name)).unwrap()
}

pub fn p(s: &str) -> Prefix {
    s.parse().unwrap()
}

pub fn prefixes(list: &[&str]) -> BTreeSet<Prefix> {
    list.iter().map(|s| p(s)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every header value inside one of the prefixes.
pub fn headers_of<'a>(prefixes: impl IntoIterator<Item = &'a Prefix>, width: u8) -> BTreeSet<u64> {
    let mut out = BTreeSet::new();
    for p in prefixes {
        let (lo, hi) = p.range(width);
        out.extend(lo..=hi);
    }
    out
}

/// Headers covered by some equivalence class of the network.
pub fn covered_headers(net: &Network) -> BTreeSet<u64> {
    let leaves: Vec<Prefix> = net.trie().leaves().iter().map(|l| l.prefix).collect();
    headers_of(&leaves, net.width())
}

pub fn rid(i: usize) -> RouterId {
    RouterId(i as u32)
}

#[derive(Debug, Clone, Copy)]
pub struct RandomOpts {
    pub max_nodes: usize,
    pub width: u8,
    pub max_rules: usize,
    pub acls: bool,
    pub xforms: bool,
}

/// Random connected graph with host port 0 everywhere and edge ports from 1.
fn random_graph(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> (NetworkSpec, Vec<Vec<u32>>) {
    let mut spec = NetworkSpec { width: 8, routers: (0..n).map(|i| format!("n{i}")).collect(), ..Default::default() };
    let mut ports: Vec<Vec<u32>> = vec![vec![0]; n];
    let mut seen = HashSet::new();
    let mut add = |a: usize, b: usize, spec: &mut NetworkSpec, ports: &mut Vec<Vec<u32>>| {
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            return;
        }
        let (pa, pb) = (ports[a].len() as u32, ports[b].len() as u32);
        ports[a].push(pa);
        ports[b].push(pb);
        spec.edges.push(EdgeSpec { a, port_a: pa, b, port_b: pb });
    };
    for i in 1..n {
        let j = rng.random_range(0..i);
        add(i, j, &mut spec, &mut ports);
    }
    for _ in 0..extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        add(a, b, &mut spec, &mut ports);
    }
    spec.hosts = (0..n).map(|r| (r, 0)).collect();
    (spec, ports)
}

fn random_prefix(rng: &mut ChaCha8Rng, width: u8, min_len: u8) -> Prefix {
    let len = rng.random_range(min_len..=width);
    let bits = if len == 0 { 0 } else { rng.random::<u64>() >> (64 - len as u32) };
    Prefix::new(bits, len).unwrap()
}

/// Adds ACLs and host-level rewrites (full-length match and output, so the
/// class-level transform is exact).
fn add_middleboxes(rng: &mut ChaCha8Rng, spec: &mut NetworkSpec, opts: RandomOpts) {
    let n = spec.routers.len();
    if opts.acls {
        for _ in 0..rng.random_range(1..=6) {
            let action = if rng.random_bool(0.6) { AclAction::Deny } else { AclAction::Permit };
            let prefix = random_prefix(rng, opts.width, 1);
            let router = rng.random_range(0..n);
            if !spec.acls.iter().any(|a| a.router == router && a.prefix == prefix) {
                spec.acls.push(AclSpec { router, prefix, action });
            }
        }
    }
    if opts.xforms {
        for _ in 0..rng.random_range(1..=4) {
            let router = rng.random_range(0..n);
            let matched = random_prefix(rng, opts.width, opts.width);
            let output = random_prefix(rng, opts.width, opts.width);
            if !spec.xforms.iter().any(|x| x.router == router && x.matched == matched) {
                spec.xforms.push(XformSpec { router, matched, output });
            }
        }
    }
}

/// Random rules on a random graph: loops, blackholes and overlaps all occur.
pub fn random_rules_network(seed: u64, opts: RandomOpts) -> NetworkSpec {
    let mut rng = rng(seed);
    let n = rng.random_range(2..=opts.max_nodes);
    let extra = rng.random_range(0..=n);
    let (mut spec, ports) = random_graph(&mut rng, n, extra);
    spec.width = opts.width;
    let target = rng.random_range(1..=opts.max_rules);
    let mut taken = HashSet::new();
    for _ in 0..target * 2 {
        if spec.rules.len() >= target {
            break;
        }
        let router = rng.random_range(0..n);
        let prefix = random_prefix(&mut rng, opts.width, 1);
        if taken.insert((router, prefix)) {
            let port = *ports[router].choose(&mut rng).unwrap();
            spec.rules.push(RuleSpec { router, prefix, port, pbr: false });
        }
    }
    add_middleboxes(&mut rng, &mut spec, opts);
    spec
}

/// Shortest-path network, then rule gaps and back-edge redirections that
/// create blackholes and loops.
pub fn perturbed_network(seed: u64, opts: RandomOpts) -> NetworkSpec {
    let mut rng = rng(seed);
    let n = rng.random_range(2..=opts.max_nodes);
    let edges = rng.random_range(n - 1..=(n * (n - 1) / 2).min(2 * n));
    let per_node = (opts.max_rules / n).clamp(1, 12);
    let mut cfg = GeneratorConfig::new(n, edges, per_node, rng.random());
    cfg.width = opts.width;
    cfg.masks = MaskHistogram::uniform(2, opts.width);
    let mut spec = generate_synthetic(&cfg).unwrap();

    // back edges: send a prefix back to the router that forwards it here
    for _ in 0..rng.random_range(0..=3) {
        let i = rng.random_range(0..spec.rules.len());
        let rule = spec.rules[i];
        let Some(e) = spec.edges.iter().find(|e| {
            (e.a == rule.router && e.port_a == rule.port) || (e.b == rule.router && e.port_b == rule.port)
        }) else {
            continue;
        };
        let (next, back_port) = if e.a == rule.router { (e.b, e.port_b) } else { (e.a, e.port_a) };
        if let Some(r) = spec.rules.iter_mut().find(|r| r.router == next && r.prefix == rule.prefix) {
            r.port = back_port;
        }
    }
    // gaps
    let drop = rng.random_range(0..=spec.rules.len() / 5);
    spec.rules.shuffle(&mut rng);
    spec.rules.truncate(spec.rules.len() - drop);
    add_middleboxes(&mut rng, &mut spec, opts);
    spec
}

/// Either generator, picked by seed; ACLs and transforms in ~30% of runs.
pub fn mixed_network(seed: u64, max_nodes: usize, width: u8, max_rules: usize) -> NetworkSpec {
    let mut r = rng(seed ^ 0x5eed);
    let middle = r.random_bool(0.3);
    let opts = RandomOpts { max_nodes, width, max_rules, acls: middle, xforms: middle };
    if r.random_bool(0.5) {
        random_rules_network(seed, opts)
    } else {
        perturbed_network(seed, opts)
    }
}

/// Header values in the ranges of `prefixes`, mapped through the
/// (prefix-level) set semantics.
pub fn ranges_to_headers(ranges: &[(u64, u64)]) -> BTreeSet<u64> {
    ranges.iter().flat_map(|&(lo, hi)| lo..=hi).collect()
}
