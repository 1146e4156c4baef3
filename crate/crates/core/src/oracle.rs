//! Brute-force ground truth: per-packet simulation straight from a
//! [`NetworkSpec`] and interval arithmetic over prefix ranges.
//!
//! Nothing here touches the trie or the vector code, so the two can be
//! checked against each other. Forwarding decisions follow the same rules:
//! longest-prefix match, default-permit ACLs, and filter → rewrite →
//! forward at every router.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::io::NetworkSpec;
use crate::network::AclAction;
use crate::prefix::Prefix;
use crate::types::RouterId;

/// Largest header width simulated exhaustively.
pub const MAX_EXHAUSTIVE_WIDTH: u8 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("header width {0} is too large to enumerate")]
    WidthTooLarge(u8),
    #[error("unknown router index {0}")]
    UnknownRouter(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Outcome {
    Delivered(RouterId),
    Blackholed(RouterId),
    /// Routers of the cycle, first and last equal.
    Looped(Vec<RouterId>),
    Filtered(RouterId),
    /// Sent out a host-facing port before reaching the destination.
    Exited(RouterId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PacketTrace {
    pub header: u64,
    /// Header value (after any rewrites) when the outcome happened.
    pub final_header: u64,
    pub path: Vec<RouterId>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleResult {
    /// Headers as delivered at the destination.
    pub reachable: BTreeSet<u64>,
    pub traces: Vec<PacketTrace>,
}

impl OracleResult {
    /// `(router, header)` pairs where a packet found no matching rule.
    pub fn blackholes(&self) -> BTreeSet<(RouterId, u64)> {
        self.traces
            .iter()
            .filter_map(|t| match t.outcome {
                Outcome::Blackholed(r) => Some((r, t.final_header)),
                _ => None,
            })
            .collect()
    }

    pub fn has_loop(&self) -> bool {
        self.traces.iter().any(|t| matches!(t.outcome, Outcome::Looped(_)))
    }
}

struct Router {
    rules: Vec<(Prefix, u32)>,
    acl: Vec<(Prefix, AclAction)>,
    xforms: Vec<(Prefix, Prefix)>,
}

fn longest<T: Copy>(entries: &[(Prefix, T)], header: u64, width: u8) -> Option<(Prefix, T)> {
    entries.iter().filter(|(p, _)| p.matches(header, width)).max_by_key(|(p, _)| p.len()).copied()
}

/// Per-packet forwarding model of a spec.
pub struct PacketSim {
    width: u8,
    routers: Vec<Router>,
    peers: HashMap<(usize, u32), usize>,
}

impl PacketSim {
    pub fn new(spec: &NetworkSpec) -> Self {
        let mut routers: Vec<Router> =
            spec.routers.iter().map(|_| Router { rules: Vec::new(), acl: Vec::new(), xforms: Vec::new() }).collect();
        for r in &spec.rules {
            routers[r.router].rules.push((r.prefix, r.port));
        }
        for a in &spec.acls {
            // a later entry for the same prefix replaces an earlier one
            let acl = &mut routers[a.router].acl;
            acl.retain(|(p, _)| *p != a.prefix);
            acl.push((a.prefix, a.action));
        }
        for x in &spec.xforms {
            let xf = &mut routers[x.router].xforms;
            xf.retain(|(p, _)| *p != x.matched);
            xf.push((x.matched, x.output));
        }
        let mut peers = HashMap::new();
        for e in &spec.edges {
            peers.insert((e.a, e.port_a), e.b);
            peers.insert((e.b, e.port_b), e.a);
        }
        Self { width: spec.width, routers, peers }
    }

    /// Follows one packet from `src` until it is delivered at `dst` (if
    /// given) or stops.
    pub fn trace(&self, header: u64, src: usize, dst: Option<usize>) -> PacketTrace {
        let mut h = header;
        let mut r = src;
        let mut path: Vec<RouterId> = Vec::new();
        let ttl = 2 * self.routers.len().max(1);
        let outcome = loop {
            let id = RouterId(r as u32);
            if let Some(pos) = path.iter().position(|&x| x == id) {
                let mut cycle = path[pos..].to_vec();
                cycle.push(id);
                break Outcome::Looped(cycle);
            }
            path.push(id);
            if Some(r) == dst {
                break Outcome::Delivered(id);
            }
            if path.len() > ttl {
                break Outcome::Looped(path.clone());
            }
            let router = &self.routers[r];
            if let Some((_, AclAction::Deny)) = longest(&router.acl, h, self.width) {
                break Outcome::Filtered(id);
            }
            if let Some((_, output)) = longest(&router.xforms, h, self.width) {
                h = Prefix::rewrite_header(h, &output, self.width);
            }
            let Some((_, port)) = longest(&router.rules, h, self.width) else {
                break Outcome::Blackholed(id);
            };
            match self.peers.get(&(r, port)) {
                Some(&next) => r = next,
                None => break Outcome::Exited(id),
            }
        };
        PacketTrace { header, final_header: h, path, outcome }
    }

    pub fn simulate_headers(&self, headers: impl IntoIterator<Item = u64>, src: usize, dst: Option<usize>) -> Result<OracleResult, OracleError> {
        for r in std::iter::once(src).chain(dst) {
            if r >= self.routers.len() {
                return Err(OracleError::UnknownRouter(r));
            }
        }
        let traces: Vec<PacketTrace> = headers.into_iter().map(|h| self.trace(h, src, dst)).collect();
        let reachable =
            traces.iter().filter(|t| matches!(t.outcome, Outcome::Delivered(_))).map(|t| t.final_header).collect();
        Ok(OracleResult { reachable, traces })
    }
}

/// Simulates every header in `[0, 2^L)` from `src`. With `dst = None`
/// packets are never delivered, which is what loop and blackhole checks use.
pub fn simulate_all(spec: &NetworkSpec, src: usize, dst: Option<usize>) -> Result<OracleResult, OracleError> {
    if spec.width > MAX_EXHAUSTIVE_WIDTH {
        return Err(OracleError::WidthTooLarge(spec.width));
    }
    PacketSim::new(spec).simulate_headers(0..(1u64 << spec.width), src, dst)
}

/// Coarsest partition of the union of the prefix ranges into
/// prefix-aligned cells such that every input prefix is a union of cells.
/// Cells are inclusive `(lo, hi)` ranges in ascending order.
pub fn interval_partition(prefixes: &[Prefix], width: u8) -> Vec<(u64, u64)> {
    let ranges: Vec<(u128, u128)> = prefixes
        .iter()
        .map(|p| {
            let (lo, hi) = p.range(width);
            (lo as u128, hi as u128 + 1)
        })
        .collect();
    let mut cuts: Vec<u128> = ranges.iter().flat_map(|&(lo, end)| [lo, end]).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut cells = Vec::new();
    for w in cuts.windows(2) {
        let (lo, end) = (w[0], w[1]);
        if !ranges.iter().any(|&(a, b)| a <= lo && end <= b) {
            continue;
        }
        // split [lo, end) into maximal aligned blocks
        let mut at = lo;
        while at < end {
            let mut size: u128 = if at == 0 { 1u128 << width } else { 1u128 << at.trailing_zeros().min(width as u32) };
            while at + size > end {
                size >>= 1;
            }
            cells.push((at as u64, (at + size - 1) as u64));
            at += size;
        }
    }
    cells
}

/// The prefix whose range is exactly `[lo, hi]`, if one exists.
pub fn range_prefix(lo: u64, hi: u64, width: u8) -> Option<Prefix> {
    let size = hi as u128 - lo as u128 + 1;
    if !size.is_power_of_two() || !(lo as u128).is_multiple_of(size) {
        return None;
    }
    let free = size.trailing_zeros() as u8;
    if free > width {
        return None;
    }
    let len = width - free;
    let bits = if free >= 64 { 0 } else { lo >> free };
    Prefix::new(bits, len).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    #[test]
    fn partition_of_overlapping_prefixes() {
        let cells = interval_partition(&[p("000/3"), p("0/1"), p("01/2"), p("1/1")], 3);
        assert_eq!(cells, [(0, 0), (1, 1), (2, 3), (4, 7)]);
        assert_eq!(interval_partition(&[p("01/2")], 3), [(2, 3)]);
        let cells = interval_partition(&[p("0/1"), p("0000/4")], 4);
        let prefixes: Vec<_> = cells.iter().map(|&(a, b)| range_prefix(a, b, 4).unwrap().to_string()).collect();
        assert_eq!(prefixes, ["0000/4", "0001/4", "001/3", "01/2"]);
        assert_eq!(interval_partition(&[Prefix::ROOT], 64), [(0, u64::MAX)]);
    }

    #[test]
    fn range_prefix_rejects_unaligned() {
        assert_eq!(range_prefix(2, 3, 3), Some(p("01/2")));
        assert_eq!(range_prefix(1, 2, 3), None);
        assert_eq!(range_prefix(0, 7, 3), Some(Prefix::ROOT));
    }

    #[test]
    fn empty_network_blackholes_everything() {
        let spec = crate::io::parse_network("WIDTH 4\nNODE A\nNODE B\nEDGE A 1 B 1\n").unwrap();
        let res = simulate_all(&spec, 0, Some(1)).unwrap();
        assert!(res.reachable.is_empty());
        assert_eq!(res.traces.len(), 16);
        assert!(res.traces.iter().all(|t| t.outcome == Outcome::Blackholed(RouterId(0))));
        let wide = NetworkSpec { width: 20, ..spec };
        assert_eq!(simulate_all(&wide, 0, None), Err(OracleError::WidthTooLarge(20)));
    }
}
