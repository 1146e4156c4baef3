//! Path scoring by projection error and rule synthesis for missing
//! reachability.
//!
//! A class blocked at a router on a chosen path is only re-routed when the
//! router currently forwards it nowhere; the new rule then changes the
//! behaviour of exactly those classes, so nothing that was reachable before
//! can become unreachable. [`RectifyOptions::allow_deletions`] lifts that
//! restriction and replaces conflicting rules instead.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::network::{Network, NetworkError};
use crate::prefix::Prefix;
use crate::types::{PortId, RouterId};
use crate::vector::{l2_of, StateVector};
use crate::verifier::{ReachabilityReport, Session, VerifyError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RectifyError {
    #[error("no path from {src} to {dst}")]
    NoPath { src: RouterId, dst: RouterId },
    #[error("rectification is not possible without disturbing existing traffic")]
    RectificationImpossible,
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// A simple path given as `(router, egress port)` hops; the destination is
/// the far end of the last hop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopologyPath {
    pub hops: Vec<(RouterId, PortId)>,
    pub dst: RouterId,
}

impl TopologyPath {
    pub fn routers(&self) -> Vec<RouterId> {
        self.hops.iter().map(|h| h.0).chain(std::iter::once(self.dst)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathQuality {
    pub path: Vec<RouterId>,
    #[serde(skip)]
    pub route: TopologyPath,
    pub cumulative_l2: f64,
    pub per_node: Vec<(RouterId, f64)>,
    pub b_final: StateVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleFix {
    pub router: RouterId,
    pub prefix: Prefix,
    pub port: PortId,
    /// Classes the rule makes the router forward.
    pub rationale: BTreeSet<Prefix>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RectifyOptions {
    /// Re-route classes a router already forwards elsewhere, deleting
    /// same-prefix rules where needed. Other traffic may lose reachability.
    pub allow_deletions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rectification {
    pub fixes: Vec<RuleFix>,
    /// Rules deleted to make room for `fixes` (deletion mode only).
    pub removed: Vec<RuleFix>,
    pub achieved: BTreeSet<Prefix>,
    pub path: Vec<RouterId>,
    pub report: ReachabilityReport,
}

/// Simple topology paths from `src` to `dst` with at most `max_hops` links,
/// capped at `limit` paths. Enumeration order is deterministic.
pub fn simple_paths(net: &Network, src: RouterId, dst: RouterId, max_hops: usize, limit: usize) -> Vec<TopologyPath> {
    let topo = net.topology();
    let to_dst = topo.hop_distances(dst);
    let mut out = Vec::new();
    let mut on_path = vec![false; topo.router_count()];
    let mut hops = Vec::new();
    fn rec(
        net: &Network,
        r: RouterId,
        dst: RouterId,
        max_hops: usize,
        limit: usize,
        to_dst: &[usize],
        on_path: &mut [bool],
        hops: &mut Vec<(RouterId, PortId)>,
        out: &mut Vec<TopologyPath>,
    ) {
        if out.len() >= limit {
            return;
        }
        if r == dst {
            out.push(TopologyPath { hops: hops.clone(), dst });
            return;
        }
        on_path[r.index()] = true;
        for (port, peer) in net.topology().ports(r) {
            let n = peer.router;
            if on_path[n.index()] || to_dst[n.index()] == usize::MAX || hops.len() + 1 + to_dst[n.index()] > max_hops {
                continue;
            }
            hops.push((r, port));
            rec(net, n, dst, max_hops, limit, to_dst, on_path, hops, out);
            hops.pop();
        }
        on_path[r.index()] = false;
    }
    if to_dst.get(src.index()).is_some_and(|&d| d <= max_hops) {
        rec(net, src, dst, max_hops, limit, &to_dst, &mut on_path, &mut hops, &mut out);
    }
    out
}

/// Pushes `b_init` along one topology path and scores it.
pub fn score_path(session: &Session<'_>, route: &TopologyPath, b_init: &StateVector) -> PathQuality {
    let mut b = b_init.clone();
    let mut per_node = Vec::with_capacity(route.hops.len());
    for &(r, port) in &route.hops {
        let t = session.ingress(r, &b);
        let out = match session.port_entries(r, port) {
            Some(v) => v.and(&t).expect("session dimension"),
            None => StateVector::zeros(t.dim()),
        };
        per_node.push((r, l2_of(&t.xor(&out).expect("session dimension"))));
        b = out;
    }
    PathQuality {
        path: route.routers(),
        route: route.clone(),
        cumulative_l2: per_node.iter().map(|(_, e)| e).sum(),
        per_node,
        b_final: b,
    }
}

/// Scores every simple path at most `slack` hops longer than the shortest
/// one, ascending by cumulative l2 (shorter paths first on ties).
pub fn path_quality(
    session: &Session<'_>,
    src: RouterId,
    dst: RouterId,
    b_init: &StateVector,
    slack: usize,
) -> Result<Vec<PathQuality>, RectifyError> {
    let net = session.network();
    for r in [src, dst] {
        if !net.topology().contains(r) {
            return Err(VerifyError::UnknownRouter(r).into());
        }
    }
    let shortest = net.topology().hop_distances(src)[dst.index()];
    if shortest == usize::MAX {
        return Err(RectifyError::NoPath { src, dst });
    }
    let mut scored: Vec<PathQuality> = simple_paths(net, src, dst, shortest + slack, 100_000)
        .iter()
        .map(|route| score_path(session, route, b_init))
        .collect();
    scored.sort_by(|a, b| a.cumulative_l2.total_cmp(&b.cumulative_l2).then(a.path.len().cmp(&b.path.len())));
    Ok(scored)
}

struct Plan {
    fixes: Vec<RuleFix>,
    removed: Vec<RuleFix>,
}

/// Fixes that carry `want` along `route`, or `None` when some hop cannot be
/// repaired without re-routing classes the router already forwards (unless
/// deletions are allowed).
fn plan_fixes(session: &Session<'_>, route: &TopologyPath, want: &StateVector, opts: RectifyOptions) -> Option<Plan> {
    let net = session.network();
    let nodes = &session.affected().nodes;
    let mut b = want.clone();
    let mut plan = Plan { fixes: Vec::new(), removed: Vec::new() };
    for &(r, port) in &route.hops {
        let t = session.ingress(r, &b);
        let v = session.port_entries(r, port).cloned().unwrap_or_else(|| StateVector::zeros(t.dim()));
        let z = t.and_not(&v).ok()?;
        let need = if opts.allow_deletions { z } else { z.and_not(&session.union(r)).ok()? };
        if !need.is_zero() {
            let leaves: Vec<_> = need.ones_iter().map(|j| nodes[j]).collect();
            for prefix in net.trie().maximal_covering(&leaves) {
                let rationale = need.ones_iter().map(|j| session.coordinates()[j]).filter(|c| prefix.contains(c)).collect();
                if let Some(old) = net.tables(r).routes.get(&prefix) {
                    if old.pbr {
                        return None;
                    }
                    plan.removed.push(RuleFix { router: r, prefix, port: old.port, rationale: BTreeSet::new() });
                }
                plan.fixes.push(RuleFix { router: r, prefix, port, rationale });
            }
        }
        b = t.and(&v).ok()?.or(&need).ok()?;
        if b.is_zero() {
            return None;
        }
    }
    Some(plan)
}

/// Makes the classes of `intent` reachable from `src` to `dst` by adding
/// forwarding rules along the lowest-error candidate path that admits a
/// non-interfering repair. Candidates are the simple paths at most two hops
/// longer than the shortest.
pub fn rectify(net: &mut Network, src: RouterId, dst: RouterId, intent: &BTreeSet<Prefix>) -> Result<Rectification, RectifyError> {
    rectify_with(net, src, dst, intent, RectifyOptions::default())
}

pub fn rectify_with(
    net: &mut Network,
    src: RouterId,
    dst: RouterId,
    intent: &BTreeSet<Prefix>,
    opts: RectifyOptions,
) -> Result<Rectification, RectifyError> {
    let (want_prefixes, plan) = {
        let session = Session::full(net)?;
        let want = StateVector::from_indices(
            session.dimension(),
            session.coordinates().iter().enumerate().filter(|(_, c)| intent.iter().any(|p| p.overlaps(c))).map(|(j, _)| j),
        );
        if want.is_zero() {
            return Err(RectifyError::RectificationImpossible);
        }
        let before = session.verify_reachability(src, dst, &session.ones())?;
        if want.is_subset(&before.b_reachable) {
            return Ok(Rectification {
                fixes: Vec::new(),
                removed: Vec::new(),
                achieved: intent.clone(),
                path: Vec::new(),
                report: before,
            });
        }
        let candidates = path_quality(&session, src, dst, &want, 2)?;
        let plan = candidates.iter().find_map(|c| plan_fixes(&session, &c.route, &want, opts).map(|p| (p, c.path.clone())));
        (session.decode(&want), plan)
    };
    let (Plan { fixes, removed }, path) = plan.ok_or(RectifyError::RectificationImpossible)?;
    for old in &removed {
        net.delete_rule(old.router, old.prefix, old.port)?;
    }
    let report = apply_fixes(net, &fixes, src, dst)?;
    let achieved = report.reachable.intersection(&want_prefixes).copied().collect();
    Ok(Rectification { fixes, removed, achieved, path, report })
}

/// Installs fixes and re-verifies `src → dst` over all classes.
pub fn apply_fixes(net: &mut Network, fixes: &[RuleFix], src: RouterId, dst: RouterId) -> Result<ReachabilityReport, RectifyError> {
    for f in fixes {
        net.insert_rule(f.router, f.prefix, f.port)?;
    }
    let session = Session::full(net)?;
    Ok(session.verify_reachability(src, dst, &session.ones())?)
}

/// Removes previously applied fixes.
pub fn revert_fixes(net: &mut Network, fixes: &[RuleFix]) -> Result<(), RectifyError> {
    for f in fixes.iter().rev() {
        net.delete_rule(f.router, f.prefix, f.port)?;
    }
    Ok(())
}

/// Undoes a whole rectification, restoring any rules it deleted.
pub fn revert(net: &mut Network, r: &Rectification) -> Result<(), RectifyError> {
    revert_fixes(net, &r.fixes)?;
    for old in &r.removed {
        net.insert_rule(old.router, old.prefix, old.port)?;
    }
    Ok(())
}
