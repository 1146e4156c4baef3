//! Verification sessions and the queries they answer.
//!
//! A [`Session`] fixes a set of affected classes (the coordinates) and
//! builds, for every affected `(router, port)`, the vector of classes that
//! port receives under longest-prefix match. Queries walk simple paths from
//! a source, applying at each router the ACL filter, then the header
//! transform, then the per-port projection.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use crate::io::UpdateOp;
use crate::network::{lpm, AclAction, Link, Network, NetworkError};
use crate::prefix::Prefix;
use crate::trie::{AffectedSets, NodeId};
use crate::types::{Interface, PortId, RouterId};
use crate::vector::{decode_reachable, encode, l2_of, FilterVector, ForwardingVector, StateVector, TransformMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("unknown router {0}")]
    UnknownRouter(RouterId),
    #[error("state vector has dimension {got}, session has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inconsistent table: {0} is neither linked nor host-facing")]
    InconsistentTable(Interface),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Bounds on path enumeration. Hitting either sets `truncated` on reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_paths: usize,
    pub max_hops: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_paths: 1_000_000, max_hops: usize::MAX }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResult {
    pub path: Vec<RouterId>,
    pub b_final: StateVector,
    /// State sent out of each router on the path, in order.
    pub per_hop: Vec<(RouterId, StateVector)>,
    pub per_hop_errors: Vec<(RouterId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachabilityReport {
    pub reachable: BTreeSet<Prefix>,
    pub b_reachable: StateVector,
    pub per_path: Vec<PathResult>,
    pub total_paths: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoopReport {
    /// Routers along the cycle, first and last equal.
    pub cycle: Vec<RouterId>,
    pub headers: BTreeSet<Prefix>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlackholeReport {
    pub router: RouterId,
    pub headers: BTreeSet<Prefix>,
}

#[derive(Default)]
struct Want {
    loops: bool,
    blackholes: bool,
}

#[derive(Default)]
struct WalkOut {
    paths: Vec<PathResult>,
    loops: BTreeMap<Vec<RouterId>, StateVector>,
    residuals: BTreeMap<RouterId, StateVector>,
    branches: usize,
    truncated: bool,
}

impl WalkOut {
    fn merge(&mut self, other: WalkOut) {
        self.paths.extend(other.paths);
        for (k, v) in other.loops {
            self.loops.entry(k).and_modify(|acc| acc.or_assign(&v)).or_insert(v);
        }
        for (k, v) in other.residuals {
            self.residuals.entry(k).and_modify(|acc| acc.or_assign(&v)).or_insert(v);
        }
        self.branches += other.branches;
        self.truncated |= other.truncated;
    }
}

struct Child {
    next: RouterId,
    out: StateVector,
    l2: f64,
}

fn find_owner(fwd: &[ForwardingVector], ports: &[(u32, u32)], owner: Interface) -> Option<usize> {
    let &(lo, hi) = ports.get(owner.router.index())?;
    let (lo, hi) = (lo as usize, hi as usize);
    fwd[lo..hi].binary_search_by(|v| v.owner.cmp(&owner)).ok().map(|k| lo + k)
}

/// Immutable verification context over one affected set.
pub struct Session<'n> {
    net: &'n Network,
    affected: AffectedSets,
    fwd: Vec<ForwardingVector>,
    /// `fwd[ports[r].0..ports[r].1]` are router `r`'s vectors; `fwd` is
    /// sorted by owner.
    ports: Vec<(u32, u32)>,
    filters: HashMap<RouterId, FilterVector>,
    transforms: HashMap<RouterId, TransformMatrix>,
    limits: Limits,
    access: Option<Mutex<BTreeSet<Interface>>>,
}

impl<'n> Session<'n> {
    /// Session over every class of the network.
    pub fn full(net: &'n Network) -> Result<Self, VerifyError> {
        Self::build(net, net.trie().affected_all())
    }

    /// Session over the classes affected by updates on `prefixes`.
    pub fn for_prefixes(net: &'n Network, prefixes: &[Prefix]) -> Result<Self, VerifyError> {
        Self::build(net, net.trie().affected_for(prefixes))
    }

    /// Builds vectors for `affected`, first closing it under header
    /// transforms so every rewritten class has a coordinate.
    pub fn build(net: &'n Network, affected: AffectedSets) -> Result<Self, VerifyError> {
        let xform_routers: Vec<RouterId> =
            net.topology().routers().filter(|r| !net.tables(*r).xforms.is_empty()).collect();
        let affected = close_under_transforms(net, affected, &xform_routers);
        let m = affected.dimension();
        let coord: HashMap<NodeId, usize> = affected.nodes.iter().enumerate().map(|(j, n)| (*n, j)).collect();

        let topo = net.topology();
        let mut fwd = Vec::with_capacity(affected.p_affected.len());
        let mut ports = vec![(0u32, 0u32); topo.router_count()];
        for &owner in &affected.p_affected {
            if topo.peer(owner.router, owner.port).is_none() && !topo.is_host_port(owner.router, owner.port) {
                return Err(VerifyError::InconsistentTable(owner));
            }
            let k = fwd.len() as u32;
            let slot = &mut ports[owner.router.index()];
            if slot.0 == slot.1 {
                *slot = (k, k);
            }
            slot.1 = k + 1;
            fwd.push(ForwardingVector::new(owner, StateVector::zeros(m)));
        }

        // deepest owner per router wins: longest-prefix match
        let mut stamp = vec![usize::MAX; topo.router_count()];
        for (j, node) in affected.nodes.iter().enumerate() {
            for owners in net.trie().path_owners(*node) {
                for o in owners {
                    if stamp[o.router.index()] != j {
                        stamp[o.router.index()] = j;
                        if let Some(k) = find_owner(&fwd, &ports, *o) {
                            fwd[k].entries.set(j, true);
                        }
                    }
                }
            }
        }

        let mut filters = HashMap::new();
        let mut transforms = HashMap::new();
        for r in net.topology().routers() {
            let t = net.tables(r);
            if !t.acl.is_empty() {
                let permitted = affected
                    .id_to_prefix
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| !matches!(lpm(&t.acl, c), Some((_, AclAction::Deny))))
                    .map(|(j, _)| j);
                filters.insert(r, FilterVector { entries: StateVector::from_indices(m, permitted), router: r });
            }
            if !t.xforms.is_empty() {
                let mut matrix = TransformMatrix::identity(m);
                for (k, class) in affected.id_to_prefix.iter().enumerate() {
                    if let Some(rows) = image_coords(net, r, class, &coord) {
                        matrix.set_column(k, rows).expect("coordinates are in range");
                    }
                }
                transforms.insert(r, matrix);
            }
        }

        Ok(Self { net, affected, fwd, ports, filters, transforms, limits: Limits::default(), access: None })
    }

    pub fn with_limits(mut self, limits: Limits) -> Self {
        self.limits = limits;
        self
    }

    /// Records every `(router, port)` vector read by later queries.
    pub fn with_access_log(mut self) -> Self {
        self.access = Some(Mutex::new(BTreeSet::new()));
        self
    }

    pub fn accessed(&self) -> BTreeSet<Interface> {
        self.access.as_ref().map(|m| m.lock().expect("access log poisoned").clone()).unwrap_or_default()
    }

    pub fn network(&self) -> &'n Network {
        self.net
    }

    pub fn affected(&self) -> &AffectedSets {
        &self.affected
    }

    pub fn dimension(&self) -> usize {
        self.affected.dimension()
    }

    pub fn coordinates(&self) -> &[Prefix] {
        &self.affected.id_to_prefix
    }

    pub fn ones(&self) -> StateVector {
        StateVector::ones(self.dimension())
    }

    /// Vector marking every coordinate inside one of `prefixes`.
    pub fn encode(&self, prefixes: &BTreeSet<Prefix>) -> StateVector {
        encode(prefixes, &self.affected.id_to_prefix)
    }

    pub fn decode(&self, b: &StateVector) -> BTreeSet<Prefix> {
        decode_reachable(b, &self.affected.id_to_prefix).expect("session vectors match the coordinate map")
    }

    pub fn forwarding_vectors(&self) -> &[ForwardingVector] {
        &self.fwd
    }

    pub fn forwarding_vector(&self, owner: Interface) -> Option<&ForwardingVector> {
        find_owner(&self.fwd, &self.ports, owner).map(|k| &self.fwd[k])
    }

    /// Union of a router's port vectors: every class it forwards anywhere.
    pub fn union(&self, r: RouterId) -> StateVector {
        let mut u = StateVector::zeros(self.dimension());
        for v in self.router_vectors(r) {
            u.or_assign(&v.entries);
        }
        u
    }

    pub fn filter(&self, r: RouterId) -> Option<&FilterVector> {
        self.filters.get(&r)
    }

    pub fn transform(&self, r: RouterId) -> Option<&TransformMatrix> {
        self.transforms.get(&r)
    }

    /// Applies router `r`'s filter and then its transform.
    pub fn ingress(&self, r: RouterId, b: &StateVector) -> StateVector {
        let f = match self.filters.get(&r) {
            Some(g) => g.entries.and(b).expect("session dimension"),
            None => b.clone(),
        };
        match self.transforms.get(&r) {
            Some(t) => crate::vector::transform(t, &f).expect("session dimension"),
            None => f,
        }
    }

    /// Classes `r` sends out `port`, recording the access.
    pub fn port_entries(&self, r: RouterId, port: PortId) -> Option<&StateVector> {
        let owner = Interface::new(r, port);
        let k = find_owner(&self.fwd, &self.ports, owner)?;
        self.log(owner);
        Some(&self.fwd[k].entries)
    }

    fn router_vectors(&self, r: RouterId) -> &[ForwardingVector] {
        match self.ports.get(r.index()) {
            Some(&(lo, hi)) => &self.fwd[lo as usize..hi as usize],
            None => &[],
        }
    }

    fn log(&self, owner: Interface) {
        if let Some(m) = &self.access {
            m.lock().expect("access log poisoned").insert(owner);
        }
    }

    fn check(&self, r: RouterId, b: &StateVector) -> Result<(), VerifyError> {
        if !self.net.topology().contains(r) {
            return Err(VerifyError::UnknownRouter(r));
        }
        if b.dim() != self.dimension() {
            return Err(VerifyError::DimensionMismatch { expected: self.dimension(), got: b.dim() });
        }
        Ok(())
    }

    /// Filter, transform, blackhole bookkeeping and per-port projection at
    /// one router. Loops are recorded here; returns the branches to follow.
    fn expand(&self, r: RouterId, b_in: &StateVector, path: &[RouterId], want: &Want, out: &mut WalkOut) -> Vec<Child> {
        let t = self.ingress(r, b_in);
        if want.blackholes {
            let mut residual = t.clone();
            for v in self.router_vectors(r) {
                residual = residual.and_not(&v.entries).expect("session dimension");
            }
            if !residual.is_zero() {
                out.residuals.entry(r).and_modify(|acc| acc.or_assign(&residual)).or_insert(residual);
            }
        }
        let mut children = Vec::new();
        for v in self.router_vectors(r) {
            self.log(v.owner);
            let sent = v.entries.and(&t).expect("session dimension");
            if sent.is_zero() {
                continue;
            }
            let Some(peer) = self.net.topology().peer(r, v.owner.port) else {
                continue;
            };
            if let Some(pos) = path.iter().position(|&x| x == peer.router) {
                if want.loops {
                    let mut cycle = path[pos..].to_vec();
                    cycle.push(peer.router);
                    out.loops.entry(cycle).and_modify(|acc| acc.or_assign(&sent)).or_insert(sent);
                }
                out.branches += 1;
                continue;
            }
            let l2 = l2_of(&t.xor(&sent).expect("session dimension"));
            children.push(Child { next: peer.router, out: sent, l2 });
        }
        children
    }

    fn walk(
        &self,
        r: RouterId,
        b_in: StateVector,
        dst: Option<RouterId>,
        want: &Want,
        trail: &mut Trail,
        out: &mut WalkOut,
    ) {
        trail.path.push(r);
        if Some(r) == dst {
            out.branches += 1;
            out.paths.push(PathResult {
                path: trail.path.clone(),
                b_final: b_in,
                per_hop: trail.hops.clone(),
                per_hop_errors: trail.errors.clone(),
            });
        } else if trail.path.len() > self.limits.max_hops {
            out.truncated = true;
        } else {
            let children = self.expand(r, &b_in, &trail.path, want, out);
            if children.is_empty() {
                out.branches += 1;
            }
            for c in children {
                if out.branches >= self.limits.max_paths {
                    out.truncated = true;
                    break;
                }
                trail.hops.push((r, c.out.clone()));
                trail.errors.push((r, c.l2));
                self.walk(c.next, c.out, dst, want, trail, out);
                trail.hops.pop();
                trail.errors.pop();
            }
        }
        trail.path.pop();
    }

    fn explore(&self, src: RouterId, dst: Option<RouterId>, b_init: &StateVector, want: Want) -> WalkOut {
        let mut out = WalkOut::default();
        if Some(src) == dst {
            self.walk(src, b_init.clone(), dst, &want, &mut Trail::default(), &mut out);
            return out;
        }
        let children = self.expand(src, b_init, &[src], &want, &mut out);
        if children.is_empty() {
            out.branches += 1;
        }
        let sub = |c: Child| {
            let mut o = WalkOut::default();
            let mut trail = Trail { path: vec![src], hops: vec![(src, c.out.clone())], errors: vec![(src, c.l2)] };
            self.walk(c.next, c.out, dst, &want, &mut trail, &mut o);
            o
        };
        #[cfg(feature = "parallel")]
        let parts: Vec<WalkOut> = {
            use rayon::prelude::*;
            children.into_par_iter().map(sub).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<WalkOut> = children.into_iter().map(sub).collect();
        for p in parts {
            out.merge(p);
        }
        if out.branches > self.limits.max_paths {
            out.truncated = true;
        }
        out
    }

    /// Every class that can travel from `src` to `dst`, starting from
    /// `b_init`. A packet arriving at `dst` is delivered there.
    pub fn verify_reachability(&self, src: RouterId, dst: RouterId, b_init: &StateVector) -> Result<ReachabilityReport, VerifyError> {
        self.check(src, b_init)?;
        self.check(dst, b_init)?;
        let out = self.explore(src, Some(dst), b_init, Want::default());
        let mut b_reachable = StateVector::zeros(self.dimension());
        for p in &out.paths {
            b_reachable.or_assign(&p.b_final);
        }
        Ok(ReachabilityReport {
            reachable: self.decode(&b_reachable),
            b_reachable,
            total_paths: out.paths.len(),
            per_path: out.paths,
            truncated: out.truncated,
        })
    }

    /// Cycles reachable from `src` that carry at least one class.
    pub fn detect_loop(&self, src: RouterId, b_init: &StateVector) -> Result<Vec<LoopReport>, VerifyError> {
        self.check(src, b_init)?;
        let out = self.explore(src, None, b_init, Want { loops: true, blackholes: false });
        Ok(out.loops.into_iter().map(|(cycle, b)| LoopReport { cycle, headers: self.decode(&b) }).collect())
    }

    /// Routers on paths from `src` that receive classes they do not forward.
    pub fn detect_blackhole(&self, src: RouterId, b_init: &StateVector) -> Result<Vec<BlackholeReport>, VerifyError> {
        self.check(src, b_init)?;
        let out = self.explore(src, None, b_init, Want { loops: false, blackholes: true });
        Ok(out.residuals.into_iter().map(|(router, c)| BlackholeReport { router, headers: self.decode(&c) }).collect())
    }

    /// Number of branches a full traversal from `src` explores; used for
    /// benchmark counters.
    pub fn traverse_all(&self, src: RouterId, b_init: &StateVector) -> Result<TraversalSummary, VerifyError> {
        self.check(src, b_init)?;
        let out = self.explore(src, None, b_init, Want { loops: true, blackholes: true });
        Ok(TraversalSummary { branches: out.branches, loops: out.loops.len(), blackholes: out.residuals.len() })
    }
}

#[derive(Default)]
struct Trail {
    path: Vec<RouterId>,
    hops: Vec<(RouterId, StateVector)>,
    errors: Vec<(RouterId, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraversalSummary {
    pub branches: usize,
    pub loops: usize,
    pub blackholes: usize,
}

/// Leaf nodes of the rewritten image of `class` at router `r`, if a
/// transform applies.
fn image_leaves(net: &Network, r: RouterId, class: &Prefix) -> Option<Vec<NodeId>> {
    let (matched, output) = lpm(&net.tables(r).xforms, class)?;
    Some(net.trie().leaves_intersecting(&class.rewrite(matched, output)))
}

fn image_coords(net: &Network, r: RouterId, class: &Prefix, coord: &HashMap<NodeId, usize>) -> Option<Vec<usize>> {
    image_leaves(net, r, class).map(|leaves| leaves.iter().filter_map(|n| coord.get(n).copied()).collect())
}

fn close_under_transforms(net: &Network, mut affected: AffectedSets, routers: &[RouterId]) -> AffectedSets {
    if routers.is_empty() {
        return affected;
    }
    loop {
        let known: HashSet<NodeId> = affected.nodes.iter().copied().collect();
        let mut extra: Vec<NodeId> = Vec::new();
        for class in &affected.id_to_prefix {
            for &r in routers {
                for leaf in image_leaves(net, r, class).unwrap_or_default() {
                    if !known.contains(&leaf) && !extra.contains(&leaf) {
                        extra.push(leaf);
                    }
                }
            }
        }
        if extra.is_empty() {
            return affected;
        }
        affected = net.trie().extend_affected(&affected, &extra);
    }
}

// ---------------------------------------------------------------------------
// policies

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Policy {
    /// Longest allowed path, counted in routers.
    pub max_path_len: Option<usize>,
    /// Routers every delivering path must cross.
    pub waypoints: BTreeSet<RouterId>,
    /// Prefixes only policy-based routing may change.
    pub pbr_protected: BTreeSet<Prefix>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Constraint {
    MaxPathLen { len: usize, max: usize },
    MissingWaypoint(RouterId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PolicyViolation {
    pub path: Vec<RouterId>,
    pub constraint: Constraint,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PolicyReport {
    pub violations: Vec<PolicyViolation>,
}

impl Policy {
    /// Whether an update from a source may touch `prefix`; non-PBR sources
    /// cannot change protected prefixes.
    pub fn admits(&self, prefix: &Prefix, from_pbr: bool) -> bool {
        from_pbr || !self.pbr_protected.contains(prefix)
    }
}

pub fn check_policy(report: &ReachabilityReport, policy: &Policy) -> PolicyReport {
    let mut violations = Vec::new();
    for p in &report.per_path {
        if let Some(max) = policy.max_path_len {
            if p.path.len() > max {
                violations.push(PolicyViolation { path: p.path.clone(), constraint: Constraint::MaxPathLen { len: p.path.len(), max } });
            }
        }
        for w in &policy.waypoints {
            if !p.path.contains(w) {
                violations.push(PolicyViolation { path: p.path.clone(), constraint: Constraint::MissingWaypoint(*w) });
            }
        }
    }
    PolicyReport { violations }
}

// ---------------------------------------------------------------------------
// updates

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RuleUpdate {
    pub op: UpdateOp,
    pub router: RouterId,
    pub prefix: Prefix,
    pub port: PortId,
}

impl RuleUpdate {
    pub fn insert(router: RouterId, prefix: Prefix, port: PortId) -> Self {
        Self { op: UpdateOp::Insert, router, prefix, port }
    }

    pub fn delete(router: RouterId, prefix: Prefix, port: PortId) -> Self {
        Self { op: UpdateOp::Delete, router, prefix, port }
    }

    pub fn apply(&self, net: &mut Network) -> Result<(), NetworkError> {
        match self.op {
            UpdateOp::Insert => net.insert_rule(self.router, self.prefix, self.port).map(drop),
            UpdateOp::Delete => net.delete_rule(self.router, self.prefix, self.port).map(drop),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchReport {
    pub affected: AffectedSets,
    pub report: ReachabilityReport,
}

/// Applies all updates, then verifies `src → dst` once over the union of
/// their affected sets.
pub fn batch_update(net: &mut Network, updates: &[RuleUpdate], src: RouterId, dst: RouterId) -> Result<BatchReport, VerifyError> {
    for u in updates {
        u.apply(net)?;
    }
    let prefixes: Vec<Prefix> = updates.iter().map(|u| u.prefix).collect();
    let session = Session::for_prefixes(net, &prefixes)?;
    let report = session.verify_reachability(src, dst, &session.ones())?;
    Ok(BatchReport { affected: session.affected().clone(), report })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhatIfReport {
    pub link: Link,
    pub triggered_deletions: usize,
    /// Classes whose forwarding the deletions touched.
    pub affected_classes: usize,
    pub report: ReachabilityReport,
}

/// Takes the link at `a` down, deletes every rule that forwarded over it at
/// either end, and reports `src → dst` reachability on the result.
pub fn whatif_link_down(net: &mut Network, a: Interface, src: RouterId, dst: RouterId) -> Result<WhatIfReport, VerifyError> {
    let b = net.topology().peer(a.router, a.port).ok_or_else(|| {
        NetworkError::UnknownLink(format!("{}:{}", net.topology().name(a.router), a.port))
    })?;
    let mut deleted = Vec::new();
    for end in [a, b] {
        for prefix in net.rules_on_port(end.router, end.port) {
            net.delete_pbr_rule(end.router, prefix, end.port)?;
            deleted.push(prefix);
        }
    }
    let link = net.remove_link(a)?;
    let affected_classes = net.trie().affected_for(&deleted).dimension();
    let session = Session::full(net)?;
    let report = session.verify_reachability(src, dst, &session.ones())?;
    Ok(WhatIfReport { link, triggered_deletions: deleted.len(), affected_classes, report })
}
