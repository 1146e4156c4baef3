//! Mutable network state: topology, per-router tables and the header trie
//! that indexes every header they mention.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::NetworkSpec;
use crate::prefix::{Prefix, PrefixError};
use crate::trie::{HeaderTrie, TrieError, UpdateOutcome};
use crate::types::{Interface, PortId, RouterId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("unknown router `{0}`")]
    UnknownRouter(String),
    #[error("duplicate router `{0}`")]
    DuplicateRouter(String),
    #[error("inconsistent table: {router} port {port} is neither linked nor host-facing")]
    InconsistentTable { router: String, port: u32 },
    #[error("interface {0} already belongs to a link or host")]
    PortInUse(String),
    #[error("duplicate edge between {0} and {1}")]
    DuplicateEdge(String, String),
    #[error("no link at {0}")]
    UnknownLink(String),
    #[error("{router} already forwards {prefix} to port {port}")]
    ConflictingRule { router: String, prefix: Prefix, port: u32 },
    #[error("{router} has no rule {prefix} -> {port}")]
    RuleNotFound { router: String, prefix: Prefix, port: u32 },
    #[error("{prefix} at {router} is policy-protected")]
    PolicyProtected { router: String, prefix: Prefix },
    #[error("{router} has no ACL or transform entry for {prefix}")]
    EntryNotFound { router: String, prefix: Prefix },
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error(transparent)]
    Prefix(#[from] PrefixError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AclAction {
    Permit,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RouteEntry {
    pub port: PortId,
    /// Installed by a policy-based-routing source; other sources may not
    /// change it.
    pub pbr: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouterTables {
    pub routes: BTreeMap<Prefix, RouteEntry>,
    pub acl: BTreeMap<Prefix, AclAction>,
    pub xforms: BTreeMap<Prefix, Prefix>,
}

/// Longest-prefix lookup in a map keyed by prefixes: the deepest key that
/// contains `class`.
pub fn lpm<'a, V>(map: &'a BTreeMap<Prefix, V>, class: &Prefix) -> Option<(&'a Prefix, &'a V)> {
    if map.is_empty() {
        return None;
    }
    (0..=class.len()).rev().find_map(|len| map.get_key_value(&class.truncate(len)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Link {
    pub a: Interface,
    pub b: Interface,
}

#[derive(Debug, Clone, Default)]
pub struct Topology {
    names: Vec<String>,
    index: HashMap<String, RouterId>,
    peers: Vec<BTreeMap<PortId, Interface>>,
    hosts: Vec<BTreeSet<PortId>>,
}

impl Topology {
    pub fn router_count(&self) -> usize {
        self.names.len()
    }

    pub fn routers(&self) -> impl Iterator<Item = RouterId> {
        (0..self.names.len() as u32).map(RouterId)
    }

    pub fn name(&self, r: RouterId) -> &str {
        &self.names[r.index()]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn router(&self, name: &str) -> Option<RouterId> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, r: RouterId) -> bool {
        r.index() < self.names.len()
    }

    /// Far end of the link at `(router, port)`; `None` for host-facing or
    /// unused ports.
    pub fn peer(&self, router: RouterId, port: PortId) -> Option<Interface> {
        self.peers[router.index()].get(&port).copied()
    }

    pub fn is_host_port(&self, router: RouterId, port: PortId) -> bool {
        self.hosts[router.index()].contains(&port)
    }

    pub fn ports(&self, router: RouterId) -> impl Iterator<Item = (PortId, Interface)> + '_ {
        self.peers[router.index()].iter().map(|(p, i)| (*p, *i))
    }

    pub fn host_ports(&self, router: RouterId) -> impl Iterator<Item = PortId> + '_ {
        self.hosts[router.index()].iter().copied()
    }

    /// Every link once, with `a < b`.
    pub fn links(&self) -> Vec<Link> {
        let mut out = Vec::new();
        for r in self.routers() {
            for (port, peer) in self.ports(r) {
                let a = Interface::new(r, port);
                if a < peer {
                    out.push(Link { a, b: peer });
                }
            }
        }
        out
    }

    fn add_router(&mut self, name: &str) -> Result<RouterId, NetworkError> {
        if self.index.contains_key(name) {
            return Err(NetworkError::DuplicateRouter(name.into()));
        }
        let id = RouterId(self.names.len() as u32);
        self.names.push(name.into());
        self.index.insert(name.into(), id);
        self.peers.push(BTreeMap::new());
        self.hosts.push(BTreeSet::new());
        Ok(id)
    }

    fn port_free(&self, i: Interface) -> bool {
        !self.peers[i.router.index()].contains_key(&i.port) && !self.hosts[i.router.index()].contains(&i.port)
    }

    fn describe(&self, i: Interface) -> String {
        format!("{}:{}", self.name(i.router), i.port)
    }

    fn add_link(&mut self, a: Interface, b: Interface) -> Result<(), NetworkError> {
        if a == b {
            return Err(NetworkError::PortInUse(self.describe(a)));
        }
        for i in [a, b] {
            if !self.port_free(i) {
                return Err(NetworkError::PortInUse(self.describe(i)));
            }
        }
        self.peers[a.router.index()].insert(a.port, b);
        self.peers[b.router.index()].insert(b.port, a);
        Ok(())
    }

    fn add_host(&mut self, i: Interface) -> Result<(), NetworkError> {
        if !self.port_free(i) {
            return Err(NetworkError::PortInUse(self.describe(i)));
        }
        self.hosts[i.router.index()].insert(i.port);
        Ok(())
    }

    fn remove_link(&mut self, a: Interface) -> Result<Interface, NetworkError> {
        let b = self.peers[a.router.index()].remove(&a.port).ok_or_else(|| NetworkError::UnknownLink(self.describe(a)))?;
        self.peers[b.router.index()].remove(&b.port);
        Ok(b)
    }

    /// Hop distances from `src` over links, `usize::MAX` when unreachable.
    pub fn hop_distances(&self, src: RouterId) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.names.len()];
        let mut queue = std::collections::VecDeque::from([src]);
        dist[src.index()] = 0;
        while let Some(r) = queue.pop_front() {
            for (_, peer) in self.ports(r) {
                if dist[peer.router.index()] == usize::MAX {
                    dist[peer.router.index()] = dist[r.index()] + 1;
                    queue.push_back(peer.router);
                }
            }
        }
        dist
    }
}

/// Network state owned by one writer.
#[derive(Debug, Clone)]
pub struct Network {
    width: u8,
    topology: Topology,
    tables: Vec<RouterTables>,
    trie: HeaderTrie,
    rule_count: usize,
}

impl Network {
    pub fn new(width: u8) -> Result<Self, NetworkError> {
        Ok(Self { width, topology: Topology::default(), tables: Vec::new(), trie: HeaderTrie::new(width)?, rule_count: 0 })
    }

    /// Builds the network from a spec, loading the trie in bulk.
    pub fn from_spec(spec: &NetworkSpec) -> Result<Self, NetworkError> {
        let mut net = Self::new(spec.width)?;
        for name in &spec.routers {
            net.add_router(name)?;
        }
        let at = |r: usize, p: u32| Interface::new(RouterId(r as u32), PortId(p));
        for e in &spec.edges {
            net.add_link(at(e.a, e.port_a), at(e.b, e.port_b))?;
        }
        for &(r, p) in &spec.hosts {
            net.add_host(at(r, p))?;
        }
        for rule in &spec.rules {
            net.install_rule(RouterId(rule.router as u32), rule.prefix, PortId(rule.port), rule.pbr, true)?;
        }
        for acl in &spec.acls {
            net.install_acl(RouterId(acl.router as u32), acl.prefix, acl.action, true)?;
        }
        for x in &spec.xforms {
            net.install_xform(RouterId(x.router as u32), x.matched, x.output, true)?;
        }
        net.trie.materialize_iatomic();
        Ok(net)
    }

    pub fn to_spec(&self) -> NetworkSpec {
        use crate::io::{AclSpec, EdgeSpec, RuleSpec, XformSpec};
        let mut spec = NetworkSpec { width: self.width, routers: self.topology.names.clone(), ..Default::default() };
        for link in self.topology.links() {
            spec.edges.push(EdgeSpec {
                a: link.a.router.index(),
                port_a: link.a.port.0,
                b: link.b.router.index(),
                port_b: link.b.port.0,
            });
        }
        for r in self.topology.routers() {
            let i = r.index();
            spec.hosts.extend(self.topology.host_ports(r).map(|p| (i, p.0)));
            let t = &self.tables[i];
            spec.rules.extend(t.routes.iter().map(|(prefix, e)| RuleSpec { router: i, prefix: *prefix, port: e.port.0, pbr: e.pbr }));
            spec.acls.extend(t.acl.iter().map(|(prefix, action)| AclSpec { router: i, prefix: *prefix, action: *action }));
            spec.xforms.extend(t.xforms.iter().map(|(m, o)| XformSpec { router: i, matched: *m, output: *o }));
        }
        spec
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn trie(&self) -> &HeaderTrie {
        &self.trie
    }

    pub fn tables(&self, r: RouterId) -> &RouterTables {
        &self.tables[r.index()]
    }

    pub fn rule_count(&self) -> usize {
        self.rule_count
    }

    pub fn router(&self, name: &str) -> Result<RouterId, NetworkError> {
        self.topology.router(name).ok_or_else(|| NetworkError::UnknownRouter(name.into()))
    }

    fn check_router(&self, r: RouterId) -> Result<(), NetworkError> {
        if self.topology.contains(r) {
            Ok(())
        } else {
            Err(NetworkError::UnknownRouter(r.to_string()))
        }
    }

    fn check_prefix(&self, p: Prefix) -> Result<(), NetworkError> {
        if p.len() > self.width {
            return Err(TrieError::PrefixTooLong { prefix: p, width: self.width }.into());
        }
        Ok(())
    }

    pub fn add_router(&mut self, name: &str) -> Result<RouterId, NetworkError> {
        let id = self.topology.add_router(name)?;
        self.tables.push(RouterTables::default());
        Ok(id)
    }

    pub fn add_link(&mut self, a: Interface, b: Interface) -> Result<(), NetworkError> {
        self.check_router(a.router)?;
        self.check_router(b.router)?;
        if self.topology.peer(a.router, a.port) == Some(b) {
            let (na, nb) = (self.topology.describe(a), self.topology.describe(b));
            return Err(NetworkError::DuplicateEdge(na, nb));
        }
        self.topology.add_link(a, b)
    }

    pub fn add_host(&mut self, i: Interface) -> Result<(), NetworkError> {
        self.check_router(i.router)?;
        self.topology.add_host(i)
    }

    fn install_rule(
        &mut self,
        router: RouterId,
        prefix: Prefix,
        port: PortId,
        pbr: bool,
        deferred: bool,
    ) -> Result<UpdateOutcome, NetworkError> {
        self.check_router(router)?;
        self.check_prefix(prefix)?;
        let name = || self.topology.name(router).to_string();
        if self.topology.peer(router, port).is_none() && !self.topology.is_host_port(router, port) {
            return Err(NetworkError::InconsistentTable { router: name(), port: port.0 });
        }
        if let Some(existing) = self.tables[router.index()].routes.get(&prefix) {
            if existing.pbr && !pbr {
                return Err(NetworkError::PolicyProtected { router: name(), prefix });
            }
            if existing.port == port && existing.pbr == pbr {
                return Ok(UpdateOutcome::default());
            }
            return Err(NetworkError::ConflictingRule { router: name(), prefix, port: existing.port.0 });
        }
        let owner = Interface::new(router, port);
        let outcome = if deferred {
            self.trie.insert_header_deferred(prefix, owner)?
        } else {
            self.trie.insert_header(prefix, owner)?
        };
        self.tables[router.index()].routes.insert(prefix, RouteEntry { port, pbr });
        self.rule_count += 1;
        Ok(outcome)
    }

    /// Installs a forwarding rule from an ordinary (non-PBR) source.
    pub fn insert_rule(&mut self, router: RouterId, prefix: Prefix, port: PortId) -> Result<UpdateOutcome, NetworkError> {
        self.install_rule(router, prefix, port, false, false)
    }

    /// Installs a policy-protected forwarding rule.
    pub fn insert_pbr_rule(&mut self, router: RouterId, prefix: Prefix, port: PortId) -> Result<UpdateOutcome, NetworkError> {
        self.install_rule(router, prefix, port, true, false)
    }

    /// Removes a forwarding rule on behalf of a non-PBR source.
    pub fn delete_rule(&mut self, router: RouterId, prefix: Prefix, port: PortId) -> Result<UpdateOutcome, NetworkError> {
        self.remove_rule(router, prefix, port, false)
    }

    pub fn delete_pbr_rule(&mut self, router: RouterId, prefix: Prefix, port: PortId) -> Result<UpdateOutcome, NetworkError> {
        self.remove_rule(router, prefix, port, true)
    }

    fn remove_rule(&mut self, router: RouterId, prefix: Prefix, port: PortId, pbr: bool) -> Result<UpdateOutcome, NetworkError> {
        self.check_router(router)?;
        let name = self.topology.name(router).to_string();
        let routes = &mut self.tables[router.index()].routes;
        match routes.get(&prefix) {
            Some(e) if e.port == port => {
                if e.pbr && !pbr {
                    return Err(NetworkError::PolicyProtected { router: name, prefix });
                }
            }
            _ => return Err(NetworkError::RuleNotFound { router: name, prefix, port: port.0 }),
        }
        routes.remove(&prefix);
        self.rule_count -= 1;
        Ok(self.trie.delete_header(prefix, Interface::new(router, port))?)
    }

    fn install_acl(&mut self, router: RouterId, prefix: Prefix, action: AclAction, deferred: bool) -> Result<(), NetworkError> {
        self.check_router(router)?;
        self.check_prefix(prefix)?;
        if self.tables[router.index()].acl.insert(prefix, action).is_none() {
            if deferred {
                self.trie.insert_anchor_deferred(prefix)?;
            } else {
                self.trie.insert_anchor(prefix)?;
            }
        }
        Ok(())
    }

    pub fn insert_acl(&mut self, router: RouterId, prefix: Prefix, action: AclAction) -> Result<(), NetworkError> {
        self.install_acl(router, prefix, action, false)
    }

    pub fn remove_acl(&mut self, router: RouterId, prefix: Prefix) -> Result<(), NetworkError> {
        self.check_router(router)?;
        if self.tables[router.index()].acl.remove(&prefix).is_none() {
            return Err(NetworkError::EntryNotFound { router: self.topology.name(router).into(), prefix });
        }
        self.trie.remove_anchor(prefix)?;
        Ok(())
    }

    fn install_xform(&mut self, router: RouterId, matched: Prefix, output: Prefix, deferred: bool) -> Result<(), NetworkError> {
        self.check_router(router)?;
        self.check_prefix(matched)?;
        self.check_prefix(output)?;
        if let Some(old) = self.tables[router.index()].xforms.insert(matched, output) {
            self.trie.remove_anchor(matched)?;
            self.trie.remove_anchor(old)?;
        }
        for p in [matched, output] {
            if deferred {
                self.trie.insert_anchor_deferred(p)?;
            } else {
                self.trie.insert_anchor(p)?;
            }
        }
        Ok(())
    }

    /// Adds a header rewrite: packets matching `matched` have their first
    /// `output.len()` bits replaced by `output`.
    pub fn insert_xform(&mut self, router: RouterId, matched: Prefix, output: Prefix) -> Result<(), NetworkError> {
        self.install_xform(router, matched, output, false)
    }

    /// Removes the link at `a` and returns both endpoints.
    pub fn remove_link(&mut self, a: Interface) -> Result<Link, NetworkError> {
        self.check_router(a.router)?;
        let b = self.topology.remove_link(a)?;
        Ok(Link { a, b })
    }

    /// Rules at `router` whose action is `port`, as `(prefix, pbr)`.
    pub fn rules_on_port(&self, router: RouterId, port: PortId) -> Vec<Prefix> {
        self.tables[router.index()].routes.iter().filter(|(_, e)| e.port == port).map(|(p, _)| *p).collect()
    }

    /// Port router `r` sends headers of `class` to, by longest-prefix match.
    pub fn lookup(&self, r: RouterId, class: &Prefix) -> Option<PortId> {
        lpm(&self.tables[r.index()].routes, class).map(|(_, e)| e.port)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    fn two_routers() -> (Network, RouterId, RouterId) {
        let mut net = Network::new(3).unwrap();
        let a = net.add_router("A").unwrap();
        let b = net.add_router("B").unwrap();
        net.add_link(Interface::new(a, PortId(1)), Interface::new(b, PortId(1))).unwrap();
        net.add_host(Interface::new(b, PortId(0))).unwrap();
        (net, a, b)
    }

    #[test]
    fn rules_need_known_ports() {
        let (mut net, a, _) = two_routers();
        assert!(matches!(net.insert_rule(a, p("01/2"), PortId(7)), Err(NetworkError::InconsistentTable { .. })));
        net.insert_rule(a, p("01/2"), PortId(1)).unwrap();
        assert!(matches!(net.insert_rule(a, p("01/2"), PortId(0)), Err(NetworkError::InconsistentTable { .. })));
        assert_eq!(net.rule_count(), 1);
    }

    #[test]
    fn pbr_rules_resist_other_sources() {
        let (mut net, a, _) = two_routers();
        net.insert_pbr_rule(a, p("1/1"), PortId(1)).unwrap();
        assert!(matches!(net.delete_rule(a, p("1/1"), PortId(1)), Err(NetworkError::PolicyProtected { .. })));
        net.delete_pbr_rule(a, p("1/1"), PortId(1)).unwrap();
        assert!(net.trie().is_empty());
    }

    #[test]
    fn lpm_prefers_longer_rules() {
        let (mut net, _, b) = two_routers();
        net.insert_rule(b, p("0/1"), PortId(1)).unwrap();
        net.insert_rule(b, p("01/2"), PortId(0)).unwrap();
        assert_eq!(net.lookup(b, &p("011/3")), Some(PortId(0)));
        assert_eq!(net.lookup(b, &p("001/3")), Some(PortId(1)));
        assert_eq!(net.lookup(b, &p("1/1")), None);
    }

    #[test]
    fn duplicate_edges_are_rejected() {
        let (mut net, a, b) = two_routers();
        let err = net.add_link(Interface::new(a, PortId(1)), Interface::new(b, PortId(1)));
        assert!(matches!(err, Err(NetworkError::DuplicateEdge(..))));
        let link = net.remove_link(Interface::new(b, PortId(1))).unwrap();
        assert_eq!(link.b, Interface::new(a, PortId(1)));
        assert!(net.topology().links().is_empty());
    }
}
