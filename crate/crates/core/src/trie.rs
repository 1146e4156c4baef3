//! Network-wide header trie.
//!
//! Every rule header (forwarding rule, ACL entry, transform match or output)
//! is a path from the root. Nodes are labelled:
//!
//! * **Supernet**: a rule header whose node has children.
//! * **Atomic**: a rule header whose node is a leaf.
//! * **Iatomic**: a leaf created to complete a supernet, so that the leaves
//!   below every supernet exactly tile its range.
//! * **None**: interior path nodes without a rule.
//!
//! Atomic and iatomic leaves are the equivalence classes. They are pairwise
//! disjoint and their union is the union of all rule ranges. A node is
//! *covered* when it or one of its ancestors carries a rule; every covered
//! interior node has both children.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prefix::{Prefix, MAX_WIDTH};
use crate::types::Interface;

const NIL: u32 = u32::MAX;
const ROOT: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrieError {
    #[error("prefix {prefix} is longer than the header width {width}")]
    PrefixTooLong { prefix: Prefix, width: u8 },
    #[error("header width {0} is outside 1..=64")]
    BadWidth(u8),
    #[error("no rule {prefix} owned by {owner}")]
    NotFound { prefix: Prefix, owner: String },
    #[error("no trie node for {0}")]
    NodeMissing(Prefix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    None,
    Supernet,
    Atomic,
    Iatomic,
}

/// Index of a node in the trie arena. Only valid for the trie state it was
/// obtained from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct UpdateOutcome {
    pub created_nodes: usize,
    pub removed_nodes: usize,
    /// The update node became a leaf class that did not exist before.
    pub new_leaf: bool,
}

#[derive(Debug, Clone)]
struct Node {
    prefix: Prefix,
    parent: u32,
    children: [u32; 2],
    owners: Vec<Interface>,
    anchors: u32,
    leaf_id: u32,
}

impl Node {
    fn new(prefix: Prefix, parent: u32) -> Self {
        Self { prefix, parent, children: [NIL, NIL], owners: Vec::new(), anchors: 0, leaf_id: NIL }
    }

    fn is_rule(&self) -> bool {
        !self.owners.is_empty() || self.anchors > 0
    }

    fn child_count(&self) -> usize {
        self.children.iter().filter(|&&c| c != NIL).count()
    }
}

#[derive(Clone, Copy)]
enum Tag {
    Owner(Interface),
    Anchor,
}

/// A leaf class as listed by [`HeaderTrie::leaves`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeafInfo {
    pub leaf_id: u32,
    pub prefix: Prefix,
    pub label: Label,
}

/// One node of a structural snapshot (pre-order).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeSnapshot {
    pub prefix: Prefix,
    pub label: Label,
    pub owners: Vec<Interface>,
    pub anchors: u32,
}

/// Classes and ports whose behaviour an update may have changed.
///
/// Coordinate `j` of every vector built from these sets refers to
/// `id_to_prefix[j]`. Coordinates list iatomic classes first and atomic
/// classes second, each group in lexicographic prefix order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AffectedSets {
    pub s_affected: Vec<u32>,
    pub id_to_prefix: Vec<Prefix>,
    pub labels: Vec<Label>,
    #[serde(skip)]
    pub nodes: Vec<NodeId>,
    pub p_affected: BTreeSet<Interface>,
    /// Trie nodes touched while computing the sets.
    pub nodes_visited: usize,
}

impl AffectedSets {
    pub fn dimension(&self) -> usize {
        self.id_to_prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_prefix.is_empty()
    }

    pub fn coordinate_of(&self, prefix: &Prefix) -> Option<usize> {
        self.id_to_prefix.iter().position(|p| p == prefix)
    }
}

#[derive(Debug, Clone)]
pub struct HeaderTrie {
    width: u8,
    nodes: Vec<Node>,
    free: Vec<u32>,
    /// `leaves[leaf_id]` is the arena index of that leaf.
    leaves: Vec<u32>,
}

impl HeaderTrie {
    pub fn new(width: u8) -> Result<Self, TrieError> {
        if width == 0 || width > MAX_WIDTH {
            return Err(TrieError::BadWidth(width));
        }
        Ok(Self { width, nodes: vec![Node::new(Prefix::ROOT, NIL)], free: Vec::new(), leaves: Vec::new() })
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    /// Number of live nodes including the root.
    pub fn node_count(&self) -> usize {
        self.nodes.len() - self.free.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn iatomic_count(&self) -> usize {
        self.leaves.iter().filter(|&&n| !self.nodes[n as usize].is_rule()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.node(ROOT).child_count() == 0 && !self.node(ROOT).is_rule()
    }

    fn node(&self, n: u32) -> &Node {
        &self.nodes[n as usize]
    }

    fn node_mut(&mut self, n: u32) -> &mut Node {
        &mut self.nodes[n as usize]
    }

    fn is_class(&self, n: u32) -> bool {
        let node = self.node(n);
        node.child_count() == 0 && (node.is_rule() || n != ROOT)
    }

    fn label_of(&self, n: u32) -> Label {
        let node = self.node(n);
        match (node.is_rule(), node.child_count() > 0) {
            (true, true) => Label::Supernet,
            (true, false) => Label::Atomic,
            (false, false) if n != ROOT => Label::Iatomic,
            _ => Label::None,
        }
    }

    fn covered_above(&self, n: u32) -> bool {
        let mut x = self.node(n).parent;
        while x != NIL {
            if self.node(x).is_rule() {
                return true;
            }
            x = self.node(x).parent;
        }
        false
    }

    fn alloc(&mut self, prefix: Prefix, parent: u32) -> u32 {
        let node = Node::new(prefix, parent);
        match self.free.pop() {
            Some(slot) => {
                self.nodes[slot as usize] = node;
                slot
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        }
    }

    /// Keeps `leaf_id` in sync with class membership. Ids stay contiguous by
    /// moving the last leaf into a freed slot.
    fn refresh_leaf(&mut self, n: u32) {
        let class = self.is_class(n);
        let id = self.node(n).leaf_id;
        if class && id == NIL {
            self.node_mut(n).leaf_id = self.leaves.len() as u32;
            self.leaves.push(n);
        } else if !class && id != NIL {
            self.release_leaf_id(n);
        }
    }

    fn release_leaf_id(&mut self, n: u32) {
        let id = self.node(n).leaf_id;
        if id == NIL {
            return;
        }
        let last = self.leaves.pop().expect("leaf table out of sync");
        if last != n {
            self.leaves[id as usize] = last;
            self.node_mut(last).leaf_id = id;
        }
        self.node_mut(n).leaf_id = NIL;
    }

    fn detach(&mut self, n: u32) {
        let parent = self.node(n).parent;
        let bit = self.node(n).prefix.bit(self.node(n).prefix.len() - 1) as usize;
        self.node_mut(parent).children[bit] = NIL;
        self.release_leaf_id(n);
        self.nodes[n as usize] = Node::new(Prefix::ROOT, NIL);
        self.free.push(n);
    }

    fn find(&self, prefix: &Prefix) -> Option<u32> {
        let mut n = ROOT;
        for i in 0..prefix.len() {
            n = self.node(n).children[prefix.bit(i) as usize];
            if n == NIL {
                return None;
            }
        }
        Some(n)
    }

    /// Walks to `prefix`, creating missing nodes. Returns the node and the
    /// number of nodes created.
    fn ensure_path(&mut self, prefix: &Prefix) -> (u32, usize) {
        let mut n = ROOT;
        let mut created = 0;
        let mut grown = NIL;
        for i in 0..prefix.len() {
            let bit = prefix.bit(i) as usize;
            let c = self.node(n).children[bit];
            n = if c == NIL {
                if created == 0 {
                    grown = n;
                }
                let child = self.alloc(self.node(n).prefix.child(bit == 1), n);
                self.node_mut(n).children[bit] = child;
                created += 1;
                child
            } else {
                c
            };
        }
        if grown != NIL {
            self.refresh_leaf(grown);
        }
        (n, created)
    }

    /// Adds the missing sibling of a single-child node as an iatomic leaf.
    fn complete_node(&mut self, n: u32) -> usize {
        let children = self.node(n).children;
        let missing = match children {
            [NIL, c] if c != NIL => 0,
            [c, NIL] if c != NIL => 1,
            _ => return 0,
        };
        let leaf = self.alloc(self.node(n).prefix.child(missing == 1), n);
        self.node_mut(n).children[missing] = leaf;
        self.refresh_leaf(leaf);
        1
    }

    fn complete_subtree(&mut self, root: u32) -> usize {
        let mut created = 0;
        let mut stack = vec![root];
        while let Some(x) = stack.pop() {
            if self.node(x).child_count() == 0 {
                continue;
            }
            created += self.complete_node(x);
            stack.extend(self.node(x).children);
        }
        created
    }

    fn insert_impl(&mut self, prefix: Prefix, tag: Tag, complete: bool) -> Result<UpdateOutcome, TrieError> {
        if prefix.len() > self.width {
            return Err(TrieError::PrefixTooLong { prefix, width: self.width });
        }
        let (n, mut created) = self.ensure_path(&prefix);
        let was_rule = self.node(n).is_rule();
        let was_class = self.node(n).leaf_id != NIL;
        match tag {
            Tag::Owner(owner) => {
                let owners = &mut self.node_mut(n).owners;
                match owners.binary_search(&owner) {
                    Ok(_) => return Ok(UpdateOutcome { created_nodes: created, ..Default::default() }),
                    Err(pos) => owners.insert(pos, owner),
                }
            }
            Tag::Anchor => self.node_mut(n).anchors += 1,
        }
        if complete {
            let mut covered = false;
            let mut x = ROOT;
            for i in 0..prefix.len() {
                covered |= self.node(x).is_rule();
                if covered {
                    created += self.complete_node(x);
                }
                x = self.node(x).children[prefix.bit(i) as usize];
            }
            if !was_rule && !covered {
                created += self.complete_subtree(n);
            }
        }
        self.refresh_leaf(n);
        let new_leaf = !was_class && self.node(n).leaf_id != NIL;
        Ok(UpdateOutcome { created_nodes: created, removed_nodes: 0, new_leaf })
    }

    /// Whether `n` or a descendant carries a rule or anchor.
    fn has_rule_in(&self, n: u32) -> bool {
        let mut stack = vec![n];
        while let Some(x) = stack.pop() {
            let node = self.node(x);
            if node.is_rule() {
                return true;
            }
            stack.extend(node.children.iter().filter(|&&c| c != NIL));
        }
        false
    }

    /// Detaches every descendant of `n`; returns how many were removed.
    fn drop_descendants(&mut self, n: u32) -> usize {
        let mut removed = 0;
        for c in self.node(n).children {
            if c != NIL {
                removed += self.drop_descendants(c);
                self.detach(c);
                removed += 1;
            }
        }
        removed
    }

    /// Removes non-rule descendants of `n` that are no longer covered.
    fn prune_uncovered(&mut self, n: u32) -> usize {
        let mut removed = 0;
        for c in self.node(n).children {
            if c == NIL || self.node(c).is_rule() {
                continue;
            }
            removed += self.prune_uncovered(c);
            if self.node(c).child_count() == 0 {
                self.detach(c);
                removed += 1;
            }
        }
        removed
    }

    fn remove_impl(&mut self, prefix: Prefix, tag: Tag) -> Result<UpdateOutcome, TrieError> {
        let not_found = |owner: String| TrieError::NotFound { prefix, owner };
        let n = self.find(&prefix).ok_or_else(|| match tag {
            Tag::Owner(o) => not_found(o.to_string()),
            Tag::Anchor => not_found("anchor".into()),
        })?;
        match tag {
            Tag::Owner(owner) => {
                let owners = &mut self.node_mut(n).owners;
                let pos = owners.binary_search(&owner).map_err(|_| not_found(owner.to_string()))?;
                owners.remove(pos);
            }
            Tag::Anchor => {
                if self.node(n).anchors == 0 {
                    return Err(not_found("anchor".into()));
                }
                self.node_mut(n).anchors -= 1;
            }
        }
        let mut outcome = UpdateOutcome::default();
        if self.node(n).is_rule() {
            return Ok(outcome);
        }
        if self.covered_above(n) {
            // Still inside a supernet: collapse filler subtrees on the way up
            // to the nearest rule so the partition stays coarsest.
            let mut x = n;
            loop {
                if self.node(x).is_rule() {
                    if self.node(x).children.iter().all(|&c| c == NIL || !self.has_rule_in(c)) {
                        outcome.removed_nodes += self.drop_descendants(x);
                    }
                    self.refresh_leaf(x);
                    break;
                }
                if self.has_rule_in(x) {
                    break;
                }
                outcome.removed_nodes += self.drop_descendants(x);
                self.refresh_leaf(x);
                x = self.node(x).parent;
            }
            return Ok(outcome);
        }
        outcome.removed_nodes += self.prune_uncovered(n);
        let mut x = n;
        while x != ROOT && !self.node(x).is_rule() && self.node(x).child_count() == 0 {
            let parent = self.node(x).parent;
            self.detach(x);
            outcome.removed_nodes += 1;
            x = parent;
        }
        self.refresh_leaf(x);
        Ok(outcome)
    }

    /// Inserts a forwarding-rule header owned by `owner` and restores the
    /// partition below the nearest covering supernet. Re-inserting an
    /// existing `(prefix, owner)` pair is a no-op.
    pub fn insert_header(&mut self, prefix: Prefix, owner: Interface) -> Result<UpdateOutcome, TrieError> {
        self.insert_impl(prefix, Tag::Owner(owner), true)
    }

    /// Inserts without completing supernets; call
    /// [`HeaderTrie::materialize_iatomic`] once loading is done.
    pub fn insert_header_deferred(&mut self, prefix: Prefix, owner: Interface) -> Result<UpdateOutcome, TrieError> {
        self.insert_impl(prefix, Tag::Owner(owner), false)
    }

    /// Inserts a header that shapes the partition without owning a port
    /// (ACL entries, transform match and output fields). Anchors are counted.
    pub fn insert_anchor(&mut self, prefix: Prefix) -> Result<UpdateOutcome, TrieError> {
        self.insert_impl(prefix, Tag::Anchor, true)
    }

    pub fn insert_anchor_deferred(&mut self, prefix: Prefix) -> Result<UpdateOutcome, TrieError> {
        self.insert_impl(prefix, Tag::Anchor, false)
    }

    pub fn delete_header(&mut self, prefix: Prefix, owner: Interface) -> Result<UpdateOutcome, TrieError> {
        self.remove_impl(prefix, Tag::Owner(owner))
    }

    pub fn remove_anchor(&mut self, prefix: Prefix) -> Result<UpdateOutcome, TrieError> {
        self.remove_impl(prefix, Tag::Anchor)
    }

    /// Post-order pass that gives every single-child covered node an
    /// iatomic sibling leaf. Returns the number of leaves created.
    pub fn materialize_iatomic(&mut self) -> usize {
        let mut created = 0;
        let mut stack = vec![(ROOT, false)];
        let mut order = Vec::new();
        while let Some((x, covered_above)) = stack.pop() {
            let covered = covered_above || self.node(x).is_rule();
            order.push((x, covered));
            for c in self.node(x).children {
                if c != NIL {
                    stack.push((c, covered));
                }
            }
        }
        for &(x, covered) in order.iter().rev() {
            if covered {
                created += self.complete_node(x);
            }
        }
        created
    }

    /// Affected sets for an update on `prefix`, which must have a node.
    ///
    /// Owners are gathered from the root path above the update node (covering
    /// rules decide longest-prefix matches inside the subtree) and from every
    /// node in its subtree; classes are the leaves of the subtree.
    pub fn compute_affected(&self, prefix: &Prefix) -> Result<AffectedSets, TrieError> {
        let mut owners = Vec::new();
        let mut leaves = Vec::new();
        let mut visits = self.collect_path(prefix, &mut owners, &mut leaves);
        let o = self.find(prefix).ok_or(TrieError::NodeMissing(*prefix))?;
        visits += self.collect_subtree(o, &mut owners, &mut leaves);
        Ok(self.assemble(leaves, owners, visits))
    }

    /// Affected sets for a group of updated prefixes. Prefixes without a node
    /// (a deletion pruned them) contribute the class containing them, if any,
    /// and the owners on their root path.
    pub fn affected_for(&self, prefixes: &[Prefix]) -> AffectedSets {
        let mut owners = Vec::new();
        let mut leaves = Vec::new();
        let mut visits = 0;
        let mut seen = HashSet::new();
        for prefix in prefixes {
            if !seen.insert(*prefix) {
                continue;
            }
            visits += self.collect_path(prefix, &mut owners, &mut leaves);
            if let Some(o) = self.find(prefix) {
                visits += self.collect_subtree(o, &mut owners, &mut leaves);
            }
        }
        leaves.sort_unstable();
        leaves.dedup();
        self.assemble(leaves, owners, visits)
    }

    /// Affected sets covering every class.
    pub fn affected_all(&self) -> AffectedSets {
        self.affected_for(&[Prefix::ROOT])
    }

    /// Walks the root path towards `prefix`, collecting owners of strict
    /// ancestors. A leaf class met on the way (the prefix lies inside it) is
    /// collected too.
    fn collect_path(&self, prefix: &Prefix, owners: &mut Vec<Interface>, leaves: &mut Vec<u32>) -> usize {
        let mut n = ROOT;
        let mut visits = 0;
        for i in 0..prefix.len() {
            visits += 1;
            owners.extend(self.node(n).owners.iter().copied());
            let c = self.node(n).children[prefix.bit(i) as usize];
            if c == NIL {
                if self.is_class(n) {
                    leaves.push(n);
                }
                return visits;
            }
            n = c;
        }
        visits
    }

    fn collect_subtree(&self, o: u32, owners: &mut Vec<Interface>, leaves: &mut Vec<u32>) -> usize {
        let mut visits = 0;
        let mut stack = vec![o];
        while let Some(x) = stack.pop() {
            visits += 1;
            let node = self.node(x);
            owners.extend(node.owners.iter().copied());
            if self.is_class(x) {
                leaves.push(x);
            }
            for c in node.children.iter().rev() {
                if *c != NIL {
                    stack.push(*c);
                }
            }
        }
        visits
    }

    fn assemble(&self, leaves: Vec<u32>, mut owners: Vec<Interface>, nodes_visited: usize) -> AffectedSets {
        owners.sort_unstable();
        owners.dedup();
        let p_affected: BTreeSet<Interface> = owners.into_iter().collect();
        let mut keyed: Vec<(bool, Prefix, u32)> =
            leaves.into_iter().map(|n| (self.node(n).is_rule(), self.node(n).prefix, n)).collect();
        keyed.sort_unstable();
        keyed.dedup();
        AffectedSets {
            s_affected: keyed.iter().map(|k| self.node(k.2).leaf_id).collect(),
            id_to_prefix: keyed.iter().map(|k| k.1).collect(),
            labels: keyed.iter().map(|k| if k.0 { Label::Atomic } else { Label::Iatomic }).collect(),
            nodes: keyed.iter().map(|k| NodeId(k.2)).collect(),
            p_affected,
            nodes_visited,
        }
    }

    /// Adds leaf classes (and the owners deciding their forwarding) to an
    /// affected set, re-deriving the coordinate order.
    pub fn extend_affected(&self, base: &AffectedSets, extra: &[NodeId]) -> AffectedSets {
        let mut owners: Vec<Interface> = base.p_affected.iter().copied().collect();
        let mut leaves: Vec<u32> = base.nodes.iter().map(|n| n.0).collect();
        let mut visits = base.nodes_visited;
        for leaf in extra {
            let mut x = leaf.0;
            while x != NIL {
                visits += 1;
                owners.extend(self.node(x).owners.iter().copied());
                x = self.node(x).parent;
            }
            leaves.push(leaf.0);
        }
        self.assemble(leaves, owners, visits)
    }

    /// Owner lists from `node` up to the root, deepest first.
    pub fn path_owners(&self, node: NodeId) -> impl Iterator<Item = &[Interface]> + '_ {
        let mut x = node.0;
        std::iter::from_fn(move || {
            if x == NIL {
                return None;
            }
            let node = self.node(x);
            x = node.parent;
            Some(node.owners.as_slice())
        })
    }

    /// Leaf classes intersecting `prefix`.
    pub fn leaves_intersecting(&self, prefix: &Prefix) -> Vec<NodeId> {
        let mut owners = Vec::new();
        let mut leaves = Vec::new();
        self.collect_path(prefix, &mut owners, &mut leaves);
        if let Some(o) = self.find(prefix) {
            let mut stack = vec![o];
            while let Some(x) = stack.pop() {
                if self.is_class(x) {
                    leaves.push(x);
                }
                stack.extend(self.node(x).children.iter().rev().filter(|c| **c != NIL));
            }
        }
        leaves.into_iter().map(NodeId).collect()
    }

    /// Smallest set of trie prefixes whose ranges are exactly the union of
    /// the given leaf classes: every returned node is maximal among nodes
    /// whose whole range is tiled by the given leaves.
    pub fn maximal_covering(&self, leaves: &[NodeId]) -> Vec<Prefix> {
        let set: HashSet<u32> = leaves.iter().map(|n| n.0).collect();
        let mut memo: HashMap<u32, bool> = HashMap::new();
        let mut out = BTreeSet::new();
        for leaf in leaves {
            let mut x = leaf.0;
            loop {
                let parent = self.node(x).parent;
                if parent == NIL || !self.tiled(parent, &set, &mut memo) {
                    break;
                }
                x = parent;
            }
            out.insert(self.node(x).prefix);
        }
        out.into_iter().collect()
    }

    fn tiled(&self, n: u32, set: &HashSet<u32>, memo: &mut HashMap<u32, bool>) -> bool {
        if let Some(&v) = memo.get(&n) {
            return v;
        }
        let node = self.node(n);
        let v = if node.child_count() == 0 {
            set.contains(&n)
        } else {
            node.children.iter().all(|&c| c != NIL && self.tiled(c, set, memo))
        };
        memo.insert(n, v);
        v
    }

    pub fn node_prefix(&self, node: NodeId) -> Prefix {
        self.node(node.0).prefix
    }

    pub fn node_label(&self, node: NodeId) -> Label {
        self.label_of(node.0)
    }

    pub fn leaf_node(&self, leaf_id: u32) -> Option<NodeId> {
        self.leaves.get(leaf_id as usize).map(|&n| NodeId(n))
    }

    pub fn label(&self, prefix: &Prefix) -> Option<Label> {
        self.find(prefix).map(|n| self.label_of(n))
    }

    pub fn owners(&self, prefix: &Prefix) -> Option<&[Interface]> {
        self.find(prefix).map(|n| self.node(n).owners.as_slice())
    }

    pub fn leaf_id(&self, prefix: &Prefix) -> Option<u32> {
        self.find(prefix).map(|n| self.node(n).leaf_id).filter(|&id| id != NIL)
    }

    /// Leaf classes in lexicographic (in-order) order.
    pub fn leaves(&self) -> Vec<LeafInfo> {
        let mut out = Vec::with_capacity(self.leaves.len());
        let mut stack = vec![ROOT];
        while let Some(x) = stack.pop() {
            if self.is_class(x) {
                out.push(LeafInfo { leaf_id: self.node(x).leaf_id, prefix: self.node(x).prefix, label: self.label_of(x) });
            }
            stack.extend(self.node(x).children.iter().rev().filter(|c| **c != NIL));
        }
        out
    }

    /// Pre-order structural snapshot, independent of arena layout and leaf
    /// numbering.
    pub fn snapshot(&self) -> Vec<NodeSnapshot> {
        let mut out = Vec::new();
        let mut stack = vec![ROOT];
        while let Some(x) = stack.pop() {
            let node = self.node(x);
            out.push(NodeSnapshot {
                prefix: node.prefix,
                label: self.label_of(x),
                owners: node.owners.clone(),
                anchors: node.anchors,
            });
            stack.extend(node.children.iter().rev().filter(|c| **c != NIL));
        }
        out
    }

    /// Verifies the structural invariants. Used by tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen_ids = vec![false; self.leaves.len()];
        let mut stack = vec![(ROOT, false)];
        while let Some((x, covered_above)) = stack.pop() {
            let node = self.node(x);
            let covered = covered_above || node.is_rule();
            for (bit, &c) in node.children.iter().enumerate() {
                if c == NIL {
                    continue;
                }
                let child = self.node(c);
                if child.parent != x || child.prefix != node.prefix.child(bit == 1) {
                    return Err(format!("bad link below {}", node.prefix));
                }
                stack.push((c, covered));
            }
            let kids = node.child_count();
            if covered && kids == 1 {
                return Err(format!("covered node {} has a single child", node.prefix));
            }
            if x != ROOT && kids == 0 && !covered {
                return Err(format!("dangling uncovered leaf {}", node.prefix));
            }
            if kids > 0 && !node.is_rule() && !self.has_rule_in(x) {
                return Err(format!("filler subtree below {} is not collapsed", node.prefix));
            }
            if kids > 0 && node.is_rule() && node.children.iter().all(|&c| c == NIL || !self.has_rule_in(c)) {
                return Err(format!("rule node {} has only filler below", node.prefix));
            }
            let class = self.is_class(x);
            if class != (node.leaf_id != NIL) {
                return Err(format!("leaf id out of sync at {}", node.prefix));
            }
            if class {
                let id = node.leaf_id as usize;
                if id >= self.leaves.len() || self.leaves[id] != x || seen_ids[id] {
                    return Err(format!("leaf table broken at {}", node.prefix));
                }
                seen_ids[id] = true;
            }
        }
        if seen_ids.iter().any(|s| !s) {
            return Err("leaf table references dead nodes".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{PortId, RouterId};

    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    fn at(r: u32, port: u32) -> Interface {
        Interface::new(RouterId(r), PortId(port))
    }

    fn leaf_prefixes(t: &HeaderTrie) -> Vec<String> {
        t.leaves().iter().map(|l| l.prefix.to_string()).collect()
    }

    #[test]
    fn first_insert_is_atomic_leaf() {
        let mut t = HeaderTrie::new(3).unwrap();
        let out = t.insert_header(p("1/1"), at(0, 0)).unwrap();
        assert!(out.new_leaf);
        assert_eq!(t.label(&p("1/1")), Some(Label::Atomic));
        assert_eq!(t.leaf_id(&p("1/1")), Some(0));
        t.check_invariants().unwrap();
    }

    #[test]
    fn supernet_insert_creates_iatomic_sibling() {
        let mut t = HeaderTrie::new(3).unwrap();
        for (s, r) in [("000/3", 0), ("01/2", 1), ("1/1", 2)] {
            t.insert_header(p(s), at(r, 0)).unwrap();
        }
        assert_eq!(t.iatomic_count(), 0);
        t.insert_header(p("0/1"), at(3, 0)).unwrap();
        assert_eq!(t.label(&p("0/1")), Some(Label::Supernet));
        assert_eq!(t.label(&p("001/3")), Some(Label::Iatomic));
        assert_eq!(leaf_prefixes(&t), ["000/3", "001/3", "01/2", "1/1"]);
        t.check_invariants().unwrap();
    }

    #[test]
    fn deferred_load_then_materialize() {
        let mut t = HeaderTrie::new(3).unwrap();
        for s in ["000/3", "01/2", "1/1", "0/1"] {
            t.insert_header_deferred(p(s), at(0, 0)).unwrap();
        }
        assert_eq!(t.materialize_iatomic(), 1);
        assert_eq!(t.materialize_iatomic(), 0);
        t.check_invariants().unwrap();

        let mut t = HeaderTrie::new(4).unwrap();
        t.insert_header_deferred(p("0/1"), at(0, 0)).unwrap();
        t.insert_header_deferred(p("0000/4"), at(0, 1)).unwrap();
        assert_eq!(t.materialize_iatomic(), 3);
        assert_eq!(leaf_prefixes(&t), ["0000/4", "0001/4", "001/3", "01/2"]);
    }

    #[test]
    fn disjoint_atomic_leaves_need_no_completion() {
        let mut t = HeaderTrie::new(4).unwrap();
        for s in ["0000/4", "0011/4", "11/2"] {
            t.insert_header_deferred(p(s), at(0, 0)).unwrap();
        }
        assert_eq!(t.materialize_iatomic(), 0);
    }

    #[test]
    fn delete_restores_partition() {
        let mut t = HeaderTrie::new(3).unwrap();
        t.insert_header(p("0/1"), at(0, 0)).unwrap();
        t.insert_header(p("000/3"), at(1, 0)).unwrap();
        assert_eq!(leaf_prefixes(&t), ["000/3", "001/3", "01/2"]);
        t.delete_header(p("0/1"), at(0, 0)).unwrap();
        assert_eq!(leaf_prefixes(&t), ["000/3"]);
        t.check_invariants().unwrap();
        t.delete_header(p("000/3"), at(1, 0)).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.node_count(), 1);
        assert_eq!(t.leaf_count(), 0);
    }

    #[test]
    fn delete_inside_supernet_collapses_filler() {
        let mut t = HeaderTrie::new(3).unwrap();
        t.insert_header(p("0/1"), at(0, 0)).unwrap();
        t.insert_header(p("000/3"), at(1, 0)).unwrap();
        t.insert_header(p("011/3"), at(1, 0)).unwrap();
        t.delete_header(p("000/3"), at(1, 0)).unwrap();
        assert_eq!(leaf_prefixes(&t), ["00/2", "010/3", "011/3"]);
        assert_eq!(t.label(&p("00/2")), Some(Label::Iatomic));
        t.check_invariants().unwrap();
        t.delete_header(p("011/3"), at(1, 0)).unwrap();
        assert_eq!(leaf_prefixes(&t), ["0/1"]);
        assert_eq!(t.label(&p("0/1")), Some(Label::Atomic));
        assert_eq!(t.node_count(), 2);
        t.check_invariants().unwrap();
    }

    #[test]
    fn delete_errors() {
        let mut t = HeaderTrie::new(3).unwrap();
        t.insert_header(p("01/2"), at(0, 0)).unwrap();
        assert!(matches!(t.delete_header(p("01/2"), at(0, 1)), Err(TrieError::NotFound { .. })));
        assert!(matches!(t.delete_header(p("1/1"), at(0, 0)), Err(TrieError::NotFound { .. })));
        assert!(matches!(t.insert_header(p("0101/4"), at(0, 0)), Err(TrieError::PrefixTooLong { .. })));
    }

    #[test]
    fn duplicate_owner_is_idempotent() {
        let mut t = HeaderTrie::new(3).unwrap();
        t.insert_header(p("01/2"), at(0, 0)).unwrap();
        let before = t.snapshot();
        let out = t.insert_header(p("01/2"), at(0, 0)).unwrap();
        assert_eq!(out, UpdateOutcome::default());
        assert_eq!(before, t.snapshot());
    }

    #[test]
    fn affected_sets_on_toy_trie() {
        let mut t = HeaderTrie::new(3).unwrap();
        t.insert_header(p("00/2"), at(0, 0)).unwrap();
        t.insert_header(p("000/3"), at(1, 0)).unwrap();
        t.insert_header(p("01/2"), at(1, 0)).unwrap();
        t.insert_header(p("1/1"), at(3, 9)).unwrap();
        t.insert_header(p("0/1"), at(2, 0)).unwrap();
        let a = t.compute_affected(&p("0/1")).unwrap();
        let names: Vec<_> = a.id_to_prefix.iter().map(|p| p.to_string()).collect();
        assert_eq!(names, ["001/3", "000/3", "01/2"]);
        assert_eq!(a.labels, [Label::Iatomic, Label::Atomic, Label::Atomic]);
        assert_eq!(a.p_affected, [at(0, 0), at(1, 0), at(2, 0)].into_iter().collect());
        assert!(matches!(t.compute_affected(&p("11/2")), Err(TrieError::NodeMissing(_))));
    }

    #[test]
    fn isolated_leaf_update() {
        let mut t = HeaderTrie::new(3).unwrap();
        t.insert_header(p("01/2"), at(0, 0)).unwrap();
        t.insert_header(p("1/1"), at(1, 2)).unwrap();
        let a = t.compute_affected(&p("1/1")).unwrap();
        assert_eq!(a.id_to_prefix, vec![p("1/1")]);
        assert_eq!(a.p_affected, [at(1, 2)].into_iter().collect());
    }

    #[test]
    fn maximal_covering_merges_full_subtrees() {
        let mut t = HeaderTrie::new(3).unwrap();
        t.insert_header(p("0/1"), at(0, 0)).unwrap();
        t.insert_header(p("000/3"), at(1, 0)).unwrap();
        let leaves = t.leaves_intersecting(&p("00/2"));
        assert_eq!(t.maximal_covering(&leaves), vec![p("00/2")]);
        let one = t.leaves_intersecting(&p("001/3"));
        assert_eq!(t.maximal_covering(&one), vec![p("001/3")]);
        let all = t.leaves_intersecting(&p("0/1"));
        assert_eq!(t.maximal_covering(&all), vec![p("0/1")]);
    }
}
