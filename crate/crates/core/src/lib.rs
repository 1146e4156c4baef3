//! Dataplane verification over prefix equivalence classes.
//!
//! Rule headers from every router are arranged in a network-wide binary
//! trie whose leaves partition the covered header space into equivalence
//! classes. After a rule update only the classes below the updated node
//! (and the router ports that forward them) are re-examined: each class is
//! a standard basis vector, each `(router, port)` pair a forwarding vector,
//! and forwarding a set of classes through a port is the orthogonal
//! projection of a state vector onto that port's subspace, which reduces to
//! an element-wise AND.
//!
//! Module map:
//!
//! * [`prefix`] / [`types`]: header prefixes and router/port identifiers.
//! * [`trie`]: the header trie and affected-set computation.
//! * [`vector`]: state/forwarding vectors and the projection algebra, plus a
//!   dense least-squares reference in [`vector::reference`].
//! * [`network`] / [`verifier`]: network state, verification sessions and the
//!   reachability, loop, blackhole, policy, batch and what-if queries.
//! * [`rectifier`]: path quality scores and rule synthesis.
//! * [`io`]: the text formats, synthetic generator and update-stream bench.
//! * [`oracle`]: brute-force per-packet simulation used as ground truth.

pub mod io;
pub mod network;
pub mod oracle;
pub mod prefix;
pub mod rectifier;
pub mod trie;
pub mod types;
pub mod vector;
pub mod verifier;

pub use network::{AclAction, Network, NetworkError};
pub use prefix::{Prefix, PrefixError};
pub use trie::{AffectedSets, HeaderTrie, Label, TrieError};
pub use types::{Interface, PortId, RouterId};
pub use vector::{ForwardingVector, StateVector, TransformMatrix, VectorError};
pub use verifier::{ReachabilityReport, Session};
