//! Router, port and interface identifiers.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Dense router index. Router names live in the topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RouterId(pub u32);

impl RouterId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for RouterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Port number local to one router.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortId(pub u32);

impl PortId {
    /// Sentinel port used by the per-router union of forwarding vectors.
    pub const ALL: PortId = PortId(u32::MAX);
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == PortId::ALL {
            f.write_str("*")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// A `(router, port)` pair. Rule owners in the trie, link endpoints in the
/// topology and forwarding-vector keys are all interfaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interface {
    pub router: RouterId,
    pub port: PortId,
}

impl Interface {
    pub fn new(router: RouterId, port: PortId) -> Self {
        Self { router, port }
    }
}

impl fmt::Display for Interface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.router, self.port)
    }
}
