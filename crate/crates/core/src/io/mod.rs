//! Network files, update streams and synthetic workloads.

mod format;
mod generate;
mod stream;

use serde::Serialize;
use thiserror::Error;

use crate::network::AclAction;
use crate::prefix::Prefix;

pub use format::{parse_network, parse_updates, serialize_network, serialize_updates};
pub use generate::{generate_synthetic, holdout_stream, GeneratorConfig, MaskHistogram};
pub use stream::{
    fraction_under, full_reachable_ranges, run_update_stream, BenchRecord, Cdf, Query, RangeSet, StreamMode, StreamOutcome,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IoError {
    #[error("line {line}, column {column}: {message}")]
    ParseError { line: usize, column: usize, message: String },
    #[error("line {line}: duplicate edge {a}:{port_a} - {b}:{port_b}")]
    DuplicateEdge { line: usize, a: String, port_a: u32, b: String, port_b: u32 },
    #[error("infeasible generator parameters: {0}")]
    InfeasibleParameters(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EdgeSpec {
    pub a: usize,
    pub port_a: u32,
    pub b: usize,
    pub port_b: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RuleSpec {
    pub router: usize,
    pub prefix: Prefix,
    pub port: u32,
    pub pbr: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AclSpec {
    pub router: usize,
    pub prefix: Prefix,
    pub action: AclAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct XformSpec {
    pub router: usize,
    pub matched: Prefix,
    pub output: Prefix,
}

/// Declarative network description; routers are referred to by index into
/// `routers`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetworkSpec {
    pub width: u8,
    pub routers: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    /// Host-facing `(router, port)` pairs.
    pub hosts: Vec<(usize, u32)>,
    pub rules: Vec<RuleSpec>,
    pub acls: Vec<AclSpec>,
    pub xforms: Vec<XformSpec>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            width: 32,
            routers: Vec::new(),
            edges: Vec::new(),
            hosts: Vec::new(),
            rules: Vec::new(),
            acls: Vec::new(),
            xforms: Vec::new(),
        }
    }
}

impl NetworkSpec {
    pub fn router_index(&self, name: &str) -> Option<usize> {
        self.routers.iter().position(|r| r == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum UpdateOp {
    Insert,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UpdateEvent {
    pub op: UpdateOp,
    pub router: usize,
    pub prefix: Prefix,
    pub port: u32,
    pub seq: u64,
}
