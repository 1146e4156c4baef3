//! Replaying update streams with per-update timing.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use super::{NetworkSpec, UpdateEvent, UpdateOp};
use crate::network::Network;
use crate::prefix::Prefix;
use crate::types::{PortId, RouterId};
use crate::verifier::{Session, VerifyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StreamMode {
    PerUpdate,
    Batch(usize),
}

/// What to verify after each update (or batch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Query {
    /// Traverse everything reachable from the updated router(s).
    FromUpdateRouter,
    /// Reachability between a fixed pair; the stream keeps the reachable
    /// header set up to date incrementally.
    Pair { src: RouterId, dst: RouterId },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRecord {
    /// Sequence number of the last event covered.
    pub seq: u64,
    pub micros: f64,
    pub s_affected: usize,
    pub p_affected: usize,
    pub paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cdf {
    pub count: usize,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub under_250us: f64,
}

impl Cdf {
    /// Nearest-rank percentiles; `None` for no samples.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| s[((p / 100.0 * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Some(Self { count: s.len(), p50: rank(50.0), p90: rank(90.0), p99: rank(99.0), under_250us: fraction_under(&s, 250.0) })
    }
}

pub fn fraction_under(samples: &[f64], threshold: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&x| x <= threshold).count() as f64 / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamOutcome {
    pub records: Vec<BenchRecord>,
    pub cdf: Option<Cdf>,
    /// Time to build the network and trie, reported separately.
    pub load_micros: f64,
    /// Reachable header ranges for a `Pair` query after the last event.
    pub reachable: Option<Vec<(u64, u64)>>,
}

/// Disjoint, non-adjacent inclusive ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RangeSet(BTreeMap<u64, u64>);

impl RangeSet {
    pub fn assign(&mut self, lo: u64, hi: u64, on: bool) {
        let upper = hi.saturating_add(1);
        let touching: Vec<(u64, u64)> = self
            .0
            .range(..=upper)
            .rev()
            .take_while(|(_, &e)| lo == 0 || e >= lo - 1)
            .map(|(&s, &e)| (s, e))
            .collect();
        let (mut new_lo, mut new_hi) = (lo, hi);
        for (s, e) in touching {
            self.0.remove(&s);
            if on {
                new_lo = new_lo.min(s);
                new_hi = new_hi.max(e);
            } else {
                if s < lo {
                    self.0.insert(s, e.min(lo - 1));
                }
                if e > hi {
                    self.0.insert(s.max(hi + 1), e);
                }
            }
        }
        if on {
            self.0.insert(new_lo, new_hi);
        }
    }

    pub fn ranges(&self) -> Vec<(u64, u64)> {
        self.0.iter().map(|(&s, &e)| (s, e)).collect()
    }
}

/// Reachable header ranges between a pair, from a full verification.
pub fn full_reachable_ranges(net: &Network, src: RouterId, dst: RouterId) -> Result<Vec<(u64, u64)>, VerifyError> {
    let session = Session::full(net)?;
    let report = session.verify_reachability(src, dst, &session.ones())?;
    let mut set = RangeSet::default();
    for p in &report.reachable {
        let (lo, hi) = p.range(net.width());
        set.assign(lo, hi, true);
    }
    Ok(set.ranges())
}

fn apply(net: &mut Network, e: &UpdateEvent) -> Result<(), VerifyError> {
    let (r, port) = (RouterId(e.router as u32), PortId(e.port));
    match e.op {
        UpdateOp::Insert => net.insert_rule(r, e.prefix, port)?,
        UpdateOp::Delete => net.delete_rule(r, e.prefix, port)?,
    };
    Ok(())
}

/// Loads `spec`, then applies the stream one update (or one batch) at a
/// time, verifying after each step. Load time is measured separately.
pub fn run_update_stream(spec: &NetworkSpec, stream: &[UpdateEvent], mode: StreamMode, query: Query) -> Result<StreamOutcome, VerifyError> {
    let t0 = Instant::now();
    let mut net = Network::from_spec(spec)?;
    let load_micros = t0.elapsed().as_secs_f64() * 1e6;

    let mut ranges = match query {
        Query::Pair { src, dst } => {
            let mut set = RangeSet::default();
            for (lo, hi) in full_reachable_ranges(&net, src, dst)? {
                set.assign(lo, hi, true);
            }
            Some(set)
        }
        Query::FromUpdateRouter => None,
    };

    let chunk = match mode {
        StreamMode::PerUpdate => 1,
        StreamMode::Batch(n) => n.max(1),
    };
    let width = net.width();
    let mut records = Vec::with_capacity(stream.len().div_ceil(chunk));
    for batch in stream.chunks(chunk) {
        let start = Instant::now();
        for e in batch {
            apply(&mut net, e)?;
        }
        let touched: Vec<Prefix> = batch.iter().map(|e| e.prefix).collect();
        let session = Session::for_prefixes(&net, &touched)?;
        let b = session.ones();
        let (paths, pair_result) = match query {
            Query::Pair { src, dst } => {
                let report = session.verify_reachability(src, dst, &b)?;
                (report.total_paths, Some(report.b_reachable))
            }
            Query::FromUpdateRouter => {
                let mut routers: Vec<usize> = batch.iter().map(|e| e.router).collect();
                routers.sort_unstable();
                routers.dedup();
                let mut paths = 0;
                for r in routers {
                    paths += session.traverse_all(RouterId(r as u32), &b)?.branches;
                }
                (paths, None)
            }
        };
        let micros = (start.elapsed().as_secs_f64() * 1e6).max(1e-3);
        records.push(BenchRecord {
            seq: batch.last().expect("chunks are non-empty").seq,
            micros,
            s_affected: session.dimension(),
            p_affected: session.affected().p_affected.len(),
            paths,
        });
        if let (Some(set), Some(bits)) = (ranges.as_mut(), pair_result) {
            for p in &touched {
                let (lo, hi) = p.range(width);
                set.assign(lo, hi, false);
            }
            for (j, class) in session.coordinates().iter().enumerate() {
                let (lo, hi) = class.range(width);
                set.assign(lo, hi, bits.get(j));
            }
        }
    }
    let samples: Vec<f64> = records.iter().map(|r| r.micros).collect();
    Ok(StreamOutcome { cdf: Cdf::from_samples(&samples), records, load_micros, reachable: ranges.map(|s| s.ranges()) })
}
