//! `dpv`: load a network file and ask it questions.
//!
//! Exit status is 0 when a query was answered (even "unreachable"), 1 when
//! `--assert` is set and the answer is a violation, 2 on bad input.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use dpv_core::io::{
    generate_synthetic, holdout_stream, parse_network, parse_updates, run_update_stream, serialize_network, serialize_updates,
    GeneratorConfig, IoError, MaskHistogram, NetworkSpec, Query, StreamMode,
};
use dpv_core::rectifier::{rectify_with, RectifyError, RectifyOptions};
use dpv_core::verifier::{check_policy, whatif_link_down, Constraint, Policy, ReachabilityReport, Session, VerifyError};
use dpv_core::{Interface, Network, NetworkError, PortId, Prefix, PrefixError, RouterId, StateVector};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "dpv", version, about = "Incremental data-plane verification over header equivalence classes")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Exit with status 1 when the answer is a violation (unreachable,
    /// loop, blackhole, policy breach, impossible repair).
    #[arg(long = "assert", global = true)]
    assert_clean: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a network, build the header trie and print a summary.
    Load { network: PathBuf },
    /// Classes that travel from SRC to DST.
    Verify {
        network: PathBuf,
        #[arg(long)]
        src: String,
        #[arg(long)]
        dst: String,
        /// Only start with the classes overlapping these prefixes.
        #[arg(long, value_delimiter = ',')]
        prefixes: Vec<String>,
    },
    /// Forwarding loops reachable from SRC.
    Loops {
        network: PathBuf,
        #[arg(long)]
        src: String,
    },
    /// Routers reached from SRC that drop classes for lack of a rule.
    Blackholes {
        network: PathBuf,
        #[arg(long)]
        src: String,
    },
    /// Check path-length and waypoint constraints on SRC → DST paths.
    Policy {
        network: PathBuf,
        #[arg(long)]
        src: String,
        #[arg(long)]
        dst: String,
        /// Longest allowed path, counted in routers.
        #[arg(long)]
        max_len: Option<usize>,
        /// Router every delivering path must cross (repeatable).
        #[arg(long)]
        waypoint: Vec<String>,
    },
    /// Fail a link and re-verify SRC → DST.
    Whatif {
        network: PathBuf,
        /// Link as `A:port-B:port`.
        #[arg(long)]
        link: String,
        #[arg(long)]
        src: String,
        #[arg(long)]
        dst: String,
    },
    /// Add rules so the intended prefixes reach DST from SRC.
    Rectify {
        network: PathBuf,
        #[arg(long)]
        src: String,
        #[arg(long)]
        dst: String,
        #[arg(long, value_delimiter = ',', required = true)]
        intent: Vec<String>,
        /// Allow replacing rules that send the classes elsewhere.
        #[arg(long)]
        allow_deletions: bool,
        /// Write the repaired network here.
        #[arg(long)]
        write: Option<PathBuf>,
    },
    /// Replay an update stream and report verification times.
    Bench {
        network: PathBuf,
        #[arg(long)]
        stream: PathBuf,
        /// `per-update`, `batch` (whole stream) or `batch:N`.
        #[arg(long, default_value = "per-update")]
        mode: String,
        /// Track one pair (`SRC:DST`) instead of traversing from the updated router.
        #[arg(long)]
        pair: Option<String>,
        /// Also print one line per record.
        #[arg(long)]
        records: bool,
    },
    /// Generate a synthetic shortest-path network.
    Gen {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        edges: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination prefixes; every router gets a rule for each.
        #[arg(long, default_value_t = 10)]
        prefixes: usize,
        #[arg(long, default_value_t = 32)]
        width: u8,
        /// Mask lengths drawn uniformly from `LO-HI` instead of the default histogram.
        #[arg(long)]
        masks: Option<String>,
        /// Hold back this fraction of rules as an insert stream.
        #[arg(long)]
        holdout: Option<f64>,
        /// Network output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Update stream output file, with `--holdout`.
        #[arg(long)]
        stream_out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: IoError },
    #[error("unknown router `{0}`")]
    UnknownRouter(String),
    #[error("bad prefix `{text}`: {source}")]
    Prefix { text: String, source: PrefixError },
    #[error("bad {what} `{text}`, expected {expected}")]
    Syntax { what: &'static str, text: String, expected: &'static str },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Rectify(#[from] RectifyError),
    #[error(transparent)]
    Generate(IoError),
}

/// A query's answer in both renderings.
struct Answer {
    text: String,
    json: Value,
    violation: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(answer) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&answer.json).expect("values serialize"));
            } else {
                print!("{}", answer.text);
            }
            if cli.assert_clean && answer.violation {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("dpv: {e}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.display().to_string(), source })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Write { path: path.display().to_string(), source })
}

fn load_spec(path: &Path) -> Result<NetworkSpec, CliError> {
    parse_network(&read(path)?).map_err(|source| CliError::Parse { path: path.display().to_string(), source })
}

fn load(path: &Path) -> Result<Network, CliError> {
    Ok(Network::from_spec(&load_spec(path)?)?)
}

fn router(net: &Network, name: &str) -> Result<RouterId, CliError> {
    net.topology().router(name).ok_or_else(|| CliError::UnknownRouter(name.to_string()))
}

fn prefix(text: &str, width: u8) -> Result<Prefix, CliError> {
    Prefix::parse(text, width).map_err(|source| CliError::Prefix { text: text.to_string(), source })
}

fn show(set: &BTreeSet<Prefix>, width: u8) -> Vec<String> {
    set.iter().map(|p| p.display(width)).collect()
}

fn list(items: &[String]) -> String {
    if items.is_empty() {
        "(none)".to_string()
    } else {
        items.join(", ")
    }
}

fn names(net: &Network, path: &[RouterId]) -> Vec<String> {
    path.iter().map(|&r| net.topology().name(r).to_string()).collect()
}

fn run(command: Command) -> Result<Answer, CliError> {
    match command {
        Command::Load { network } => cmd_load(&network),
        Command::Verify { network, src, dst, prefixes } => cmd_verify(&network, &src, &dst, &prefixes),
        Command::Loops { network, src } => cmd_loops(&network, &src),
        Command::Blackholes { network, src } => cmd_blackholes(&network, &src),
        Command::Policy { network, src, dst, max_len, waypoint } => cmd_policy(&network, &src, &dst, max_len, &waypoint),
        Command::Whatif { network, link, src, dst } => cmd_whatif(&network, &link, &src, &dst),
        Command::Rectify { network, src, dst, intent, allow_deletions, write } => {
            cmd_rectify(&network, &src, &dst, &intent, allow_deletions, write.as_deref())
        }
        Command::Bench { network, stream, mode, pair, records } => cmd_bench(&network, &stream, &mode, pair.as_deref(), records),
        Command::Gen { nodes, edges, seed, prefixes, width, masks, holdout, out, stream_out } => {
            cmd_gen(nodes, edges, seed, prefixes, width, masks.as_deref(), holdout, out.as_deref(), stream_out.as_deref())
        }
    }
}

fn cmd_load(path: &Path) -> Result<Answer, CliError> {
    let spec = load_spec(path)?;
    let t0 = Instant::now();
    let net = Network::from_spec(&spec)?;
    let micros = t0.elapsed().as_secs_f64() * 1e6;
    let trie = net.trie();
    let links = net.topology().links().len();
    let text = format!(
        "width {}\nrouters {}\nlinks {}\nrules {}\nacl entries {}\ntransforms {}\nclasses {} ({} iatomic)\ntrie nodes {}\nload time {:.0} us\n",
        spec.width,
        spec.routers.len(),
        links,
        net.rule_count(),
        spec.acls.len(),
        spec.xforms.len(),
        trie.leaf_count(),
        trie.iatomic_count(),
        trie.node_count(),
        micros
    );
    let json = json!({
        "width": spec.width,
        "routers": spec.routers.len(),
        "links": links,
        "rules": net.rule_count(),
        "acls": spec.acls.len(),
        "xforms": spec.xforms.len(),
        "classes": trie.leaf_count(),
        "iatomic": trie.iatomic_count(),
        "trie_nodes": trie.node_count(),
        "load_micros": micros,
    });
    Ok(Answer { text, json, violation: false })
}

fn report_json(net: &Network, report: &ReachabilityReport) -> Value {
    let w = net.width();
    json!({
        "reachable": show(&report.reachable, w),
        "paths": report.per_path.iter().map(|p| json!({
            "routers": names(net, &p.path),
            "delivered": p.b_final.count_ones(),
        })).collect::<Vec<_>>(),
        "total_paths": report.total_paths,
        "truncated": report.truncated,
    })
}

fn cmd_verify(path: &Path, src: &str, dst: &str, prefixes: &[String]) -> Result<Answer, CliError> {
    let net = load(path)?;
    let (s, d) = (router(&net, src)?, router(&net, dst)?);
    let wanted: Vec<Prefix> = prefixes.iter().map(|t| prefix(t, net.width())).collect::<Result<_, _>>()?;
    let session = Session::full(&net)?;
    let b_init = if wanted.is_empty() {
        session.ones()
    } else {
        let hits = session.coordinates().iter().enumerate().filter(|(_, c)| wanted.iter().any(|p| p.overlaps(c)));
        StateVector::from_indices(session.dimension(), hits.map(|(j, _)| j))
    };
    let report = session.verify_reachability(s, d, &b_init)?;
    let violation = if wanted.is_empty() { report.reachable.is_empty() } else { report.b_reachable != b_init };
    let w = net.width();
    let mut text = format!("reachable {src} -> {dst}: {}\n", list(&show(&report.reachable, w)));
    for p in &report.per_path {
        text += &format!("  path {} carries {}\n", names(&net, &p.path).join(" -> "), list(&show(&session.decode(&p.b_final), w)));
    }
    if report.truncated {
        text += "  (path search truncated)\n";
    }
    Ok(Answer { text, json: report_json(&net, &report), violation })
}

fn cmd_loops(path: &Path, src: &str) -> Result<Answer, CliError> {
    let net = load(path)?;
    let s = router(&net, src)?;
    let session = Session::full(&net)?;
    let loops = session.detect_loop(s, &session.ones())?;
    let w = net.width();
    let mut text = format!("{} loop(s) reachable from {src}\n", loops.len());
    for l in &loops {
        text += &format!("  {} for {}\n", names(&net, &l.cycle).join(" -> "), list(&show(&l.headers, w)));
    }
    let json = json!({
        "loops": loops.iter().map(|l| json!({"cycle": names(&net, &l.cycle), "headers": show(&l.headers, w)})).collect::<Vec<_>>(),
    });
    Ok(Answer { text, json, violation: !loops.is_empty() })
}

fn cmd_blackholes(path: &Path, src: &str) -> Result<Answer, CliError> {
    let net = load(path)?;
    let s = router(&net, src)?;
    let session = Session::full(&net)?;
    let holes = session.detect_blackhole(s, &session.ones())?;
    let w = net.width();
    let mut text = format!("{} blackhole(s) reachable from {src}\n", holes.len());
    for h in &holes {
        text += &format!("  {} drops {}\n", net.topology().name(h.router), list(&show(&h.headers, w)));
    }
    let json = json!({
        "blackholes": holes.iter().map(|h| json!({"router": net.topology().name(h.router), "headers": show(&h.headers, w)})).collect::<Vec<_>>(),
    });
    Ok(Answer { text, json, violation: !holes.is_empty() })
}

fn cmd_policy(path: &Path, src: &str, dst: &str, max_len: Option<usize>, waypoints: &[String]) -> Result<Answer, CliError> {
    let net = load(path)?;
    let (s, d) = (router(&net, src)?, router(&net, dst)?);
    let policy = Policy {
        max_path_len: max_len,
        waypoints: waypoints.iter().map(|w| router(&net, w)).collect::<Result<_, _>>()?,
        ..Default::default()
    };
    let session = Session::full(&net)?;
    let report = session.verify_reachability(s, d, &session.ones())?;
    let result = check_policy(&report, &policy);
    let describe = |c: &Constraint| match c {
        Constraint::MaxPathLen { len, max } => format!("path length {len} exceeds {max}"),
        Constraint::MissingWaypoint(r) => format!("misses waypoint {}", net.topology().name(*r)),
    };
    let mut text = format!("{} delivering path(s), {} violation(s)\n", report.per_path.len(), result.violations.len());
    for v in &result.violations {
        text += &format!("  {}: {}\n", names(&net, &v.path).join(" -> "), describe(&v.constraint));
    }
    let json = json!({
        "paths": report.per_path.len(),
        "violations": result.violations.iter().map(|v| json!({"path": names(&net, &v.path), "constraint": describe(&v.constraint)})).collect::<Vec<_>>(),
    });
    Ok(Answer { text, json, violation: !result.violations.is_empty() })
}

/// `A:pa-B:pb`
fn parse_link(net: &Network, text: &str) -> Result<(Interface, Interface), CliError> {
    let bad = || CliError::Syntax { what: "link", text: text.to_string(), expected: "A:port-B:port" };
    let (a, rest) = text.split_once(':').ok_or_else(bad)?;
    let (pa, rest) = rest.split_once('-').ok_or_else(bad)?;
    let (b, pb) = rest.rsplit_once(':').ok_or_else(bad)?;
    let pa: u32 = pa.parse().map_err(|_| bad())?;
    let pb: u32 = pb.parse().map_err(|_| bad())?;
    Ok((Interface::new(router(net, a)?, PortId(pa)), Interface::new(router(net, b)?, PortId(pb))))
}

fn cmd_whatif(path: &Path, link: &str, src: &str, dst: &str) -> Result<Answer, CliError> {
    let mut net = load(path)?;
    let (a, b) = parse_link(&net, link)?;
    if net.topology().peer(a.router, a.port) != Some(b) {
        return Err(NetworkError::UnknownLink(link.to_string()).into());
    }
    let (s, d) = (router(&net, src)?, router(&net, dst)?);
    let before = {
        let session = Session::full(&net)?;
        session.verify_reachability(s, d, &session.ones())?.reachable
    };
    let w = net.width();
    let what = whatif_link_down(&mut net, a, s, d)?;
    let after = &what.report.reachable;
    let lost: BTreeSet<Prefix> = before.iter().filter(|p| !after.iter().any(|q| q.contains(p))).copied().collect();
    let text = format!(
        "link {link} down: {} rule(s) deleted, {} class(es) affected\nreachable {src} -> {dst} before: {}\nreachable {src} -> {dst} after: {}\nlost: {}\n",
        what.triggered_deletions,
        what.affected_classes,
        list(&show(&before, w)),
        list(&show(after, w)),
        list(&show(&lost, w)),
    );
    let json = json!({
        "triggered_deletions": what.triggered_deletions,
        "affected_classes": what.affected_classes,
        "before": show(&before, w),
        "after": report_json(&net, &what.report),
        "lost": show(&lost, w),
    });
    Ok(Answer { text, json, violation: !lost.is_empty() })
}

fn cmd_rectify(
    path: &Path,
    src: &str,
    dst: &str,
    intent: &[String],
    allow_deletions: bool,
    out: Option<&Path>,
) -> Result<Answer, CliError> {
    let mut net = load(path)?;
    let (s, d) = (router(&net, src)?, router(&net, dst)?);
    let w = net.width();
    let intent: BTreeSet<Prefix> = intent.iter().map(|t| prefix(t, w)).collect::<Result<_, _>>()?;
    let fix = match rectify_with(&mut net, s, d, &intent, RectifyOptions { allow_deletions }) {
        Ok(fix) => fix,
        Err(RectifyError::RectificationImpossible) => {
            return Ok(Answer {
                text: "rectification is not possible without disturbing existing traffic\n".into(),
                json: json!({"possible": false}),
                violation: true,
            });
        }
        Err(e) => return Err(e.into()),
    };
    let rule = |r: RouterId, p: &Prefix, port: PortId| format!("{} {} {}", net.topology().name(r), p.display(w), port.0);
    let mut text = String::new();
    if fix.fixes.is_empty() {
        text += "already reachable; nothing to do\n";
    } else {
        text += &format!("path {}\n", names(&net, &fix.path).join(" -> "));
    }
    for f in &fix.removed {
        text += &format!("  - RULE {}\n", rule(f.router, &f.prefix, f.port));
    }
    for f in &fix.fixes {
        text += &format!("  + RULE {}   # enables {}\n", rule(f.router, &f.prefix, f.port), list(&show(&f.rationale, w)));
    }
    text += &format!("achieved {}\n", list(&show(&fix.achieved, w)));
    if let Some(out) = out {
        write(out, &serialize_network(&net.to_spec()))?;
    }
    let json = json!({
        "possible": true,
        "path": names(&net, &fix.path),
        "fixes": fix.fixes.iter().map(|f| json!({
            "router": net.topology().name(f.router),
            "prefix": f.prefix.display(w),
            "port": f.port.0,
            "rationale": show(&f.rationale, w),
        })).collect::<Vec<_>>(),
        "removed": fix.removed.iter().map(|f| rule(f.router, &f.prefix, f.port)).collect::<Vec<_>>(),
        "achieved": show(&fix.achieved, w),
        "report": report_json(&net, &fix.report),
    });
    let violation = !intent.iter().all(|p| fix.achieved.iter().any(|a| a.overlaps(p)));
    Ok(Answer { text, json, violation })
}

fn parse_mode(text: &str, len: usize) -> Result<StreamMode, CliError> {
    let bad = || CliError::Syntax { what: "mode", text: text.to_string(), expected: "per-update, batch or batch:N" };
    match text {
        "per-update" => Ok(StreamMode::PerUpdate),
        "batch" => Ok(StreamMode::Batch(len.max(1))),
        _ => match text.strip_prefix("batch:").map(str::parse::<usize>) {
            Some(Ok(n)) if n > 0 => Ok(StreamMode::Batch(n)),
            _ => Err(bad()),
        },
    }
}

fn cmd_bench(path: &Path, stream: &Path, mode: &str, pair: Option<&str>, records: bool) -> Result<Answer, CliError> {
    let spec = load_spec(path)?;
    let events = parse_updates(&read(stream)?, &spec)
        .map_err(|source| CliError::Parse { path: stream.display().to_string(), source })?;
    let mode = parse_mode(mode, events.len())?;
    let index = |name: &str| spec.router_index(name).map(|i| RouterId(i as u32)).ok_or_else(|| CliError::UnknownRouter(name.into()));
    let query = match pair {
        None => Query::FromUpdateRouter,
        Some(p) => {
            let (s, d) = p.split_once(':').ok_or_else(|| CliError::Syntax { what: "pair", text: p.into(), expected: "SRC:DST" })?;
            Query::Pair { src: index(s)?, dst: index(d)? }
        }
    };
    let out = run_update_stream(&spec, &events, mode, query)?;
    let mut text = format!("{} event(s), {} verification(s), load {:.1} ms\n", events.len(), out.records.len(), out.load_micros / 1e3);
    if let Some(c) = &out.cdf {
        text += &format!(
            "p50 {:.1} us  p90 {:.1} us  p99 {:.1} us  under 250 us {:.1}%\n",
            c.p50,
            c.p90,
            c.p99,
            c.under_250us * 100.0
        );
    }
    if records {
        for r in &out.records {
            text += &format!(
                "  seq {:>6}  {:>9.1} us  classes {:>4}  ports {:>6}  paths {:>5}\n",
                r.seq, r.micros, r.s_affected, r.p_affected, r.paths
            );
        }
    }
    let json = json!({
        "events": events.len(),
        "load_micros": out.load_micros,
        "cdf": out.cdf,
        "records": if records { serde_json::to_value(&out.records).expect("records serialize") } else { Value::Null },
        "reachable_ranges": out.reachable,
    });
    Ok(Answer { text, json, violation: false })
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen(
    nodes: usize,
    edges: usize,
    seed: u64,
    prefixes: usize,
    width: u8,
    masks: Option<&str>,
    holdout: Option<f64>,
    out: Option<&Path>,
    stream_out: Option<&Path>,
) -> Result<Answer, CliError> {
    let mut cfg = GeneratorConfig::new(nodes, edges, prefixes, seed);
    cfg.width = width;
    cfg.masks = match masks {
        Some(text) => {
            let bad = || CliError::Syntax { what: "mask range", text: text.into(), expected: "LO-HI" };
            let (lo, hi) = text.split_once('-').ok_or_else(bad)?;
            let (lo, hi): (u8, u8) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
            if lo > hi {
                return Err(bad());
            }
            MaskHistogram::uniform(lo, hi)
        }
        None if width < 32 => MaskHistogram::uniform(width.min(1), width),
        None => MaskHistogram::default(),
    };
    let full = generate_synthetic(&cfg).map_err(CliError::Generate)?;
    let (spec, stream) = match holdout {
        Some(f) if (0.0..=1.0).contains(&f) => holdout_stream(&full, f, seed),
        Some(_) => return Err(CliError::Syntax { what: "holdout", text: format!("{holdout:?}"), expected: "a fraction in [0, 1]" }),
        None => (full, Vec::new()),
    };
    let network_text = serialize_network(&spec);
    let mut text = String::new();
    match out {
        Some(path) => write(path, &network_text)?,
        None => text += &network_text,
    }
    if let Some(path) = stream_out {
        write(path, &serialize_updates(&stream, &spec))?;
    }
    let json = json!({
        "routers": spec.routers.len(),
        "edges": spec.edges.len(),
        "rules": spec.rules.len(),
        "held_out": stream.len(),
        "network": if out.is_none() { Value::String(network_text) } else { Value::Null },
    });
    Ok(Answer { text, json, violation: false })
}
