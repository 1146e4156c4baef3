//! Line-based network and update-stream files.
//!
//! ```text
//! WIDTH 3
//! NODE Y
//! NODE U
//! EDGE Y 0 U 1
//! HOST U 5
//! RULE Y 00/2 0
//! PBR U 01/2 5
//! ACL U 1/1 deny
//! XFORM U 01/2 -> 00/2
//! ```
//!
//! Update streams hold `+ <router> <prefix> <port>` and
//! `- <router> <prefix> <port>` lines.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use super::{AclSpec, EdgeSpec, IoError, NetworkSpec, RuleSpec, UpdateEvent, UpdateOp, XformSpec};
use crate::network::AclAction;
use crate::prefix::{Prefix, MAX_WIDTH};

struct Token<'a> {
    col: usize,
    text: &'a str,
}

/// Splits a line into whitespace-separated tokens with 1-based columns,
/// dropping everything after `#`.
fn tokenize(line: &str) -> Vec<Token<'_>> {
    let body = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in body.char_indices().chain(std::iter::once((body.len(), ' '))) {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push(Token { col: body[..s].chars().count() + 1, text: &body[s..i] });
                start = None;
            }
            _ => {}
        }
    }
    out
}

struct LineCtx<'a> {
    line: usize,
    tokens: Vec<Token<'a>>,
    /// Column just past the last token, for "missing argument" errors.
    end_col: usize,
}

impl<'a> LineCtx<'a> {
    fn err(&self, col: usize, message: impl Into<String>) -> IoError {
        IoError::ParseError { line: self.line, column: col, message: message.into() }
    }

    fn arg(&self, i: usize, what: &str) -> Result<&Token<'a>, IoError> {
        self.tokens.get(i).ok_or_else(|| self.err(self.end_col, format!("missing {what}")))
    }

    fn expect_len(&self, n: usize) -> Result<(), IoError> {
        match self.tokens.get(n) {
            Some(extra) => Err(self.err(extra.col, format!("unexpected token `{}`", extra.text))),
            None => Ok(()),
        }
    }

    fn router(&self, i: usize, index: &HashMap<String, usize>) -> Result<usize, IoError> {
        let t = self.arg(i, "router")?;
        index.get(t.text).copied().ok_or_else(|| self.err(t.col, format!("unknown router `{}`", t.text)))
    }

    fn port(&self, i: usize) -> Result<u32, IoError> {
        let t = self.arg(i, "port")?;
        match t.text.parse::<u32>() {
            Ok(p) if p != u32::MAX => Ok(p),
            _ => Err(self.err(t.col, format!("bad port `{}`", t.text))),
        }
    }

    fn prefix(&self, i: usize, width: u8) -> Result<Prefix, IoError> {
        let t = self.arg(i, "prefix")?;
        Prefix::parse(t.text, width).map_err(|e| self.err(t.col, e.to_string()))
    }
}

fn lines(text: &str) -> impl Iterator<Item = LineCtx<'_>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let tokens = tokenize(raw);
        if tokens.is_empty() {
            return None;
        }
        let end_col = raw.split('#').next().unwrap_or("").trim_end().chars().count() + 1;
        Some(LineCtx { line: i + 1, tokens, end_col })
    })
}

pub fn parse_network(text: &str) -> Result<NetworkSpec, IoError> {
    let mut spec = NetworkSpec::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut used_ports: HashSet<(usize, u32)> = HashSet::new();
    let mut links: HashSet<((usize, u32), (usize, u32))> = HashSet::new();
    let mut rules: HashSet<(usize, Prefix)> = HashSet::new();
    let mut width_seen = false;

    for ctx in lines(text) {
        let kw = &ctx.tokens[0];
        if !width_seen {
            if kw.text != "WIDTH" {
                return Err(ctx.err(kw.col, "the first directive must be WIDTH"));
            }
            let t = ctx.arg(1, "width")?;
            spec.width = match t.text.parse::<u8>() {
                Ok(w) if (1..=MAX_WIDTH).contains(&w) => w,
                _ => return Err(ctx.err(t.col, format!("width must be 1..={MAX_WIDTH}"))),
            };
            ctx.expect_len(2)?;
            width_seen = true;
            continue;
        }
        let width = spec.width;
        match kw.text {
            "WIDTH" => return Err(ctx.err(kw.col, "WIDTH given twice")),
            "NODE" => {
                let t = ctx.arg(1, "router name")?;
                ctx.expect_len(2)?;
                if index.contains_key(t.text) {
                    return Err(ctx.err(t.col, format!("router `{}` declared twice", t.text)));
                }
                index.insert(t.text.to_string(), spec.routers.len());
                spec.routers.push(t.text.to_string());
            }
            "EDGE" => {
                let (a, pa, b, pb) = (ctx.router(1, &index)?, ctx.port(2)?, ctx.router(3, &index)?, ctx.port(4)?);
                ctx.expect_len(5)?;
                let key = if (a, pa) <= (b, pb) { ((a, pa), (b, pb)) } else { ((b, pb), (a, pa)) };
                if links.contains(&key) {
                    return Err(IoError::DuplicateEdge {
                        line: ctx.line,
                        a: spec.routers[a].clone(),
                        port_a: pa,
                        b: spec.routers[b].clone(),
                        port_b: pb,
                    });
                }
                for (r, p, col) in [(a, pa, ctx.tokens[2].col), (b, pb, ctx.tokens[4].col)] {
                    if !used_ports.insert((r, p)) {
                        return Err(ctx.err(col, format!("port {p} of `{}` is already in use", spec.routers[r])));
                    }
                }
                links.insert(key);
                spec.edges.push(EdgeSpec { a, port_a: pa, b, port_b: pb });
            }
            "HOST" => {
                let (r, p) = (ctx.router(1, &index)?, ctx.port(2)?);
                ctx.expect_len(3)?;
                if !used_ports.insert((r, p)) {
                    return Err(ctx.err(ctx.tokens[2].col, format!("port {p} of `{}` is already in use", spec.routers[r])));
                }
                spec.hosts.push((r, p));
            }
            "RULE" | "PBR" => {
                let (router, prefix, port) = (ctx.router(1, &index)?, ctx.prefix(2, width)?, ctx.port(3)?);
                ctx.expect_len(4)?;
                if !rules.insert((router, prefix)) {
                    return Err(ctx.err(ctx.tokens[2].col, format!("second rule for {prefix} at `{}`", spec.routers[router])));
                }
                spec.rules.push(RuleSpec { router, prefix, port, pbr: kw.text == "PBR" });
            }
            "ACL" => {
                let (router, prefix) = (ctx.router(1, &index)?, ctx.prefix(2, width)?);
                let t = ctx.arg(3, "permit|deny")?;
                let action = match t.text {
                    "permit" => AclAction::Permit,
                    "deny" => AclAction::Deny,
                    other => return Err(ctx.err(t.col, format!("expected permit or deny, got `{other}`"))),
                };
                ctx.expect_len(4)?;
                spec.acls.push(AclSpec { router, prefix, action });
            }
            "XFORM" => {
                let (router, matched) = (ctx.router(1, &index)?, ctx.prefix(2, width)?);
                let arrow = ctx.arg(3, "`->`")?;
                if arrow.text != "->" {
                    return Err(ctx.err(arrow.col, "expected `->`"));
                }
                let output = ctx.prefix(4, width)?;
                ctx.expect_len(5)?;
                spec.xforms.push(XformSpec { router, matched, output });
            }
            other => return Err(ctx.err(kw.col, format!("unknown directive `{other}`"))),
        }
    }
    Ok(spec)
}

pub fn serialize_network(spec: &NetworkSpec) -> String {
    let w = spec.width;
    let name = |i: usize| &spec.routers[i];
    let mut out = String::new();
    let _ = writeln!(out, "WIDTH {w}");
    for r in &spec.routers {
        let _ = writeln!(out, "NODE {r}");
    }
    for e in &spec.edges {
        let _ = writeln!(out, "EDGE {} {} {} {}", name(e.a), e.port_a, name(e.b), e.port_b);
    }
    for &(r, p) in &spec.hosts {
        let _ = writeln!(out, "HOST {} {p}", name(r));
    }
    for rule in &spec.rules {
        let kw = if rule.pbr { "PBR" } else { "RULE" };
        let _ = writeln!(out, "{kw} {} {} {}", name(rule.router), rule.prefix.display(w), rule.port);
    }
    for acl in &spec.acls {
        let action = match acl.action {
            AclAction::Permit => "permit",
            AclAction::Deny => "deny",
        };
        let _ = writeln!(out, "ACL {} {} {action}", name(acl.router), acl.prefix.display(w));
    }
    for x in &spec.xforms {
        let _ = writeln!(out, "XFORM {} {} -> {}", name(x.router), x.matched.display(w), x.output.display(w));
    }
    out
}

/// Parses an update stream against the routers and width of `spec`.
/// Sequence numbers count from 0 in file order.
pub fn parse_updates(text: &str, spec: &NetworkSpec) -> Result<Vec<UpdateEvent>, IoError> {
    let index: HashMap<String, usize> = spec.routers.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
    let mut out = Vec::new();
    for ctx in lines(text) {
        let kw = &ctx.tokens[0];
        let op = match kw.text {
            "+" => UpdateOp::Insert,
            "-" => UpdateOp::Delete,
            other => return Err(ctx.err(kw.col, format!("expected `+` or `-`, got `{other}`"))),
        };
        let (router, prefix, port) = (ctx.router(1, &index)?, ctx.prefix(2, spec.width)?, ctx.port(3)?);
        ctx.expect_len(4)?;
        out.push(UpdateEvent { op, router, prefix, port, seq: out.len() as u64 });
    }
    Ok(out)
}

pub fn serialize_updates(events: &[UpdateEvent], spec: &NetworkSpec) -> String {
    let mut out = String::new();
    for e in events {
        let op = match e.op {
            UpdateOp::Insert => '+',
            UpdateOp::Delete => '-',
        };
        let _ = writeln!(out, "{op} {} {} {}", spec.routers[e.router], e.prefix.display(spec.width), e.port);
    }
    out
}
