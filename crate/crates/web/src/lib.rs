//! Browser bindings for the verifier.
//!
//! Every binding returns a JSON string. The `*_json` methods do the work and
//! are plain Rust so they can be tested natively; the exported wrappers only
//! turn errors into JS exceptions.

use std::collections::BTreeSet;

use dpv_core::io::{parse_network, serialize_network};
use dpv_core::rectifier::{rectify_with, RectifyError, RectifyOptions};
use dpv_core::{Network, PortId, Prefix, RouterId, Session};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Demo {
    net: Network,
}

fn to_js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
impl Demo {
    /// Parses a network file.
    #[wasm_bindgen(constructor)]
    pub fn new(text: &str) -> Result<Demo, JsValue> {
        Demo::from_text(text).map_err(|e| JsValue::from_str(&e))
    }

    pub fn summary(&self) -> String {
        self.summary_json().to_string()
    }

    pub fn classes(&self) -> String {
        self.classes_json().to_string()
    }

    pub fn verify(&self, src: &str, dst: &str) -> Result<String, JsValue> {
        to_js(self.verify_json(src, dst).map(|v| v.to_string()))
    }

    /// `op` is `insert` or `delete`.
    pub fn update(&mut self, op: &str, router: &str, prefix: &str, port: u32) -> Result<String, JsValue> {
        to_js(self.update_json(op, router, prefix, port).map(|v| v.to_string()))
    }

    /// `intent` is a comma-separated prefix list.
    pub fn rectify(&mut self, src: &str, dst: &str, intent: &str, allow_deletions: bool) -> Result<String, JsValue> {
        to_js(self.rectify_json(src, dst, intent, allow_deletions).map(|v| v.to_string()))
    }

    /// The current network in file syntax.
    pub fn network_text(&self) -> String {
        serialize_network(&self.net.to_spec())
    }
}

impl Demo {
    pub fn from_text(text: &str) -> Result<Demo, String> {
        let spec = parse_network(text).map_err(|e| e.to_string())?;
        let net = Network::from_spec(&spec).map_err(|e| e.to_string())?;
        Ok(Demo { net })
    }

    fn router(&self, name: &str) -> Result<RouterId, String> {
        self.net.topology().router(name).ok_or_else(|| format!("unknown router `{name}`"))
    }

    fn prefix(&self, text: &str) -> Result<Prefix, String> {
        Prefix::parse(text.trim(), self.net.width()).map_err(|e| format!("bad prefix `{text}`: {e}"))
    }

    fn show(&self, set: &BTreeSet<Prefix>) -> Vec<String> {
        set.iter().map(|p| p.display(self.net.width())).collect()
    }

    fn names(&self, path: &[RouterId]) -> Vec<String> {
        path.iter().map(|&r| self.net.topology().name(r).to_string()).collect()
    }

    pub fn summary_json(&self) -> Value {
        let t = self.net.topology();
        json!({
            "width": self.net.width(),
            "routers": (0..t.router_count()).map(|i| t.name(RouterId(i as u32)).to_string()).collect::<Vec<_>>(),
            "links": t.links().len(),
            "rules": self.net.rule_count(),
            "classes": self.net.trie().leaf_count(),
        })
    }

    pub fn classes_json(&self) -> Value {
        let w = self.net.width();
        let leaves = self.net.trie().leaves();
        Value::Array(
            leaves
                .iter()
                .map(|l| {
                    let (lo, hi) = l.prefix.range(w);
                    json!({"id": l.leaf_id, "prefix": l.prefix.display(w), "label": format!("{:?}", l.label), "lo": lo, "hi": hi})
                })
                .collect(),
        )
    }

    pub fn verify_json(&self, src: &str, dst: &str) -> Result<Value, String> {
        let (s, d) = (self.router(src)?, self.router(dst)?);
        let session = Session::full(&self.net).map_err(|e| e.to_string())?;
        let report = session.verify_reachability(s, d, &session.ones()).map_err(|e| e.to_string())?;
        let paths: Vec<Value> = report
            .per_path
            .iter()
            .map(|p| {
                let hops: Vec<Value> = p
                    .per_hop
                    .iter()
                    .map(|(r, b)| json!({"router": self.net.topology().name(*r), "carries": self.show(&session.decode(b))}))
                    .collect();
                json!({"routers": self.names(&p.path), "hops": hops, "delivered": self.show(&session.decode(&p.b_final))})
            })
            .collect();
        Ok(json!({"reachable": self.show(&report.reachable), "paths": paths, "truncated": report.truncated}))
    }

    pub fn update_json(&mut self, op: &str, router: &str, prefix: &str, port: u32) -> Result<Value, String> {
        let (r, p) = (self.router(router)?, self.prefix(prefix)?);
        let before = self.net.trie().leaf_count();
        let outcome = match op {
            "insert" => self.net.insert_rule(r, p, PortId(port)),
            "delete" => self.net.delete_rule(r, p, PortId(port)),
            _ => return Err(format!("unknown operation `{op}`")),
        }
        .map_err(|e| e.to_string())?;
        let affected = self.net.trie().compute_affected(&p).map_err(|e| e.to_string())?;
        Ok(json!({
            "created_nodes": outcome.created_nodes,
            "removed_nodes": outcome.removed_nodes,
            "classes_before": before,
            "affected": affected.id_to_prefix.iter().map(|c| c.display(self.net.width())).collect::<Vec<_>>(),
            "classes": self.classes_json(),
        }))
    }

    pub fn rectify_json(&mut self, src: &str, dst: &str, intent: &str, allow_deletions: bool) -> Result<Value, String> {
        let (s, d) = (self.router(src)?, self.router(dst)?);
        let intent: BTreeSet<Prefix> =
            intent.split(',').filter(|t| !t.trim().is_empty()).map(|t| self.prefix(t)).collect::<Result<_, _>>()?;
        if intent.is_empty() {
            return Err("intent is empty".into());
        }
        let fix = match rectify_with(&mut self.net, s, d, &intent, RectifyOptions { allow_deletions }) {
            Ok(fix) => fix,
            Err(RectifyError::RectificationImpossible) => return Ok(json!({"possible": false})),
            Err(e) => return Err(e.to_string()),
        };
        let w = self.net.width();
        let rule = |f: &dpv_core::rectifier::RuleFix| {
            json!({"router": self.net.topology().name(f.router), "prefix": f.prefix.display(w), "port": f.port.0})
        };
        Ok(json!({
            "possible": true,
            "path": self.names(&fix.path),
            "added": fix.fixes.iter().map(rule).collect::<Vec<_>>(),
            "removed": fix.removed.iter().map(rule).collect::<Vec<_>>(),
            "achieved": self.show(&fix.achieved),
        }))
    }
}
