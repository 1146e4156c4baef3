//! What-if analysis, batches, fix round-trips and the file formats on random
//! inputs.

mod common;

use std::collections::BTreeSet;

use common::*;
use dpv_core::io::{
    generate_synthetic, parse_network, parse_updates, serialize_network, serialize_updates, GeneratorConfig, IoError,
    MaskHistogram,
};
use dpv_core::oracle::{simulate_all, Outcome};
use dpv_core::rectifier::{apply_fixes, revert_fixes, RuleFix};
use dpv_core::verifier::{batch_update, whatif_link_down, RuleUpdate, Session};
use dpv_core::{Interface, Network, PortId, Prefix};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(80))]

    #[test]
    fn link_failure_matches_oracle_without_the_edge(seed in any::<u64>()) {
        let spec = mixed_network(seed, 8, 6, 30);
        prop_assume!(!spec.edges.is_empty());
        let mut r = rng(seed);
        let edge = spec.edges[r.random_range(0..spec.edges.len())];
        let (src, dst) = (r.random_range(0..spec.routers.len()), r.random_range(0..spec.routers.len()));
        prop_assume!(src != dst);

        let mut net = Network::from_spec(&spec).unwrap();
        let on_port = net.rules_on_port(rid(edge.a), PortId(edge.port_a)).len()
            + net.rules_on_port(rid(edge.b), PortId(edge.port_b)).len();
        let w = whatif_link_down(&mut net, Interface::new(rid(edge.a), PortId(edge.port_a)), rid(src), rid(dst)).unwrap();
        prop_assert_eq!(w.triggered_deletions, on_port);

        // the failed link is gone and so are the rules that used it;
        // longest-prefix match falls back to whatever else matches
        let mut cut = spec.clone();
        cut.edges.retain(|e| *e != edge);
        cut.rules.retain(|r| (r.router, r.port) != (edge.a, edge.port_a) && (r.router, r.port) != (edge.b, edge.port_b));
        prop_assert_eq!(net.to_spec().edges.len(), cut.edges.len());
        prop_assert_eq!(net.to_spec().rules.len(), cut.rules.len());
        let oracle = simulate_all(&cut, src, Some(dst)).unwrap();
        prop_assert_eq!(headers_of(&w.report.reachable, spec.width), oracle.reachable);
    }

    #[test]
    fn insert_then_delete_in_one_batch_cancels(seed in any::<u64>()) {
        let spec = mixed_network(seed, 6, 6, 20);
        let mut net = Network::from_spec(&spec).unwrap();
        let mut r = rng(seed);
        let router = rid(r.random_range(0..spec.routers.len()));
        let len = r.random_range(1..=6u8);
        let prefix = Prefix::new(r.random::<u64>() >> (64 - len as u32), len).unwrap();
        prop_assume!(!net.tables(router).routes.contains_key(&prefix));
        let (src, dst) = (rid(0), rid(spec.routers.len() - 1));
        let baseline = {
            let s = Session::for_prefixes(&net, &[prefix]).unwrap();
            s.verify_reachability(src, dst, &s.ones()).unwrap().reachable
        };
        let before = net.trie().snapshot();
        let batch = [RuleUpdate::insert(router, prefix, PortId(0)), RuleUpdate::delete(router, prefix, PortId(0))];
        let report = batch_update(&mut net, &batch, src, dst).unwrap();
        prop_assert_eq!(report.report.reachable, baseline);
        prop_assert_eq!(net.trie().snapshot(), before);
    }

    #[test]
    fn applied_fixes_revert_cleanly(seed in any::<u64>(), k in 1usize..6) {
        let spec = mixed_network(seed, 6, 6, 20);
        let mut net = Network::from_spec(&spec).unwrap();
        let before = net.trie().snapshot();
        let mut r = rng(seed);
        let mut fixes: Vec<RuleFix> = Vec::new();
        for _ in 0..k * 3 {
            let router = rid(r.random_range(0..spec.routers.len()));
            let len = r.random_range(0..=6u8);
            let bits = if len == 0 { 0 } else { r.random::<u64>() >> (64 - len as u32) };
            let prefix = Prefix::new(bits, len).unwrap();
            let taken = net.tables(router).routes.contains_key(&prefix) || fixes.iter().any(|f| f.router == router && f.prefix == prefix);
            if !taken && fixes.len() < k {
                fixes.push(RuleFix { router, prefix, port: PortId(0), rationale: BTreeSet::new() });
            }
        }
        apply_fixes(&mut net, &fixes, rid(0), rid(0)).unwrap();
        revert_fixes(&mut net, &fixes).unwrap();
        prop_assert_eq!(net.trie().snapshot(), before);
        prop_assert_eq!(net.to_spec().rules.len(), spec.rules.len());
    }

    #[test]
    fn oracle_outcomes_partition_the_header_space(seed in any::<u64>()) {
        let spec = mixed_network(seed, 8, 6, 30);
        let src = (seed % spec.routers.len() as u64) as usize;
        let res = simulate_all(&spec, src, Some((src + 1) % spec.routers.len())).unwrap();
        let headers: Vec<u64> = res.traces.iter().map(|t| t.header).collect();
        prop_assert_eq!(headers, (0..1u64 << spec.width).collect::<Vec<_>>());
        let ttl = 2 * spec.routers.len() + 1;
        prop_assert!(res.traces.iter().all(|t| t.path.len() <= ttl));
        let delivered = res.traces.iter().filter(|t| matches!(t.outcome, Outcome::Delivered(_))).count();
        prop_assert!(res.reachable.len() <= delivered);
    }

    #[test]
    fn network_files_round_trip(seed in any::<u64>()) {
        let spec = mixed_network(seed, 8, 8, 40);
        let text = serialize_network(&spec);
        prop_assert_eq!(parse_network(&text).unwrap(), spec.clone());
        let stream = dpv_core::io::holdout_stream(&spec, 0.3, seed).1;
        prop_assert_eq!(parse_updates(&serialize_updates(&stream, &spec), &spec).unwrap(), stream);
    }

    #[test]
    fn parser_never_panics(lines in prop::collection::vec(
        prop::collection::vec(prop::sample::select(vec![
            "WIDTH", "NODE", "EDGE", "RULE", "ACL", "XFORM", "PBR", "HOST", "->", "permit", "deny", "A", "B",
            "0", "1", "3", "8", "32", "01/2", "0/1", "1/9", "10.0.0.0/8", "/", "#", "x", "-1", "99999999999",
        ]), 0..6),
        0..8,
    )) {
        let text: String = lines.iter().map(|l| l.join(" ") + "\n").collect();
        match parse_network(&text) {
            Ok(spec) => prop_assert_eq!(parse_network(&serialize_network(&spec)).unwrap(), spec),
            Err(IoError::ParseError { line, .. }) | Err(IoError::DuplicateEdge { line, .. }) => {
                prop_assert!(line >= 1 && line <= lines.len().max(1));
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn parser_survives_arbitrary_text(text in "\\PC{0,200}") {
        let _ = parse_network(&text);
    }
}

#[test]
fn generated_networks_are_connected_and_deterministic() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let n = r.random_range(2..60);
        let e = r.random_range(n - 1..=(n * (n - 1) / 2).min(4 * n));
        let mut cfg = GeneratorConfig::new(n, e, 10, seed);
        cfg.width = 16;
        cfg.masks = MaskHistogram::uniform(8, 16);
        let spec = generate_synthetic(&cfg).unwrap();
        assert_eq!(spec.edges.len(), e);
        let net = Network::from_spec(&spec).unwrap();
        assert!(net.topology().hop_distances(rid(0)).iter().all(|&d| d != usize::MAX));
        assert_eq!(serialize_network(&generate_synthetic(&cfg).unwrap()), serialize_network(&spec));
    }
    let cfg = GeneratorConfig::new(1000, 100_000, 0, 1);
    let spec = generate_synthetic(&cfg).unwrap();
    let degree = 2.0 * spec.edges.len() as f64 / spec.routers.len() as f64;
    assert_eq!(degree, 200.0);
    assert!(matches!(generate_synthetic(&GeneratorConfig::new(10, 3, 1, 0)), Err(IoError::InfeasibleParameters(_))));
}

#[test]
fn empty_file_is_an_empty_spec() {
    let spec = parse_network("").unwrap();
    assert!(spec.routers.is_empty() && spec.rules.is_empty());
    let err = parse_network("WIDTH 3\nNODE A\nRULE A 0101/4 0\n").unwrap_err();
    assert!(matches!(err, IoError::ParseError { line: 3, .. }), "{err}");
    let err = parse_network("WIDTH 3\nNODE A\nNODE B\nEDGE A 1 B 1\nEDGE B 1 A 1\n").unwrap_err();
    assert!(matches!(err, IoError::DuplicateEdge { line: 5, .. }), "{err}");
}
