mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use protoscope::compliance::CipherRegistry;
use protoscope::fingerprint::{fingerprint_distance, CodeList, DeviceFingerprint};
use protoscope::model::builtin_models;
use protoscope::packet_io::{read_pcap_from, write_pcap_to, ByteOrder, RawPacket};
use protoscope::pipeline::{analyze_packets, AnalysisConfig, FlowResult};
use protoscope::synth::{synth_flow, FlowSpec, Manifest, Segmentation};

fn spec(json: serde_json::Value) -> FlowSpec {
    serde_json::from_value(json).expect("valid flow spec")
}

fn run(packets: &[RawPacket]) -> Vec<FlowResult> {
    analyze_packets(packets, &builtin_models(), &CipherRegistry::builtin(), &AnalysisConfig::default())
        .unwrap()
        .flows
}

fn one_flow(s: &FlowSpec) -> FlowResult {
    let mut flows = run(&synth_flow(s, 9).unwrap());
    assert_eq!(flows.len(), 1);
    flows.pop().unwrap()
}

/// Flow results with the id dropped, keyed by endpoints.
fn normalized(flows: Vec<FlowResult>) -> Vec<String> {
    let mut out: Vec<String> = flows
        .into_iter()
        .map(|f| {
            let rules: Vec<String> = f.findings.iter().map(|x| x.rule_id.to_string()).collect();
            format!(
                "{:?}|{:?}|{:?}|{:?}|{}|{rules:?}",
                f.client,
                f.server,
                f.primary().map(|d| (&d.protocol, d.confidence, d.port_hint_agreed)),
                f.packets,
                f.attributes.as_ref().map(|a| a.attributes_json()).unwrap_or_default()
            )
        })
        .collect();
    out.sort();
    out
}

fn tls_spec(port: u16, ciphers: &[u16], seg: Segmentation) -> FlowSpec {
    let codes: Vec<String> = ciphers.iter().map(|c| format!("0x{c:04x}")).collect();
    let mut s = spec(serde_json::json!({
        "client": "10.1.0.2:41000",
        "server": format!("10.1.0.1:{port}"),
        "protocol": {"tls": {"client_version": [3, 3], "ciphers": codes,
                              "server": {"version": [3, 3], "cipher": codes[0]}}}
    }));
    s.segmentation = seg;
    s
}

fn http_spec(port: u16, uri: &str, ua: &str, seg: Segmentation) -> FlowSpec {
    let mut s = spec(serde_json::json!({
        "client": "10.1.0.2:41001",
        "server": format!("10.1.0.1:{port}"),
        "protocol": {"http": {"method": "GET", "uri": uri, "version": [1, 1], "host": "h.example",
                               "user_agent": ua, "auth": {"scheme": "basic", "credential": "dTpw"},
                               "response": {"version": [1, 1], "status": 200, "server": "srv", "body": "hi"}}}
    }));
    s.segmentation = seg;
    s
}

fn segmentation() -> impl Strategy<Value = Segmentation> {
    prop_oneof![
        Just(Segmentation::Single),
        Just(Segmentation::PerByte),
        any::<u64>().prop_map(|seed| Segmentation::Random { seed }),
    ]
}

fn fingerprint(id: &'static str) -> impl Strategy<Value = DeviceFingerprint> {
    (
        prop::collection::btree_set(prop::collection::vec(any::<u16>(), 1..4), 0..3),
        prop::collection::btree_set("[a-c]{1,2}", 0..3),
        prop::collection::btree_set("[a-c]{1,2}", 0..3),
        prop::collection::btree_set(prop::collection::vec(1u8..8, 1..4), 0..3),
    )
        .prop_map(move |(ciphers, hosts, uas, dhcp)| DeviceFingerprint {
            tls_cipher_lists: ciphers.into_iter().map(CodeList).collect(),
            http_hosts: hosts,
            http_user_agents: uas,
            dhcp_param_lists: dhcp,
            ..DeviceFingerprint::new(id)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expression_engine_agrees_with_oracle(seed in any::<u64>(), vars in 1usize..=4, lower in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = Oracle::random(&mut rng, vars, 4);
        prop_assert_eq!(truth_table_disagreements(&o, vars, lower), 0, "{}", o.render(lower));
    }

    #[test]
    fn tls_extraction_ignores_segmentation(
        ciphers in prop::collection::vec(1u16..0xff00, 1..12),
        port in 1024u16..65000,
        seg in segmentation(),
    ) {
        let base = one_flow(&tls_spec(port, &ciphers, Segmentation::Single));
        let other = one_flow(&tls_spec(port, &ciphers, seg));
        prop_assert!(base.attributes.is_some());
        prop_assert_eq!(base.attributes, other.attributes);
        prop_assert_eq!(base.findings, other.findings);
    }

    #[test]
    fn http_extraction_ignores_segmentation(
        uri in "/[a-z0-9]{0,12}(\\?[a-z]=[0-9]{1,3})?",
        ua in "[A-Za-z]{1,8}/[0-9]\\.[0-9]",
        seg in segmentation(),
    ) {
        let base = one_flow(&http_spec(8080, &uri, &ua, Segmentation::Single));
        let other = one_flow(&http_spec(8080, &uri, &ua, seg));
        prop_assert!(base.attributes.is_some());
        prop_assert_eq!(base.attributes, other.attributes);
    }

    #[test]
    fn offering_more_ciphers_never_removes_findings(
        ciphers in prop::collection::vec(prop::sample::select(vec![0x1301u16, 0xc02b, 0xc02f, 0x009e, 0x002f, 0x0035, 0x000a]), 1..5),
        extra in prop::sample::select(vec![0x0004u16, 0x0005, 0x002f, 0xc014]),
    ) {
        let rules = |cs: &[u16]| -> BTreeSet<String> {
            one_flow(&tls_spec(443, cs, Segmentation::Single)).findings.iter().map(|f| f.rule_id.to_string()).collect()
        };
        let before = rules(&ciphers);
        let mut more = ciphers.clone();
        more.push(extra);
        let after = rules(&more);
        prop_assert!(before.is_subset(&after), "{:?} -> {:?}", before, after);
    }

    #[test]
    fn interleaving_does_not_change_flow_results(seed in any::<u64>()) {
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(repo_path("manifests/four-devices.json")).unwrap()).unwrap();
        let per_flow: Vec<Vec<RawPacket>> = m.flows.iter().map(|s| synth_flow(s, m.seed).unwrap()).collect();
        let in_order: Vec<RawPacket> = per_flow.iter().flatten().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cursors = vec![0usize; per_flow.len()];
        let mut shuffled = Vec::with_capacity(in_order.len());
        while shuffled.len() < in_order.len() {
            let live: Vec<usize> = (0..per_flow.len()).filter(|&i| cursors[i] < per_flow[i].len()).collect();
            let pick = live[rand::Rng::gen_range(&mut rng, 0..live.len())];
            shuffled.push(per_flow[pick][cursors[pick]].clone());
            cursors[pick] += 1;
        }
        prop_assert_eq!(normalized(run(&in_order)), normalized(run(&shuffled)));
    }

    #[test]
    fn fingerprint_distance_is_a_bounded_symmetric_premetric(a in fingerprint("a"), b in fingerprint("b")) {
        match (fingerprint_distance(&a, &b), fingerprint_distance(&b, &a)) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&x));
            }
            (Err(_), Err(_)) => prop_assert!(a.is_empty() && b.is_empty()),
            other => prop_assert!(false, "asymmetric outcome {:?}", other),
        }
        if !a.is_empty() {
            prop_assert_eq!(fingerprint_distance(&a, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn adding_shared_values_never_increases_distance(a in fingerprint("a"), b in fingerprint("b"), ua in "[x-z]{3}") {
        prop_assume!(!a.http_user_agents.is_empty() && !b.http_user_agents.is_empty());
        let before = fingerprint_distance(&a, &b).unwrap();
        let (mut a2, mut b2) = (a.clone(), b.clone());
        a2.http_user_agents.insert(ua.clone());
        b2.http_user_agents.insert(ua);
        prop_assert!(fingerprint_distance(&a2, &b2).unwrap() <= before + 1e-12);
    }

    #[test]
    fn pcap_round_trip(
        pkts in prop::collection::vec((any::<u32>(), 0u32..1_000_000, prop::collection::vec(any::<u8>(), 0..200), 0u32..64), 0..20),
        big in any::<bool>(),
    ) {
        let packets: Vec<RawPacket> = pkts
            .into_iter()
            .map(|(s, us, data, extra)| {
                let mut p = RawPacket::new(s, us, data);
                p.original_len += extra;
                p
            })
            .collect();
        let order = if big { ByteOrder::Big } else { ByteOrder::Little };
        let mut bytes = Vec::new();
        write_pcap_to(&mut bytes, &packets, order).unwrap();
        let cap = read_pcap_from(bytes.as_slice()).unwrap();
        prop_assert!(!cap.truncated);
        prop_assert_eq!(&cap.packets, &packets);
        let mut again = Vec::new();
        write_pcap_to(&mut again, &cap.packets, order).unwrap();
        prop_assert_eq!(again, bytes);
    }
}
