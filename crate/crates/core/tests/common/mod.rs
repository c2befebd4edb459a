#![allow(dead_code)]

use std::path::{Path, PathBuf};

use protoscope::compliance::CipherRegistry;
use protoscope::engine::Confidence;
use protoscope::model::{load_model_dir, IpProto, ProtocolModel};
use protoscope::pipeline::{analyze_packets, Analysis, AnalysisConfig, FlowResult};
use protoscope::synth::{json_subset, load_manifest, synth_corpus, Corpus, TruthEntry};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn repo_path(rel: &str) -> PathBuf {
    repo_root().join(rel)
}

pub fn models() -> Vec<ProtocolModel> {
    load_model_dir(repo_path("models")).expect("shipped models load")
}

pub fn full_registry() -> CipherRegistry {
    CipherRegistry::load(repo_path("data/cipher-categories.csv")).expect("shipped registry loads")
}

pub fn subset_registry() -> CipherRegistry {
    CipherRegistry::load(repo_path("data/cipher-subset.csv")).expect("subset registry loads")
}

pub fn corpus(manifest: &str, registry: &CipherRegistry) -> Corpus {
    let m = load_manifest(&repo_path(manifest)).expect("manifest parses");
    synth_corpus(&m, registry).expect("manifest synthesizes")
}

pub fn analyze(corpus: &Corpus, registry: &CipherRegistry) -> Analysis {
    analyze_packets(&corpus.packets, &models(), registry, &AnalysisConfig::default()).expect("analysis runs")
}

pub fn truth_for<'a>(corpus: &'a Corpus, f: &FlowResult) -> &'a TruthEntry {
    let transport = f.transport.unwrap_or(IpProto::Tcp);
    corpus
        .truth
        .find(
            std::net::SocketAddr::new(f.client.ip, f.client.port),
            std::net::SocketAddr::new(f.server.ip, f.server.port),
            transport,
        )
        .unwrap_or_else(|| panic!("no truth entry for {:?} -> {:?}", f.client, f.server))
}

/// Full-detection confusion counts against ground truth.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Score {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub mismatches: Vec<String>,
}

impl Score {
    pub fn precision(&self) -> f64 {
        let d = self.true_pos + self.false_pos;
        if d == 0 { 1.0 } else { self.true_pos as f64 / d as f64 }
    }

    pub fn recall(&self) -> f64 {
        let d = self.true_pos + self.false_neg;
        if d == 0 { 1.0 } else { self.true_pos as f64 / d as f64 }
    }
}

fn full_label(f: &FlowResult) -> Option<&str> {
    f.primary().filter(|d| d.confidence == Confidence::Full).map(|d| d.protocol.as_str())
}

pub fn score(corpus: &Corpus, analysis: &Analysis) -> Score {
    let mut s = Score::default();
    assert_eq!(analysis.flows.len(), corpus.truth.entries.len(), "flow count");
    for f in &analysis.flows {
        let t = truth_for(corpus, f);
        let expected = t
            .expected_protocol
            .as_deref()
            .filter(|_| t.expected_confidence == Some(Confidence::Full));
        match (expected, full_label(f)) {
            (Some(e), Some(got)) if e == got => s.true_pos += 1,
            (Some(e), got) => {
                s.false_neg += 1;
                if got.is_some() {
                    s.false_pos += 1;
                }
                s.mismatches.push(format!("#{} expected {e}, got {got:?}", t.index));
            }
            (None, Some(got)) => {
                s.false_pos += 1;
                s.mismatches.push(format!("#{} expected no full detection, got {got}", t.index));
            }
            (None, None) => {}
        }
    }
    s
}

/// Rule ids and attribute subsets that disagree with ground truth.
pub fn finding_mismatches(corpus: &Corpus, analysis: &Analysis) -> Vec<String> {
    let mut out = Vec::new();
    for f in &analysis.flows {
        let t = truth_for(corpus, f);
        let mut rules: Vec<String> = f.findings.iter().map(|x| x.rule_id.to_string()).collect();
        rules.sort();
        if rules != t.expected_rules {
            out.push(format!("#{} rules {rules:?} != expected {:?}", t.index, t.expected_rules));
        }
        let got = f.attributes.as_ref().map(|a| a.attributes_json()).unwrap_or(serde_json::Value::Null);
        if !t.expected_attributes.is_null() && !json_subset(&t.expected_attributes, &got) {
            out.push(format!("#{} attributes {got} do not contain {}", t.index, t.expected_attributes));
        }
        let got_conf = f.primary().map(|d| d.confidence);
        if got_conf != t.expected_confidence || f.primary().map(|d| d.protocol.as_str()) != t.expected_protocol.as_deref() {
            out.push(format!(
                "#{} label {:?}/{got_conf:?} != expected {:?}/{:?}",
                t.index,
                f.primary().map(|d| &d.protocol),
                t.expected_protocol,
                t.expected_confidence
            ));
        }
    }
    out
}

/// Reference boolean tree, kept separate from the crate's parser and evaluator.
#[derive(Debug, Clone)]
pub enum Oracle {
    Var(usize),
    Not(Box<Oracle>),
    And(Box<Oracle>, Box<Oracle>),
    Or(Box<Oracle>, Box<Oracle>),
}

pub const ORACLE_VARS: [&str; 4] = ["m_a", "m_b", "m_c", "m_d"];

impl Oracle {
    pub fn eval(&self, bits: u32) -> bool {
        match self {
            Oracle::Var(i) => bits >> i & 1 == 1,
            Oracle::Not(e) => !e.eval(bits),
            Oracle::And(l, r) => l.eval(bits) && r.eval(bits),
            Oracle::Or(l, r) => l.eval(bits) || r.eval(bits),
        }
    }

    /// Fully parenthesized, with randomizable keyword case.
    pub fn render(&self, lower: bool) -> String {
        let kw = |k: &str| if lower { k.to_lowercase() } else { k.to_string() };
        match self {
            Oracle::Var(i) => ORACLE_VARS[*i].to_string(),
            Oracle::Not(e) => format!("{} ({})", kw("NOT"), e.render(lower)),
            Oracle::And(l, r) => format!("({}) {} ({})", l.render(lower), kw("AND"), r.render(lower)),
            Oracle::Or(l, r) => format!("({}) {} ({})", l.render(lower), kw("OR"), r.render(lower)),
        }
    }

    pub fn random<R: rand::Rng>(rng: &mut R, vars: usize, depth: u32) -> Oracle {
        if depth == 0 || rng.gen_ratio(1, 4) {
            return Oracle::Var(rng.gen_range(0..vars));
        }
        match rng.gen_range(0..3) {
            0 => Oracle::Not(Box::new(Oracle::random(rng, vars, depth - 1))),
            1 => Oracle::And(
                Box::new(Oracle::random(rng, vars, depth - 1)),
                Box::new(Oracle::random(rng, vars, depth - 1)),
            ),
            _ => Oracle::Or(
                Box::new(Oracle::random(rng, vars, depth - 1)),
                Box::new(Oracle::random(rng, vars, depth - 1)),
            ),
        }
    }
}

/// Number of assignments where the crate disagrees with the oracle.
pub fn truth_table_disagreements(o: &Oracle, vars: usize, lower: bool) -> usize {
    use protoscope::model::{eval_boolean, Expr};
    let parsed = Expr::parse(&o.render(lower)).expect("oracle renders parse");
    let reparsed = Expr::parse(&parsed.to_string()).expect("display output reparses");
    assert_eq!(parsed, reparsed);
    (0..1u32 << vars)
        .filter(|&bits| {
            let truth = (0..vars).map(|i| (ORACLE_VARS[i].to_string(), bits >> i & 1 == 1)).collect();
            eval_boolean(&parsed, &truth).expect("all variables bound") != o.eval(bits)
        })
        .count()
}
