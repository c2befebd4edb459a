//! Per-device behavioral fingerprints and library matching.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attrs::{AttributeBundle, TlsAttributes};

/// An ordered list of 16-bit codes, compared as a single atom.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CodeList(#[serde(with = "crate::hexfmt::codes")] pub Vec<u16>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Code(#[serde(with = "crate::hexfmt::code")] pub u16);

/// Client extension types in wire order plus their total encoded size.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExtensionProfile {
    pub types: CodeList,
    pub total_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceFingerprint {
    pub device_id: String,
    #[serde(default)]
    pub tls_cipher_lists: BTreeSet<CodeList>,
    #[serde(default)]
    pub tls_extension_profiles: BTreeSet<ExtensionProfile>,
    #[serde(default)]
    pub tls_server_selected: BTreeSet<Code>,
    #[serde(default)]
    pub http_methods: BTreeSet<String>,
    #[serde(default)]
    pub http_hosts: BTreeSet<String>,
    #[serde(default)]
    pub http_uris: BTreeSet<String>,
    #[serde(default)]
    pub http_user_agents: BTreeSet<String>,
    #[serde(default)]
    pub http_servers: BTreeSet<String>,
    #[serde(default)]
    pub dhcp_param_lists: BTreeSet<Vec<u8>>,
}

/// Dimension weights for [`fingerprint_distance`]. `tls_server_selected` is
/// left out and only breaks ties in [`match_fingerprint`].
pub const WEIGHTS: [(&str, f64); 8] = [
    ("tls_cipher_lists", 2.0),
    ("tls_extension_profiles", 1.0),
    ("http_methods", 0.5),
    ("http_hosts", 1.5),
    ("http_uris", 1.0),
    ("http_user_agents", 1.0),
    ("http_servers", 0.5),
    ("dhcp_param_lists", 1.5),
];

impl DeviceFingerprint {
    pub fn new(device_id: impl Into<String>) -> Self {
        DeviceFingerprint {
            device_id: device_id.into(),
            ..Default::default()
        }
    }

    pub fn add(&mut self, bundle: &AttributeBundle) {
        match bundle {
            AttributeBundle::Tls(t) => self.add_tls(t),
            AttributeBundle::Http(h) => {
                for e in &h.exchanges {
                    self.http_methods.insert(e.method.clone());
                    self.http_uris.insert(normalize_uri(&e.uri));
                    self.http_hosts.extend(e.host.clone());
                    self.http_user_agents.extend(e.user_agent.clone());
                    self.http_servers.extend(e.server_header.clone());
                }
            }
            AttributeBundle::Dhcp(d) => {
                if !d.parameter_request_list.is_empty() {
                    self.dhcp_param_lists.insert(d.parameter_request_list.clone());
                }
            }
            AttributeBundle::Dns(_) | AttributeBundle::Ntp(_) | AttributeBundle::Ssdp(_) => {}
        }
    }

    fn add_tls(&mut self, t: &TlsAttributes) {
        self.tls_cipher_lists.insert(CodeList(t.client_cipher_suites.clone()));
        self.tls_extension_profiles.insert(ExtensionProfile {
            types: CodeList(t.client_extension_types()),
            total_bytes: t.client_extensions_total,
        });
        if let Some(c) = t.server_selected_cipher {
            self.tls_server_selected.insert(Code(c));
        }
    }

    /// Per-dimension Jaccard distance for each weighted dimension, `None`
    /// where either side has no values.
    pub fn dimension_distances(&self, other: &Self) -> [Option<f64>; 8] {
        [
            jaccard(&self.tls_cipher_lists, &other.tls_cipher_lists),
            jaccard(&self.tls_extension_profiles, &other.tls_extension_profiles),
            jaccard(&self.http_methods, &other.http_methods),
            jaccard(&self.http_hosts, &other.http_hosts),
            jaccard(&self.http_uris, &other.http_uris),
            jaccard(&self.http_user_agents, &other.http_user_agents),
            jaccard(&self.http_servers, &other.http_servers),
            jaccard(&self.dhcp_param_lists, &other.dhcp_param_lists),
        ]
    }

    pub fn is_empty(&self) -> bool {
        self.tls_cipher_lists.is_empty()
            && self.tls_extension_profiles.is_empty()
            && self.tls_server_selected.is_empty()
            && self.http_methods.is_empty()
            && self.http_hosts.is_empty()
            && self.http_uris.is_empty()
            && self.http_user_agents.is_empty()
            && self.http_servers.is_empty()
            && self.dhcp_param_lists.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fingerprints always serialize")
    }
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    Some(1.0 - inter as f64 / union as f64)
}

pub fn build_fingerprint<'a>(
    device_id: &str,
    bundles: impl IntoIterator<Item = &'a AttributeBundle>,
) -> DeviceFingerprint {
    let mut fp = DeviceFingerprint::new(device_id);
    for b in bundles {
        fp.add(b);
    }
    fp
}

/// Replaces all-digit path segments with `{n}` and query values with `{v}`.
pub fn normalize_uri(uri: &str) -> String {
    let uri = uri.split('#').next().unwrap_or("");
    let (path, query) = match uri.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (uri, None),
    };
    let mut out = path
        .split('/')
        .map(|seg| {
            if !seg.is_empty() && seg.bytes().all(|b| b.is_ascii_digit()) {
                "{n}"
            } else {
                seg
            }
        })
        .collect::<Vec<_>>()
        .join("/");
    if let Some(q) = query {
        out.push('?');
        let params: Vec<String> = q
            .split('&')
            .map(|kv| match kv.split_once('=') {
                Some((k, _)) => format!("{k}={{v}}"),
                None => kv.to_string(),
            })
            .collect();
        out.push_str(&params.join("&"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("distance between two empty fingerprints is undefined")]
    UndefinedDistance,
    #[error("cannot read fingerprint {path}: {message}")]
    Load { path: PathBuf, message: String },
}

/// Weighted mean of Jaccard distances over dimensions populated on both
/// sides. With no such dimension the fingerprints share nothing and score 1.
pub fn fingerprint_distance(
    a: &DeviceFingerprint,
    b: &DeviceFingerprint,
) -> Result<f64, FingerprintError> {
    if a.is_empty() && b.is_empty() {
        return Err(FingerprintError::UndefinedDistance);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (d, (_, w)) in a.dimension_distances(b).into_iter().zip(WEIGHTS) {
        if let Some(d) = d {
            num += w * d;
            den += w;
        }
    }
    Ok(if den == 0.0 { 1.0 } else { num / den })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintMatch {
    pub device_id: String,
    pub score: f64,
    /// Jaccard similarity of server-selected cipher codes.
    pub server_selected_overlap: f64,
}

/// Ranks `library` by distance to `observed`, closest first.
pub fn match_fingerprint(
    observed: &DeviceFingerprint,
    library: &[DeviceFingerprint],
) -> Vec<FingerprintMatch> {
    let mut out: Vec<FingerprintMatch> = library
        .iter()
        .map(|entry| FingerprintMatch {
            device_id: entry.device_id.clone(),
            // An empty pair carries no evidence either way.
            score: fingerprint_distance(observed, entry).unwrap_or(1.0),
            server_selected_overlap: jaccard(&observed.tls_server_selected, &entry.tls_server_selected)
                .map_or(0.0, |d| 1.0 - d),
        })
        .collect();
    out.sort_by(|x, y| {
        x.score
            .partial_cmp(&y.score)
            .unwrap_or(Ordering::Equal)
            .then(
                y.server_selected_overlap
                    .partial_cmp(&x.server_selected_overlap)
                    .unwrap_or(Ordering::Equal),
            )
            .then_with(|| x.device_id.cmp(&y.device_id))
    });
    out
}

/// True when `fp` is at a nonzero distance from every other fingerprint.
pub fn is_unique_within(fp: &DeviceFingerprint, others: &[DeviceFingerprint]) -> bool {
    others
        .iter()
        .filter(|o| o.device_id != fp.device_id)
        .all(|o| fingerprint_distance(fp, o).map_or(true, |d| d > 0.0))
}

pub fn load_fingerprint(path: &Path) -> Result<DeviceFingerprint, FingerprintError> {
    let err = |message: String| FingerprintError::Load {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

/// Loads every `*.json` file in `dir`, sorted by file name.
pub fn load_library(dir: &Path) -> Result<Vec<DeviceFingerprint>, FingerprintError> {
    let err = |message: String| FingerprintError::Load {
        path: dir.to_path_buf(),
        message,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| err(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_fingerprint(p)).collect()
}
