use std::collections::BTreeMap;
use std::net::IpAddr;
use std::path::Path;

use thiserror::Error;

use crate::flow::Endpoint;
use crate::packet_io::MacAddr;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeviceKey {
    Ip(IpAddr),
    Mac(MacAddr),
}

impl std::str::FromStr for DeviceKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(ip) = s.parse::<IpAddr>() {
            return Ok(DeviceKey::Ip(ip));
        }
        s.parse::<MacAddr>()
            .map(DeviceKey::Mac)
            .map_err(|_| format!("{s:?} is neither an IP nor a MAC address"))
    }
}

impl std::fmt::Display for DeviceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DeviceKey::Ip(ip) => write!(f, "{ip}"),
            DeviceKey::Mac(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DeviceMapError {
    #[error("cannot read device map: {0}")]
    Io(#[from] std::io::Error),
    #[error("device map line {line}: {message}")]
    BadLine { line: u64, message: String },
    #[error("{key} is assigned to both {first} and {second}")]
    Conflict {
        key: DeviceKey,
        first: String,
        second: String,
    },
}

/// Device id lookup by IP or MAC address.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceMap {
    keys: BTreeMap<DeviceKey, String>,
}

/// Label for flows no device claims.
pub const UNKNOWN_DEVICE: &str = "unknown";

impl DeviceMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, device: &str, key: DeviceKey) -> Result<(), DeviceMapError> {
        match self.keys.get(&key) {
            Some(prev) if prev != device => Err(DeviceMapError::Conflict {
                key,
                first: prev.clone(),
                second: device.to_string(),
            }),
            _ => {
                self.keys.insert(key, device.to_string());
                Ok(())
            }
        }
    }

    /// Parses `device_id,ip_or_mac` lines. `#` starts a comment.
    pub fn from_csv_str(text: &str) -> Result<Self, DeviceMapError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut map = DeviceMap::new();
        for row in rdr.records() {
            let row = row.map_err(|e| DeviceMapError::BadLine {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line());
            if row.iter().all(str::is_empty) {
                continue;
            }
            if row.len() != 2 || row[0].is_empty() {
                return Err(DeviceMapError::BadLine {
                    line,
                    message: "expected device_id,ip_or_mac".into(),
                });
            }
            let key = row[1]
                .parse()
                .map_err(|message| DeviceMapError::BadLine { line, message })?;
            map.insert(&row[0], key)?;
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, DeviceMapError> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn device_for_ip(&self, ip: IpAddr) -> Option<&str> {
        self.keys.get(&DeviceKey::Ip(ip)).map(String::as_str)
    }

    pub fn device_for_mac(&self, mac: MacAddr) -> Option<&str> {
        self.keys.get(&DeviceKey::Mac(mac)).map(String::as_str)
    }

    /// Initiator IP, then initiator MAC, then the responder side.
    pub fn attribute(
        &self,
        client: Endpoint,
        client_mac: Option<MacAddr>,
        server: Endpoint,
        server_mac: Option<MacAddr>,
    ) -> &str {
        self.device_for_ip(client.ip)
            .or_else(|| client_mac.and_then(|m| self.device_for_mac(m)))
            .or_else(|| self.device_for_ip(server.ip))
            .or_else(|| server_mac.and_then(|m| self.device_for_mac(m)))
            .unwrap_or(UNKNOWN_DEVICE)
    }

    pub fn devices(&self) -> std::collections::BTreeSet<&str> {
        self.keys.values().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}
