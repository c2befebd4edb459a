use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CipherCategory {
    Insecure,
    Weak,
    Secure,
    Recommended,
    Unknown,
}

impl CipherCategory {
    pub fn parse(s: &str) -> Option<CipherCategory> {
        match s.trim().to_ascii_lowercase().as_str() {
            "insecure" => Some(CipherCategory::Insecure),
            "weak" => Some(CipherCategory::Weak),
            "secure" => Some(CipherCategory::Secure),
            "recommended" => Some(CipherCategory::Recommended),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CipherCategory::Insecure => "insecure",
            CipherCategory::Weak => "weak",
            CipherCategory::Secure => "secure",
            CipherCategory::Recommended => "recommended",
            CipherCategory::Unknown => "unknown",
        }
    }

    /// Only these categories are acceptable for a negotiated suite.
    pub fn is_acceptable(self) -> bool {
        matches!(self, CipherCategory::Secure | CipherCategory::Recommended)
    }
}

impl fmt::Display for CipherCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub insecure: usize,
    pub weak: usize,
    pub secure: usize,
    pub recommended: usize,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read cipher registry: {0}")]
    Io(#[from] std::io::Error),
    #[error("cipher registry line {line}: {source}")]
    Csv { line: u64, source: csv::Error },
    #[error("cipher registry line {line}: {message}")]
    BadRow { line: u64, message: String },
    #[error("cipher 0x{code:04x} is listed as both {first} and {second}")]
    Conflict {
        code: u16,
        first: CipherCategory,
        second: CipherCategory,
    },
}

/// Cipher-suite code to category mapping, loaded from a dated snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CipherRegistry {
    entries: BTreeMap<u16, CipherCategory>,
    snapshot_date: Option<String>,
}

const BUILTIN_SNAPSHOT: &str = include_str!("../../../../data/cipher-categories.csv");

impl CipherRegistry {
    /// The snapshot shipped with the library.
    pub fn builtin() -> CipherRegistry {
        Self::from_csv_str(BUILTIN_SNAPSHOT).expect("shipped cipher snapshot is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CipherRegistry, RegistryError> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        Self::from_csv_str(&text)
    }

    /// Parses `hex_code,category` rows; `#` lines are comments and a
    /// `# snapshot-date: YYYY-MM-DD` comment sets the date.
    pub fn from_csv_str(text: &str) -> Result<CipherRegistry, RegistryError> {
        let snapshot_date = text
            .lines()
            .filter_map(|l| l.trim().strip_prefix('#'))
            .filter_map(|c| c.trim().strip_prefix("snapshot-date:"))
            .map(|d| d.trim().to_string())
            .next();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut entries: BTreeMap<u16, CipherCategory> = BTreeMap::new();
        for row in rdr.records() {
            let row = row.map_err(|e| RegistryError::Csv {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                source: e,
            })?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            if row.iter().all(str::is_empty) {
                continue;
            }
            if row.len() != 2 {
                return Err(RegistryError::BadRow {
                    line,
                    message: format!("expected 2 fields, found {}", row.len()),
                });
            }
            let code = parse_code(&row[0]).ok_or_else(|| RegistryError::BadRow {
                line,
                message: format!("bad cipher code {:?}", &row[0]),
            })?;
            let cat = CipherCategory::parse(&row[1]).ok_or_else(|| RegistryError::BadRow {
                line,
                message: format!("bad category {:?}", &row[1]),
            })?;
            if let Some(&prev) = entries.get(&code) {
                if prev != cat {
                    return Err(RegistryError::Conflict {
                        code,
                        first: prev,
                        second: cat,
                    });
                }
            }
            entries.insert(code, cat);
        }
        Ok(CipherRegistry {
            entries,
            snapshot_date,
        })
    }

    pub fn lookup(&self, code: u16) -> CipherCategory {
        self.entries
            .get(&code)
            .copied()
            .unwrap_or(CipherCategory::Unknown)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn snapshot_date(&self) -> Option<&str> {
        self.snapshot_date.as_deref()
    }

    pub fn counts(&self) -> CategoryCounts {
        let mut c = CategoryCounts::default();
        for cat in self.entries.values() {
            match cat {
                CipherCategory::Insecure => c.insecure += 1,
                CipherCategory::Weak => c.weak += 1,
                CipherCategory::Secure => c.secure += 1,
                CipherCategory::Recommended => c.recommended += 1,
                CipherCategory::Unknown => {}
            }
        }
        c
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, CipherCategory)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }
}

fn parse_code(s: &str) -> Option<u16> {
    let t = s.trim();
    let h = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X"))?;
    u16::from_str_radix(h, 16).ok()
}
