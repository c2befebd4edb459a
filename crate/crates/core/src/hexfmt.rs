//! Serde helpers that write 16-bit codes as `"0xc014"` and accept either that
//! form or a plain integer.

use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::Deserialize;

#[derive(Deserialize)]
#[serde(untagged)]
enum Code {
    Num(u64),
    Text(String),
}

fn to_u16<E: de::Error>(c: Code) -> Result<u16, E> {
    let v = match c {
        Code::Num(n) => n,
        Code::Text(s) => {
            let t = s.trim();
            match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
                Some(h) => u64::from_str_radix(h, 16).map_err(E::custom)?,
                None => t.parse::<u64>().map_err(E::custom)?,
            }
        }
    };
    u16::try_from(v).map_err(|_| E::custom(format!("code {v} does not fit in 16 bits")))
}

pub fn fmt_code(c: u16) -> String {
    format!("0x{c:04x}")
}

pub mod code {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u16, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_code(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u16, D::Error> {
        to_u16(Code::deserialize(d)?)
    }
}

pub mod opt_code {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<u16>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(c) => s.serialize_some(&fmt_code(*c)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u16>, D::Error> {
        Option::<Code>::deserialize(d)?.map(to_u16).transpose()
    }
}

pub mod codes {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[u16], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for c in v {
            seq.serialize_element(&fmt_code(*c))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u16>, D::Error> {
        Vec::<Code>::deserialize(d)?.into_iter().map(to_u16).collect()
    }
}
