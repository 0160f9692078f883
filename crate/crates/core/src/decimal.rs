//! Reals stored as decimal strings in scene files.
//!
//! Rust's `Display` for `f64` prints the shortest decimal that parses back to
//! the same bits, so a write/read/write cycle is byte-identical.

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

/// A single real stored as a decimal string.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Real(#[serde(with = "self")] pub f64);

pub fn format_real(v: f64) -> String {
    format!("{v}")
}

pub fn parse_real(s: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| format!("bad real {s:?}: {e}"))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Lenient {
    Text(String),
    Number(f64),
}

impl Lenient {
    fn into_f64<E: de::Error>(self) -> Result<f64, E> {
        match self {
            Lenient::Text(s) => parse_real(&s).map_err(E::custom),
            Lenient::Number(v) => Ok(v),
        }
    }
}

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_real(*v))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Lenient::deserialize(d)?.into_f64()
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_some(&format_real(*x)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Lenient>::deserialize(d)? {
            Some(l) => l.into_f64().map(Some),
            None => Ok(None),
        }
    }
}

pub mod pair {
    use super::*;
    use serde::ser::SerializeTuple;

    pub fn serialize<S: Serializer>(v: &[f64; 2], s: S) -> Result<S::Ok, S::Error> {
        let mut t = s.serialize_tuple(2)?;
        t.serialize_element(&format_real(v[0]))?;
        t.serialize_element(&format_real(v[1]))?;
        t.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 2], D::Error> {
        let [a, b] = <[Lenient; 2]>::deserialize(d)?;
        Ok([a.into_f64()?, b.into_f64()?])
    }
}

pub mod vec {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&format_real(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Lenient>::deserialize(d)?
            .into_iter()
            .map(Lenient::into_f64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_round_trip() {
        for v in [0.2, 1.0, std::f64::consts::PI, 1e-20, -3.5e12, 0.1 + 0.2] {
            let s = format_real(v);
            assert_eq!(parse_real(&s).unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}
