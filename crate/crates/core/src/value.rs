//! Typed argument values carried by tool calls.
//!
//! JSON objects with repeated keys are rejected at deserialization time, so an
//! arguments map always has unique keys.

use std::fmt;

use indexmap::IndexMap;
use serde::de::{self, Deserialize, Deserializer, MapAccess, SeqAccess, Visitor};
use serde::ser::{Serialize, SerializeMap, SerializeSeq, Serializer};
use serde_json::Number;

/// A JSON-shaped value whose objects preserve key order and never hold
/// duplicate keys.
#[derive(Debug, Clone, PartialEq)]
pub enum TypedValue {
    Null,
    Bool(bool),
    Number(Number),
    String(String),
    List(Vec<TypedValue>),
    Object(IndexMap<String, TypedValue>),
}

impl TypedValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            TypedValue::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_object(&self) -> Option<&IndexMap<String, TypedValue>> {
        match self {
            TypedValue::Object(map) => Some(map),
            _ => None,
        }
    }

    /// Short name of the JSON kind, used in diagnostics.
    pub fn kind_name(&self) -> &'static str {
        match self {
            TypedValue::Null => "null",
            TypedValue::Bool(_) => "boolean",
            TypedValue::Number(_) => "number",
            TypedValue::String(_) => "string",
            TypedValue::List(_) => "list",
            TypedValue::Object(_) => "object",
        }
    }

    /// Canonical string rendering used for exact-match comparison of values
    /// that do not share a string, numeric or boolean type.
    ///
    /// Strings render as their raw contents. Everything else renders as
    /// compact JSON with canonical numbers and object keys sorted.
    pub fn canonical_string(&self) -> String {
        match self {
            TypedValue::String(s) => s.clone(),
            other => {
                let mut out = String::new();
                other.write_canonical_json(&mut out);
                out
            }
        }
    }

    fn write_canonical_json(&self, out: &mut String) {
        match self {
            TypedValue::Null => out.push_str("null"),
            TypedValue::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            TypedValue::Number(n) => out.push_str(&canonical_number(n)),
            TypedValue::String(s) => {
                out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"))
            }
            TypedValue::List(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.write_canonical_json(out);
                }
                out.push(']');
            }
            TypedValue::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, key) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(key).expect("string serialization is infallible"));
                    out.push(':');
                    map[key].write_canonical_json(out);
                }
                out.push('}');
            }
        }
    }
}

/// Integers render without a decimal point (including integral floats);
/// other values use the shortest decimal that round-trips.
pub fn canonical_number(n: &Number) -> String {
    if let Some(i) = n.as_i64() {
        return i.to_string();
    }
    if let Some(u) = n.as_u64() {
        return u.to_string();
    }
    let f = n.as_f64().unwrap_or(f64::NAN);
    if f == 0.0 {
        // fold -0 into 0
        return "0".to_string();
    }
    format!("{f}")
}

/// Exact numeric equality: integers compare as integers, anything else as
/// `f64`.
pub fn numbers_equal(a: &Number, b: &Number) -> bool {
    if let (Some(x), Some(y)) = (a.as_i64(), b.as_i64()) {
        return x == y;
    }
    if let (Some(x), Some(y)) = (a.as_u64(), b.as_u64()) {
        return x == y;
    }
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

impl From<&str> for TypedValue {
    fn from(s: &str) -> Self {
        TypedValue::String(s.to_string())
    }
}

impl From<String> for TypedValue {
    fn from(s: String) -> Self {
        TypedValue::String(s)
    }
}

impl From<bool> for TypedValue {
    fn from(b: bool) -> Self {
        TypedValue::Bool(b)
    }
}

impl From<i64> for TypedValue {
    fn from(i: i64) -> Self {
        TypedValue::Number(i.into())
    }
}

impl From<f64> for TypedValue {
    /// Non-finite floats map to `Null`, as in JSON.
    fn from(f: f64) -> Self {
        Number::from_f64(f).map_or(TypedValue::Null, TypedValue::Number)
    }
}

impl fmt::Display for TypedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let json = serde_json::to_string(self).map_err(|_| fmt::Error)?;
        f.write_str(&json)
    }
}

impl Serialize for TypedValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            TypedValue::Null => serializer.serialize_unit(),
            TypedValue::Bool(b) => serializer.serialize_bool(*b),
            TypedValue::Number(n) => n.serialize(serializer),
            TypedValue::String(s) => serializer.serialize_str(s),
            TypedValue::List(items) => {
                let mut seq = serializer.serialize_seq(Some(items.len()))?;
                for item in items {
                    seq.serialize_element(item)?;
                }
                seq.end()
            }
            TypedValue::Object(map) => {
                let mut m = serializer.serialize_map(Some(map.len()))?;
                for (k, v) in map {
                    m.serialize_entry(k, v)?;
                }
                m.end()
            }
        }
    }
}

struct TypedValueVisitor;

impl<'de> Visitor<'de> for TypedValueVisitor {
    type Value = TypedValue;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a JSON value")
    }

    fn visit_unit<E>(self) -> Result<TypedValue, E> {
        Ok(TypedValue::Null)
    }

    fn visit_none<E>(self) -> Result<TypedValue, E> {
        Ok(TypedValue::Null)
    }

    fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<TypedValue, D::Error> {
        TypedValue::deserialize(d)
    }

    fn visit_bool<E>(self, v: bool) -> Result<TypedValue, E> {
        Ok(TypedValue::Bool(v))
    }

    fn visit_i64<E>(self, v: i64) -> Result<TypedValue, E> {
        Ok(TypedValue::Number(v.into()))
    }

    fn visit_u64<E>(self, v: u64) -> Result<TypedValue, E> {
        Ok(TypedValue::Number(v.into()))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<TypedValue, E> {
        Number::from_f64(v)
            .map(TypedValue::Number)
            .ok_or_else(|| E::custom("non-finite number"))
    }

    fn visit_str<E>(self, v: &str) -> Result<TypedValue, E> {
        Ok(TypedValue::String(v.to_string()))
    }

    fn visit_string<E>(self, v: String) -> Result<TypedValue, E> {
        Ok(TypedValue::String(v))
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<TypedValue, A::Error> {
        let mut items = Vec::new();
        while let Some(item) = seq.next_element()? {
            items.push(item);
        }
        Ok(TypedValue::List(items))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<TypedValue, A::Error> {
        let mut map = IndexMap::new();
        while let Some(key) = access.next_key::<String>()? {
            if map.contains_key(&key) {
                return Err(de::Error::custom(format!("duplicate key `{key}`")));
            }
            let value = access.next_value()?;
            map.insert(key, value);
        }
        Ok(TypedValue::Object(map))
    }
}

impl<'de> Deserialize<'de> for TypedValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(TypedValueVisitor)
    }
}
