//! Call specifiers and action values.
//!
//! A [`CallSpec`] is the pair (target API, parameters) that a policy emits and
//! that the speculation cache is keyed on. Parameters are stored as canonical
//! JSON bytes: object keys sorted, no insignificant whitespace. Two specs are
//! equal iff handler ids and canonical bytes are byte-identical.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CanonicalizeError {
    #[error("parameters are not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Canonical encoding of a JSON value. `serde_json`'s map type is ordered by
/// key, and the compact writer emits no whitespace, so this is deterministic.
pub fn canonical_bytes(value: &Value) -> Vec<u8> {
    serde_json::to_vec(value).expect("serializing a JSON value cannot fail")
}

/// Re-encode arbitrary JSON bytes canonically.
pub fn canonicalize(bytes: &[u8]) -> Result<Vec<u8>, CanonicalizeError> {
    let value: Value = serde_json::from_slice(bytes)?;
    Ok(canonical_bytes(&value))
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallSpec {
    handler_id: String,
    params: Vec<u8>,
}

impl CallSpec {
    pub fn new(handler_id: impl Into<String>, params: &Value) -> Self {
        Self { handler_id: handler_id.into(), params: canonical_bytes(params) }
    }

    /// Build from raw parameter bytes, canonicalizing them first.
    pub fn from_raw(handler_id: impl Into<String>, params: &[u8]) -> Result<Self, CanonicalizeError> {
        Ok(Self { handler_id: handler_id.into(), params: canonicalize(params)? })
    }

    pub fn handler_id(&self) -> &str {
        &self.handler_id
    }

    pub fn params(&self) -> &[u8] {
        &self.params
    }

    pub fn params_value(&self) -> Value {
        serde_json::from_slice(&self.params).expect("params are canonical JSON by construction")
    }

    /// Byte key used for seed derivation; unambiguous across (handler, params) splits.
    pub fn key_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.handler_id.len() + self.params.len() + 9);
        out.extend_from_slice(&(self.handler_id.len() as u64).to_le_bytes());
        out.extend_from_slice(self.handler_id.as_bytes());
        out.push(0);
        out.extend_from_slice(&self.params);
        out
    }
}

impl fmt::Debug for CallSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.handler_id, String::from_utf8_lossy(&self.params))
    }
}

impl fmt::Display for CallSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Serialize, Deserialize)]
struct CallSpecRepr {
    handler: String,
    params: Value,
}

impl Serialize for CallSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CallSpecRepr { handler: self.handler_id.clone(), params: self.params_value() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CallSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = CallSpecRepr::deserialize(deserializer)?;
        Ok(CallSpec::new(repr.handler, &repr.params))
    }
}

/// Strict match: handler and canonical parameter bytes identical. Any
/// difference, including synonyms or word order inside a string, is a miss.
pub fn strict_match(a: &CallSpec, b: &CallSpec) -> bool {
    a == b
}

/// An API response. Opaque to the executor; compared by value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionValue(pub Value);

impl ActionValue {
    pub fn new(value: Value) -> Self {
        Self(value)
    }

    pub fn as_value(&self) -> &Value {
        &self.0
    }
}

impl From<Value> for ActionValue {
    fn from(value: Value) -> Self {
        Self(value)
    }
}

impl From<&str> for ActionValue {
    fn from(s: &str) -> Self {
        Self(Value::String(s.to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn key_order_and_whitespace_do_not_matter() {
        let a = CallSpec::from_raw("h", br#"{ "b": 1, "a": [1, 2] }"#).unwrap();
        let b = CallSpec::new("h", &json!({"a": [1, 2], "b": 1}));
        assert_eq!(a, b);
        assert_eq!(a.params(), br#"{"a":[1,2],"b":1}"#);
    }

    #[test]
    fn strict_match_cases() {
        let s1 = CallSpec::new("Search", &json!({"query": "Nobel 1970s"}));
        let s2 = CallSpec::new("Search", &json!({"query": "Nobel 1970s"}));
        let s3 = CallSpec::new("Search", &json!({"query": "1970s Nobel"}));
        let l1 = CallSpec::new("Lookup", &json!({"query": "Nobel 1970s"}));
        assert!(strict_match(&s1, &s2));
        assert!(!strict_match(&s1, &s3));
        assert!(!strict_match(&l1, &s1));
    }

    #[test]
    fn invalid_json_is_rejected() {
        assert!(CallSpec::from_raw("h", b"{not json").is_err());
    }

    #[test]
    fn serde_round_trip_keeps_canonical_bytes() {
        let c = CallSpec::new("move", &json!({"z": "x", "a": {"d": 1, "c": 2}}));
        let s = serde_json::to_string(&c).unwrap();
        let back: CallSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
    }

    fn arb_json() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(|i| json!(i)),
            "[a-z ]{0,8}".prop_map(Value::String),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
                prop::collection::btree_map("[a-e]{1,3}", inner, 0..4)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    proptest! {
        #[test]
        fn canonicalization_is_idempotent(v in arb_json()) {
            let once = canonical_bytes(&v);
            let twice = canonicalize(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            let pretty = serde_json::to_vec_pretty(&v).unwrap();
            prop_assert_eq!(canonicalize(&pretty).unwrap(), once);
        }
    }
}
