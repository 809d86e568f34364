use std::collections::BTreeMap;

use serde_json::Value;

use crate::error::{Error, Result};

/// A flattened leaf value.
#[derive(Debug, Clone, PartialEq)]
pub enum Leaf {
    Number(f64),
    Label(String),
    Missing,
}

impl Leaf {
    /// Category label for this leaf; integral numbers print without a
    /// fractional part so `1` and `1.0` name the same state.
    pub fn label(&self) -> Option<String> {
        match self {
            Leaf::Number(x) if x.fract() == 0.0 && x.abs() < 1e15 => Some(format!("{}", *x as i64)),
            Leaf::Number(x) => Some(x.to_string()),
            Leaf::Label(s) => Some(s.clone()),
            Leaf::Missing => None,
        }
    }
}

/// One record flattened to dot-joined keys.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatRow {
    pub timestamp: i64,
    pub values: BTreeMap<String, Leaf>,
}

impl FlatRow {
    pub fn get(&self, key: &str) -> &Leaf {
        self.values.get(key).unwrap_or(&Leaf::Missing)
    }

    /// Keep exactly the manifest's variables; absent ones become missing.
    pub fn retain_keys<'a, I: IntoIterator<Item = &'a str>>(&mut self, keys: I) {
        let mut kept = BTreeMap::new();
        for k in keys {
            let v = self.values.remove(k).unwrap_or(Leaf::Missing);
            kept.insert(k.to_string(), v);
        }
        self.values = kept;
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn walk(v: &Value, prefix: &str, out: &mut BTreeMap<String, Leaf>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                walk(child, &join(prefix, k), out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                walk(child, &join(prefix, &i.to_string()), out);
            }
        }
        Value::Null => {
            out.insert(prefix.to_string(), Leaf::Missing);
        }
        Value::Bool(b) => {
            out.insert(prefix.to_string(), Leaf::Number(*b as u8 as f64));
        }
        Value::Number(n) => {
            let leaf = n.as_f64().map(Leaf::Number).unwrap_or(Leaf::Missing);
            out.insert(prefix.to_string(), leaf);
        }
        Value::String(s) => {
            out.insert(prefix.to_string(), Leaf::Label(s.clone()));
        }
    }
}

/// All leaf keys of a JSON value in traversal order.
pub fn collect_keys(v: &Value, prefix: &str, out: &mut Vec<String>) {
    let mut map = BTreeMap::new();
    walk(v, prefix, &mut map);
    out.extend(map.into_keys());
}

pub fn flatten_value(v: &Value) -> Result<FlatRow> {
    if !v.is_object() {
        return Err(Error::MalformedRecord("record is not an object".into()));
    }
    let timestamp = v
        .get("timestamp")
        .and_then(Value::as_i64)
        .ok_or(Error::MissingTimestamp)?;
    let mut values = BTreeMap::new();
    walk(v, "", &mut values);
    Ok(FlatRow { timestamp, values })
}

/// Parse one text record and flatten it.
pub fn flatten_record(text: &str) -> Result<FlatRow> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::MalformedRecord(e.to_string()))?;
    flatten_value(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_leaf_flattening() {
        let row = flatten_record(r#"{"timestamp":100,"a":{"b":1,"c":"G"}}"#).unwrap();
        assert_eq!(row.timestamp, 100);
        assert_eq!(row.get("a.b"), &Leaf::Number(1.0));
        assert_eq!(row.get("a.c"), &Leaf::Label("G".into()));
    }

    #[test]
    fn absent_subtree_is_missing() {
        let mut row = flatten_record(r#"{"timestamp":100,"a":{"b":1}}"#).unwrap();
        assert_eq!(row.get("a.c"), &Leaf::Missing);
        row.retain_keys(["a.b", "a.c"]);
        assert_eq!(row.values.len(), 2);
        assert_eq!(row.values["a.c"], Leaf::Missing);
        assert!(!row.values.contains_key("timestamp"));
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(flatten_record("[1,2]"), Err(Error::MalformedRecord(_))));
        assert!(matches!(flatten_record("not json"), Err(Error::MalformedRecord(_))));
        assert!(matches!(flatten_record(r#"{"a":1}"#), Err(Error::MissingTimestamp)));
    }

    #[test]
    fn null_and_bool_leaves() {
        let row = flatten_record(r#"{"timestamp":1,"x":null,"y":true}"#).unwrap();
        assert_eq!(row.get("x"), &Leaf::Missing);
        assert_eq!(row.get("y"), &Leaf::Number(1.0));
        assert_eq!(Leaf::Number(1.0).label().unwrap(), "1");
    }
}
