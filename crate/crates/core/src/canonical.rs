//! Canonical JSON documents for certificates, ledgers and reports.
//!
//! Keys are sorted, indentation is two spaces, and every float is written
//! in scientific notation with 17 significant digits, which round-trips
//! binary64 exactly. Identical values therefore always produce identical
//! bytes, so golden-file comparisons can be bit-exact.

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Formats `x` with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let tree = serde_json::to_value(value).map_err(|e| Error::invalid(format!("cannot serialize: {e}")))?;
    let mut out = String::new();
    write_value(&tree, 0, &mut out)?;
    out.push('\n');
    Ok(out)
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_value(value: &Value, level: usize, out: &mut String) -> Result<()> {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else {
                let x = n.as_f64().ok_or_else(|| Error::invalid("unrepresentable number"))?;
                out.push_str(&format_f64(x));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return Ok(());
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(level + 1, out);
                write_value(item, level + 1, out)?;
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(level, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return Ok(());
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                indent(level + 1, out);
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push_str(": ");
                write_value(&map[*key], level + 1, out)?;
                if i + 1 < keys.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(level, out);
            out.push('}');
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    #[test]
    fn keys_sorted_and_floats_fixed_width() {
        let mut m = BTreeMap::new();
        m.insert("zeta", 1e-3);
        m.insert("alpha", 0.0);
        let text = to_canonical_json(&m).unwrap();
        assert_eq!(text, "{\n  \"alpha\": 0.0000000000000000e0,\n  \"zeta\": 1.0000000000000000e-3\n}\n");
    }

    #[test]
    fn integers_stay_integers() {
        #[derive(Serialize)]
        struct S {
            n: u64,
            k: i64,
            x: f64,
        }
        let text = to_canonical_json(&S { n: 3, k: -2, x: 2.0 }).unwrap();
        assert!(text.contains("\"n\": 3,"));
        assert!(text.contains("\"k\": -2,"));
        assert!(text.contains("\"x\": 2.0000000000000000e0"));
    }

    #[test]
    fn non_finite_floats_become_null() {
        // serde_json maps non-finite floats to null; certificates reject
        // them before they get here.
        let text = to_canonical_json(&vec![f64::NAN]).unwrap();
        assert_eq!(text, "[\n  null\n]\n");
    }

    proptest! {
        #[test]
        fn floats_round_trip_bit_exactly(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let text = to_canonical_json(&vec![x]).unwrap();
            let back: Vec<f64> = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back[0].to_bits(), x.to_bits());
        }
    }
}
