use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Canonical JSON: object keys sorted, no whitespace, integers printed as
/// integers and every real printed with exactly six decimal digits.
///
/// This string is the input to content hashes and token MACs, so its
/// layout must never change.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("domain types always serialize");
    let mut out = String::new();
    write_value(&v, &mut out);
    out
}

/// Hex SHA-256 of the canonical form.
pub fn canonical_hash<T: Serialize + ?Sized>(value: &T) -> String {
    hex::encode(Sha256::digest(to_canonical_string(value).as_bytes()))
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                let f = n.as_f64().unwrap_or(0.0);
                let s = format!("{f:.6}");
                // -0.000000 and 0.000000 must hash the same
                if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
                    out.push_str("0.000000");
                } else {
                    out.push_str(&s);
                }
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string escapes")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string escapes"));
                out.push(':');
                write_value(&map[k], out);
            }
            out.push('}');
        }
    }
}
