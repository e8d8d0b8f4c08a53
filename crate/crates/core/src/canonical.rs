//! Canonical text rendering of JSON values.
//!
//! Object keys are always emitted in sorted order and there is no
//! insignificant whitespace, so two structurally equal values render to the
//! same bytes. Floats are rendered either in shortest round-trip form
//! (record files) or rounded to a fixed number of significant digits
//! (evidence and reports).

use serde::Serialize;
use serde_json::Value;

/// How floating point numbers are rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatStyle {
    /// Shortest decimal string that parses back to the identical `f64`.
    RoundTrip,
    /// Rounded to the given number of significant digits.
    Significant(usize),
}

/// Significant digits used for evidence sets, answers and reports.
pub const EVIDENCE_DIGITS: usize = 9;

pub fn to_canonical_string<T: Serialize>(value: &T, style: FloatStyle) -> String {
    let value = serde_json::to_value(value).expect("serializable value");
    render(&value, style)
}

pub fn render(value: &Value, style: FloatStyle) -> String {
    let mut out = String::new();
    write_value(&mut out, value, style);
    out
}

pub fn format_float(x: f64, style: FloatStyle) -> String {
    let x = match style {
        FloatStyle::RoundTrip => x,
        FloatStyle::Significant(digits) => round_significant(x, digits),
    };
    if x == 0.0 {
        // collapses -0.0
        return "0".to_string();
    }
    format!("{x}")
}

fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let digits = digits.max(1);
    format!("{:.*e}", digits - 1, x)
        .parse()
        .expect("exponent formatting parses back")
}

fn write_value(out: &mut String, value: &Value, style: FloatStyle) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(0.0), style));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string escapes"));
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item, style);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("string escapes"));
                out.push(':');
                write_value(out, &map[key], style);
            }
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_and_compact() {
        let v = json!({"b": 1, "a": [1.5, "x"], "c": {"z": null, "y": true}});
        assert_eq!(
            render(&v, FloatStyle::RoundTrip),
            r#"{"a":[1.5,"x"],"b":1,"c":{"y":true,"z":null}}"#
        );
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_float(2.0 / 3.0, FloatStyle::Significant(9)), "0.666666667");
        assert_eq!(format_float(-0.0, FloatStyle::Significant(9)), "0");
        assert_eq!(format_float(480.0, FloatStyle::Significant(9)), "480");
        assert_eq!(format_float(0.1 + 0.2, FloatStyle::RoundTrip), "0.30000000000000004");
    }

    #[test]
    fn round_trip_floats_parse_back_exactly() {
        for x in [0.1, 1e-12, 123456.789, 1.0 / 3.0, -7.25e5] {
            let s = format_float(x, FloatStyle::RoundTrip);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }
}
