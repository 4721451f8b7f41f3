//! Fixed-precision number rendering for stable, diffable outputs.

/// Significant decimal digits kept in every serialized number.
pub const SIG_DIGITS: usize = 6;

/// Rounds `x` to [`SIG_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Renders `x` with at most [`SIG_DIGITS`] significant digits, in plain
/// (non-exponent) notation for ordinary magnitudes.
pub fn fmt(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 {
        return "0".to_string();
    }
    format!("{r}")
}

/// Rounds every float in a JSON value in place.
pub fn round_json(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round_sig(x)) {
                    *n = r;
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_json),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt(-0.2581988897471611), "-0.258199");
        assert_eq!(fmt(1.0 / 3.0), "0.333333");
        assert_eq!(fmt(1.0), "1");
        assert_eq!(fmt(0.0), "0");
        assert_eq!(fmt(-0.0), "0");
        assert_eq!(fmt(123456789.0), "123457000");
        assert_eq!(fmt(0.19999999999999996), "0.2");
    }

    #[test]
    fn json_rounding_reaches_nested_values() {
        let mut v = serde_json::json!({"a": [0.123456789, 3], "b": {"c": 2.0000001}});
        round_json(&mut v);
        assert_eq!(v.to_string(), r#"{"a":[0.123457,3],"b":{"c":2.0}}"#);
    }
}
