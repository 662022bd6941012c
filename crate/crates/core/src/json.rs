//! Reproducible JSON: keys sorted, floats with 17 significant digits, non-finite floats
//! as `null`.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter};

struct FixedFloats;

impl Formatter for FixedFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_string<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        CompactFormatter.begin_string(writer)
    }
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    // Going through `Value` sorts object keys (its map is ordered).
    let value = serde_json::to_value(value)?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloats);
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sorted_keys_and_fixed_floats() {
        let text = to_canonical_json(&json!({"b": 0.1, "a": [1, 2.5], "c": null})).unwrap();
        assert_eq!(text, "{\"a\":[1,2.5000000000000000e0],\"b\":1.0000000000000001e-1,\"c\":null}\n");
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["b"].as_f64().unwrap(), 0.1);
    }

    #[test]
    fn floats_round_trip_exactly() {
        for v in [std::f64::consts::PI, 1e-300, -2.0f64.sqrt(), 123456789.0] {
            let text = to_canonical_json(&v).unwrap();
            assert_eq!(text.trim().parse::<f64>().unwrap(), v);
        }
        assert_eq!(to_canonical_json(&f64::NAN).unwrap(), "null\n");
    }
}
