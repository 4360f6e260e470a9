//! Serialization helpers shared by all file formats.
//!
//! Floats are written in scientific notation with 17 significant digits
//! (one leading digit plus 16 fractional), which is enough for every f64 to
//! round-trip bit-exactly through its text form and is valid JSON number
//! syntax. JSON objects are emitted by hand so the digit count is under our
//! control; reading goes through serde.

use sha2::{Digest, Sha256};

/// 17-significant-digit text form of a float. `NaN`/`inf` render as Rust's
/// default names; they are legal in the CSV outputs but must never reach a
/// JSON writer (callers guard with [`JsonObj::num`]).
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else {
        format!("{}", x)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{:02x}", b));
    }
    out
}

fn escape_json(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

/// Tiny insertion-ordered JSON object builder used by every writer.
#[derive(Default, Clone)]
pub struct JsonObj {
    parts: Vec<(String, String)>,
}

impl JsonObj {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a pre-rendered JSON fragment under `key`.
    pub fn raw(mut self, key: &str, rendered: impl Into<String>) -> Self {
        self.parts.push((key.to_string(), rendered.into()));
        self
    }

    pub fn num(self, key: &str, x: f64) -> Self {
        assert!(x.is_finite(), "non-finite {key} in json output");
        self.raw(key, fmt_f64(x))
    }

    pub fn int(self, key: &str, x: i64) -> Self {
        self.raw(key, x.to_string())
    }

    pub fn bool(self, key: &str, x: bool) -> Self {
        self.raw(key, x.to_string())
    }

    pub fn str(self, key: &str, s: &str) -> Self {
        self.raw(key, format!("\"{}\"", escape_json(s)))
    }

    pub fn num_array(self, key: &str, xs: &[f64]) -> Self {
        self.raw(key, render_num_array(xs))
    }

    pub fn int_array(self, key: &str, xs: &[u32]) -> Self {
        let body: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
        self.raw(key, format!("[{}]", body.join(",")))
    }

    pub fn render(&self) -> String {
        let body: Vec<String> = self
            .parts
            .iter()
            .map(|(k, v)| format!("\"{}\":{}", escape_json(k), v))
            .collect();
        format!("{{{}}}", body.join(","))
    }
}

pub fn render_num_array(xs: &[f64]) -> String {
    let body: Vec<String> = xs
        .iter()
        .map(|&x| {
            assert!(x.is_finite(), "non-finite value in json array");
            fmt_f64(x)
        })
        .collect();
    format!("[{}]", body.join(","))
}

/// Renders `[[row0],[row1],...]` for a row-major matrix dump.
pub fn render_num_matrix(rows: &[Vec<f64>]) -> String {
    let body: Vec<String> = rows.iter().map(|r| render_num_array(r)).collect();
    format!("[{}]", body.join(","))
}
