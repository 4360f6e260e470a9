//! Parameter resolution and the structured error type.
//!
//! Precedence, lowest to highest: built-in defaults, preset, config file,
//! explicit flags. Config files are plain JSON objects whose keys mirror the
//! flag names; keys a command does not use are ignored so one file can serve
//! several commands.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ntp_bias_core::io::JsonObj;
use ntp_bias_core::CoreError;

pub enum CliError {
    Core(CoreError),
    Usage(String),
    BadConfig(String),
    Invariant(String),
}

impl CliError {
    fn class(&self) -> &'static str {
        match self {
            CliError::Core(CoreError::Io(_)) => "io",
            CliError::Core(CoreError::Json(_)) => "malformed-json",
            CliError::Core(CoreError::Undecided { .. }) => "undecided",
            CliError::Core(CoreError::NonFinite { .. }) => "non-finite",
            CliError::Core(_) => "invalid-input",
            CliError::Usage(_) => "usage",
            CliError::BadConfig(_) => "bad-config",
            CliError::Invariant(_) => "invariant",
        }
    }

    pub fn to_json(&self) -> String {
        JsonObj::new()
            .str("error", self.class())
            .str("message", &self.to_string())
            .render()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::BadConfig(m) | CliError::Invariant(m) => {
                write!(f, "{m}")
            }
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::Io(e))
    }
}

/// Flat key-value bag a preset or config file contributes to.
#[derive(Default)]
pub struct Overlay {
    values: BTreeMap<String, serde_json::Value>,
}

impl Overlay {
    pub fn set_u64(&mut self, key: &str, x: u64) {
        self.values.insert(key.into(), x.into());
    }

    pub fn set_f64(&mut self, key: &str, x: f64) {
        self.values
            .insert(key.into(), serde_json::Number::from_f64(x).unwrap().into());
    }

    pub fn set_str(&mut self, key: &str, s: &str) {
        self.values.insert(key.into(), s.into());
    }

    /// Folds a config file on top; the file must be a JSON object.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)?;
        let parsed: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Core(CoreError::Json(e)))?;
        let obj = parsed.as_object().ok_or_else(|| {
            CliError::BadConfig(format!("{}: top level must be a JSON object", path.display()))
        })?;
        for (k, v) in obj {
            self.values.insert(k.clone(), v.clone());
        }
        Ok(())
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|x| Some(x as usize))
                .ok_or_else(|| bad_type(key, "a nonnegative integer", v)),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| bad_type(key, "a nonnegative integer", v)),
        }
    }

    pub fn get_u32(&self, key: &str) -> Result<Option<u32>, CliError> {
        match self.get_u64(key)? {
            None => Ok(None),
            Some(x) => u32::try_from(x)
                .map(Some)
                .map_err(|_| CliError::BadConfig(format!("{key}: {x} does not fit in 32 bits"))),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| bad_type(key, "a number", v)),
        }
    }

    pub fn get_str(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| bad_type(key, "a string", v)),
        }
    }
}

fn bad_type(key: &str, want: &str, got: &serde_json::Value) -> CliError {
    CliError::BadConfig(format!("config key {key}: expected {want}, got {got}"))
}

/// Fills an overlay with a named bundle. `m50` is the 50-context reference
/// experiment (dense sampling, step 0.5, ten thousand steps); `d2` is the
/// planar miniature used for by-hand inspection.
pub fn apply_preset(name: &str, o: &mut Overlay) -> Result<(), CliError> {
    match name {
        "m50" => {
            o.set_u64("contexts", 50);
            o.set_u64("dim", 60);
            o.set_u64("vocab", 10);
            o.set_u64("support", 6);
            o.set_u64("samples", 5000);
            o.set_u64("seq_len", 3);
            o.set_str("algo", "gd");
            o.set_f64("eta", 0.5);
            o.set_u64("iters", 10_000);
            o.set_u64("record_every", 100);
        }
        "d2" => {
            o.set_u64("contexts", 3);
            o.set_u64("dim", 2);
            o.set_u64("vocab", 5);
            o.set_u64("support", 3);
            o.set_u64("samples", 1000);
            o.set_u64("seq_len", 3);
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown preset {other}; available: m50, d2"
            )))
        }
    }
    Ok(())
}
