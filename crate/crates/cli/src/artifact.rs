//! Artifact envelope and the fixed-precision JSON writer.

use std::io::{self, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::CliError;

pub const TOOL: &str = "sfbubble";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Compact JSON with every float printed as `{:.16e}` (17 significant digits).
struct FixedFloat;

impl serde_json::ser::Formatter for FixedFloat {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
}

pub fn to_json_string(value: &Value) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloat);
    value.serialize(&mut ser).expect("serializing a JSON value cannot fail");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// One named check: `value < tol` (or a plain flag).
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub tol: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn below(name: &str, value: f64, tol: f64) -> Check {
        Check { name: name.into(), value: Some(value), tol: Some(tol), pass: value.is_finite() && value < tol }
    }

    pub fn flag(name: &str, pass: bool) -> Check {
        Check { name: name.into(), value: None, tol: None, pass }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

/// Run context: timer, seed, config echo, and whether wall time is recorded.
pub struct Run {
    pub started: Instant,
    pub seed: u64,
    pub config: Value,
    pub record_wall_time: bool,
}

impl Run {
    pub fn meta(&self) -> Value {
        let wall = if self.record_wall_time { json!(self.started.elapsed().as_secs_f64()) } else { Value::Null };
        json!({
            "tool": TOOL,
            "version": VERSION,
            "config": self.config,
            "seed": self.seed,
            "wall_time_s": wall,
        })
    }

    /// `{meta, checks, pass, ...body}` with the body's keys at top level.
    pub fn envelope(&self, checks: &[Check], body: Value) -> Value {
        let mut out = Map::new();
        out.insert("meta".into(), self.meta());
        out.insert("pass".into(), json!(all_pass(checks)));
        out.insert("checks".into(), serde_json::to_value(checks).unwrap());
        match body {
            Value::Object(m) => out.extend(m),
            other => {
                out.insert("result".into(), other);
            }
        }
        Value::Object(out)
    }

    /// `#`-prefixed header lines for CSV artifacts.
    pub fn csv_header(&self) -> String {
        let meta = self.meta();
        format!(
            "# {TOOL} {VERSION}\n# config {}\n# seed {}\n# wall_time_s {}\n",
            to_json_string(&meta["config"]),
            self.seed,
            to_json_string(&meta["wall_time_s"])
        )
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut s = to_json_string(value);
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        let v = json!({"a": 0.1, "b": [1.0, -2.5e-300], "n": 3, "x": std::f64::consts::PI});
        let s = to_json_string(&v);
        assert_eq!(s, r#"{"a":1.0000000000000001e-1,"b":[1.0000000000000000e0,-2.5000000000000000e-300],"n":3,"x":3.1415926535897931e0}"#);
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
        assert_eq!(back["x"].as_f64(), Some(std::f64::consts::PI));
    }

    #[test]
    fn checks() {
        assert!(Check::below("a", 1e-9, 1e-8).pass);
        assert!(!Check::below("a", f64::NAN, 1e-8).pass);
        assert!(!all_pass(&[Check::flag("x", true), Check::flag("y", false)]));
    }
}
