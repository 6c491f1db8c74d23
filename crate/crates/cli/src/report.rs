use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

/// Significant digits kept for every float in a report.
pub const DIGITS: usize = 12;

/// Rounds every float to [`DIGITS`] significant digits; non-finite values
/// become strings.
pub fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            // Adding zero also folds -0.0 into 0.0.
            let r: f64 = format!("{:.*e}", DIGITS - 1, x).parse::<f64>().expect("formatted float parses") + 0.0;
            serde_json::Number::from_f64(r).map(Value::Number).unwrap_or_else(|| Value::String(r.to_string()))
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round_floats).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

/// serde_json turns non-finite floats into `null`; keep them visible.
pub fn float(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::String(x.to_string())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Input files read during a run, in order.
#[derive(Default)]
pub struct Inputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Inputs {
    pub fn read(&mut self, path: &Path) -> Result<String, String> {
        let bytes = std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| format!("{} is not UTF-8", path.display()))?;
        self.files.push((path.to_path_buf(), bytes));
        Ok(text)
    }

    /// SHA-256 over the length-prefixed file contents.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (_, bytes) in &self.files {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        }
        hex(&h.finalize())
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.files
                .iter()
                .map(|(p, b)| json!({ "path": p.display().to_string(), "sha256": hex(&Sha256::digest(b)) }))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    VerdictFailure,
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::VerdictFailure => 2,
            Status::Error => 1,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::VerdictFailure => "verdict-failure",
            Status::Error => "error",
        }
    }
}

pub struct Report {
    pub command: String,
    pub config: Value,
    pub status: Status,
    pub result: Value,
    pub error: Option<(String, String)>,
}

impl Report {
    pub fn to_json(&self, inputs: &Inputs) -> Value {
        let mut m = Map::new();
        m.insert("command".into(), json!(self.command));
        m.insert("config".into(), self.config.clone());
        m.insert("inputs".into(), inputs.to_json());
        m.insert("inputs_digest".into(), json!(inputs.digest()));
        m.insert("status".into(), json!(self.status.label()));
        m.insert("result".into(), self.result.clone());
        if let Some((code, message)) = &self.error {
            m.insert("error".into(), json!({ "code": code, "message": message }));
        }
        m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        round_floats(Value::Object(m))
    }

    pub fn emit(&self, inputs: &Inputs, out: Option<&Path>) -> Result<(), String> {
        let mut text = serde_json::to_string_pretty(&self.to_json(inputs)).expect("report serializes");
        text.push('\n');
        match out {
            Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
            None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| format!("cannot write report: {e}")),
        }
    }
}
