//! Newline-delimited measurement records.

use std::io::Write;

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub name: String,
    pub config: Value,
    pub value: Option<f64>,
    pub unit: String,
}

impl Record {
    pub fn new(name: impl Into<String>, config: Value, value: f64, unit: impl Into<String>) -> Self {
        Record {
            name: name.into(),
            config,
            value: value.is_finite().then_some(value),
            unit: unit.into(),
        }
    }
}

/// Writes one JSON object per line.
pub struct RecordSink {
    out: Box<dyn Write>,
}

impl RecordSink {
    pub fn new(out: Box<dyn Write>) -> Self {
        RecordSink { out }
    }

    pub fn stdout() -> Self {
        Self::new(Box::new(std::io::stdout()))
    }

    pub fn emit(&mut self, r: &Record) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, r)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn undefined_values_serialize_as_null() {
        let r = Record::new("wa", json!({"runs": 2}), f64::NAN, "ratio");
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"name":"wa","config":{"runs":2},"value":null,"unit":"ratio"}"#);
    }
}
