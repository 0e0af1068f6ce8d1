//! Structured summary printed on stdout after a subcommand succeeds.

use clap::ValueEnum;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    /// `key: value` lines, nested keys joined with dots.
    Text,
    /// One JSON object.
    Json,
}

pub struct Reporter {
    format: ReportFormat,
    fields: Map<String, Value>,
}

impl Reporter {
    pub fn new(format: ReportFormat) -> Self {
        Self {
            format,
            fields: Map::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.fields.insert(key.to_string(), value);
    }

    /// Insert every field of a JSON object.
    pub fn merge(&mut self, value: Value) {
        if let Value::Object(m) = value {
            self.fields.extend(m);
        }
    }

    pub fn render(&self) -> String {
        match self.format {
            ReportFormat::Json => {
                serde_json::to_string_pretty(&Value::Object(self.fields.clone()))
                    .expect("JSON values serialize")
                    + "\n"
            }
            ReportFormat::Text => {
                let mut out = String::new();
                for (k, v) in &self.fields {
                    flatten(k, v, &mut out);
                }
                out
            }
        }
    }

    pub fn finish(self) {
        print!("{}", self.render());
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        Value::Array(items) if items.iter().any(|i| i.is_object()) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), v, out);
            }
        }
        Value::String(s) => out.push_str(&format!("{prefix}: {s}\n")),
        other => out.push_str(&format!("{prefix}: {other}\n")),
    }
}
