//! Discharge tool-call extraction.
//!
//! The wire format is a JSON object naming the tool and carrying
//! `diagnosis` and `codes`, inline or in a code fence:
//!
//! ```text
//! {"tool": "discharge_text_tool", "diagnosis": "Ludwig's angina", "codes": "K12.2"}
//! ```
//!
//! The extractor is tolerant of what models actually emit: the tool name
//! may sit under `tool`, `name`, `tool_name`, `function` or `request`, the
//! fields may be nested under `arguments`/`parameters` (also as a JSON
//! string), and `codes` may be an array.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::OrchestratorError;
use crate::icd10::{parse_code_list, Icd10Code};

pub const TOOL_DIALOGUE: &str = "discharge_text_tool";
pub const TOOL_BASELINE: &str = "baseline_discharge_text_tool";

const NAME_KEYS: [&str; 5] = ["tool", "name", "tool_name", "function", "request"];
const NESTED_KEYS: [&str; 6] = ["arguments", "parameters", "args", "input", "dischargetext", "discharge_text"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DischargeText {
    pub diagnosis: String,
    pub codes_raw: String,
    pub codes: Vec<Icd10Code>,
}

impl DischargeText {
    /// Builds from form fields; both must be non-empty after trimming.
    pub fn new(diagnosis: &str, codes: &str) -> Result<Self, OrchestratorError> {
        let diagnosis = diagnosis.trim();
        let codes_raw = clean_codes(codes);
        if diagnosis.is_empty() {
            return Err(OrchestratorError::EmptyField("diagnosis"));
        }
        if codes_raw.is_empty() {
            return Err(OrchestratorError::EmptyField("codes"));
        }
        Ok(Self { diagnosis: diagnosis.to_string(), codes: parse_code_list(&codes_raw), codes_raw })
    }

    /// The canonical tool-call message for this discharge.
    pub fn to_tool_message(&self, tool: &str) -> String {
        serde_json::json!({ "tool": tool, "diagnosis": self.diagnosis, "codes": self.codes_raw }).to_string()
    }
}

fn clean_codes(s: &str) -> String {
    s.chars().filter(|c| !matches!(c, '[' | ']')).collect::<String>().trim().to_string()
}

fn get_ci<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(_, v)| v)
}

fn names_tool(obj: &Map<String, Value>, tool: &str) -> bool {
    NAME_KEYS.iter().any(|k| {
        get_ci(obj, k).and_then(Value::as_str).is_some_and(|name| name.trim().eq_ignore_ascii_case(tool))
    })
}

fn as_text(v: &Value, sep: &str) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => Some(
            items
                .iter()
                .filter_map(|i| match i {
                    Value::String(s) => Some(s.clone()),
                    Value::Number(n) => Some(n.to_string()),
                    _ => None,
                })
                .collect::<Vec<_>>()
                .join(sep),
        ),
        _ => None,
    }
}

fn field(obj: &Map<String, Value>, key: &str, sep: &str) -> Option<String> {
    if let Some(v) = get_ci(obj, key) {
        return as_text(v, sep);
    }
    NESTED_KEYS.iter().find_map(|nk| match get_ci(obj, nk)? {
        Value::Object(inner) => get_ci(inner, key).and_then(|v| as_text(v, sep)),
        Value::String(s) => match serde_json::from_str::<Value>(s).ok()? {
            Value::Object(inner) => get_ci(&inner, key).and_then(|v| as_text(v, sep)),
            _ => None,
        },
        _ => None,
    })
}

/// The first JSON object naming `tool`, with its byte span. The discharge
/// is `None` when that object lacks a usable diagnosis or codes field.
fn find(message: &str, tool: &str) -> Option<(Option<DischargeText>, Range<usize>)> {
    for (pos, _) in message.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&message[pos..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else {
            continue;
        };
        if !names_tool(&obj, tool) {
            continue;
        }
        let span = pos..pos + stream.byte_offset();
        let discharge = match (field(&obj, "diagnosis", "; "), field(&obj, "codes", ", ")) {
            (Some(d), Some(c)) => DischargeText::new(&d, &c).ok(),
            _ => None,
        };
        return Some((discharge, span));
    }
    None
}

/// The discharge text from the first structured object naming
/// `expected_tool`, or `None` if absent or incomplete.
pub fn extract_tool_call(message: &str, expected_tool: &str) -> Option<DischargeText> {
    find(message, expected_tool).and_then(|(d, _)| d)
}

/// The message with the tool-call object (and any code fence around it)
/// removed, for showing to the other participant.
pub fn strip_tool_call(message: &str, expected_tool: &str) -> String {
    let Some((_, span)) = find(message, expected_tool) else {
        return message.trim().to_string();
    };
    let mut before = message[..span.start].trim_end();
    let mut after = message[span.end..].trim_start();
    if let Some(fence) = before.rfind("```") {
        let tag = &before[fence + 3..];
        if tag.chars().all(|c| c.is_ascii_alphanumeric()) && after.starts_with("```") {
            before = before[..fence].trim_end();
            after = after[3..].trim_start();
        }
    }
    match (before.is_empty(), after.is_empty()) {
        (true, _) => after.to_string(),
        (_, true) => before.to_string(),
        _ => format!("{before}\n{after}"),
    }
}

/// Whether a message appears to attempt a discharge, so that a failed
/// extraction deserves a corrective nudge rather than a dialogue reply.
pub fn looks_terminal(message: &str, expected_tool: &str) -> bool {
    let lower = message.to_lowercase();
    lower.contains(expected_tool)
        || lower.contains("dischargetext")
        || lower.contains("discharge_text")
        || (lower.contains('{') && lower.contains("diagnosis") && lower.contains("codes"))
}
