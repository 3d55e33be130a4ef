use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed generation: {raw:?}")]
pub struct MalformedGeneration {
    pub raw: String,
}

fn strip_fences(raw: &str) -> &str {
    let s = raw.trim();
    let Some(rest) = s.strip_prefix("```") else {
        return s;
    };
    let body = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    let body = body.trim_end();
    body.strip_suffix("```").unwrap_or(body).trim()
}

/// Finds the first well-formed JSON object in `raw`, ignoring code fences and
/// any prose before or after it.
pub fn extract_json_object(raw: &str) -> Option<Map<String, Value>> {
    let body = strip_fences(raw);
    let mut from = 0;
    while let Some(off) = body[from..].find('{') {
        let start = from + off;
        let mut stream = serde_json::Deserializer::from_str(&body[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
        from = start + 1;
    }
    None
}

fn value_to_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().filter_map(value_to_text).collect();
            Some(parts.join(", "))
        }
        Value::Null | Value::Object(_) => None,
    }
}

/// Returns the value stored under `required_key` in the first JSON object of a
/// generation, coerced to text. The key match falls back to case-insensitive.
pub fn extract_json_response(raw: &str, required_key: &str) -> Result<String, MalformedGeneration> {
    let malformed = || MalformedGeneration {
        raw: raw.to_string(),
    };
    let map = extract_json_object(raw).ok_or_else(malformed)?;
    let value = map.get(required_key).or_else(|| {
        map.iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(required_key))
            .map(|(_, v)| v)
    });
    value.and_then(value_to_text).ok_or_else(malformed)
}

/// Reads an information-gain score from judge output. Accepts an optional
/// `Information Gain:` prefix; the score must be an integer in 0..=10.
pub fn parse_judge_score(raw: &str) -> Option<u8> {
    let mut s = strip_fences(raw);
    if let Some(idx) = s.to_ascii_lowercase().find("information gain:") {
        s = &s[idx + "information gain:".len()..];
    }
    let token = s
        .split(|c: char| c.is_whitespace() || c == ',')
        .find(|t| !t.is_empty())?;
    let token = token.trim_end_matches(['.', ')']);
    let value: f64 = token.parse().ok()?;
    if value.fract() != 0.0 || !(0.0..=10.0).contains(&value) {
        return None;
    }
    Some(value as u8)
}
