//! Pulls a single field out of free-form model output.
//!
//! Responses mix reasoning prose, markdown fences and a trailing JSON object.
//! Strict JSON objects are preferred; a looser `key: value` regex covers
//! single-quoted or unquoted values when no strict object carries the key.

use regex::Regex;
use serde_json::Value;

const MAX_DEPTH: usize = 64;

/// Value of `key` (ASCII case-insensitive) in the last JSON object that has
/// it. Non-string values are returned as their JSON text.
pub fn last_field(text: &str, key: &str) -> Option<String> {
    strict(text, key).or_else(|| loose(text, key))
}

fn strict(text: &str, key: &str) -> Option<String> {
    let bytes = text.as_bytes();
    let mut stack: Vec<usize> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    let mut best: Option<(usize, String)> = None;

    for (i, &b) in bytes.iter().enumerate() {
        if stack.is_empty() {
            if b == b'{' {
                stack.push(i);
            }
            continue;
        }
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => {
                if stack.len() >= MAX_DEPTH {
                    stack.clear();
                } else {
                    stack.push(i);
                }
            }
            b'}' => {
                let start = stack.pop().expect("non-empty stack");
                if let Some(v) = field_of(&text[start..=i], key) {
                    if best.as_ref().is_none_or(|(s, _)| start > *s) {
                        best = Some((start, v));
                    }
                }
            }
            _ => {}
        }
    }
    best.map(|(_, v)| v)
}

fn field_of(candidate: &str, key: &str) -> Option<String> {
    let Ok(Value::Object(map)) = serde_json::from_str::<Value>(candidate) else {
        return None;
    };
    let (_, value) = map.iter().rev().find(|(k, _)| k.trim().eq_ignore_ascii_case(key))?;
    Some(match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    })
}

fn loose(text: &str, key: &str) -> Option<String> {
    let re = Regex::new(&format!(
        r#"(?i)\{{[^{{}}]*?["']?{}["']?\s*:\s*["']?([^"'{{}},\n]*?)["']?\s*[}},]"#,
        regex::escape(key)
    ))
    .expect("valid field regex");
    re.captures_iter(text)
        .last()
        .map(|c| c[1].trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_last_object() {
        let text = r#"First {"pattern": "Direct"} then after thought {"pattern": "Chain"}"#;
        assert_eq!(last_field(text, "pattern").as_deref(), Some("Chain"));
    }

    #[test]
    fn case_insensitive_key_and_fences() {
        let text = "Reasoning...\n```json\n{\"Pattern\": \"Fork\"}\n```\n";
        assert_eq!(last_field(text, "pattern").as_deref(), Some("Fork"));
        assert_eq!(last_field(r#"{"answer": "yes"}"#, "Answer").as_deref(), Some("yes"));
    }

    #[test]
    fn ignores_objects_without_key() {
        let text = r#"{"pattern": "Collider"} and {"note": "x"}"#;
        assert_eq!(last_field(text, "pattern").as_deref(), Some("Collider"));
    }

    #[test]
    fn braces_inside_strings() {
        let text = r#"{"pattern": "Direct", "why": "a } b {"}"#;
        assert_eq!(last_field(text, "pattern").as_deref(), Some("Direct"));
    }

    #[test]
    fn loose_fallback() {
        assert_eq!(last_field("{'pattern': 'Chain'}", "pattern").as_deref(), Some("Chain"));
        assert_eq!(last_field("{pattern: No}", "pattern").as_deref(), Some("No"));
        assert_eq!(last_field("I am not sure.", "pattern"), None);
        assert_eq!(last_field("{{{{{{", "pattern"), None);
    }

    #[test]
    fn non_string_value() {
        assert_eq!(last_field(r#"{"pattern": 3}"#, "pattern").as_deref(), Some("3"));
    }
}
