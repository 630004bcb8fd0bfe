//! Lenient parsing of agent replies: strict JSON first, then the first
//! balanced JSON object found in the text.

use serde_json::Value;

use super::{EvidenceRef, MetaAction, MetaReport, Risk, Vote};

/// Extracts the first balanced JSON object from free-form text.
pub fn extract_json(text: &str) -> Option<Value> {
    if let Ok(v) = serde_json::from_str::<Value>(text.trim()) {
        if v.is_object() {
            return Some(v);
        }
    }
    let bytes: Vec<char> = text.chars().collect();
    let mut search_from = 0usize;
    while let Some(start) = bytes[search_from..].iter().position(|&c| c == '{') {
        let start = search_from + start;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (offset, &c) in bytes[start..].iter().enumerate() {
            if in_string {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == '"' {
                    in_string = false;
                }
                continue;
            }
            match c {
                '"' => in_string = true,
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        let candidate: String = bytes[start..=start + offset].iter().collect();
                        if let Ok(v) = serde_json::from_str::<Value>(&candidate) {
                            return Some(v);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        search_from = start + 1;
    }
    None
}

fn string_field(v: &Value, keys: &[&str]) -> Option<String> {
    keys.iter().find_map(|k| v.get(k).and_then(Value::as_str).map(str::to_string))
}

fn id_list(v: &Value, key: &str) -> Vec<String> {
    v.get(key)
        .and_then(Value::as_array)
        .map(|xs| xs.iter().filter_map(Value::as_str).map(str::to_string).collect())
        .unwrap_or_default()
}

pub struct ParsedReview {
    pub reason: String,
    pub evidence_ids: Vec<String>,
    pub parse_failed: bool,
}

/// Round-0 review: reason plus cited ids; an unparseable reply keeps the raw
/// text as the reason.
pub fn doctor_review(text: &str) -> ParsedReview {
    match extract_json(text) {
        Some(v) => ParsedReview {
            reason: string_field(&v, &["reason", "review"]).unwrap_or_else(|| text.to_string()),
            evidence_ids: id_list(&v, "evidence_ids"),
            parse_failed: false,
        },
        None => ParsedReview {
            reason: text.to_string(),
            evidence_ids: Vec::new(),
            parse_failed: true,
        },
    }
}

pub struct ParsedStatement {
    pub vote: Vote,
    pub reason: String,
    pub evidence_ids: Vec<String>,
}

/// Round ≥ 1 statement; `None` when no valid vote can be extracted.
pub fn doctor_statement(text: &str) -> Option<ParsedStatement> {
    let v = extract_json(text)?;
    let vote = match string_field(&v, &["vote"])?.to_lowercase().as_str() {
        "agree" => Vote::Agree,
        "disagree" => Vote::Disagree,
        _ => return None,
    };
    Some(ParsedStatement {
        vote,
        reason: string_field(&v, &["reason"]).unwrap_or_default(),
        evidence_ids: id_list(&v, "evidence_ids"),
    })
}

/// Meta report envelope; `None` when the risk field is missing or invalid.
pub fn meta_report(text: &str, round: usize) -> Option<MetaReport> {
    let v = extract_json(text)?;
    let risk = match string_field(&v, &["risk"])?.to_lowercase().as_str() {
        "high" => Risk::High,
        "low" => Risk::Low,
        _ => return None,
    };
    let incorporated_evidence = v
        .get("evidence")
        .and_then(Value::as_array)
        .map(|xs| {
            xs.iter()
                .filter_map(|e| {
                    Some(EvidenceRef {
                        doctor: e.get("doctor")?.as_u64()? as usize,
                        chunk: e.get("chunk")?.as_str()?.to_string(),
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    Some(MetaReport {
        round,
        risk,
        narrative: string_field(&v, &["narrative", "report"]).unwrap_or_default(),
        incorporated_evidence,
        parse_failed: false,
    })
}

/// Action envelope; `None` when unparseable.
pub fn meta_action(text: &str) -> Option<MetaAction> {
    let v = extract_json(text)?;
    match string_field(&v, &["action"])?.to_lowercase().as_str() {
        "continue" => Some(MetaAction::Continue),
        "stop" => Some(MetaAction::Stop),
        _ => None,
    }
}

/// First decimal literal in [0,1] anywhere in the text.
pub fn first_decimal_in_unit_interval(text: &str) -> Option<f64> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_ascii_digit() || (chars[i] == '.' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit()) {
            let start = i;
            let mut seen_dot = false;
            while i < chars.len()
                && (chars[i].is_ascii_digit() || (chars[i] == '.' && !seen_dot))
            {
                if chars[i] == '.' {
                    seen_dot = true;
                }
                i += 1;
            }
            let token: String = chars[start..i].iter().collect();
            if let Ok(x) = token.trim_end_matches('.').parse::<f64>() {
                if (0.0..=1.0).contains(&x) {
                    return Some(x);
                }
            }
        } else {
            i += 1;
        }
    }
    None
}
