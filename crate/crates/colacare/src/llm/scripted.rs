//! Deterministic scripted chat provider.
//!
//! A script is a JSON list of rules: `[{"match": {"tag": ..., "ordinal"?:
//! ..., "pattern"?: ...}, "response": ...}, ...]`. For each call the
//! provider takes the per-tag call ordinal (0-based, counted within this
//! provider instance) and answers with the first rule whose tag matches and
//! whose ordinal (if given) equals the call ordinal and whose pattern (if
//! given) occurs as a substring of the system+user prompt. Token counts use
//! the ⌈chars/4⌉ approximation and latency is always 0, so pipeline runs
//! replaying a script are bit-reproducible.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{approx_tokens, ChatProvider, ChatRequest, ChatResponse, RequestTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchSpec {
    pub tag: RequestTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub match_spec: MatchSpec,
    pub response: String,
}

/// A parsed script with rules grouped by tag (rule order preserved).
#[derive(Debug, Default)]
pub struct Script {
    by_tag: HashMap<RequestTag, Vec<ScriptRule>>,
}

impl Script {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        let mut by_tag: HashMap<RequestTag, Vec<ScriptRule>> = HashMap::new();
        for rule in rules {
            by_tag.entry(rule.match_spec.tag).or_default().push(rule);
        }
        Script { by_tag }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let rules: Vec<ScriptRule> = serde_json::from_str(&text)
            .map_err(|e| Error::schema(&path.display().to_string(), e.to_string()))?;
        Ok(Script::new(rules))
    }

    pub fn save(rules: &[ScriptRule], path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(rules)?)?;
        Ok(())
    }

    fn find(&self, tag: RequestTag, ordinal: usize, prompt: &str) -> Option<&str> {
        self.by_tag.get(&tag)?.iter().find_map(|rule| {
            let m = &rule.match_spec;
            if let Some(o) = m.ordinal {
                if o != ordinal {
                    return None;
                }
            }
            if let Some(p) = &m.pattern {
                if !prompt.contains(p.as_str()) {
                    return None;
                }
            }
            Some(rule.response.as_str())
        })
    }
}

/// One replay session over a shared script. Per-tag ordinals start at zero
/// for every new provider instance.
pub struct ScriptedProvider {
    script: Arc<Script>,
    counters: Mutex<HashMap<RequestTag, usize>>,
}

impl ScriptedProvider {
    pub fn new(script: Arc<Script>) -> Self {
        ScriptedProvider { script, counters: Mutex::new(HashMap::new()) }
    }

    pub fn from_rules(rules: Vec<ScriptRule>) -> Self {
        Self::new(Arc::new(Script::new(rules)))
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let ordinal = {
            let mut counters = self.counters.lock().unwrap();
            let c = counters.entry(request.tag).or_insert(0);
            let o = *c;
            *c += 1;
            o
        };
        let prompt = format!("{}\n{}", request.system_prompt, request.user_prompt);
        let text = self
            .script
            .find(request.tag, ordinal, &prompt)
            .ok_or_else(|| {
                Error::Protocol(format!(
                    "no scripted response for tag '{}' at ordinal {ordinal}",
                    request.tag.as_str()
                ))
            })?
            .to_string();
        Ok(ChatResponse {
            input_tokens: approx_tokens(&request.system_prompt)
                + approx_tokens(&request.user_prompt),
            output_tokens: approx_tokens(&text),
            text,
            provider_reported: false,
            latency_ms: 0,
        })
    }
}

/// Convenience for tests: a rule answering every call with the given tag.
pub fn tag_rule(tag: RequestTag, response: &str) -> ScriptRule {
    ScriptRule {
        match_spec: MatchSpec { tag, ordinal: None, pattern: None },
        response: response.to_string(),
    }
}

/// Convenience for tests: a rule answering one specific call ordinal.
pub fn ordinal_rule(tag: RequestTag, ordinal: usize, response: &str) -> ScriptRule {
    ScriptRule {
        match_spec: MatchSpec { tag, ordinal: Some(ordinal), pattern: None },
        response: response.to_string(),
    }
}

/// Convenience for tests: a rule gated on a prompt substring.
pub fn pattern_rule(tag: RequestTag, pattern: &str, response: &str) -> ScriptRule {
    ScriptRule {
        match_spec: MatchSpec { tag, ordinal: None, pattern: Some(pattern.to_string()) },
        response: response.to_string(),
    }
}
