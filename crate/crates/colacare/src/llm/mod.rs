//! Chat-completion provider abstraction with token and cost accounting.
//!
//! Two providers: an OpenAI-compatible HTTP client ([`http::HttpProvider`])
//! and a deterministic scripted provider for offline runs and tests
//! ([`scripted::ScriptedProvider`]). When a provider does not report usage,
//! token counts fall back to ⌈chars/4⌉.

pub mod http;
pub mod scripted;

pub use http::HttpProvider;
pub use scripted::{Script, ScriptRule, ScriptedProvider};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Which prompt of the consultation protocol a request carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestTag {
    DoctorReview,
    DoctorStatement,
    MetaReport,
    MetaAction,
    MetaRevision,
    LlmOutputVariant,
}

impl RequestTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            RequestTag::DoctorReview => "doctor_review",
            RequestTag::DoctorStatement => "doctor_statement",
            RequestTag::MetaReport => "meta_report",
            RequestTag::MetaAction => "meta_action",
            RequestTag::MetaRevision => "meta_revision",
            RequestTag::LlmOutputVariant => "llm_output_variant",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub tag: RequestTag,
}

impl ChatRequest {
    pub fn new(tag: RequestTag, system_prompt: String, user_prompt: String) -> Self {
        ChatRequest {
            system_prompt,
            user_prompt,
            temperature: 0.0,
            max_output_tokens: 1024,
            tag,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// True when the token counts came from provider usage rather than the
    /// ⌈chars/4⌉ approximation.
    pub provider_reported: bool,
    pub latency_ms: u64,
}

/// ⌈chars/4⌉ token approximation (Unicode scalar count).
pub fn approx_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// A chat-completion backend. Implementations must be safe to call from
/// multiple threads.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse>;
}

/// Builds fresh provider instances so concurrent consultations never share
/// mutable provider state (the scripted provider's per-tag ordinals restart
/// for every session).
pub trait ProviderFactory: Send + Sync {
    fn provider(&self) -> Box<dyn ChatProvider>;
}

/// Factory over a shared script; each session replays it from ordinal zero.
pub struct ScriptedFactory(pub Arc<Script>);

impl ProviderFactory for ScriptedFactory {
    fn provider(&self) -> Box<dyn ChatProvider> {
        Box::new(ScriptedProvider::new(Arc::clone(&self.0)))
    }
}

/// Factory over a shared (stateless) HTTP provider.
pub struct HttpFactory(pub Arc<HttpProvider>);

impl ProviderFactory for HttpFactory {
    fn provider(&self) -> Box<dyn ChatProvider> {
        Box::new(SharedProvider(Arc::clone(&self.0)))
    }
}

struct SharedProvider(Arc<HttpProvider>);

impl ChatProvider for SharedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        self.0.complete(request)
    }
}

/// Prices per 1K tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl Default for Pricing {
    fn default() -> Self {
        // 0.14 / 0.28 per million tokens.
        Pricing { input_per_1k: 0.00014, output_per_1k: 0.00028 }
    }
}

/// Token and call counters for one tag or role.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    fn add(&mut self, response: &ChatResponse) {
        self.calls += 1;
        self.input_tokens += response.input_tokens;
        self.output_tokens += response.output_tokens;
    }

    fn merge(&mut self, other: &Usage) {
        self.calls += other.calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }

    pub fn avg_input(&self) -> f64 {
        if self.calls == 0 { 0.0 } else { self.input_tokens as f64 / self.calls as f64 }
    }

    pub fn avg_output(&self) -> f64 {
        if self.calls == 0 { 0.0 } else { self.output_tokens as f64 / self.calls as f64 }
    }
}

/// Per-tag and per-role token sums with configured prices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub per_tag: BTreeMap<String, Usage>,
    pub per_role: BTreeMap<String, Usage>,
    pub pricing: Pricing,
}

impl CostLedger {
    pub fn new(pricing: Pricing) -> Self {
        CostLedger { per_tag: BTreeMap::new(), per_role: BTreeMap::new(), pricing }
    }

    /// Accumulates one exchange under the given agent role.
    pub fn record(&mut self, role: &str, request: &ChatRequest, response: &ChatResponse) {
        self.per_tag.entry(request.tag.as_str().to_string()).or_default().add(response);
        self.per_role.entry(role.to_string()).or_default().add(response);
    }

    /// Folds another ledger into this one (prices must already agree).
    pub fn merge(&mut self, other: &CostLedger) {
        for (tag, usage) in &other.per_tag {
            self.per_tag.entry(tag.clone()).or_default().merge(usage);
        }
        for (role, usage) in &other.per_role {
            self.per_role.entry(role.clone()).or_default().merge(usage);
        }
    }

    pub fn totals(&self) -> Usage {
        let mut total = Usage::default();
        for usage in self.per_tag.values() {
            total.merge(usage);
        }
        total
    }

    /// Cost in configured currency: tokens/1000 × price per 1K.
    pub fn cost(&self) -> f64 {
        let t = self.totals();
        t.input_tokens as f64 / 1000.0 * self.pricing.input_per_1k
            + t.output_tokens as f64 / 1000.0 * self.pricing.output_per_1k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn response(input: u64, output: u64) -> ChatResponse {
        ChatResponse {
            text: String::new(),
            input_tokens: input,
            output_tokens: output,
            provider_reported: false,
            latency_ms: 0,
        }
    }

    #[test]
    fn approx_is_ceil_chars_over_four() {
        assert_eq!(approx_tokens("12345678"), 2);
        assert_eq!(approx_tokens("123456789"), 3);
        assert_eq!(approx_tokens(""), 0);
    }

    #[test]
    fn ledger_role_averages() {
        let mut ledger = CostLedger::new(Pricing::default());
        let req = ChatRequest::new(RequestTag::DoctorReview, "s".into(), "u".into());
        ledger.record("doctor_0", &req, &response(100, 50));
        ledger.record("doctor_0", &req, &response(100, 50));
        let usage = ledger.per_role["doctor_0"];
        assert_eq!(usage.avg_input(), 100.0);
        assert_eq!(usage.avg_output(), 50.0);
        assert_eq!(usage.calls, 2);
    }

    #[test]
    fn ledger_cost_arithmetic() {
        // 0.14/0.28 per 1M tokens, 1M input + 0.5M output => 0.28 total.
        let mut ledger = CostLedger::new(Pricing::default());
        let req = ChatRequest::new(RequestTag::MetaReport, "s".into(), "u".into());
        ledger.record("meta", &req, &response(1_000_000, 500_000));
        assert!((ledger.cost() - 0.28).abs() < 1e-12);
    }

    #[test]
    fn empty_ledger_zero_totals() {
        let ledger = CostLedger::new(Pricing::default());
        assert_eq!(ledger.totals(), Usage::default());
        assert_eq!(ledger.cost(), 0.0);
    }

    #[test]
    fn totals_equal_per_tag_sum() {
        let mut ledger = CostLedger::new(Pricing::default());
        let r1 = ChatRequest::new(RequestTag::DoctorReview, "s".into(), "u".into());
        let r2 = ChatRequest::new(RequestTag::MetaReport, "s".into(), "u".into());
        ledger.record("doctor_0", &r1, &response(10, 3));
        ledger.record("meta", &r2, &response(7, 2));
        let t = ledger.totals();
        assert_eq!(t.input_tokens, 17);
        assert_eq!(t.output_tokens, 5);
        assert_eq!(t.calls, 2);
    }
}
