//! Per-model usage counters and USD cost estimation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelUsage {
    /// Calls that reached the backend and succeeded.
    pub calls: u64,
    pub cached_hits: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub retries: u64,
    pub failures: u64,
}

#[derive(Debug, Default)]
pub struct CostLedger {
    usage: Mutex<BTreeMap<String, ModelUsage>>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn update(&self, model: &str, f: impl FnOnce(&mut ModelUsage)) {
        let mut usage = self.usage.lock().unwrap();
        f(usage.entry(model.to_owned()).or_default());
    }

    pub fn record_call(&self, model: &str, input_tokens: u64, output_tokens: u64, retries: u32) {
        self.update(model, |u| {
            u.calls += 1;
            u.input_tokens += input_tokens;
            u.output_tokens += output_tokens;
            u.retries += u64::from(retries);
        });
    }

    pub fn record_cached(&self, model: &str) {
        self.update(model, |u| u.cached_hits += 1);
    }

    pub fn record_failure(&self, model: &str, retries: u32) {
        self.update(model, |u| {
            u.failures += 1;
            u.retries += u64::from(retries);
        });
    }

    pub fn snapshot(&self) -> BTreeMap<String, ModelUsage> {
        self.usage.lock().unwrap().clone()
    }

    pub fn report(&self, pricing: &Pricing) -> CostReport {
        CostReport::from_usage(&self.snapshot(), pricing)
    }
}

/// USD per 1000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pricing {
    pub rates: BTreeMap<String, Rate>,
}

pub const DEFAULT_STRONG_MODEL: &str = "gpt-4";
pub const DEFAULT_CHEAP_MODEL: &str = "gpt-3.5-turbo";

impl Default for Pricing {
    fn default() -> Self {
        let mut rates = BTreeMap::new();
        rates.insert(
            DEFAULT_STRONG_MODEL.to_owned(),
            Rate {
                input_per_1k: 0.03,
                output_per_1k: 0.06,
            },
        );
        rates.insert(
            DEFAULT_CHEAP_MODEL.to_owned(),
            Rate {
                input_per_1k: 0.0015,
                output_per_1k: 0.002,
            },
        );
        Self { rates }
    }
}

impl Pricing {
    pub fn empty() -> Self {
        Self { rates: BTreeMap::new() }
    }

    pub fn with_rate(mut self, model: &str, rate: Rate) -> Self {
        self.rates.insert(model.to_owned(), rate);
        self
    }

    pub fn rate(&self, model: &str) -> Option<Rate> {
        self.rates.get(model).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub model: String,
    #[serde(flatten)]
    pub usage: ModelUsage,
    pub cost_usd: f64,
    /// False when no rate is configured for the model; its cost is then 0.
    pub priced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub models: Vec<ModelCost>,
    pub total_usd: f64,
}

impl CostReport {
    pub fn from_usage(usage: &BTreeMap<String, ModelUsage>, pricing: &Pricing) -> Self {
        let models: Vec<ModelCost> = usage
            .iter()
            .map(|(model, u)| {
                let rate = pricing.rate(model);
                let cost_usd = rate.map_or(0.0, |r| {
                    (u.input_tokens as f64 * r.input_per_1k + u.output_tokens as f64 * r.output_per_1k) / 1000.0
                });
                ModelCost {
                    model: model.clone(),
                    usage: *u,
                    cost_usd,
                    priced: rate.is_some(),
                }
            })
            .collect();
        let total_usd = models.iter().map(|m| m.cost_usd).sum();
        Self { models, total_usd }
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>8} {:>8} {:>12} {:>12} {:>10}",
            "model", "calls", "cached", "in_tokens", "out_tokens", "cost_usd"
        )?;
        for m in &self.models {
            let note = if m.priced { "" } else { " (no rate)" };
            writeln!(
                f,
                "{:<20} {:>8} {:>8} {:>12} {:>12} {:>10.4}{note}",
                m.model, m.usage.calls, m.usage.cached_hits, m.usage.input_tokens, m.usage.output_tokens, m.cost_usd
            )?;
        }
        write!(f, "{:<20} {:>54.4}", "total", self.total_usd)
    }
}
