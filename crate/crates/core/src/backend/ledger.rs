use std::collections::BTreeMap;

use rust_decimal::Decimal;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("model `{0}` has no entry in the price table")]
    Unpriced(String),
}

/// Prices per 1000 tokens, keyed by model.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PriceTable {
    prices: BTreeMap<String, (Decimal, Decimal)>,
}

impl PriceTable {
    pub fn with_price(mut self, model: &str, input_per_1k: Decimal, output_per_1k: Decimal) -> Self {
        self.insert(model, input_per_1k, output_per_1k);
        self
    }

    pub fn insert(&mut self, model: &str, input_per_1k: Decimal, output_per_1k: Decimal) {
        self.prices
            .insert(model.to_string(), (input_per_1k, output_per_1k));
    }

    pub fn get(&self, model: &str) -> Option<(Decimal, Decimal)> {
        self.prices.get(model).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageEntry {
    pub session_id: String,
    pub phase: String,
    pub model: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UsageTotals {
    pub calls: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl UsageTotals {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Every backend call of a run, with exact-decimal costing.
#[derive(Debug, Clone, Default)]
pub struct UsageLedger {
    entries: Vec<UsageEntry>,
    prices: PriceTable,
}

impl UsageLedger {
    pub fn new(prices: PriceTable) -> Self {
        UsageLedger {
            entries: Vec::new(),
            prices,
        }
    }

    pub fn record(&mut self, entry: UsageEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[UsageEntry] {
        &self.entries
    }

    pub fn prices(&self) -> &PriceTable {
        &self.prices
    }

    pub fn totals(&self) -> UsageTotals {
        self.entries.iter().fold(UsageTotals::default(), |t, e| UsageTotals {
            calls: t.calls + 1,
            prompt_tokens: t.prompt_tokens + e.prompt_tokens,
            completion_tokens: t.completion_tokens + e.completion_tokens,
        })
    }

    /// Σ prompt × input/1000 + completion × output/1000.
    pub fn cost(&self) -> Result<Decimal, LedgerError> {
        let thousand = Decimal::from(1000);
        self.entries.iter().try_fold(Decimal::ZERO, |acc, e| {
            let (input, output) = self
                .prices
                .get(&e.model)
                .ok_or_else(|| LedgerError::Unpriced(e.model.clone()))?;
            Ok(acc
                + Decimal::from(e.prompt_tokens) * input / thousand
                + Decimal::from(e.completion_tokens) * output / thousand)
        })
    }
}
