use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AuctionId, Currency, Millis, Money, SlotId};

/// Reaction windows granted to successive late bids, from three minutes down
/// to a few seconds. The last entry repeats.
pub const DEFAULT_EXTENSION_SCHEDULE: [Millis; 7] =
    [180_000, 120_000, 60_000, 30_000, 15_000, 10_000, 5_000];

pub const DEFAULT_CLOSING_GRACE_MS: Millis = 3_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuctionFormat {
    /// Buyers bid prices up; the highest bid leads.
    English,
    /// Suppliers bid prices down; the lowest bid leads.
    Reverse,
}

impl AuctionFormat {
    /// `true` when `a` is a better price than `b` under this format.
    pub fn better(self, a: i64, b: i64) -> bool {
        match self {
            AuctionFormat::English => a > b,
            AuctionFormat::Reverse => a < b,
        }
    }

    /// Signed improvement of `new` over `previous` (positive = better).
    pub fn improvement(self, previous: i64, new: i64) -> i64 {
        match self {
            AuctionFormat::English => new - previous,
            AuctionFormat::Reverse => previous - new,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: u64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub slot_id: SlotId,
    pub description: String,
    pub quantity: Quantity,
    #[serde(default)]
    pub start_price: Option<Money>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuctionConfig {
    pub auction_id: AuctionId,
    pub title: String,
    pub format: AuctionFormat,
    pub currency: Currency,
    pub start_time: Millis,
    pub main_duration_ms: Millis,
    /// Total allowed length including extensions. Defaults to twice the main part.
    #[serde(default)]
    pub hard_cap_ms: Option<Millis>,
    #[serde(default = "default_schedule")]
    pub extension_schedule: Vec<Millis>,
    #[serde(default = "default_grace")]
    pub closing_grace_ms: Millis,
    pub tick_size: Money,
    #[serde(default)]
    pub historic_value: Option<Money>,
    #[serde(default)]
    pub target_value: Option<Money>,
    pub slots: Vec<Slot>,
}

fn default_schedule() -> Vec<Millis> {
    DEFAULT_EXTENSION_SCHEDULE.to_vec()
}

fn default_grace() -> Millis {
    DEFAULT_CLOSING_GRACE_MS
}

impl AuctionConfig {
    pub fn effective_hard_cap_ms(&self) -> Millis {
        self.hard_cap_ms
            .unwrap_or_else(|| self.main_duration_ms.saturating_mul(2))
    }

    pub fn scheduled_end(&self) -> Millis {
        self.start_time + self.main_duration_ms
    }

    pub fn slot(&self, id: &SlotId) -> Option<&Slot> {
        self.slots.iter().find(|s| &s.slot_id == id)
    }

    /// Reaction window after `extensions_granted` extensions; the last entry repeats.
    pub fn extension_window(&self, extensions_granted: u32) -> Millis {
        let schedule = &self.extension_schedule;
        match schedule.len() {
            0 => 0,
            n => schedule[(extensions_granted as usize).min(n - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum ConfigViolation {
    InvalidCurrency,
    CurrencyMismatch { field: String },
    ZeroMainDuration,
    ZeroHardCap,
    MainExceedsHardCap,
    EmptyExtensionSchedule,
    NonPositiveExtension,
    ExtensionScheduleIncreasing,
    ZeroClosingGrace,
    NonPositiveTick,
    NonPositivePrice { field: String },
    PricesOnEnglish,
    TargetNotBelowHistoric,
    NoSlots,
    DuplicateSlot { slot_id: SlotId },
    ZeroQuantity { slot_id: SlotId },
}

/// Checks every static invariant of an auction definition. An empty result
/// means the config is usable.
pub fn validate_config(config: &AuctionConfig) -> Vec<ConfigViolation> {
    let mut out = Vec::new();
    if !config.currency.is_valid() {
        out.push(ConfigViolation::InvalidCurrency);
    }

    let check_money = |field: &str, money: &Money, out: &mut Vec<ConfigViolation>| {
        if money.currency != config.currency {
            out.push(ConfigViolation::CurrencyMismatch {
                field: field.to_owned(),
            });
        }
        if money.amount <= 0 {
            out.push(ConfigViolation::NonPositivePrice {
                field: field.to_owned(),
            });
        }
    };

    if config.main_duration_ms == 0 {
        out.push(ConfigViolation::ZeroMainDuration);
    }
    if config.hard_cap_ms == Some(0) {
        out.push(ConfigViolation::ZeroHardCap);
    }
    if config.main_duration_ms > config.effective_hard_cap_ms() {
        out.push(ConfigViolation::MainExceedsHardCap);
    }
    if config.extension_schedule.is_empty() {
        out.push(ConfigViolation::EmptyExtensionSchedule);
    }
    if config.extension_schedule.contains(&0) {
        out.push(ConfigViolation::NonPositiveExtension);
    }
    if config.extension_schedule.windows(2).any(|w| w[1] > w[0]) {
        out.push(ConfigViolation::ExtensionScheduleIncreasing);
    }
    if config.closing_grace_ms == 0 {
        out.push(ConfigViolation::ZeroClosingGrace);
    }
    if config.tick_size.amount <= 0 {
        out.push(ConfigViolation::NonPositiveTick);
    }
    if config.tick_size.currency != config.currency {
        out.push(ConfigViolation::CurrencyMismatch {
            field: "tick_size".into(),
        });
    }
    if let Some(h) = &config.historic_value {
        check_money("historic_value", h, &mut out);
    }
    if let Some(t) = &config.target_value {
        check_money("target_value", t, &mut out);
    }
    if config.format == AuctionFormat::English
        && (config.historic_value.is_some() || config.target_value.is_some())
    {
        out.push(ConfigViolation::PricesOnEnglish);
    }
    if let (Some(h), Some(t)) = (&config.historic_value, &config.target_value) {
        if t.amount >= h.amount {
            out.push(ConfigViolation::TargetNotBelowHistoric);
        }
    }

    if config.slots.is_empty() {
        out.push(ConfigViolation::NoSlots);
    }
    let mut seen = BTreeSet::new();
    for slot in &config.slots {
        if !seen.insert(&slot.slot_id) {
            out.push(ConfigViolation::DuplicateSlot {
                slot_id: slot.slot_id.clone(),
            });
        }
        if slot.quantity.value == 0 {
            out.push(ConfigViolation::ZeroQuantity {
                slot_id: slot.slot_id.clone(),
            });
        }
        if let Some(p) = &slot.start_price {
            check_money("start_price", p, &mut out);
        }
    }
    out
}
