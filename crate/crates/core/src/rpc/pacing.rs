use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::domain::Millis;

pub const BASE_POLL_MS: Millis = 1_000;
pub const NEAR_END_POLL_MS: Millis = 500;
pub const NEAR_END_WINDOW_MS: Millis = 120_000;
pub const MIN_POLL_MS: Millis = 250;
pub const MAX_POLL_MS: Millis = 5_000;
pub const DEFAULT_CAPACITY_RPS: f64 = 500.0;
const WINDOW_MS: Millis = 10_000;

/// Delay the server asks a client to wait before its next poll: about a
/// second normally, half that in the last two minutes, stretched under load.
pub fn poll_interval(remaining_ms: Millis, load_factor: f64) -> Millis {
    let base = if remaining_ms < NEAR_END_WINDOW_MS {
        NEAR_END_POLL_MS
    } else {
        BASE_POLL_MS
    };
    // f64::max ignores NaN, so a broken load reading falls back to 1
    let scaled = base as f64 * load_factor.max(1.0);
    scaled.clamp(MIN_POLL_MS as f64, MAX_POLL_MS as f64).round() as Millis
}

/// Requests seen over the last ten seconds, relative to capacity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrafficMonitor {
    capacity_rps: f64,
    #[serde(skip)]
    hits: VecDeque<Millis>,
}

impl Default for TrafficMonitor {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY_RPS)
    }
}

impl TrafficMonitor {
    pub fn new(capacity_rps: f64) -> Self {
        Self {
            capacity_rps: if capacity_rps > 0.0 {
                capacity_rps
            } else {
                DEFAULT_CAPACITY_RPS
            },
            hits: VecDeque::new(),
        }
    }

    pub fn record(&mut self, now: Millis) {
        self.hits.push_back(now);
        self.expire(now);
    }

    fn expire(&mut self, now: Millis) {
        let horizon = now.saturating_sub(WINDOW_MS);
        while self.hits.front().is_some_and(|t| *t < horizon || *t > now) {
            self.hits.pop_front();
        }
    }

    pub fn observed_rps(&mut self, now: Millis) -> f64 {
        self.expire(now);
        self.hits.len() as f64 * 1_000.0 / WINDOW_MS as f64
    }

    pub fn load_factor(&mut self, now: Millis) -> f64 {
        self.observed_rps(now) / self.capacity_rps
    }
}
