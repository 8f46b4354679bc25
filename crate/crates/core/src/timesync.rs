//! Client-side estimate of the server clock offset.
//!
//! Phase 1 is a connect-time burst: the sample with the smallest round trip
//! wins, on the assumption that it suffered the least asymmetric delay.
//! Phase 2 refines the estimate from regular polls, accepting only samples
//! whose round trip is close to the best seen so far and smoothing them in.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum SyncError {
    #[error("receive time {t2} precedes send time {t0}")]
    NegativeRtt { t0: i64, t2: i64 },
    #[error("no samples")]
    EmptySamples,
}

/// One request/response exchange. `t0` and `t2` are client clock readings,
/// `ts` is the server clock reading carried in the response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncSample {
    pub t0: i64,
    pub ts: i64,
    pub t2: i64,
}

impl SyncSample {
    pub fn new(t0: i64, ts: i64, t2: i64) -> Self {
        Self { t0, ts, t2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    /// server clock minus client clock
    pub offset_ms: i64,
    pub rtt_ms: u64,
    pub sample_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncParams {
    pub burst: usize,
    pub rtt_slack_ms: u64,
}

impl Default for SyncParams {
    fn default() -> Self {
        Self {
            burst: 8,
            rtt_slack_ms: 25,
        }
    }
}

/// Offset and round trip of one sample, assuming symmetric one-way delays.
pub fn sample_offset(t0: i64, ts: i64, t2: i64) -> Result<(i64, u64), SyncError> {
    if t2 < t0 {
        return Err(SyncError::NegativeRtt { t0, t2 });
    }
    // i64 division truncates toward zero
    let offset = ts - (t0 + t2) / 2;
    Ok((offset, (t2 - t0) as u64))
}

/// Incremental estimator, one per connection.
#[derive(Debug, Clone, Default)]
pub struct OffsetEstimator {
    params: SyncParams,
    burst: Vec<(u64, i64)>,
    current: Option<OffsetEstimate>,
}

impl OffsetEstimator {
    pub fn new(params: SyncParams) -> Self {
        Self {
            params,
            burst: Vec::new(),
            current: None,
        }
    }

    pub fn current(&self) -> Option<OffsetEstimate> {
        self.current
    }

    pub fn in_burst(&self) -> bool {
        self.burst.len() < self.params.burst.max(1)
    }

    pub fn observe(&mut self, sample: SyncSample) -> Result<OffsetEstimate, SyncError> {
        let (offset, rtt) = sample_offset(sample.t0, sample.ts, sample.t2)?;
        let next = if self.in_burst() {
            self.burst.push((rtt, offset));
            // ties on rtt broken by offset so the result ignores sample order
            let (rtt_ms, offset_ms) = *self.burst.iter().min().expect("non-empty burst");
            OffsetEstimate {
                offset_ms,
                rtt_ms,
                sample_count: self.burst.len() as u32,
            }
        } else {
            let cur = self.current.expect("estimate exists after the burst");
            let mut next = OffsetEstimate {
                sample_count: cur.sample_count + 1,
                ..cur
            };
            if rtt <= cur.rtt_ms + self.params.rtt_slack_ms {
                next.offset_ms = (3 * cur.offset_ms + offset) / 4;
                next.rtt_ms = cur.rtt_ms.min(rtt);
            }
            next
        };
        self.current = Some(next);
        Ok(next)
    }
}

/// Runs both phases over `samples` in order with default parameters.
pub fn estimate(samples: &[SyncSample]) -> Result<OffsetEstimate, SyncError> {
    estimate_with(samples, SyncParams::default())
}

pub fn estimate_with(
    samples: &[SyncSample],
    params: SyncParams,
) -> Result<OffsetEstimate, SyncError> {
    let mut est = OffsetEstimator::new(params);
    let mut last = Err(SyncError::EmptySamples);
    for s in samples {
        last = est.observe(*s);
        last?;
    }
    last
}

/// Time left until `current_end` on the server clock, as seen from a client
/// whose local clock reads `local_now`.
pub fn remaining_ms(current_end: Millis, local_now: i64, estimate: &OffsetEstimate) -> Millis {
    let server_now = local_now as i128 + estimate.offset_ms as i128;
    (current_end as i128 - server_now).max(0) as Millis
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn est(offset_ms: i64) -> OffsetEstimate {
        OffsetEstimate {
            offset_ms,
            rtt_ms: 0,
            sample_count: 1,
        }
    }

    #[test]
    fn single_sample_arithmetic() {
        assert_eq!(sample_offset(1000, 5600, 1200), Ok((4500, 200)));
        assert_eq!(sample_offset(1000, 1000, 1000), Ok((0, 0)));
        assert_eq!(sample_offset(0, 50, 100), Ok((0, 100)));
        assert_eq!(
            sample_offset(10, 0, 9),
            Err(SyncError::NegativeRtt { t0: 10, t2: 9 })
        );
        // -3 / 2 truncates to -1
        assert_eq!(sample_offset(-3, 0, 0), Ok((1, 3)));
    }

    #[test]
    fn burst_picks_min_rtt() {
        // (rtt 200, off 4500), (rtt 80, off 4520), (rtt 500, off 4300)
        let samples = [
            SyncSample::new(1000, 5600, 1200),
            SyncSample::new(2000, 6560, 2080),
            SyncSample::new(3000, 7550, 3500),
        ];
        let e = estimate(&samples).unwrap();
        assert_eq!((e.offset_ms, e.rtt_ms, e.sample_count), (4520, 80, 3));
        assert_eq!(estimate(&samples[..1]).unwrap().offset_ms, 4500);
        assert_eq!(estimate(&[]), Err(SyncError::EmptySamples));
    }

    #[test]
    fn steady_state_gate_and_smoothing() {
        let params = SyncParams {
            burst: 1,
            rtt_slack_ms: 25,
        };
        let mut e = OffsetEstimator::new(params);
        e.observe(SyncSample::new(0, 1050, 100)).unwrap(); // off 1000, rtt 100
        // rtt 125 passes the gate: (3*1000 + 1200) / 4
        let s = e.observe(SyncSample::new(0, 1262, 125)).unwrap();
        assert_eq!((s.offset_ms, s.rtt_ms), (1050, 100));
        // rtt 126 is ignored
        let s = e.observe(SyncSample::new(0, 9063, 126)).unwrap();
        assert_eq!((s.offset_ms, s.sample_count), (1050, 3));
    }

    #[test]
    fn remaining_floors_at_zero() {
        assert_eq!(remaining_ms(10_000, 4_000, &est(1_000)), 5_000);
        assert_eq!(remaining_ms(10_000, 12_000, &est(0)), 0);
        assert_eq!(remaining_ms(10_000, 10_000, &est(0)), 0);
    }

    #[test]
    fn symmetric_delay_is_exact() {
        for delay in [0i64, 1, 7, 50, 399] {
            let true_offset = -123_456;
            let samples: Vec<_> = (0..8)
                .map(|i| {
                    let t0 = i * 1000;
                    SyncSample::new(t0, t0 + delay + true_offset, t0 + 2 * delay)
                })
                .collect();
            assert_eq!(estimate(&samples).unwrap().offset_ms, true_offset);
        }
    }

    #[test]
    fn jitter_error_within_half_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for j in [50i64, 200, 800] {
            for _ in 0..200 {
                let true_offset = rng.gen_range(-100_000..100_000);
                let samples: Vec<_> = (0..8)
                    .map(|i| {
                        let t0 = i * 1000;
                        let up = 20 + rng.gen_range(0..=j);
                        let down = 20 + rng.gen_range(0..=j);
                        SyncSample::new(t0, t0 + up + true_offset, t0 + up + down)
                    })
                    .collect();
                let e = estimate(&samples).unwrap();
                assert!((e.offset_ms - true_offset).abs() <= j / 2);
            }
        }
    }

    proptest! {
        #[test]
        fn burst_is_permutation_invariant(
            raw in prop::collection::vec((0i64..10_000, -5_000i64..5_000, 0i64..2_000), 1..8),
            seed in any::<u64>(),
        ) {
            let samples: Vec<_> = raw
                .iter()
                .map(|&(t0, off, rtt)| SyncSample::new(t0, t0 + off, t0 + rtt))
                .collect();
            let mut shuffled = samples.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(estimate(&samples).unwrap(), estimate(&shuffled).unwrap());
        }

        #[test]
        fn chosen_sample_has_min_rtt(
            raw in prop::collection::vec((0i64..10_000, -5_000i64..5_000, 0i64..2_000), 1..8),
        ) {
            let samples: Vec<_> = raw
                .iter()
                .map(|&(t0, off, rtt)| SyncSample::new(t0, t0 + off, t0 + rtt))
                .collect();
            let min = samples.iter().map(|s| (s.t2 - s.t0) as u64).min().unwrap();
            prop_assert_eq!(estimate(&samples).unwrap().rtt_ms, min);
        }
    }
}
