use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LogRecord, Record};
use crate::domain::{AuctionId, MessagePayload, Phase, PersonId, SlotId};
use crate::engine::Registry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    SeqGap { expected: u64, found: u64 },
    TimeRegression { seq: u64 },
    DanglingReference { seq: u64, what: String },
    NonPositiveAmount { seq: u64 },
    ImprovementViolated { seq: u64 },
    IllegalTransition { seq: u64, from: Phase, to: Phase },
    MessageAfterClosed { seq: u64 },
    /// A logged message differs from what replaying its command produces.
    MessageMismatch { seq: u64 },
    BatchLengthMismatch { seq: u64 },
}

#[derive(Default)]
struct Shadow {
    phase: Option<Phase>,
    last_amount: BTreeMap<(SlotId, PersonId), i64>,
}

/// Checks a log for internal consistency. The message stream is checked on
/// its own terms (references, amounts, tick rule, phase edges) and against a
/// replay of the logged commands.
pub fn plausibility_check(records: &[LogRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut registry = Registry::new();
    let mut shadows: BTreeMap<AuctionId, Shadow> = BTreeMap::new();
    // messages the replay produced for the current batch, consumed in order
    let mut expected = std::collections::VecDeque::new();
    let mut prev_seq = 0;
    let mut prev_time = 0;

    for rec in records {
        let seq = rec.global_seq;
        if seq != prev_seq + 1 {
            out.push(Violation::SeqGap {
                expected: prev_seq + 1,
                found: seq,
            });
        }
        prev_seq = seq;
        if rec.server_time < prev_time {
            out.push(Violation::TimeRegression { seq });
        }
        prev_time = prev_time.max(rec.server_time);

        let message = match &rec.record {
            Record::Command { batch_len, .. } => {
                let env = rec.envelope().expect("command record");
                let produced = registry.apply(&env).map(|a| a.messages).unwrap_or_default();
                if produced.len() != *batch_len as usize || !expected.is_empty() {
                    out.push(Violation::BatchLengthMismatch { seq });
                }
                expected = produced.into();
                continue;
            }
            Record::Message { message } => message,
        };
        if expected.pop_front().as_ref() != Some(message) {
            out.push(Violation::MessageMismatch { seq });
        }

        let shadow = shadows.entry(rec.auction_id.clone()).or_default();
        let phase = *shadow.phase.get_or_insert(Phase::Scheduled);
        if phase.is_terminal() {
            out.push(Violation::MessageAfterClosed { seq });
        }
        let next = match &message.payload {
            MessagePayload::StateChanged { from, to } => {
                if *from != phase {
                    out.push(Violation::IllegalTransition {
                        seq,
                        from: phase,
                        to: *to,
                    });
                }
                Some(*to)
            }
            MessagePayload::ExtensionGranted { extension, .. } => Some(Phase::Extension(*extension)),
            MessagePayload::ClosingAnnounced { .. } => Some(Phase::Closing),
            MessagePayload::Closed { .. } => Some(Phase::Closed),
            MessagePayload::AuctionCancelled {} => Some(Phase::Cancelled),
            MessagePayload::BidPlaced { bid } => {
                check_bid(&registry, shadow, rec, bid, &mut out);
                None
            }
            _ => None,
        };
        if let Some(to) = next {
            if !phase.can_move_to(to) {
                out.push(Violation::IllegalTransition {
                    seq,
                    from: phase,
                    to,
                });
            }
            shadow.phase = Some(to);
        }
    }
    out
}

fn check_bid(
    registry: &Registry,
    shadow: &mut Shadow,
    rec: &LogRecord,
    bid: &crate::domain::Bid,
    out: &mut Vec<Violation>,
) {
    let seq = rec.global_seq;
    let dangling = |what: String| Violation::DanglingReference { seq, what };
    let Some(state) = registry.get(&bid.auction_id).filter(|_| bid.auction_id == rec.auction_id)
    else {
        out.push(dangling(format!("auction {}", bid.auction_id)));
        return;
    };
    if state.config.slot(&bid.slot_id).is_none() {
        out.push(dangling(format!("slot {}", bid.slot_id)));
    }
    if state.entry(&bid.bidder).is_none() {
        out.push(dangling(format!("person {}", bid.bidder)));
    }
    if bid.amount.amount <= 0 {
        out.push(Violation::NonPositiveAmount { seq });
    }
    let key = (bid.slot_id.clone(), bid.bidder.clone());
    if let Some(prev) = shadow.last_amount.get(&key) {
        let improvement = state.config.format.improvement(*prev, bid.amount.amount);
        if improvement < state.config.tick_size.amount {
            out.push(Violation::ImprovementViolated { seq });
        }
    }
    shadow.last_amount.insert(key, bid.amount.amount);
}
