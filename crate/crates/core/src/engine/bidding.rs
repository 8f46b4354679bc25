use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::domain::{
    AuctionFormat, AuctionState, Bid, MessagePayload, Millis, Money, Phase, PersonId, Role,
    SlotId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NotABidder,
    Banned,
    NotAdmitted,
    NonPositiveAmount,
    InsufficientImprovement,
    WrongDirection,
    AboveStartPrice,
    BelowStartPrice,
    AuctionClosed,
    ClosingCursorTooNew,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum BidOutcome {
    Accepted {
        bid: Bid,
        rank: u32,
        /// Set when the bid extended the auction.
        new_end: Option<Millis>,
    },
    Rejected {
        reason: RejectReason,
    },
}

impl BidOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, BidOutcome::Accepted { .. })
    }

    pub fn reject_reason(&self) -> Option<RejectReason> {
        match self {
            BidOutcome::Rejected { reason } => Some(*reason),
            BidOutcome::Accepted { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: u32,
    pub bidder: PersonId,
    pub pseudonym: String,
    pub amount: i64,
    /// Seq of the bid holding this amount; breaks ties (earlier wins).
    pub seq: u64,
}

/// One entry per bidder with a live bid on `slot`, best first.
pub fn current_ranking(state: &AuctionState, slot: &SlotId) -> Result<Vec<RankEntry>, EngineError> {
    if state.config.slot(slot).is_none() {
        return Err(EngineError::UnknownReference {
            what: format!("slot {slot}"),
        });
    }
    let format = state.config.format;
    let mut best: HashMap<&PersonId, &Bid> = HashMap::new();
    for bid in state.bids_on(slot).filter(|b| !b.voided) {
        best.entry(&bid.bidder)
            .and_modify(|current| {
                if format.better(bid.amount.amount, current.amount.amount) {
                    *current = bid;
                }
            })
            .or_insert(bid);
    }
    let mut best: Vec<&Bid> = best.into_values().collect();
    best.sort_by(|a, b| rank_order(format, a, b));
    let order: HashMap<&PersonId, usize> = state
        .bidder_order
        .iter()
        .enumerate()
        .map(|(i, p)| (p, i))
        .collect();
    Ok(best
        .into_iter()
        .enumerate()
        .map(|(i, b)| RankEntry {
            rank: i as u32 + 1,
            bidder: b.bidder.clone(),
            pseudonym: order
                .get(&b.bidder)
                .map(|i| format!("Bidder-{}", i + 1))
                .unwrap_or_default(),
            amount: b.amount.amount,
            seq: b.seq,
        })
        .collect())
}

/// Total order on bids: better amount first, then earlier seq.
pub(crate) fn rank_order(format: AuctionFormat, a: &Bid, b: &Bid) -> std::cmp::Ordering {
    let by_amount = match format {
        AuctionFormat::Reverse => a.amount.amount.cmp(&b.amount.amount),
        AuctionFormat::English => b.amount.amount.cmp(&a.amount.amount),
    };
    by_amount.then(a.seq.cmp(&b.seq))
}

impl AuctionState {
    pub(crate) fn place_bid(
        &mut self,
        person: &PersonId,
        slot: &SlotId,
        amount: i64,
        cursor_at_submit: u64,
        now: Millis,
    ) -> Result<BidOutcome, EngineError> {
        let reject = |reason| Ok(BidOutcome::Rejected { reason });
        match self.phase {
            Phase::Scheduled => return Err(EngineError::IllegalPhase { phase: self.phase }),
            Phase::Closed | Phase::Cancelled => return reject(RejectReason::AuctionClosed),
            Phase::Closing => {
                // Only a client that could not yet have seen the closing
                // announcement may still bid during the grace window.
                let announced = self.closing.map_or(0, |c| c.announced_seq);
                if cursor_at_submit >= announced {
                    return reject(RejectReason::ClosingCursorTooNew);
                }
            }
            Phase::Open | Phase::Extension(_) => {}
        }
        if now >= self.cap_end {
            return reject(RejectReason::AuctionClosed);
        }
        let Some(slot_cfg) = self.config.slot(slot) else {
            return Err(EngineError::UnknownReference {
                what: format!("slot {slot}"),
            });
        };
        let Some(entry) = self.roster.get(person) else {
            return reject(RejectReason::NotABidder);
        };
        if entry.role != Role::Bidder {
            return reject(RejectReason::NotABidder);
        }
        if entry.status.banned {
            return reject(RejectReason::Banned);
        }
        if !entry.status.admitted {
            return reject(RejectReason::NotAdmitted);
        }
        match &entry.right {
            Some(right) if right.covers_slot(slot) && right.valid_at(now) => {}
            _ => return reject(RejectReason::NotABidder),
        }
        if amount <= 0 {
            return reject(RejectReason::NonPositiveAmount);
        }

        let format = self.config.format;
        match self.own_best(person, slot) {
            Some(previous) => {
                let improvement = format.improvement(previous.amount.amount, amount);
                if improvement <= 0 {
                    return reject(RejectReason::WrongDirection);
                }
                if improvement < self.config.tick_size.amount {
                    return reject(RejectReason::InsufficientImprovement);
                }
            }
            None => match (&slot_cfg.start_price, format) {
                (Some(start), AuctionFormat::Reverse) if amount > start.amount => {
                    return reject(RejectReason::AboveStartPrice)
                }
                (Some(start), AuctionFormat::English) if amount < start.amount => {
                    return reject(RejectReason::BelowStartPrice)
                }
                _ => {}
            },
        }

        let seq = self.latest_seq() + 1;
        let bid = Bid {
            bid_id: format!("{}-{}", self.config.auction_id, seq),
            auction_id: self.config.auction_id.clone(),
            slot_id: slot.clone(),
            bidder: person.clone(),
            amount: Money {
                amount,
                currency: self.config.currency.clone(),
            },
            server_time: now,
            seq,
            voided: false,
        };
        if !self.bidder_order.contains(person) {
            self.bidder_order.push(person.clone());
        }
        self.bids.push(bid.clone());
        self.push_message(now, MessagePayload::BidPlaced { bid: bid.clone() });
        let new_end = self.maybe_extend(now, seq);

        let rank = current_ranking(self, slot)?
            .iter()
            .find(|e| &e.bidder == person)
            .map_or(0, |e| e.rank);
        Ok(BidOutcome::Accepted { bid, rank, new_end })
    }

    /// Soft-close rule, run on every accepted bid: if less than the current
    /// reaction window remains, push the end to `now + window`, clamped at the
    /// hard cap. Returns the new end when it moved.
    pub(crate) fn maybe_extend(&mut self, now: Millis, triggered_by: u64) -> Option<Millis> {
        let window = self.config.extension_window(self.extension_count);
        if self.current_end.saturating_sub(now) >= window {
            return None;
        }
        let new_end = (now + window).min(self.cap_end);
        if new_end <= self.current_end {
            return None;
        }
        self.current_end = new_end;
        self.extension_count += 1;
        self.phase = Phase::Extension(self.extension_count);
        self.closing = None;
        self.push_message(
            now,
            MessagePayload::ExtensionGranted {
                extension: self.extension_count,
                new_end,
                triggered_by,
            },
        );
        Some(new_end)
    }
}

#[cfg(test)]
mod tests {
    use super::super::testkit::*;
    use super::super::{Command, EngineError};
    use super::*;
    use crate::domain::{AuctionFormat, MessageKind};

    fn rejected(reason: RejectReason) -> BidOutcome {
        BidOutcome::Rejected { reason }
    }

    #[test]
    fn ranked_second_behind_rival() {
        let mut s = opened(config(AuctionFormat::Reverse));
        assert!(bid(&mut s, 100_000, "pB", 10_000).is_accepted());
        assert!(bid(&mut s, 100_001, "pA", 9_500).is_accepted());
        match bid(&mut s, 100_002, "pB", 9_900) {
            BidOutcome::Accepted { rank, new_end, .. } => {
                assert_eq!(rank, 2);
                assert_eq!(new_end, None);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn improvement_must_reach_tick() {
        let mut s = opened(config(AuctionFormat::Reverse));
        bid(&mut s, 100_000, "pA", 10_000);
        assert_eq!(
            bid(&mut s, 100_001, "pA", 9_950),
            rejected(RejectReason::InsufficientImprovement)
        );
        assert_eq!(
            bid(&mut s, 100_002, "pA", 10_000),
            rejected(RejectReason::WrongDirection)
        );
        assert_eq!(
            bid(&mut s, 100_003, "pA", 10_500),
            rejected(RejectReason::WrongDirection)
        );
        assert!(bid(&mut s, 100_004, "pA", 9_900).is_accepted());
    }

    #[test]
    fn english_moves_up() {
        let mut s = opened(config(AuctionFormat::English));
        bid(&mut s, 100_000, "pA", 10_000);
        assert_eq!(
            bid(&mut s, 100_001, "pA", 9_000),
            rejected(RejectReason::WrongDirection)
        );
        assert!(bid(&mut s, 100_002, "pA", 10_100).is_accepted());
    }

    #[test]
    fn start_price_bounds_first_bid() {
        let mut c = config(AuctionFormat::Reverse);
        c.slots[0].start_price = Some(Money::new(10_000, "EUR"));
        let mut s = opened(c.clone());
        assert_eq!(
            bid(&mut s, 100_000, "pA", 10_001),
            rejected(RejectReason::AboveStartPrice)
        );
        assert!(bid(&mut s, 100_001, "pA", 10_000).is_accepted());

        c.format = AuctionFormat::English;
        let mut s = opened(c);
        assert_eq!(
            bid(&mut s, 100_000, "pA", 9_999),
            rejected(RejectReason::BelowStartPrice)
        );
    }

    #[test]
    fn who_may_bid() {
        let mut s = opened(config(AuctionFormat::Reverse));
        assert_eq!(bid(&mut s, 100_000, "obs", 1_000), rejected(RejectReason::NotABidder));
        assert_eq!(bid(&mut s, 100_000, "zed", 1_000), rejected(RejectReason::NotABidder));
        assert_eq!(bid(&mut s, 100_000, "pA", 0), rejected(RejectReason::NonPositiveAmount));
        s.apply(&cmd(
            100_000,
            Command::Invite {
                profile: profile("pD", "cD"),
                role: Role::Bidder,
                slot_id: None,
            },
        ))
        .unwrap();
        assert_eq!(bid(&mut s, 100_001, "pD", 1_000), rejected(RejectReason::NotAdmitted));
    }

    #[test]
    fn slot_scoped_right() {
        let mut c = config(AuctionFormat::Reverse);
        let mut second = c.slots[0].clone();
        second.slot_id = "s2".into();
        c.slots.push(second);
        let mut s = staged(c);
        for (step, command) in [
            Command::Invite {
                profile: profile("pS", "cS"),
                role: Role::Bidder,
                slot_id: Some("s2".into()),
            },
            Command::SignContract {
                person_id: "pS".into(),
            },
            Command::Admit {
                person_id: "pS".into(),
            },
            Command::Tick,
        ]
        .into_iter()
        .enumerate()
        {
            s.apply(&cmd(60_000 + step as u64, command)).unwrap();
        }
        assert_eq!(bid(&mut s, 100_000, "pS", 1_000), rejected(RejectReason::NotABidder));
        let on_s2 = s
            .apply(&cmd(
                100_001,
                Command::PlaceBid {
                    person_id: "pS".into(),
                    slot_id: "s2".into(),
                    amount: 1_000,
                    cursor_at_submit: 0,
                },
            ))
            .unwrap();
        assert!(on_s2.outcome.unwrap().is_accepted());
        let unknown = s.apply(&cmd(
            100_002,
            Command::PlaceBid {
                person_id: "pS".into(),
                slot_id: "nope".into(),
                amount: 900,
                cursor_at_submit: 0,
            },
        ));
        assert!(matches!(unknown, Err(EngineError::UnknownReference { .. })));
    }

    #[test]
    fn extension_cascade() {
        let mut s = opened(config(AuctionFormat::Reverse));
        assert_eq!(s.current_end, 3_600_000);
        let ends: Vec<_> = [(3_550_000, "pA", 10_000), (3_729_000, "pB", 9_900), (3_848_000, "pA", 9_800)]
            .into_iter()
            .map(|(t, p, a)| {
                bid(&mut s, t, p, a);
                s.current_end
            })
            .collect();
        assert_eq!(ends, vec![3_730_000, 3_849_000, 3_908_000]);
        assert_eq!(s.extension_count, 3);
        assert_eq!(s.phase, Phase::Extension(3));
    }

    #[test]
    fn no_extension_with_enough_time_left() {
        let mut s = opened(config(AuctionFormat::Reverse));
        bid(&mut s, 3_400_000, "pA", 10_000);
        assert_eq!(s.current_end, 3_600_000);
        assert_eq!(s.phase, Phase::Open);
    }

    #[test]
    fn extension_clamps_at_hard_cap() {
        let mut c = config(AuctionFormat::Reverse);
        c.hard_cap_ms = Some(3_600_000);
        let mut s = opened(c);
        assert_eq!(s.cap_end, 3_660_000);
        let out = bid(&mut s, 3_590_000, "pA", 10_000);
        assert_eq!(s.current_end, 3_660_000);
        assert!(matches!(out, BidOutcome::Accepted { new_end: Some(3_660_000), .. }));
        // already at the cap: nothing left to grant
        bid(&mut s, 3_650_000, "pB", 9_000);
        assert_eq!(s.current_end, 3_660_000);
        assert_eq!(s.extension_count, 1);
    }

    #[test]
    fn default_schedule_grants_three_minutes() {
        let mut c = config(AuctionFormat::Reverse);
        c.extension_schedule = crate::domain::DEFAULT_EXTENSION_SCHEDULE.to_vec();
        let mut s = opened(c);
        bid(&mut s, 3_550_000, "pA", 10_000);
        assert_eq!(s.current_end, 3_550_000 + 180_000);
    }

    #[test]
    fn closing_grace_honours_stale_cursor_only() {
        let mut s = opened(config(AuctionFormat::Reverse));
        bid(&mut s, 1_000_000, "pA", 10_000);
        let stale_cursor = s.latest_seq();
        s.apply(&cmd(3_600_000, Command::Tick)).unwrap();
        assert_eq!(s.phase, Phase::Closing);
        let announced = s.closing.unwrap().announced_seq;
        assert_eq!(s.messages[announced as usize - 1].kind(), MessageKind::ClosingAnnounced);

        let fresh = s
            .apply(&cmd(
                3_601_000,
                Command::PlaceBid {
                    person_id: "pB".into(),
                    slot_id: "s1".into(),
                    amount: 9_000,
                    cursor_at_submit: announced,
                },
            ))
            .unwrap();
        assert_eq!(
            fresh.outcome.unwrap(),
            rejected(RejectReason::ClosingCursorTooNew)
        );

        let stale = s
            .apply(&cmd(
                3_602_000,
                Command::PlaceBid {
                    person_id: "pB".into(),
                    slot_id: "s1".into(),
                    amount: 9_000,
                    cursor_at_submit: stale_cursor,
                },
            ))
            .unwrap();
        assert!(matches!(
            stale.outcome.unwrap(),
            BidOutcome::Accepted { new_end: Some(3_782_000), .. }
        ));
        assert_eq!(s.phase, Phase::Extension(1));
        assert_eq!(s.closing, None);
    }

    #[test]
    fn ranking_sorts_and_breaks_ties_by_seq() {
        let mut s = opened(config(AuctionFormat::Reverse));
        bid(&mut s, 100_000, "pA", 9_700);
        bid(&mut s, 100_001, "pB", 9_900);
        bid(&mut s, 100_002, "pC", 9_700);
        bid(&mut s, 100_003, "pA", 9_500);
        let ranking = current_ranking(&s, &"s1".into()).unwrap();
        let order: Vec<_> = ranking.iter().map(|e| (e.bidder.as_str(), e.rank, e.amount)).collect();
        assert_eq!(order, vec![("pA", 1, 9_500), ("pC", 2, 9_700), ("pB", 3, 9_900)]);
        assert_eq!(ranking[0].pseudonym, "Bidder-1");
        assert_eq!(ranking[1].pseudonym, "Bidder-3");
        assert!(current_ranking(&s, &"s9".into()).is_err());
    }

    #[test]
    fn empty_ranking() {
        let s = opened(config(AuctionFormat::Reverse));
        assert_eq!(current_ranking(&s, &"s1".into()).unwrap(), vec![]);
    }
}
