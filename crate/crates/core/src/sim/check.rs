//! Checks over a finished [`Trace`]. Each returns what it found rather than
//! a verdict, so tests can state their own bounds.

use crate::domain::{AuctionId, Millis, MessagePayload, PersonId};
use crate::engine::RejectReason;
use crate::store::Record;

use super::Trace;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloseAgreement {
    pub auction_id: AuctionId,
    /// Server time of the Closed (or AuctionCancelled) message.
    pub terminal_at: Option<Millis>,
    /// Largest gap between `terminal_at` and a connected client seeing it.
    pub max_lag_ms: Millis,
    /// Connected clients that never saw the final phase.
    pub missing: Vec<PersonId>,
    /// Clients left out because they disconnected.
    pub disconnected: Vec<PersonId>,
}

fn terminal_time(trace: &Trace, auction_id: &AuctionId) -> Option<Millis> {
    trace.log.iter().find_map(|r| match &r.record {
        Record::Message { message } if &r.auction_id == auction_id => match message.payload {
            MessagePayload::Closed { .. } | MessagePayload::AuctionCancelled {} => {
                Some(message.server_time)
            }
            _ => None,
        },
        _ => None,
    })
}

/// Per auction, how long connected clients took to observe the final phase.
/// Clients that disconnect before the end of the run are not counted.
pub fn check_close_agreement(trace: &Trace) -> Vec<CloseAgreement> {
    trace
        .auctions
        .iter()
        .map(|a| {
            let terminal_at = terminal_time(trace, &a.auction_id);
            let mut max_lag_ms = 0;
            let (mut missing, mut disconnected) = (Vec::new(), Vec::new());
            for c in trace.clients.iter().filter(|c| c.auction_id == a.auction_id) {
                if c.disconnected {
                    disconnected.push(c.person_id.clone());
                    continue;
                }
                match (terminal_at, c.closed_observed_at) {
                    (Some(t), Some(seen)) => max_lag_ms = max_lag_ms.max(seen.saturating_sub(t)),
                    (Some(_), None) => missing.push(c.person_id.clone()),
                    (None, _) => {}
                }
            }
            CloseAgreement {
                auction_id: a.auction_id.clone(),
                terminal_at,
                max_lag_ms,
                missing,
                disconnected,
            }
        })
        .collect()
}

/// Bids refused as AuctionClosed although the sender last saw the auction
/// running and the bid travelled for less than the grace period. Bids that
/// reached the server at or after the hard cap are exempt: nothing is
/// accepted past the cap, whatever the client saw.
pub fn check_fairness(trace: &Trace) -> Vec<String> {
    trace
        .bids
        .iter()
        .filter(|b| b.last_seen_phase.is_some_and(|p| p.is_running()))
        .filter_map(|b| {
            let a = trace.auction(&b.auction_id)?;
            let received = b.received_at?;
            let refused = b
                .outcome
                .as_ref()
                .and_then(|o| o.reject_reason())
                .is_some_and(|r| r == RejectReason::AuctionClosed);
            (refused && b.up_delay < a.closing_grace_ms && received < a.cap_end).then(|| {
                format!(
                    "bid by {} sent at {} received at {} refused as closed",
                    b.person_id, b.sent_at, received
                )
            })
        })
        .collect()
}

/// Accepted bids at or past the hard cap, and auctions ending past it.
pub fn check_no_late_win(trace: &Trace) -> Vec<String> {
    let mut found = Vec::new();
    for a in &trace.auctions {
        if a.current_end > a.cap_end {
            found.push(format!("{} ends at {} past cap {}", a.auction_id, a.current_end, a.cap_end));
        }
        for r in trace.log.iter().filter(|r| r.auction_id == a.auction_id) {
            if let Record::Message { message } = &r.record {
                if let MessagePayload::BidPlaced { bid } = &message.payload {
                    if bid.server_time >= a.cap_end {
                        found.push(format!("{} accepted bid seq {} at cap", a.auction_id, message.seq));
                    }
                }
            }
        }
    }
    found
}

/// Every client must have been handed a gapless, duplicate-free prefix of
/// its auction's stream; clients that saw the end must have the whole of it.
pub fn check_delivery(trace: &Trace) -> Vec<String> {
    let mut found = Vec::new();
    for c in &trace.clients {
        let Some(a) = trace.auction(&c.auction_id) else {
            continue;
        };
        let prefix = c
            .delivered
            .iter()
            .enumerate()
            .all(|(i, &seq)| seq == i as u64 + 1);
        if !prefix {
            found.push(format!("{} got a non-contiguous stream", c.person_id));
        } else if c.closed_observed_at.is_some() && c.delivered.len() as u64 != a.latest_seq {
            found.push(format!(
                "{} saw the end with {} of {} messages",
                c.person_id,
                c.delivered.len(),
                a.latest_seq
            ));
        }
    }
    found
}
