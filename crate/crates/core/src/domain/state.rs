use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    AccessRight, AuctionConfig, Bid, Message, MessagePayload, Millis, ParticipantProfile,
    ParticipantStatus, PersonId, Role, SlotId,
};

/// Lifecycle of an auction.
///
/// `Scheduled → Open → Extension(k)* → Closing → (Extension(k) | Closed)`, with
/// `Cancelled` reachable from every non-terminal phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Scheduled,
    Open,
    Extension(u32),
    Closing,
    Closed,
    Cancelled,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Closed | Phase::Cancelled)
    }

    /// Open or extended: bids are taken without conditions on the cursor.
    pub fn is_running(self) -> bool {
        matches!(self, Phase::Open | Phase::Extension(_))
    }

    /// Whether `self → next` is an edge of the phase machine.
    pub fn can_move_to(self, next: Phase) -> bool {
        use Phase::*;
        match (self, next) {
            (Closed | Cancelled, _) => false,
            (_, Cancelled) => true,
            (Scheduled, Open) => true,
            (Open, Extension(_)) => true,
            (Extension(a), Extension(b)) => b > a,
            (Open | Extension(_), Closing) => true,
            (Closing, Extension(_)) => true,
            (Closing, Closed) => true,
            // hard cap or a late tick can skip the grace phase
            (Open | Extension(_), Closed) => true,
            // admin prolong re-opens a closing auction
            (Closing, Open) => true,
            _ => false,
        }
    }
}

/// A person's membership in one auction: who they are, the role they were
/// invited for, the right once granted, and their workflow status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub profile: ParticipantProfile,
    pub role: Role,
    pub slot_id: Option<SlotId>,
    pub right: Option<AccessRight>,
    pub status: ParticipantStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosingWindow {
    /// Seq of the ClosingAnnounced message.
    pub announced_seq: u64,
    pub announced_end: Millis,
}

/// Dynamic state of one auction. Mutated only by the engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuctionState {
    pub config: AuctionConfig,
    pub phase: Phase,
    pub current_end: Millis,
    /// Definitive end: start + hard cap, moved only by admin prolong.
    pub cap_end: Millis,
    pub extension_count: u32,
    pub closing: Option<ClosingWindow>,
    pub opened_at: Option<Millis>,
    pub closed_at: Option<Millis>,
    /// Receipt time of the last applied command.
    pub last_time: Millis,
    pub messages: Vec<Message>,
    /// Every accepted bid in seq order, including voided ones.
    pub bids: Vec<Bid>,
    pub roster: BTreeMap<PersonId, RosterEntry>,
    /// Bidders in order of their first bid; drives pseudonyms.
    pub bidder_order: Vec<PersonId>,
}

impl AuctionState {
    pub fn new(config: AuctionConfig, originator: ParticipantProfile) -> Self {
        let current_end = config.scheduled_end();
        let cap_end = config.start_time + config.effective_hard_cap_ms();
        let auction_id = config.auction_id.clone();
        let mut roster = BTreeMap::new();
        let person_id = originator.person_id.clone();
        roster.insert(
            person_id.clone(),
            RosterEntry {
                profile: originator,
                role: Role::Originator,
                slot_id: None,
                right: Some(AccessRight {
                    person_id: person_id.clone(),
                    auction_id: auction_id.clone(),
                    slot_id: None,
                    role: Role::Originator,
                    valid_from: None,
                    valid_until: None,
                }),
                status: ParticipantStatus::invited(person_id, auction_id),
            },
        );
        Self {
            config,
            phase: Phase::Scheduled,
            current_end,
            cap_end,
            extension_count: 0,
            closing: None,
            opened_at: None,
            closed_at: None,
            last_time: 0,
            messages: Vec::new(),
            bids: Vec::new(),
            roster,
            bidder_order: Vec::new(),
        }
    }

    pub fn latest_seq(&self) -> u64 {
        self.messages.last().map_or(0, |m| m.seq)
    }

    pub(crate) fn push_message(&mut self, server_time: Millis, payload: MessagePayload) -> u64 {
        let seq = self.latest_seq() + 1;
        self.messages.push(Message {
            seq,
            server_time,
            payload,
        });
        seq
    }

    /// Messages with `seq > cursor`, in order.
    pub fn messages_after(&self, cursor: u64) -> &[Message] {
        // seq is gapless from 1, so seq n lives at index n-1
        let start = (cursor as usize).min(self.messages.len());
        &self.messages[start..]
    }

    pub fn entry(&self, person: &PersonId) -> Option<&RosterEntry> {
        self.roster.get(person)
    }

    /// The granted right, if any.
    pub fn right_of(&self, person: &PersonId) -> Option<&AccessRight> {
        self.roster.get(person).and_then(|e| e.right.as_ref())
    }

    pub fn auctioneer(&self) -> Option<&PersonId> {
        self.roster
            .values()
            .find(|e| e.role == Role::Auctioneer && e.right.is_some())
            .map(|e| &e.profile.person_id)
    }

    /// Stable `Bidder-<n>` label, assigned in first-bid order.
    pub fn pseudonym(&self, person: &PersonId) -> Option<String> {
        self.bidder_order
            .iter()
            .position(|p| p == person)
            .map(|i| format!("Bidder-{}", i + 1))
    }

    pub fn bids_on<'a>(&'a self, slot: &'a SlotId) -> impl Iterator<Item = &'a Bid> + 'a {
        self.bids.iter().filter(move |b| &b.slot_id == slot)
    }

    /// Latest non-voided bid of `person` on `slot`; bids only ever improve, so
    /// this is also their best.
    pub fn own_best(&self, person: &PersonId, slot: &SlotId) -> Option<&Bid> {
        self.bids
            .iter()
            .rev()
            .find(|b| !b.voided && &b.bidder == person && &b.slot_id == slot)
    }

    /// Next time at which a tick would change the phase, if any.
    pub fn next_deadline(&self) -> Option<Millis> {
        match self.phase {
            Phase::Scheduled => self.auctioneer().map(|_| self.config.start_time),
            Phase::Open | Phase::Extension(_) => Some(self.current_end.min(self.cap_end)),
            Phase::Closing => {
                let announced = self.closing.map_or(self.current_end, |c| c.announced_end);
                Some((announced + self.config.closing_grace_ms).min(self.cap_end))
            }
            Phase::Closed | Phase::Cancelled => None,
        }
    }

    /// SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("auction state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Every structural invariant that must hold in any reachable state.
    /// Returns a description of each broken one.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.current_end > self.cap_end {
            out.push(format!(
                "current_end {} beyond cap {}",
                self.current_end, self.cap_end
            ));
        }
        for (i, m) in self.messages.iter().enumerate() {
            if m.seq != i as u64 + 1 {
                out.push(format!("message seq gap at index {i}: {}", m.seq));
            }
        }
        for pair in self.messages.windows(2) {
            if pair[1].server_time < pair[0].server_time {
                out.push(format!("message time regression at seq {}", pair[1].seq));
            }
        }
        let placed = self
            .messages
            .iter()
            .filter(|m| matches!(m.payload, MessagePayload::BidPlaced { .. }))
            .count();
        if placed != self.bids.len() {
            out.push(format!("{} bids but {placed} BidPlaced messages", self.bids.len()));
        }
        for bid in &self.bids {
            if bid.amount.amount <= 0 {
                out.push(format!("non-positive bid at seq {}", bid.seq));
            }
            let opened = self.opened_at.unwrap_or(self.config.start_time);
            if bid.server_time >= self.cap_end || bid.server_time < opened {
                out.push(format!("bid outside auction window at seq {}", bid.seq));
            }
            match self.messages.get(bid.seq as usize - 1) {
                Some(Message {
                    payload: MessagePayload::BidPlaced { bid: logged },
                    ..
                }) if logged.bid_id == bid.bid_id => {}
                _ => out.push(format!("bid {} has no BidPlaced at its seq", bid.bid_id)),
            }
        }
        let auctioneers = self
            .roster
            .values()
            .filter(|e| e.role == Role::Auctioneer)
            .count();
        if auctioneers > 1 {
            out.push("more than one auctioneer".into());
        }
        let mut admitted_companies = std::collections::BTreeSet::new();
        for e in self.roster.values() {
            if !e.status.is_consistent() {
                out.push(format!("inconsistent status for {}", e.profile.person_id));
            }
            if e.role == Role::Bidder && e.right.is_some() {
                if !e.status.admitted {
                    out.push(format!("bidder right without admission: {}", e.profile.person_id));
                }
                if !admitted_companies.insert(e.profile.company_id.clone()) {
                    out.push(format!("second bidder of company {}", e.profile.company_id));
                }
            }
        }
        out
    }
}
