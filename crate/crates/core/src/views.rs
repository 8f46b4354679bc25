//! Role-redacted projections of auction state.
//!
//! This is the only path by which auction data leaves the server. Only the
//! auctioneer can correlate bids with bidders. Bidders see everyone else
//! under stable pseudonyms, plus their own rank and the number of
//! competitors. The originator sees amounts but no identities. Observers see
//! percentages of a reference price instead of money.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AuctionId, AuctionState, CompanyId, Message, MessagePayload, Millis, Money, Phase, PersonId,
    Role, SlotId,
};
use crate::engine::current_ranking;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ViewError {
    #[error("viewer holds no {role} right for this auction")]
    NoAccessRight { role: Role },
    #[error("no reference price available for slot {slot_id}")]
    NoReferenceAvailable { slot_id: SlotId },
    #[error("unknown slot {slot_id}")]
    UnknownSlot { slot_id: SlotId },
}

/// A percentage with two decimals, stored in hundredths of a percent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Percent(pub i64);

impl Percent {
    /// `100 * num / den`, rounded half up to two decimals.
    pub fn ratio(num: i64, den: i64) -> Percent {
        assert!(den > 0, "percentage of a non-positive reference");
        let num = num as i128 * 10_000 * 2 + den as i128;
        Percent(num.div_euclid(2 * den as i128) as i64)
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

/// Reference price of a slot: the historic value if set, else the slot start
/// price, else the first bid ever placed on the slot.
pub fn reference_amount(state: &AuctionState, slot: &SlotId) -> Option<i64> {
    let slot_cfg = state.config.slot(slot)?;
    state
        .config
        .historic_value
        .as_ref()
        .or(slot_cfg.start_price.as_ref())
        .map(|m| m.amount)
        .or_else(|| state.bids_on(slot).next().map(|b| b.amount.amount))
        .filter(|r| *r > 0)
}

/// `amount` as a percentage of the slot's reference price.
pub fn percent_of_reference(
    amount: i64,
    state: &AuctionState,
    slot: &SlotId,
) -> Result<Percent, ViewError> {
    if state.config.slot(slot).is_none() {
        return Err(ViewError::UnknownSlot {
            slot_id: slot.clone(),
        });
    }
    let reference =
        reference_amount(state, slot).ok_or_else(|| ViewError::NoReferenceAvailable {
            slot_id: slot.clone(),
        })?;
    Ok(Percent::ratio(amount, reference))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewValue {
    Money(Money),
    /// e.g. `"75.00%"`
    Percent(String),
    Withheld,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub rank: u32,
    pub label: String,
    pub value: ViewValue,
    /// The viewer's own entry.
    pub own: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotView {
    pub slot_id: SlotId,
    pub entries: Vec<ViewEntry>,
    pub own_rank: Option<u32>,
    pub competitor_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    pub person_id: PersonId,
    pub name: String,
    pub company_id: CompanyId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuctionView {
    pub auction_id: AuctionId,
    pub viewer: PersonId,
    pub viewer_role: Role,
    pub phase: Phase,
    pub current_end: Millis,
    pub server_time: Millis,
    pub slots: Vec<SlotView>,
    /// Pseudonym → identity. Auctioneer only.
    pub identity_map: Option<BTreeMap<String, Identity>>,
}

/// Redacted message as delivered to one viewer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewMessage {
    pub seq: u64,
    pub server_time: Millis,
    #[serde(flatten)]
    pub payload: ViewPayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ViewPayload {
    BidPlaced {
        slot_id: SlotId,
        label: String,
        value: ViewValue,
        own: bool,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        person_id: Option<PersonId>,
    },
    StateChanged {
        from: Phase,
        to: Phase,
    },
    ExtensionGranted {
        extension: u32,
        new_end: Millis,
    },
    ClosingAnnounced {
        announced_end: Millis,
        grace_until: Millis,
    },
    Closed {
        closed_at: Millis,
    },
    ParticipantBanned {
        label: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        person_id: Option<PersonId>,
    },
    ParticipantAdmitted {
        #[serde(skip_serializing_if = "Option::is_none", default)]
        person_id: Option<PersonId>,
    },
    AuctionCancelled {},
    AuctionProlonged {
        delta_ms: Millis,
        new_end: Millis,
        new_cap: Millis,
    },
}

/// Checks that `viewer` holds `role` in this auction.
pub fn authorize(state: &AuctionState, viewer: &PersonId, role: Role) -> Result<(), ViewError> {
    match state.right_of(viewer) {
        Some(right) if right.role == role => Ok(()),
        _ => Err(ViewError::NoAccessRight { role }),
    }
}

struct Redactor<'a> {
    state: &'a AuctionState,
    viewer: &'a PersonId,
    role: Role,
}

impl Redactor<'_> {
    fn reveal(&self, person: &PersonId) -> Option<PersonId> {
        (self.role == Role::Auctioneer || person == self.viewer).then(|| person.clone())
    }

    fn value(&self, amount: i64, slot: &SlotId) -> ViewValue {
        match self.role {
            Role::Observer => match percent_of_reference(amount, self.state, slot) {
                Ok(p) => ViewValue::Percent(format!("{p}%")),
                Err(_) => ViewValue::Withheld,
            },
            _ => ViewValue::Money(Money {
                amount,
                currency: self.state.config.currency.clone(),
            }),
        }
    }

    fn label(&self, person: &PersonId) -> String {
        self.state
            .pseudonym(person)
            .unwrap_or_else(|| "Bidder-?".to_owned())
    }

    fn slot_visible(&self, slot: &SlotId) -> bool {
        self.state
            .right_of(self.viewer)
            .is_some_and(|r| r.covers_slot(slot))
    }
}

/// Projection of `state` for `viewer` acting as `role`. Pure: the same inputs
/// always produce the same view.
pub fn render_view(
    state: &AuctionState,
    viewer: &PersonId,
    role: Role,
) -> Result<AuctionView, ViewError> {
    authorize(state, viewer, role)?;
    let r = Redactor {
        state,
        viewer,
        role,
    };

    let mut slots = Vec::new();
    for slot in state.config.slots.iter().filter(|s| r.slot_visible(&s.slot_id)) {
        let ranking = current_ranking(state, &slot.slot_id).map_err(|_| ViewError::UnknownSlot {
            slot_id: slot.slot_id.clone(),
        })?;
        let entries: Vec<ViewEntry> = ranking
            .iter()
            .map(|e| ViewEntry {
                rank: e.rank,
                label: e.pseudonym.clone(),
                value: r.value(e.amount, &slot.slot_id),
                own: role == Role::Bidder && &e.bidder == viewer,
            })
            .collect();
        let own_rank = match role {
            Role::Bidder => ranking.iter().find(|e| &e.bidder == viewer).map(|e| e.rank),
            _ => None,
        };
        let competitor_count = state
            .roster
            .values()
            .filter(|e| {
                e.role == Role::Bidder
                    && e.right.as_ref().is_some_and(|r| r.covers_slot(&slot.slot_id))
            })
            .count() as u32;
        slots.push(SlotView {
            slot_id: slot.slot_id.clone(),
            entries,
            own_rank,
            competitor_count,
        });
    }

    let identity_map = (role == Role::Auctioneer).then(|| {
        state
            .bidder_order
            .iter()
            .filter_map(|p| {
                let entry = state.entry(p)?;
                Some((
                    state.pseudonym(p)?,
                    Identity {
                        person_id: p.clone(),
                        name: entry.profile.name.clone(),
                        company_id: entry.profile.company_id.clone(),
                    },
                ))
            })
            .collect()
    });

    Ok(AuctionView {
        auction_id: state.config.auction_id.clone(),
        viewer: viewer.clone(),
        viewer_role: role,
        phase: state.phase,
        current_end: state.current_end,
        server_time: state.last_time,
        slots,
        identity_map,
    })
}

/// Redacts one message of the stream for `viewer`. Bids on slots the viewer
/// cannot see keep their place in the stream but carry no data.
pub fn redact_message(
    state: &AuctionState,
    message: &Message,
    viewer: &PersonId,
    role: Role,
) -> ViewMessage {
    let r = Redactor {
        state,
        viewer,
        role,
    };
    let payload = match &message.payload {
        MessagePayload::BidPlaced { bid } => {
            let visible = r.slot_visible(&bid.slot_id);
            ViewPayload::BidPlaced {
                slot_id: bid.slot_id.clone(),
                label: r.label(&bid.bidder),
                value: if visible {
                    r.value(bid.amount.amount, &bid.slot_id)
                } else {
                    ViewValue::Withheld
                },
                own: role == Role::Bidder && &bid.bidder == viewer,
                person_id: r.reveal(&bid.bidder),
            }
        }
        MessagePayload::StateChanged { from, to } => ViewPayload::StateChanged {
            from: *from,
            to: *to,
        },
        MessagePayload::ExtensionGranted {
            extension, new_end, ..
        } => ViewPayload::ExtensionGranted {
            extension: *extension,
            new_end: *new_end,
        },
        MessagePayload::ClosingAnnounced {
            announced_end,
            grace_until,
        } => ViewPayload::ClosingAnnounced {
            announced_end: *announced_end,
            grace_until: *grace_until,
        },
        MessagePayload::Closed { closed_at } => ViewPayload::Closed {
            closed_at: *closed_at,
        },
        MessagePayload::ParticipantBanned { person_id, .. } => ViewPayload::ParticipantBanned {
            label: state.pseudonym(person_id),
            person_id: r.reveal(person_id),
        },
        MessagePayload::ParticipantAdmitted { person_id } => ViewPayload::ParticipantAdmitted {
            person_id: r.reveal(person_id),
        },
        MessagePayload::AuctionCancelled {} => ViewPayload::AuctionCancelled {},
        MessagePayload::AuctionProlonged {
            delta_ms,
            new_end,
            new_cap,
        } => ViewPayload::AuctionProlonged {
            delta_ms: *delta_ms,
            new_end: *new_end,
            new_cap: *new_cap,
        },
    };
    ViewMessage {
        seq: message.seq,
        server_time: message.server_time,
        payload,
    }
}
