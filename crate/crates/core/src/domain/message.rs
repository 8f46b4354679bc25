use serde::{Deserialize, Serialize};

use super::{Bid, Millis, Phase, PersonId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    BidPlaced,
    StateChanged,
    ExtensionGranted,
    ClosingAnnounced,
    Closed,
    ParticipantBanned,
    ParticipantAdmitted,
    AuctionCancelled,
    AuctionProlonged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum MessagePayload {
    BidPlaced {
        bid: Bid,
    },
    StateChanged {
        from: Phase,
        to: Phase,
    },
    ExtensionGranted {
        extension: u32,
        new_end: Millis,
        /// Seq of the BidPlaced message that triggered it.
        triggered_by: u64,
    },
    ClosingAnnounced {
        announced_end: Millis,
        grace_until: Millis,
    },
    Closed {
        closed_at: Millis,
    },
    ParticipantBanned {
        person_id: PersonId,
        voided_bids: Vec<u64>,
    },
    ParticipantAdmitted {
        person_id: PersonId,
    },
    AuctionCancelled {},
    AuctionProlonged {
        delta_ms: Millis,
        new_end: Millis,
        new_cap: Millis,
    },
}

impl MessagePayload {
    pub fn kind(&self) -> MessageKind {
        match self {
            MessagePayload::BidPlaced { .. } => MessageKind::BidPlaced,
            MessagePayload::StateChanged { .. } => MessageKind::StateChanged,
            MessagePayload::ExtensionGranted { .. } => MessageKind::ExtensionGranted,
            MessagePayload::ClosingAnnounced { .. } => MessageKind::ClosingAnnounced,
            MessagePayload::Closed { .. } => MessageKind::Closed,
            MessagePayload::ParticipantBanned { .. } => MessageKind::ParticipantBanned,
            MessagePayload::ParticipantAdmitted { .. } => MessageKind::ParticipantAdmitted,
            MessagePayload::AuctionCancelled {} => MessageKind::AuctionCancelled,
            MessagePayload::AuctionProlonged { .. } => MessageKind::AuctionProlonged,
        }
    }
}

/// One entry of an auction's gapless message stream. Bids are one kind of
/// message; the stream is what clients replicate through polling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub server_time: Millis,
    #[serde(flatten)]
    pub payload: MessagePayload,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}
