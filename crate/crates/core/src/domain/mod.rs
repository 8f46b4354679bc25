//! Persistent domain types shared by the engine, the wire protocol, the event
//! log and the report generator. Every type here has a canonical snake_case
//! JSON form.

mod access;
mod config;
mod message;
mod state;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use access::{grant_access, AccessError};
pub use config::{
    validate_config, AuctionConfig, AuctionFormat, ConfigViolation, Quantity, Slot,
    DEFAULT_CLOSING_GRACE_MS, DEFAULT_EXTENSION_SCHEDULE,
};
pub use message::{Message, MessageKind, MessagePayload};
pub use state::{AuctionState, ClosingWindow, Phase, RosterEntry};

/// Server-epoch milliseconds.
pub type Millis = u64;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(
    /// Unique auction identifier.
    AuctionId
);
id_type!(PersonId);
id_type!(CompanyId);
id_type!(SlotId);

/// ISO-4217 currency code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Currency(pub String);

impl Currency {
    pub fn new(code: impl Into<String>) -> Self {
        Self(code.into())
    }

    pub fn is_valid(&self) -> bool {
        self.0.len() == 3 && self.0.bytes().all(|b| b.is_ascii_uppercase())
    }
}

impl fmt::Display for Currency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An amount in integer minor units (cents). Prices never touch floating point.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Money {
    pub amount: i64,
    pub currency: Currency,
}

impl Money {
    pub fn new(amount: i64, currency: impl Into<String>) -> Self {
        Self {
            amount,
            currency: Currency::new(currency),
        }
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.amount, self.currency)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Auctioneer,
    Bidder,
    Originator,
    Observer,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Auctioneer, Role::Bidder, Role::Originator, Role::Observer];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Auctioneer => "auctioneer",
            Role::Bidder => "bidder",
            Role::Originator => "originator",
            Role::Observer => "observer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Company {
    pub company_id: CompanyId,
    pub name: String,
}

/// A registered user. The credential is only ever stored as a hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Person {
    pub person_id: PersonId,
    pub name: String,
    pub company_id: CompanyId,
    pub credential_hash: String,
}

impl Person {
    pub fn profile(&self) -> ParticipantProfile {
        ParticipantProfile {
            person_id: self.person_id.clone(),
            name: self.name.clone(),
            company_id: self.company_id.clone(),
        }
    }
}

/// The identity facts an auction keeps about a participant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub person_id: PersonId,
    pub name: String,
    pub company_id: CompanyId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRight {
    pub person_id: PersonId,
    pub auction_id: AuctionId,
    /// `None` grants every slot of the auction.
    pub slot_id: Option<SlotId>,
    pub role: Role,
    pub valid_from: Option<Millis>,
    pub valid_until: Option<Millis>,
}

impl AccessRight {
    pub fn covers_slot(&self, slot: &SlotId) -> bool {
        self.slot_id.as_ref().is_none_or(|s| s == slot)
    }

    pub fn valid_at(&self, now: Millis) -> bool {
        self.valid_from.is_none_or(|from| now >= from)
            && self.valid_until.is_none_or(|until| now < until)
    }
}

/// Invite, contract and admission workflow of one person in one auction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantStatus {
    pub person_id: PersonId,
    pub auction_id: AuctionId,
    pub invited: bool,
    pub contract_signed: bool,
    pub password_delivered: bool,
    pub admitted: bool,
    pub banned: bool,
}

impl ParticipantStatus {
    pub fn invited(person_id: PersonId, auction_id: AuctionId) -> Self {
        Self {
            person_id,
            auction_id,
            invited: true,
            contract_signed: false,
            password_delivered: false,
            admitted: false,
            banned: false,
        }
    }

    /// admitted => invited && signed, banned => !admitted
    pub fn is_consistent(&self) -> bool {
        (!self.admitted || (self.invited && self.contract_signed)) && !(self.banned && self.admitted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bid {
    pub bid_id: String,
    pub auction_id: AuctionId,
    pub slot_id: SlotId,
    pub bidder: PersonId,
    pub amount: Money,
    pub server_time: Millis,
    pub seq: u64,
    pub voided: bool,
}
