//! The auction state machine.
//!
//! State is a pure fold over a totally ordered command sequence: the same
//! commands applied to the same state always produce the same state and the
//! same messages. Exactly one executor applies commands to a given auction.

mod bidding;
mod lifecycle;
mod registry;
mod results;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AccessError, AuctionConfig, AuctionId, AuctionState, ConfigViolation, Message, Millis,
    ParticipantProfile, Phase, PersonId, Role, SlotId,
};

pub use bidding::{current_ranking, BidOutcome, RankEntry, RejectReason};
pub use registry::Registry;
pub use results::{binding_result, determine_winners, BindingResult, SlotWinner};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    CreateAuction {
        config: AuctionConfig,
        originator: ParticipantProfile,
    },
    Invite {
        profile: ParticipantProfile,
        role: Role,
        slot_id: Option<SlotId>,
    },
    SignContract {
        person_id: PersonId,
    },
    MarkPasswordDelivered {
        person_id: PersonId,
    },
    Admit {
        person_id: PersonId,
    },
    OpenAuction,
    PlaceBid {
        person_id: PersonId,
        slot_id: SlotId,
        amount: i64,
        /// Highest message seq the client had seen when it sent the bid.
        cursor_at_submit: u64,
    },
    Tick,
    Ban {
        person_id: PersonId,
    },
    Prolong {
        delta_ms: Millis,
    },
    Cancel,
}

/// A command stamped with its server receipt time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandEnvelope {
    pub auction_id: AuctionId,
    pub received_at: Millis,
    #[serde(flatten)]
    pub command: Command,
}

impl CommandEnvelope {
    pub fn new(auction_id: impl Into<AuctionId>, received_at: Millis, command: Command) -> Self {
        Self {
            auction_id: auction_id.into(),
            received_at,
            command,
        }
    }
}

/// What one command produced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Applied {
    pub messages: Vec<Message>,
    pub outcome: Option<BidOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum EngineError {
    #[error("command not allowed in phase {phase:?}")]
    IllegalPhase { phase: Phase },
    #[error("unknown reference: {what}")]
    UnknownReference { what: String },
    #[error("receipt time {now} precedes last command at {last}")]
    ClockRegression { last: Millis, now: Millis },
    #[error("person {person_id} not found in auction")]
    NotFound { person_id: PersonId },
    #[error("auction already closed")]
    AlreadyClosed,
    #[error("auction not closed yet")]
    NotClosed,
    #[error("participant has not signed the auction contract")]
    NotSigned,
    #[error("participant is banned")]
    Banned,
    #[error("participant is not invited as a bidder")]
    NotABidder,
    #[error("person is already part of this auction")]
    AlreadyInvited,
    #[error("role {role} cannot be assigned this way")]
    InvalidRole { role: Role },
    #[error("no auctioneer assigned")]
    NoAuctioneer,
    #[error(transparent)]
    Access(#[from] AccessError),
    #[error("auction {auction_id} already exists")]
    AuctionExists { auction_id: AuctionId },
    #[error("unknown auction {auction_id}")]
    UnknownAuction { auction_id: AuctionId },
    #[error("invalid auction config")]
    InvalidConfig { violations: Vec<ConfigViolation> },
    #[error("command must go through the registry")]
    IllegalCommand,
}

impl EngineError {
    /// Stable snake_case code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::IllegalPhase { .. } => "illegal_phase",
            EngineError::UnknownReference { .. } => "unknown_reference",
            EngineError::ClockRegression { .. } => "clock_regression",
            EngineError::NotFound { .. } => "not_found",
            EngineError::AlreadyClosed => "already_closed",
            EngineError::NotClosed => "not_closed",
            EngineError::NotSigned => "not_signed",
            EngineError::Banned => "banned",
            EngineError::NotABidder => "not_a_bidder",
            EngineError::AlreadyInvited => "already_invited",
            EngineError::InvalidRole { .. } => "invalid_role",
            EngineError::NoAuctioneer => "no_auctioneer",
            EngineError::Access(AccessError::SecondBidderSameCompany) => {
                "second_bidder_same_company"
            }
            EngineError::Access(AccessError::RoleConflict) => "role_conflict",
            EngineError::Access(AccessError::NotAdmitted) => "not_admitted",
            EngineError::Access(AccessError::UnknownPerson(_)) => "not_found",
            EngineError::Access(AccessError::AuctioneerAlreadyAssigned) => {
                "auctioneer_already_assigned"
            }
            EngineError::AuctionExists { .. } => "auction_exists",
            EngineError::UnknownAuction { .. } => "unknown_auction",
            EngineError::InvalidConfig { .. } => "invalid_config",
            EngineError::IllegalCommand => "illegal_command",
        }
    }
}

impl AuctionState {
    /// Applies one command at its receipt time.
    ///
    /// Time is advanced first (the same as a `Tick` at `received_at`), then the
    /// command runs. A command that returns `Err` changes nothing beyond that
    /// time advance.
    pub fn apply(&mut self, env: &CommandEnvelope) -> Result<Applied, EngineError> {
        let now = env.received_at;
        if now < self.last_time {
            return Err(EngineError::ClockRegression {
                last: self.last_time,
                now,
            });
        }
        let first_new = self.messages.len();
        self.advance(now);
        self.last_time = now;

        let outcome = match &env.command {
            Command::CreateAuction { .. } => return Err(EngineError::IllegalCommand),
            Command::Tick => None,
            Command::OpenAuction => {
                self.open(now)?;
                None
            }
            Command::Invite {
                profile,
                role,
                slot_id,
            } => {
                self.invite(profile, *role, slot_id.as_ref())?;
                None
            }
            Command::SignContract { person_id } => {
                self.update_status(person_id, |s| s.contract_signed = true)?;
                None
            }
            Command::MarkPasswordDelivered { person_id } => {
                self.update_status(person_id, |s| s.password_delivered = true)?;
                None
            }
            Command::Admit { person_id } => {
                self.admit(person_id, now)?;
                None
            }
            Command::PlaceBid {
                person_id,
                slot_id,
                amount,
                cursor_at_submit,
            } => Some(self.place_bid(person_id, slot_id, *amount, *cursor_at_submit, now)?),
            Command::Ban { person_id } => {
                self.ban(person_id, now)?;
                None
            }
            Command::Prolong { delta_ms } => {
                self.prolong(*delta_ms, now)?;
                None
            }
            Command::Cancel => {
                self.cancel(now)?;
                None
            }
        };
        Ok(Applied {
            messages: self.messages[first_new..].to_vec(),
            outcome,
        })
    }
}

/// Pure form of [`AuctionState::apply`]: returns the successor state and
/// leaves the input untouched.
pub fn apply(
    state: &AuctionState,
    env: &CommandEnvelope,
) -> Result<(AuctionState, Applied), EngineError> {
    let mut next = state.clone();
    let applied = next.apply(env)?;
    Ok((next, applied))
}

#[cfg(test)]
pub(crate) mod testkit {
    use super::*;
    use crate::domain::{AuctionFormat, Currency, Money, Quantity, Slot};

    pub fn profile(person: &str, company: &str) -> ParticipantProfile {
        ParticipantProfile {
            person_id: person.into(),
            name: format!("{} Name", person.to_uppercase()),
            company_id: company.into(),
        }
    }

    pub fn config(format: AuctionFormat) -> AuctionConfig {
        AuctionConfig {
            auction_id: "a1".into(),
            title: "test".into(),
            format,
            currency: Currency::new("EUR"),
            start_time: 60_000,
            main_duration_ms: 3_540_000,
            hard_cap_ms: Some(7_200_000),
            extension_schedule: vec![180_000, 120_000, 60_000],
            closing_grace_ms: 3_000,
            tick_size: Money::new(100, "EUR"),
            historic_value: None,
            target_value: None,
            slots: vec![Slot {
                slot_id: "s1".into(),
                description: "lot".into(),
                quantity: Quantity {
                    value: 1,
                    unit: "lot".into(),
                },
                start_price: None,
            }],
        }
    }

    pub fn cmd(now: Millis, command: Command) -> CommandEnvelope {
        CommandEnvelope::new("a1", now, command)
    }

    /// Auction with auctioneer `auc`, observer `obs`, and admitted bidders
    /// `pA`, `pB`, `pC` of companies `cA`, `cB`, `cC`; not yet opened.
    pub fn staged(config: AuctionConfig) -> AuctionState {
        let mut s = AuctionState::new(config, profile("orig", "buyer"));
        let mut run = |c: Command| s.apply(&cmd(0, c)).unwrap();
        run(Command::Invite {
            profile: profile("auc", "house"),
            role: Role::Auctioneer,
            slot_id: None,
        });
        run(Command::Invite {
            profile: profile("obs", "cA"),
            role: Role::Observer,
            slot_id: None,
        });
        for (p, c) in [("pA", "cA"), ("pB", "cB"), ("pC", "cC")] {
            run(Command::Invite {
                profile: profile(p, c),
                role: Role::Bidder,
                slot_id: None,
            });
            run(Command::SignContract {
                person_id: p.into(),
            });
            run(Command::Admit {
                person_id: p.into(),
            });
        }
        s
    }

    pub fn opened(config: AuctionConfig) -> AuctionState {
        let start = config.start_time;
        let mut s = staged(config);
        s.apply(&cmd(start, Command::Tick)).unwrap();
        assert_eq!(s.phase, Phase::Open);
        s
    }

    pub fn bid(s: &mut AuctionState, now: Millis, person: &str, amount: i64) -> BidOutcome {
        let cursor = s.latest_seq();
        s.apply(&cmd(
            now,
            Command::PlaceBid {
                person_id: person.into(),
                slot_id: "s1".into(),
                amount,
                cursor_at_submit: cursor,
            },
        ))
        .unwrap()
        .outcome
        .unwrap()
    }
}
