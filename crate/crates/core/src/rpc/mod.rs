//! Request/response protocol between clients and the auction server.
//!
//! Clients pull: each poll carries the highest message seq the client has
//! seen and gets back every newer message, redacted for its role, plus the
//! current view and the delay before the next poll. The server stamps every
//! command with its own clock and records it in the event log before
//! answering.

mod auth;
mod pacing;

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::domain::{
    AuctionConfig, AuctionFormat, AuctionId, AuctionState, Millis, ParticipantStatus, Person,
    PersonId, Phase, Role, SlotId,
};
use crate::engine::{Applied, BidOutcome, Command, CommandEnvelope, EngineError, Registry};
use crate::store::{EventLog, Store, StoreError};
use crate::views::{authorize, redact_message, render_view, AuctionView, ViewError, ViewMessage};

pub use auth::{hash_password, verify_password, Directory, Sessions, SESSION_IDLE_MS};
pub use pacing::{
    poll_interval, TrafficMonitor, BASE_POLL_MS, DEFAULT_CAPACITY_RPS, MAX_POLL_MS, MIN_POLL_MS,
    NEAR_END_POLL_MS, NEAR_END_WINDOW_MS,
};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum RpcError {
    #[error("missing, unknown or expired token")]
    Unauthorized,
    #[error("not permitted for this role")]
    Forbidden,
    #[error("bad credentials")]
    BadCredentials,
    #[error("unknown auction {auction_id}")]
    UnknownAuction { auction_id: AuctionId },
    #[error("cursor {cursor} is ahead of the latest message {latest}")]
    CursorAhead { cursor: u64, latest: u64 },
    #[error("{code}: {message}")]
    Engine { code: String, message: String },
    #[error("bad request: {reason}")]
    BadRequest { reason: String },
    #[error("storage failure: {reason}")]
    Storage { reason: String },
}

impl RpcError {
    pub fn code(&self) -> &str {
        match self {
            RpcError::Unauthorized => "unauthorized",
            RpcError::Forbidden => "forbidden",
            RpcError::BadCredentials => "bad_credentials",
            RpcError::UnknownAuction { .. } => "unknown_auction",
            RpcError::CursorAhead { .. } => "cursor_ahead",
            RpcError::Engine { code, .. } => code,
            RpcError::BadRequest { .. } => "bad_request",
            RpcError::Storage { .. } => "storage",
        }
    }
}

impl From<EngineError> for RpcError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::UnknownAuction { auction_id } => RpcError::UnknownAuction { auction_id },
            e => RpcError::Engine {
                code: e.code().to_owned(),
                message: e.to_string(),
            },
        }
    }
}

impl From<ViewError> for RpcError {
    fn from(e: ViewError) -> Self {
        match e {
            ViewError::NoAccessRight { .. } => RpcError::Forbidden,
            e => RpcError::BadRequest {
                reason: e.to_string(),
            },
        }
    }
}

impl From<StoreError> for RpcError {
    fn from(e: StoreError) -> Self {
        RpcError::Storage {
            reason: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginResponse {
    pub auth_token: String,
    pub person_id: PersonId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollRequest {
    pub auth_token: String,
    pub auction_id: AuctionId,
    /// Highest message seq already seen.
    pub cursor: u64,
    #[serde(default)]
    pub client_send_time: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollResponse {
    pub server_time: Millis,
    pub messages: Vec<ViewMessage>,
    pub view: AuctionView,
    pub next_poll_ms: Millis,
    pub new_cursor: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BidRequest {
    pub auth_token: String,
    pub auction_id: AuctionId,
    pub slot_id: SlotId,
    pub amount: i64,
    pub cursor_at_submit: u64,
    #[serde(default)]
    pub client_send_time: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BidResponse {
    pub outcome: BidOutcome,
    pub server_time: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuctionSummary {
    pub auction_id: AuctionId,
    pub title: String,
    pub format: AuctionFormat,
    pub phase: Phase,
    pub current_end: Millis,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InviteRequest {
    pub person_id: PersonId,
    pub role: Role,
    #[serde(default)]
    pub slot_id: Option<SlotId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusRow {
    pub person_id: PersonId,
    pub name: String,
    pub company_id: crate::domain::CompanyId,
    pub role: Role,
    pub status: ParticipantStatus,
}

/// Administrative commands, all reserved to the auction's auctioneer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AdminAction {
    SignContract { person_id: PersonId },
    MarkPasswordDelivered { person_id: PersonId },
    Admit { person_id: PersonId },
    Ban { person_id: PersonId },
    Prolong { delta_ms: Millis },
    Cancel,
    Open,
}

impl AdminAction {
    fn into_command(self) -> Command {
        match self {
            AdminAction::SignContract { person_id } => Command::SignContract { person_id },
            AdminAction::MarkPasswordDelivered { person_id } => {
                Command::MarkPasswordDelivered { person_id }
            }
            AdminAction::Admit { person_id } => Command::Admit { person_id },
            AdminAction::Ban { person_id } => Command::Ban { person_id },
            AdminAction::Prolong { delta_ms } => Command::Prolong { delta_ms },
            AdminAction::Cancel => Command::Cancel,
            AdminAction::Open => Command::OpenAuction,
        }
    }
}

/// Where applied commands go.
pub enum Journal {
    /// Nothing is persisted.
    Memory,
    Log(EventLog),
    Dir(Store),
}

impl Journal {
    fn log(&mut self) -> Option<&mut EventLog> {
        match self {
            Journal::Memory => None,
            Journal::Log(log) => Some(log),
            Journal::Dir(store) => Some(store.log()),
        }
    }
}

pub struct ServiceOptions {
    pub capacity_rps: f64,
    /// Seed for session tokens and password salts; `None` draws from the OS.
    pub seed: Option<u64>,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            capacity_rps: DEFAULT_CAPACITY_RPS,
            seed: None,
        }
    }
}

/// The server: directory, sessions, auctions and the journal, driven by one
/// clock. Callers serialize access (one `&mut` at a time), which makes every
/// mutation a single-writer step.
pub struct AuctionService<C: Clock> {
    clock: C,
    directory: Directory,
    sessions: Sessions,
    registry: Registry,
    journal: Journal,
    traffic: TrafficMonitor,
    last_stamp: Millis,
    frozen: Option<String>,
}

impl<C: Clock> AuctionService<C> {
    pub fn new(
        clock: C,
        directory: Directory,
        registry: Registry,
        journal: Journal,
        options: ServiceOptions,
    ) -> Self {
        let rng: Box<dyn RngCore + Send> = match options.seed {
            Some(seed) => Box::new(StdRng::seed_from_u64(seed)),
            None => Box::new(StdRng::from_entropy()),
        };
        let last_stamp = registry.iter().map(|(_, s)| s.last_time).max().unwrap_or(0);
        Self {
            clock,
            directory,
            sessions: Sessions::new(rng),
            registry,
            journal,
            traffic: TrafficMonitor::new(options.capacity_rps),
            last_stamp,
            frozen: None,
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn directory(&self) -> &Directory {
        &self.directory
    }

    pub fn clock(&self) -> &C {
        &self.clock
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.is_some()
    }

    /// Server receipt time; never goes backwards even if the clock does.
    fn stamp(&mut self) -> Millis {
        self.last_stamp = self.last_stamp.max(self.clock.now_ms());
        self.last_stamp
    }

    /// Runs one command through the engine and the journal.
    fn execute(&mut self, env: CommandEnvelope) -> Result<Applied, RpcError> {
        if let Some(reason) = &self.frozen {
            return Err(RpcError::Storage {
                reason: reason.clone(),
            });
        }
        let result = match self.journal.log() {
            None => self.registry.apply(&env),
            Some(log) => {
                let staged = self
                    .registry
                    .apply_with(&env, |result| log.append(&env, result).map(|_| ()));
                match staged {
                    Ok(result) => result,
                    Err(e) => {
                        let err = RpcError::from(e);
                        self.frozen = Some(err.to_string());
                        return Err(err);
                    }
                }
            }
        };
        if let Journal::Dir(store) = &mut self.journal {
            // a failed snapshot only lengthens the next recovery
            let _ = store.maybe_snapshot(&self.registry);
        }
        Ok(result?)
    }

    fn state(&self, id: &AuctionId) -> Result<&AuctionState, RpcError> {
        self.registry
            .get(id)
            .ok_or_else(|| RpcError::UnknownAuction {
                auction_id: id.clone(),
            })
    }

    fn person(&mut self, token: &str, now: Millis) -> Result<PersonId, RpcError> {
        self.sessions
            .resolve(token, now)
            .ok_or(RpcError::Unauthorized)
    }

    fn role_in(&self, state: &AuctionState, person: &PersonId) -> Result<Role, RpcError> {
        let right = state.right_of(person).ok_or(RpcError::Forbidden)?;
        Ok(right.role)
    }

    fn require_auctioneer(&self, id: &AuctionId, person: &PersonId) -> Result<(), RpcError> {
        let state = self.state(id)?;
        authorize(state, person, Role::Auctioneer).map_err(|_| RpcError::Forbidden)
    }

    pub fn login(&mut self, req: &LoginRequest) -> Result<LoginResponse, RpcError> {
        let now = self.stamp();
        let person = self
            .directory
            .authenticate(&req.username, &req.password)
            .ok_or(RpcError::BadCredentials)?
            .person_id
            .clone();
        let auth_token = self.sessions.issue(person.clone(), now);
        Ok(LoginResponse {
            auth_token,
            person_id: person,
        })
    }

    /// Applies a `Tick` to every auction whose next deadline has passed.
    pub fn tick_due(&mut self) -> Result<(), RpcError> {
        let now = self.stamp();
        let due: Vec<AuctionId> = self
            .registry
            .iter()
            .filter(|(_, s)| s.next_deadline().is_some_and(|d| d <= now))
            .map(|(id, _)| id.clone())
            .collect();
        for id in due {
            self.execute(CommandEnvelope::new(id, now, Command::Tick))?;
        }
        Ok(())
    }

    fn tick_if_due(&mut self, id: &AuctionId, now: Millis) -> Result<(), RpcError> {
        let due = self
            .state(id)?
            .next_deadline()
            .is_some_and(|d| d <= now);
        if due && !self.is_frozen() {
            self.execute(CommandEnvelope::new(id.clone(), now, Command::Tick))?;
        }
        Ok(())
    }

    pub fn handle_poll(&mut self, req: &PollRequest) -> Result<PollResponse, RpcError> {
        let now = self.stamp();
        self.traffic.record(now);
        let person = self.person(&req.auth_token, now)?;
        let role = self.role_in(self.state(&req.auction_id)?, &person)?;
        self.tick_if_due(&req.auction_id, now)?;

        let state = self.state(&req.auction_id)?;
        let latest = state.latest_seq();
        if req.cursor > latest {
            return Err(RpcError::CursorAhead {
                cursor: req.cursor,
                latest,
            });
        }
        let view = render_view(state, &person, role)?;
        let messages: Vec<ViewMessage> = state
            .messages_after(req.cursor)
            .iter()
            .map(|m| redact_message(state, m, &person, role))
            .collect();
        let new_cursor = messages.last().map_or(req.cursor, |m| m.seq);
        let remaining = state.current_end.saturating_sub(now);
        let load = self.traffic.load_factor(now);
        Ok(PollResponse {
            server_time: now,
            messages,
            view,
            next_poll_ms: poll_interval(remaining, load),
            new_cursor,
        })
    }

    pub fn submit_bid(&mut self, req: &BidRequest) -> Result<BidResponse, RpcError> {
        let now = self.stamp();
        self.traffic.record(now);
        let person = self.person(&req.auth_token, now)?;
        self.state(&req.auction_id)?;
        let applied = self.execute(CommandEnvelope::new(
            req.auction_id.clone(),
            now,
            Command::PlaceBid {
                person_id: person,
                slot_id: req.slot_id.clone(),
                amount: req.amount,
                cursor_at_submit: req.cursor_at_submit,
            },
        ))?;
        Ok(BidResponse {
            outcome: applied.outcome.expect("bids produce an outcome"),
            server_time: now,
        })
    }

    pub fn list_auctions(&mut self, token: &str) -> Result<Vec<AuctionSummary>, RpcError> {
        let now = self.stamp();
        let person = self.person(token, now)?;
        Ok(self
            .registry
            .iter()
            .filter_map(|(id, s)| {
                let right = s.right_of(&person)?;
                Some(AuctionSummary {
                    auction_id: id.clone(),
                    title: s.config.title.clone(),
                    format: s.config.format,
                    phase: s.phase,
                    current_end: s.current_end,
                    role: right.role,
                })
            })
            .collect())
    }

    /// Creates an auction with the caller as originator.
    pub fn create_auction(
        &mut self,
        token: &str,
        config: AuctionConfig,
    ) -> Result<AuctionSummary, RpcError> {
        let now = self.stamp();
        let person = self.person(token, now)?;
        let originator = self
            .directory
            .person(&person)
            .ok_or(RpcError::Unauthorized)?
            .profile();
        let id = config.auction_id.clone();
        self.execute(CommandEnvelope::new(
            id.clone(),
            now,
            Command::CreateAuction { config, originator },
        ))?;
        let state = self.state(&id)?;
        Ok(AuctionSummary {
            auction_id: id,
            title: state.config.title.clone(),
            format: state.config.format,
            phase: state.phase,
            current_end: state.current_end,
            role: Role::Originator,
        })
    }

    /// Invites a registered person. Allowed for the originator (who has to
    /// bring in the auctioneer) and the auctioneer.
    pub fn invite(
        &mut self,
        token: &str,
        auction_id: &AuctionId,
        req: &InviteRequest,
    ) -> Result<(), RpcError> {
        let now = self.stamp();
        let caller = self.person(token, now)?;
        let role = self.role_in(self.state(auction_id)?, &caller)?;
        if !matches!(role, Role::Originator | Role::Auctioneer) {
            return Err(RpcError::Forbidden);
        }
        let profile = self
            .directory
            .person(&req.person_id)
            .ok_or_else(|| RpcError::BadRequest {
                reason: format!("unknown person {}", req.person_id),
            })?
            .profile();
        self.execute(CommandEnvelope::new(
            auction_id.clone(),
            now,
            Command::Invite {
                profile,
                role: req.role,
                slot_id: req.slot_id.clone(),
            },
        ))?;
        Ok(())
    }

    pub fn admin(
        &mut self,
        token: &str,
        auction_id: &AuctionId,
        action: AdminAction,
    ) -> Result<(), RpcError> {
        let now = self.stamp();
        let caller = self.person(token, now)?;
        self.require_auctioneer(auction_id, &caller)?;
        self.execute(CommandEnvelope::new(
            auction_id.clone(),
            now,
            action.into_command(),
        ))?;
        Ok(())
    }

    pub fn list_status(
        &mut self,
        token: &str,
        auction_id: &AuctionId,
    ) -> Result<Vec<StatusRow>, RpcError> {
        let now = self.stamp();
        let caller = self.person(token, now)?;
        self.require_auctioneer(auction_id, &caller)?;
        Ok(self
            .state(auction_id)?
            .roster
            .values()
            .map(|e| StatusRow {
                person_id: e.profile.person_id.clone(),
                name: e.profile.name.clone(),
                company_id: e.profile.company_id.clone(),
                role: e.role,
                status: e.status.clone(),
            })
            .collect())
    }

    /// Registers a person (used to seed the directory).
    pub fn register(&mut self, person: Person) {
        self.directory.add_person(person);
    }

    pub fn hash_password(&mut self, password: &str) -> String {
        hash_password(password, self.sessions.rng())
    }

    /// Statuses keyed by person, for tests and inspection.
    pub fn statuses(&self, auction_id: &AuctionId) -> BTreeMap<PersonId, ParticipantStatus> {
        self.registry
            .get(auction_id)
            .map(|s| {
                s.roster
                    .iter()
                    .map(|(p, e)| (p.clone(), e.status.clone()))
                    .collect()
            })
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests;
