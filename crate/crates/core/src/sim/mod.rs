//! Discrete-event simulation of whole auctions.
//!
//! A scenario describes the auctions, the participating clients, how each
//! client behaves and how its network link delays traffic. [`run`] plays it
//! out in virtual time against a real [`AuctionService`] driven by a manual
//! clock: clients poll, estimate their clock offset, react to what they see
//! and bid, and every request and response travels with a sampled delay.
//! Runs are fully determined by the scenario (including its seed).

mod check;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::ManualClock;
use crate::domain::{
    validate_config, AuctionConfig, AuctionFormat, AuctionId, CompanyId, Millis, Money, Person,
    PersonId, Phase, Role, SlotId,
};
use crate::engine::{BidOutcome, Registry};
use crate::rpc::{
    hash_password, AdminAction, AuctionService, BidRequest, Directory, InviteRequest, Journal,
    LoginRequest, PollRequest, PollResponse, RpcError, ServiceOptions, DEFAULT_CAPACITY_RPS,
};
use crate::store::{read_log, EventLog, FlushPolicy, LogRecord, MemorySink};
use crate::timesync::{remaining_ms, OffsetEstimator, SyncParams, SyncSample};
use crate::views::{AuctionView, ViewValue};

pub use check::{
    check_close_agreement, check_delivery, check_fairness, check_no_late_win, CloseAgreement,
};

const ORIGINATOR: &str = "sim-originator";
const AUCTIONEER: &str = "sim-auctioneer";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
}

fn default_capacity() -> f64 {
    DEFAULT_CAPACITY_RPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub auctions: Vec<AuctionConfig>,
    pub agents: Vec<AgentSpec>,
    /// Virtual time at which the run stops, whatever is still pending.
    pub run_until: Millis,
    #[serde(default = "default_capacity")]
    pub capacity_rps: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub person_id: PersonId,
    /// Defaults to a company of the agent's own.
    #[serde(default)]
    pub company_id: Option<CompanyId>,
    pub role: Role,
    /// Defaults to the first auction.
    #[serde(default)]
    pub auction_id: Option<AuctionId>,
    /// Slot the agent bids on (and is restricted to, for bidders).
    #[serde(default)]
    pub slot_id: Option<SlotId>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub link: LinkModel,
    /// The agent's clock reads server time plus this.
    #[serde(default)]
    pub clock_skew_ms: i64,
    /// First poll goes out at this time (plus a random stagger below 1 s).
    #[serde(default)]
    pub join_at: Millis,
    #[serde(default)]
    pub disconnect_at: Option<Millis>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Passive,
    /// Fixed bids sent at fixed (true) times, whatever the client has seen.
    Scripted { bids: Vec<ScriptedBid> },
    /// Whenever the client is not leading, it beats the best bid by one tick
    /// `reaction_ms` after seeing it, never going past `limit`.
    Reactive {
        #[serde(default)]
        opening: Option<i64>,
        reaction_ms: Millis,
        limit: i64,
    },
    /// Waits for the end and bids once per announced end, `lead_ms` before it
    /// by the client's own offset estimate. A negative lead aims past the end.
    Sniper { lead_ms: i64, opening: i64, limit: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedBid {
    pub at: Millis,
    pub amount: i64,
}

/// One-way delay model, sampled independently per message and direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkModel {
    Constant { delay_ms: Millis },
    /// `base + U(0, jitter)`
    Uniform { base_ms: Millis, jitter_ms: Millis },
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel::Constant { delay_ms: 0 }
    }
}

impl LinkModel {
    fn sample(self, rng: &mut ChaCha8Rng) -> Millis {
        match self {
            LinkModel::Constant { delay_ms } => delay_ms,
            LinkModel::Uniform { base_ms, jitter_ms } => base_ms + rng.gen_range(0..=jitter_ms),
        }
    }

    pub fn max_delay(self) -> Millis {
        match self {
            LinkModel::Constant { delay_ms } => delay_ms,
            LinkModel::Uniform { base_ms, jitter_ms } => base_ms + jitter_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BidRecord {
    pub person_id: PersonId,
    pub auction_id: AuctionId,
    pub slot_id: SlotId,
    pub amount: i64,
    pub sent_at: Millis,
    /// Phase in the last poll response the client had received.
    pub last_seen_phase: Option<Phase>,
    pub cursor: u64,
    pub up_delay: Millis,
    pub received_at: Option<Millis>,
    pub outcome: Option<BidOutcome>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientTrace {
    pub person_id: PersonId,
    pub auction_id: AuctionId,
    pub role: Role,
    pub disconnected: bool,
    pub polls: u32,
    /// Message seqs in the order they were delivered.
    pub delivered: Vec<u64>,
    /// True time at which a response showing the final phase arrived.
    pub closed_observed_at: Option<Millis>,
    pub true_offset_ms: i64,
    /// Offset estimate error right after the connect burst.
    pub burst_error_ms: Option<i64>,
    pub final_error_ms: Option<i64>,
    pub max_delay_ms: Millis,
    pub max_next_poll_ms: Millis,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuctionTrace {
    pub auction_id: AuctionId,
    pub phase: Phase,
    pub current_end: Millis,
    pub cap_end: Millis,
    pub closing_grace_ms: Millis,
    pub closed_at: Option<Millis>,
    pub latest_seq: u64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub seed: u64,
    /// Every command and message, as the event log recorded them.
    pub log: Vec<LogRecord>,
    pub clients: Vec<ClientTrace>,
    pub bids: Vec<BidRecord>,
    pub auctions: Vec<AuctionTrace>,
    pub registry_digest: String,
}

impl Trace {
    pub fn auction(&self, id: &AuctionId) -> Option<&AuctionTrace> {
        self.auctions.iter().find(|a| &a.auction_id == id)
    }
}

#[derive(Debug)]
enum Event {
    Tick,
    Wake(usize),
    PollArrives {
        agent: usize,
        cursor: u64,
        t0: i64,
        down: Millis,
    },
    PollReturns {
        agent: usize,
        t0: i64,
        response: Result<PollResponse, RpcError>,
    },
    BidSend {
        agent: usize,
        amount: i64,
    },
    BidArrives {
        record: usize,
        down: Millis,
    },
    BidReturns {
        agent: usize,
    },
}

struct Client {
    spec: AgentSpec,
    auction_id: AuctionId,
    slot_id: SlotId,
    token: String,
    cursor: u64,
    estimator: OffsetEstimator,
    last_phase: Option<Phase>,
    bid_pending: bool,
    /// The end a sniper last aimed at.
    sniped_end: Option<Millis>,
    done: bool,
    trace: ClientTrace,
}

impl Client {
    fn local(&self, now: Millis) -> i64 {
        now as i64 + self.spec.clock_skew_ms
    }

    fn connected_at(&self, now: Millis) -> bool {
        !self.done && self.spec.disconnect_at.is_none_or(|d| now < d)
    }
}

struct Sim {
    rng: ChaCha8Rng,
    clock: ManualClock,
    svc: AuctionService<ManualClock>,
    configs: BTreeMap<AuctionId, AuctionConfig>,
    clients: Vec<Client>,
    bids: Vec<BidRecord>,
    pending_bids: BTreeMap<usize, BidRequest>,
    queue: BTreeMap<(Millis, u64), Event>,
    counter: u64,
    tick_times: BTreeSet<Millis>,
}

impl Sim {
    fn push(&mut self, at: Millis, ev: Event) {
        self.counter += 1;
        self.queue.insert((at, self.counter), ev);
    }

    fn schedule_tick(&mut self, now: Millis) {
        let next = self
            .svc
            .registry()
            .iter()
            .filter_map(|(_, s)| s.next_deadline())
            .min();
        if let Some(at) = next {
            let at = at.max(now);
            if self.tick_times.insert(at) {
                self.push(at, Event::Tick);
            }
        }
    }

    fn handle(&mut self, now: Millis, ev: Event) {
        match ev {
            Event::Tick => {
                self.tick_times.remove(&now);
                let _ = self.svc.tick_due();
                self.schedule_tick(now);
            }
            Event::Wake(i) => {
                let c = &mut self.clients[i];
                if !c.connected_at(now) {
                    return;
                }
                let up = c.spec.link.sample(&mut self.rng);
                let down = c.spec.link.sample(&mut self.rng);
                c.trace.max_delay_ms = c.trace.max_delay_ms.max(up).max(down);
                c.trace.polls += 1;
                let (cursor, t0) = (c.cursor, c.local(now));
                self.push(
                    now + up,
                    Event::PollArrives {
                        agent: i,
                        cursor,
                        t0,
                        down,
                    },
                );
            }
            Event::PollArrives {
                agent,
                cursor,
                t0,
                down,
            } => {
                let c = &self.clients[agent];
                let req = PollRequest {
                    auth_token: c.token.clone(),
                    auction_id: c.auction_id.clone(),
                    cursor,
                    client_send_time: t0,
                };
                let response = self.svc.handle_poll(&req);
                self.push(
                    now + down,
                    Event::PollReturns {
                        agent,
                        t0,
                        response,
                    },
                );
                self.schedule_tick(now);
            }
            Event::PollReturns {
                agent,
                t0,
                response,
            } => self.poll_returned(now, agent, t0, response),
            Event::BidSend { agent, amount } => {
                let c = &mut self.clients[agent];
                if !c.connected_at(now) {
                    c.bid_pending = false;
                    return;
                }
                let up = c.spec.link.sample(&mut self.rng);
                let down = c.spec.link.sample(&mut self.rng);
                c.trace.max_delay_ms = c.trace.max_delay_ms.max(up).max(down);
                let req = BidRequest {
                    auth_token: c.token.clone(),
                    auction_id: c.auction_id.clone(),
                    slot_id: c.slot_id.clone(),
                    amount,
                    cursor_at_submit: c.cursor,
                    client_send_time: c.local(now),
                };
                self.bids.push(BidRecord {
                    person_id: c.spec.person_id.clone(),
                    auction_id: c.auction_id.clone(),
                    slot_id: c.slot_id.clone(),
                    amount,
                    sent_at: now,
                    last_seen_phase: c.last_phase,
                    cursor: c.cursor,
                    up_delay: up,
                    received_at: None,
                    outcome: None,
                    error: None,
                });
                let record = self.bids.len() - 1;
                self.pending_bids.insert(record, req);
                self.push(now + up, Event::BidArrives { record, down });
            }
            Event::BidArrives { record, down } => {
                let req = self.pending_bids.remove(&record).expect("bid in flight");
                let rec = &mut self.bids[record];
                rec.received_at = Some(now);
                match self.svc.submit_bid(&req) {
                    Ok(resp) => rec.outcome = Some(resp.outcome),
                    Err(e) => rec.error = Some(e.code().to_owned()),
                }
                let agent = self
                    .clients
                    .iter()
                    .position(|c| c.spec.person_id == rec.person_id)
                    .expect("bid from a known agent");
                self.push(now + down, Event::BidReturns { agent });
                self.schedule_tick(now);
            }
            Event::BidReturns { agent } => {
                self.clients[agent].bid_pending = false;
            }
        }
    }

    fn poll_returned(
        &mut self,
        now: Millis,
        agent: usize,
        t0: i64,
        response: Result<PollResponse, RpcError>,
    ) {
        let c = &mut self.clients[agent];
        if !c.connected_at(now) {
            return;
        }
        let r = match response {
            Ok(r) => r,
            Err(e) => {
                c.trace.errors.push(e.code().to_owned());
                match e {
                    RpcError::Unauthorized | RpcError::Forbidden => c.done = true,
                    _ => self.push(now + 1_000, Event::Wake(agent)),
                }
                return;
            }
        };
        c.trace.delivered.extend(r.messages.iter().map(|m| m.seq));
        c.cursor = r.new_cursor;
        c.trace.max_next_poll_ms = c.trace.max_next_poll_ms.max(r.next_poll_ms);

        let sample = SyncSample::new(t0, r.server_time as i64, c.local(now));
        if let Ok(est) = c.estimator.observe(sample) {
            let err = est.offset_ms - c.trace.true_offset_ms;
            if est.sample_count as usize == SyncParams::default().burst {
                c.trace.burst_error_ms = Some(err);
            }
            c.trace.final_error_ms = Some(err);
        }

        c.last_phase = Some(r.view.phase);
        if r.view.phase.is_terminal() {
            c.trace.closed_observed_at = Some(now);
            c.done = true;
            return;
        }
        let wait = if c.estimator.in_burst() {
            0
        } else {
            r.next_poll_ms
        };
        self.push(now + wait, Event::Wake(agent));

        if let Some((amount, delay)) = self.reaction(agent, now, &r.view) {
            self.clients[agent].bid_pending = true;
            self.push(now + delay, Event::BidSend { agent, amount });
        }
    }

    /// The bid a client sends after seeing `view`, and how long it waits.
    fn reaction(&mut self, agent: usize, now: Millis, view: &AuctionView) -> Option<(i64, Millis)> {
        let c = &self.clients[agent];
        let (opening, limit, wait) = match &c.spec.strategy {
            Strategy::Reactive {
                opening,
                reaction_ms,
                limit,
            } => (*opening, *limit, *reaction_ms),
            Strategy::Sniper {
                lead_ms,
                opening,
                limit,
            } => {
                if c.sniped_end == Some(view.current_end) {
                    return None;
                }
                let est = c.estimator.current()?;
                let left = remaining_ms(view.current_end, c.local(now), &est) as i64;
                (Some(*opening), *limit, (left - lead_ms).max(0) as Millis)
            }
            _ => return None,
        };
        if c.bid_pending || c.spec.role != Role::Bidder || !view.phase.is_running() {
            return None;
        }
        let slot = view.slots.iter().find(|s| s.slot_id == c.slot_id)?;
        if slot.own_rank == Some(1) {
            return None;
        }
        let config = &self.configs[&c.auction_id];
        let amount = match slot.entries.first().map(|e| &e.value) {
            Some(ViewValue::Money(Money { amount, .. })) => match config.format {
                AuctionFormat::Reverse => amount - config.tick_size.amount,
                AuctionFormat::English => amount + config.tick_size.amount,
            },
            Some(_) => return None,
            None => opening?,
        };
        let within = match config.format {
            AuctionFormat::Reverse => amount >= limit,
            AuctionFormat::English => amount <= limit,
        };
        if within && matches!(c.spec.strategy, Strategy::Sniper { .. }) {
            self.clients[agent].sniped_end = Some(view.current_end);
        }
        within.then_some((amount, wait))
    }
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::ScenarioInvalid(msg.into())
}

fn validate(s: &Scenario) -> Result<(), SimError> {
    if s.auctions.is_empty() {
        return Err(invalid("no auctions"));
    }
    let mut ids = BTreeSet::new();
    for c in &s.auctions {
        if !ids.insert(&c.auction_id) {
            return Err(invalid(format!("duplicate auction {}", c.auction_id)));
        }
        if !validate_config(c).is_empty() {
            return Err(invalid(format!("invalid config for {}", c.auction_id)));
        }
        if c.start_time == 0 {
            return Err(invalid("auctions must start after setup at time 0"));
        }
    }
    let mut people = BTreeSet::new();
    for a in &s.agents {
        if !people.insert(&a.person_id) || [ORIGINATOR, AUCTIONEER].contains(&a.person_id.as_str())
        {
            return Err(invalid(format!("duplicate agent {}", a.person_id)));
        }
        if let Some(id) = &a.auction_id {
            let config = s
                .auctions
                .iter()
                .find(|c| &c.auction_id == id)
                .ok_or_else(|| invalid(format!("unknown auction {id}")))?;
            if let Some(slot) = &a.slot_id {
                config
                    .slot(slot)
                    .ok_or_else(|| invalid(format!("unknown slot {slot}")))?;
            }
        }
        if a.role == Role::Originator {
            return Err(invalid("originators are created by the harness"));
        }
    }
    Ok(())
}

/// Plays out `scenario` and returns everything that happened.
pub fn run(scenario: &Scenario) -> Result<Trace, SimError> {
    validate(scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let clock = ManualClock::new(0);
    let sink = MemorySink::default();

    let password = |p: &str| format!("pw-{p}");
    let mut directory = Directory::default();
    let mut add = |id: &str, company: &str, rng: &mut ChaCha8Rng| {
        directory.persons.push(Person {
            person_id: id.into(),
            name: format!("{id} (sim)"),
            company_id: company.into(),
            credential_hash: hash_password(&password(id), rng),
        })
    };
    add(ORIGINATOR, "sim-buyer", &mut rng);
    add(AUCTIONEER, "sim-house", &mut rng);
    for a in &scenario.agents {
        let company = a
            .company_id
            .clone()
            .unwrap_or_else(|| CompanyId::new(format!("co-{}", a.person_id)));
        add(a.person_id.as_str(), company.as_str(), &mut rng);
    }

    let mut svc = AuctionService::new(
        clock.clone(),
        directory,
        Registry::new(),
        Journal::Log(EventLog::new(Box::new(sink.clone()), 0, FlushPolicy::Batch)),
        ServiceOptions {
            capacity_rps: scenario.capacity_rps,
            seed: Some(scenario.seed),
        },
    );
    let login = |svc: &mut AuctionService<ManualClock>, id: &str| {
        svc.login(&LoginRequest {
            username: id.to_owned(),
            password: password(id),
        })
        .map(|r| r.auth_token)
        .map_err(|e| invalid(format!("login {id}: {e}")))
    };
    let orig = login(&mut svc, ORIGINATOR)?;
    let house = login(&mut svc, AUCTIONEER)?;
    let setup_err = |e: RpcError| invalid(format!("setup: {e}"));

    let first = scenario.auctions[0].auction_id.clone();
    for config in &scenario.auctions {
        let id = config.auction_id.clone();
        svc.create_auction(&orig, config.clone()).map_err(setup_err)?;
        let has_auctioneer = scenario
            .agents
            .iter()
            .any(|a| a.role == Role::Auctioneer && a.auction_id.as_ref().unwrap_or(&first) == &id);
        let auctioneer = if has_auctioneer {
            None
        } else {
            svc.invite(
                &orig,
                &id,
                &InviteRequest {
                    person_id: AUCTIONEER.into(),
                    role: Role::Auctioneer,
                    slot_id: None,
                },
            )
            .map_err(setup_err)?;
            Some(house.clone())
        };
        // agent auctioneers first, so that they can run the rest
        let mut agents: Vec<&AgentSpec> = scenario
            .agents
            .iter()
            .filter(|a| a.auction_id.as_ref().unwrap_or(&first) == &id)
            .collect();
        agents.sort_by_key(|a| a.role != Role::Auctioneer);
        let mut admin = auctioneer;
        for a in agents {
            let inviter = admin.clone().unwrap_or_else(|| orig.clone());
            svc.invite(
                &inviter,
                &id,
                &InviteRequest {
                    person_id: a.person_id.clone(),
                    role: a.role,
                    slot_id: if a.role == Role::Bidder {
                        a.slot_id.clone()
                    } else {
                        None
                    },
                },
            )
            .map_err(setup_err)?;
            if a.role == Role::Auctioneer {
                admin = Some(login(&mut svc, a.person_id.as_str())?);
            }
            if a.role == Role::Bidder {
                let admin = admin.as_deref().expect("auctioneer invited first");
                for action in [
                    AdminAction::SignContract {
                        person_id: a.person_id.clone(),
                    },
                    AdminAction::Admit {
                        person_id: a.person_id.clone(),
                    },
                ] {
                    svc.admin(admin, &id, action).map_err(setup_err)?;
                }
            }
        }
    }

    let configs: BTreeMap<AuctionId, AuctionConfig> = scenario
        .auctions
        .iter()
        .map(|c| (c.auction_id.clone(), c.clone()))
        .collect();
    let mut clients = Vec::new();
    for a in &scenario.agents {
        let auction_id = a.auction_id.clone().unwrap_or_else(|| first.clone());
        let slot_id = a
            .slot_id
            .clone()
            .unwrap_or_else(|| configs[&auction_id].slots[0].slot_id.clone());
        let token = login(&mut svc, a.person_id.as_str())?;
        clients.push(Client {
            auction_id: auction_id.clone(),
            slot_id,
            token,
            cursor: 0,
            estimator: OffsetEstimator::new(SyncParams::default()),
            last_phase: None,
            bid_pending: false,
            sniped_end: None,
            done: false,
            trace: ClientTrace {
                person_id: a.person_id.clone(),
                auction_id,
                role: a.role,
                disconnected: a.disconnect_at.is_some_and(|d| d < scenario.run_until),
                polls: 0,
                delivered: Vec::new(),
                closed_observed_at: None,
                true_offset_ms: -a.clock_skew_ms,
                burst_error_ms: None,
                final_error_ms: None,
                max_delay_ms: 0,
                max_next_poll_ms: 0,
                errors: Vec::new(),
            },
            spec: a.clone(),
        });
    }

    let mut sim = Sim {
        rng,
        clock,
        svc,
        configs,
        clients,
        bids: Vec::new(),
        pending_bids: BTreeMap::new(),
        queue: BTreeMap::new(),
        counter: 0,
        tick_times: BTreeSet::new(),
    };
    for i in 0..sim.clients.len() {
        let stagger = sim.rng.gen_range(0..1_000);
        let join = sim.clients[i].spec.join_at + stagger;
        sim.push(join, Event::Wake(i));
        if let Strategy::Scripted { bids } = sim.clients[i].spec.strategy.clone() {
            for b in bids {
                sim.push(
                    b.at,
                    Event::BidSend {
                        agent: i,
                        amount: b.amount,
                    },
                );
            }
        }
    }
    sim.schedule_tick(0);

    while let Some(((at, _), ev)) = sim.queue.pop_first() {
        if at > scenario.run_until {
            break;
        }
        sim.clock.set(at);
        sim.handle(at, ev);
    }

    let log = read_log(&sink.bytes()[..])
        .map_err(|e| invalid(format!("log: {e}")))?
        .records;
    let auctions = sim
        .svc
        .registry()
        .iter()
        .map(|(id, s)| AuctionTrace {
            auction_id: id.clone(),
            phase: s.phase,
            current_end: s.current_end,
            cap_end: s.cap_end,
            closing_grace_ms: s.config.closing_grace_ms,
            closed_at: s.closed_at,
            latest_seq: s.latest_seq(),
            digest: s.digest(),
        })
        .collect();
    Ok(Trace {
        seed: scenario.seed,
        log,
        clients: sim.clients.into_iter().map(|c| c.trace).collect(),
        bids: sim.bids,
        auctions,
        registry_digest: sim.svc.registry().digest(),
    })
}

#[cfg(test)]
mod tests;
