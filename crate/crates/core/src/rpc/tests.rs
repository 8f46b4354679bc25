use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::clock::ManualClock;
use crate::domain::{AuctionFormat, MessageKind};
use crate::engine::testkit::config;
use crate::engine::RejectReason;
use crate::store::{read_log, replay, FaultyWriter, FlushPolicy, MemorySink};
use crate::views::ViewPayload;

const PEOPLE: [(&str, &str); 6] = [
    ("orig", "buyer"),
    ("auc", "house"),
    ("pA", "cA"),
    ("pB", "cB"),
    ("obs", "cA"),
    ("pA2", "cA"),
];

fn directory() -> Directory {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    Directory {
        companies: vec![],
        persons: PEOPLE
            .iter()
            .map(|(p, c)| Person {
                person_id: (*p).into(),
                name: format!("{p} full name"),
                company_id: (*c).into(),
                credential_hash: hash_password(&format!("pw-{p}"), &mut rng),
            })
            .collect(),
    }
}

struct Fixture {
    svc: AuctionService<ManualClock>,
    clock: ManualClock,
    tokens: BTreeMap<&'static str, String>,
}

impl Fixture {
    fn with_journal(journal: Journal) -> Self {
        let clock = ManualClock::new(0);
        let mut svc = AuctionService::new(
            clock.clone(),
            directory(),
            Registry::new(),
            journal,
            ServiceOptions {
                seed: Some(1),
                ..Default::default()
            },
        );
        let tokens = PEOPLE
            .iter()
            .map(|(p, _)| {
                let t = svc
                    .login(&LoginRequest {
                        username: (*p).into(),
                        password: format!("pw-{p}"),
                    })
                    .unwrap()
                    .auth_token;
                (*p, t)
            })
            .collect();
        Self { svc, clock, tokens }
    }

    fn t(&self, who: &str) -> String {
        self.tokens[who].clone()
    }

    /// Auction a1 (starts at 60 s) with auctioneer, observer and admitted
    /// bidders pA and pB.
    fn staged(journal: Journal) -> Self {
        let mut f = Self::with_journal(journal);
        let a1: AuctionId = "a1".into();
        f.svc
            .create_auction(&f.t("orig"), config(AuctionFormat::Reverse))
            .unwrap();
        for (p, role) in [
            ("auc", Role::Auctioneer),
            ("obs", Role::Observer),
            ("pA", Role::Bidder),
            ("pB", Role::Bidder),
        ] {
            let caller = if p == "auc" { "orig" } else { "auc" };
            f.svc
                .invite(
                    &f.t(caller),
                    &a1,
                    &InviteRequest {
                        person_id: p.into(),
                        role,
                        slot_id: None,
                    },
                )
                .unwrap();
        }
        for p in ["pA", "pB"] {
            f.admin(AdminAction::SignContract { person_id: p.into() })
                .unwrap();
            f.admin(AdminAction::Admit { person_id: p.into() }).unwrap();
        }
        f
    }

    fn admin(&mut self, action: AdminAction) -> Result<(), RpcError> {
        let t = self.t("auc");
        self.svc.admin(&t, &"a1".into(), action)
    }

    fn poll(&mut self, who: &str, cursor: u64) -> Result<PollResponse, RpcError> {
        let t = self.t(who);
        self.svc.handle_poll(&PollRequest {
            auth_token: t,
            auction_id: "a1".into(),
            cursor,
            client_send_time: 0,
        })
    }

    fn bid(&mut self, who: &str, amount: i64, cursor: u64) -> Result<BidResponse, RpcError> {
        let t = self.t(who);
        self.svc.submit_bid(&BidRequest {
            auth_token: t,
            auction_id: "a1".into(),
            slot_id: "s1".into(),
            amount,
            cursor_at_submit: cursor,
            client_send_time: 0,
        })
    }
}

#[test]
fn login_failures_are_indistinguishable() {
    let mut f = Fixture::with_journal(Journal::Memory);
    let wrong = f.svc.login(&LoginRequest {
        username: "pA".into(),
        password: "nope".into(),
    });
    let unknown = f.svc.login(&LoginRequest {
        username: "ghost".into(),
        password: "nope".into(),
    });
    assert_eq!(wrong, Err(RpcError::BadCredentials));
    assert_eq!(
        serde_json::to_vec(&wrong.unwrap_err()).unwrap(),
        serde_json::to_vec(&unknown.unwrap_err()).unwrap()
    );
}

#[test]
fn poll_cursor_semantics() {
    let mut f = Fixture::staged(Journal::Memory);
    f.clock.set(60_000);
    let first = f.poll("pB", 0).unwrap();
    let latest = f.svc.registry().get(&"a1".into()).unwrap().latest_seq();
    assert_eq!(first.new_cursor, latest);
    assert_eq!(first.messages.len() as u64, latest);
    assert_eq!(first.next_poll_ms, 1_000);

    f.clock.set(61_000);
    f.bid("pA", 9_000, latest).unwrap();
    let next = f.poll("pB", first.new_cursor).unwrap();
    let seqs: Vec<u64> = next.messages.iter().map(|m| m.seq).collect();
    assert_eq!(seqs, vec![latest + 1]);
    let again = f.poll("pB", next.new_cursor).unwrap();
    assert!(again.messages.is_empty());
    assert_eq!(again.new_cursor, next.new_cursor);
    assert_eq!(again.view.slots[0].own_rank, None);

    assert_eq!(
        f.poll("pB", latest + 5).unwrap_err(),
        RpcError::CursorAhead {
            cursor: latest + 5,
            latest: latest + 1
        }
    );
}

#[test]
fn bad_token_reveals_nothing() {
    let mut f = Fixture::staged(Journal::Memory);
    let err = f
        .svc
        .handle_poll(&PollRequest {
            auth_token: "deadbeef".into(),
            auction_id: "a1".into(),
            cursor: 0,
            client_send_time: 0,
        })
        .unwrap_err();
    assert_eq!(err, RpcError::Unauthorized);
    let body = serde_json::to_string(&err).unwrap();
    assert_eq!(body, r#"{"error":"unauthorized"}"#);
    let bid = f.svc.submit_bid(&BidRequest {
        auth_token: "deadbeef".into(),
        auction_id: "a1".into(),
        slot_id: "s1".into(),
        amount: 1,
        cursor_at_submit: 0,
        client_send_time: 0,
    });
    assert_eq!(bid, Err(RpcError::Unauthorized));
}

#[test]
fn uninvited_person_is_forbidden() {
    let mut f = Fixture::staged(Journal::Memory);
    assert_eq!(f.poll("pA2", 0).unwrap_err(), RpcError::Forbidden);
}

#[test]
fn admin_guarding() {
    let mut f = Fixture::staged(Journal::Memory);
    let t = f.t("pA");
    assert_eq!(
        f.svc
            .admin(&t, &"a1".into(), AdminAction::Ban { person_id: "pB".into() }),
        Err(RpcError::Forbidden)
    );
    assert_eq!(
        f.svc.list_status(&t, &"a1".into()),
        Err(RpcError::Forbidden)
    );
    let status = f.svc.list_status(&f.t("auc"), &"a1".into()).unwrap();
    assert_eq!(status.len(), 5);

    // an invited bidder has to sign before admission
    f.svc
        .invite(
            &f.t("auc"),
            &"a1".into(),
            &InviteRequest {
                person_id: "pA2".into(),
                role: Role::Observer,
                slot_id: None,
            },
        )
        .unwrap();
    let err = f
        .admin(AdminAction::Admit {
            person_id: "pA2".into(),
        })
        .unwrap_err();
    assert_eq!(err.code(), "invalid_role");

    let mut g = Fixture::with_journal(Journal::Memory);
    g.svc
        .create_auction(&g.t("orig"), config(AuctionFormat::Reverse))
        .unwrap();
    g.svc
        .invite(
            &g.t("orig"),
            &"a1".into(),
            &InviteRequest {
                person_id: "auc".into(),
                role: Role::Auctioneer,
                slot_id: None,
            },
        )
        .unwrap();
    g.svc
        .invite(
            &g.t("auc"),
            &"a1".into(),
            &InviteRequest {
                person_id: "pA".into(),
                role: Role::Bidder,
                slot_id: None,
            },
        )
        .unwrap();
    let err = g
        .admin(AdminAction::Admit {
            person_id: "pA".into(),
        })
        .unwrap_err();
    assert_eq!(err.code(), "not_signed");
}

#[test]
fn created_auction_is_scheduled_and_listed() {
    let mut f = Fixture::with_journal(Journal::Memory);
    let s = f
        .svc
        .create_auction(&f.t("orig"), config(AuctionFormat::Reverse))
        .unwrap();
    assert_eq!(s.phase, Phase::Scheduled);
    let listed = f.svc.list_auctions(&f.t("orig")).unwrap();
    assert_eq!(listed, vec![s]);
    assert!(f.svc.list_auctions(&f.t("pA")).unwrap().is_empty());
}

#[test]
fn closing_bid_with_fresh_cursor_is_refused() {
    let mut f = Fixture::staged(Journal::Memory);
    f.clock.set(60_000);
    f.poll("pA", 0).unwrap();
    // end is 3_600_000; the poll at the end announces closing
    f.clock.set(3_600_000);
    let r = f.poll("pA", 0).unwrap();
    assert!(r
        .messages
        .iter()
        .any(|m| matches!(m.payload, ViewPayload::ClosingAnnounced { .. })));
    assert_eq!(r.next_poll_ms, 500);
    let out = f.bid("pA", 9_000, r.new_cursor).unwrap();
    assert_eq!(
        out.outcome,
        BidOutcome::Rejected {
            reason: RejectReason::ClosingCursorTooNew
        }
    );
    // a bid sent before the announcement was seen still counts
    let out = f.bid("pB", 9_000, r.new_cursor - 1).unwrap();
    assert!(out.outcome.is_accepted());
}

#[test]
fn redaction_holds_on_the_wire() {
    let mut f = Fixture::staged(Journal::Memory);
    f.clock.set(60_000);
    f.bid("pA", 9_500, 0).unwrap();
    f.bid("pB", 9_900, 0).unwrap();
    let body = serde_json::to_string(&f.poll("pB", 0).unwrap()).unwrap();
    assert!(!body.contains("\"pA\""));
    assert!(!body.contains("pA full name"));
    assert!(!body.contains("\"cA\""));
    let body = serde_json::to_string(&f.poll("obs", 0).unwrap()).unwrap();
    assert!(!body.contains("\"amount\""));
    assert!(!body.contains("EUR"));
    let body = serde_json::to_string(&f.poll("orig", 0).unwrap()).unwrap();
    for p in ["\"pA\"", "\"pB\"", "full name"] {
        assert!(!body.contains(p), "{p} leaked to originator");
    }
}

#[test]
fn journal_matches_live_state() {
    let buf = MemorySink::default();
    let log = EventLog::new(Box::new(buf.clone()), 0, FlushPolicy::Batch);
    let mut f = Fixture::staged(Journal::Log(log));
    f.clock.set(60_000);
    f.poll("pA", 0).unwrap();
    f.bid("pA", 9_500, 0).unwrap();
    f.bid("pB", 0, 0).unwrap();
    f.clock.set(4_000_000);
    f.svc.tick_due().unwrap();
    let contents = read_log(&buf.bytes()[..]).unwrap();
    assert_eq!(replay(&contents.records).digest(), f.svc.registry().digest());
    assert_eq!(crate::store::plausibility_check(&contents.records), vec![]);
    let kinds: BTreeSet<MessageKind> = f
        .svc
        .registry()
        .get(&"a1".into())
        .unwrap()
        .messages
        .iter()
        .map(|m| m.kind())
        .collect();
    assert!(kinds.contains(&MessageKind::Closed));
}

#[test]
fn write_failure_freezes_without_applying() {
    let buf = MemorySink::default();
    let log = EventLog::new(Box::new(buf.clone()), 0, FlushPolicy::Batch);
    let mut f = Fixture::staged(Journal::Log(log));
    f.clock.set(60_000);
    f.poll("pA", 0).unwrap();
    let digest = f.svc.registry().digest();
    let last = buf.bytes().len();

    // swap in a writer that dies 10 bytes into the next batch
    let faulty = FaultyWriter::new(buf.clone(), 10);
    let seq = read_log(&buf.bytes()[..]).unwrap().records.len() as u64;
    f.svc.journal = Journal::Log(EventLog::new(Box::new(faulty), seq, FlushPolicy::Batch));
    let err = f.bid("pA", 9_500, 0).unwrap_err();
    assert_eq!(err.code(), "storage");
    assert!(f.svc.is_frozen());
    assert_eq!(f.svc.registry().digest(), digest);
    assert_eq!(f.bid("pB", 9_500, 0).unwrap_err().code(), "storage");
    // polls still work
    f.poll("pA", 0).unwrap();

    let contents = read_log(&buf.bytes()[..]).unwrap();
    assert_eq!(contents.torn_bytes, 10);
    assert_eq!(contents.valid_len as usize, last);
    assert_eq!(replay(&contents.records).digest(), digest);
}
