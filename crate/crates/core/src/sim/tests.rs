use super::*;
use crate::domain::{Currency, Quantity, Slot, DEFAULT_EXTENSION_SCHEDULE};
use crate::store::plausibility_check;

fn config(id: &str, main_ms: Millis) -> AuctionConfig {
    AuctionConfig {
        auction_id: id.into(),
        title: format!("sim {id}"),
        format: AuctionFormat::Reverse,
        currency: Currency::new("EUR"),
        start_time: 10_000,
        main_duration_ms: main_ms,
        hard_cap_ms: None,
        extension_schedule: DEFAULT_EXTENSION_SCHEDULE.to_vec(),
        closing_grace_ms: 3_000,
        tick_size: Money::new(100, "EUR"),
        historic_value: Some(Money::new(20_000, "EUR")),
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

fn agent(id: &str, role: Role, strategy: Strategy, link: LinkModel) -> AgentSpec {
    AgentSpec {
        person_id: id.into(),
        company_id: None,
        role,
        auction_id: None,
        slot_id: None,
        strategy,
        link,
        clock_skew_ms: 0,
        join_at: 0,
        disconnect_at: None,
    }
}

fn reactive(opening: i64, limit: i64) -> Strategy {
    Strategy::Reactive {
        opening: Some(opening),
        reaction_ms: 1_500,
        limit,
    }
}

fn jitter() -> LinkModel {
    LinkModel::Uniform {
        base_ms: 20,
        jitter_ms: 380,
    }
}

fn duel(seed: u64) -> Scenario {
    Scenario {
        seed,
        auctions: vec![config("a1", 120_000)],
        agents: vec![
            agent("alice", Role::Bidder, reactive(15_000, 12_000), jitter()),
            agent("bob", Role::Bidder, reactive(14_800, 12_500), jitter()),
            agent("olga", Role::Observer, Strategy::Passive, jitter()),
        ],
        run_until: 2_000_000,
        capacity_rps: DEFAULT_CAPACITY_RPS,
    }
}

fn accepted_bid_times(trace: &Trace) -> Vec<Millis> {
    trace
        .log
        .iter()
        .filter_map(|r| match &r.record {
            crate::store::Record::Message { message } => match &message.payload {
                crate::domain::MessagePayload::BidPlaced { bid } => Some(bid.server_time),
                _ => None,
            },
            _ => None,
        })
        .collect()
}

#[test]
fn zero_delay_bid_arrives_when_sent() {
    let mut s = duel(1);
    s.agents = vec![agent(
        "alice",
        Role::Bidder,
        Strategy::Scripted {
            bids: vec![ScriptedBid {
                at: 40_000,
                amount: 9_000,
            }],
        },
        LinkModel::default(),
    )];
    let t = run(&s).unwrap();
    assert_eq!(t.bids.len(), 1);
    assert_eq!(t.bids[0].received_at, Some(40_000));
    assert!(t.bids[0].outcome.as_ref().unwrap().is_accepted());
    assert_eq!(accepted_bid_times(&t), vec![40_000]);
}

#[test]
fn duel_extensions_follow_the_rule() {
    let t = run(&duel(7)).unwrap();
    let times = accepted_bid_times(&t);
    assert!(times.len() > 5, "only {} bids", times.len());

    // fold the extension rule over the accepted bid times
    let cfg = config("a1", 120_000);
    let cap = cfg.start_time + 2 * cfg.main_duration_ms;
    let (mut end, mut k) = (cfg.start_time + cfg.main_duration_ms, 0usize);
    for now in times {
        let g = cfg.extension_schedule[k.min(cfg.extension_schedule.len() - 1)];
        if end as i64 - (now as i64) < g as i64 {
            end = (now + g).min(cap);
            k += 1;
        }
    }
    let a = t.auction(&"a1".into()).unwrap();
    assert_eq!(a.current_end, end);
    assert_eq!(a.phase, Phase::Closed);
    assert!(check_no_late_win(&t).is_empty());
}

#[test]
fn runs_are_reproducible() {
    let a = serde_json::to_vec(&run(&duel(42)).unwrap()).unwrap();
    let b = serde_json::to_vec(&run(&duel(42)).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = serde_json::to_vec(&run(&duel(43)).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn crowd_agrees_on_close() {
    let mut s = duel(3);
    for i in 0..20 {
        let mut a = agent(
            &format!("p{i}"),
            Role::Bidder,
            reactive(16_000 - 50 * i, 11_000 + 100 * i),
            jitter(),
        );
        a.clock_skew_ms = 1_000 * i - 7_000;
        s.agents.push(a);
    }
    let mut gone = agent("gone", Role::Observer, Strategy::Passive, jitter());
    gone.disconnect_at = Some(30_000);
    s.agents.push(gone);

    let t = run(&s).unwrap();
    for c in check_close_agreement(&t) {
        assert!(c.missing.is_empty(), "{:?}", c.missing);
        assert!(c.max_lag_ms <= 3_900, "lag {}", c.max_lag_ms);
        assert_eq!(c.disconnected, vec![PersonId::new("gone")]);
    }
    assert_eq!(check_fairness(&t), Vec::<String>::new());
    assert_eq!(check_delivery(&t), Vec::<String>::new());
    assert_eq!(check_no_late_win(&t), Vec::<String>::new());
    assert!(plausibility_check(&t.log).is_empty());

    let gone = t.clients.iter().find(|c| c.person_id.as_str() == "gone").unwrap();
    assert!(gone.disconnected && gone.closed_observed_at.is_none());
    for c in t.clients.iter().filter(|c| !c.disconnected) {
        assert!(c.burst_error_ms.unwrap().abs() <= 200, "{c:?}");
    }
}

#[test]
fn symmetric_link_syncs_exactly() {
    let mut s = duel(5);
    for a in &mut s.agents {
        a.link = LinkModel::Constant { delay_ms: 150 };
        a.clock_skew_ms = -12_345;
    }
    let t = run(&s).unwrap();
    for c in &t.clients {
        assert_eq!(c.burst_error_ms, Some(0));
        assert_eq!(c.final_error_ms, Some(0));
    }
}

#[test]
fn invalid_scenarios_are_refused() {
    let mut s = duel(1);
    s.agents.push(agent("alice", Role::Observer, Strategy::Passive, jitter()));
    assert!(matches!(run(&s), Err(SimError::ScenarioInvalid(_))));

    let mut s = duel(1);
    s.agents[0].slot_id = Some("nope".into());
    assert!(matches!(run(&s), Err(SimError::ScenarioInvalid(_))));

    let mut s = duel(1);
    s.auctions[0].start_time = 0;
    assert!(matches!(run(&s), Err(SimError::ScenarioInvalid(_))));
}

#[test]
fn scenario_json_round_trips() {
    let s = duel(9);
    let text = serde_json::to_string(&s).unwrap();
    assert_eq!(serde_json::from_str::<Scenario>(&text).unwrap(), s);
    let minimal: Scenario = serde_json::from_str(
        r#"{"seed":1,"run_until":1000,"auctions":[],
            "agents":[{"person_id":"x","role":"observer"}]}"#,
    )
    .unwrap();
    assert_eq!(minimal.agents[0].strategy, Strategy::Passive);
    assert_eq!(minimal.capacity_rps, DEFAULT_CAPACITY_RPS);
}

#[test]
fn late_sniper_lands_in_grace() {
    let mut s = duel(11);
    s.agents = vec![
        agent(
            "sam",
            Role::Bidder,
            Strategy::Sniper {
                lead_ms: -150,
                opening: 15_000,
                limit: 10_000,
            },
            LinkModel::Constant { delay_ms: 100 },
        ),
        agent("olga", Role::Observer, Strategy::Passive, jitter()),
    ];
    let t = run(&s).unwrap();
    let announced = t
        .log
        .iter()
        .find_map(|r| match &r.record {
            crate::store::Record::Message { message } => match &message.payload {
                crate::domain::MessagePayload::ClosingAnnounced { announced_end, .. } => {
                    Some(*announced_end)
                }
                _ => None,
            },
            _ => None,
        })
        .expect("closing announced");
    // aimed just past the end, before the next poll shows the announcement
    assert_eq!(t.bids.len(), 1);
    let b = &t.bids[0];
    assert!(b.outcome.as_ref().unwrap().is_accepted(), "{b:?}");
    let at = b.received_at.unwrap();
    assert!(at > announced && at < announced + 3_000, "{at} vs {announced}");
    assert!(check_fairness(&t).is_empty());
    assert!(check_no_late_win(&t).is_empty());
}
