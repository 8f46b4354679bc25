//! Post-auction reports.
//!
//! [`generate_report`] derives the full result from a finished auction.
//! [`render`] turns it into the variant one role may see, as JSON and CSV,
//! with the same redaction rules as the live views.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AuctionFormat, AuctionId, AuctionState, Bid, CompanyId, Currency, MessagePayload, Millis,
    Money, Phase, PersonId, Role, SlotId,
};
use crate::engine::{binding_result, determine_winners, BindingResult};
use crate::views::{reference_amount, Percent, ViewValue};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("auction is not closed")]
    NotClosed,
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportParticipant {
    pub person_id: PersonId,
    pub name: String,
    pub company_id: CompanyId,
    pub role: Role,
    pub pseudonym: Option<String>,
    pub admitted: bool,
    pub banned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub server_time: Millis,
    pub best: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotReport {
    pub slot_id: SlotId,
    pub description: String,
    pub winner: Option<Bid>,
    pub bid_count: u32,
    /// Best valid amount after each bid, one point per distinct time.
    pub curve: Vec<CurvePoint>,
    /// Basis for percentage figures, if any.
    pub reference_amount: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statistics {
    pub total_bids: u32,
    pub voided_bids: u32,
    pub extensions_granted: u32,
    pub total_winning: Option<i64>,
    /// `(historic − total winning) / historic`, e.g. `"25.00"`.
    pub savings_percent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuctionReport {
    pub auction_id: AuctionId,
    pub title: String,
    pub format: AuctionFormat,
    pub currency: Currency,
    pub start_time: Millis,
    pub opened_at: Option<Millis>,
    pub closed_at: Option<Millis>,
    pub final_phase: Phase,
    pub participants: Vec<ReportParticipant>,
    pub slots: Vec<SlotReport>,
    pub statistics: Statistics,
    pub binding_result: BindingResult,
    /// Bids voided by a ban; never winners.
    pub voided: Vec<Bid>,
}

/// Builds the report of a closed or cancelled auction.
pub fn generate_report(state: &AuctionState) -> Result<AuctionReport, ReportError> {
    let winners = determine_winners(state).map_err(|_| ReportError::NotClosed)?;
    let binding = binding_result(state, &winners).map_err(|_| ReportError::NotClosed)?;
    let format = state.config.format;

    let slots = state
        .config
        .slots
        .iter()
        .zip(&winners)
        .map(|(slot, w)| {
            let mut curve: Vec<CurvePoint> = Vec::new();
            let mut best: Option<i64> = None;
            let mut bid_count = 0;
            for bid in state.bids_on(&slot.slot_id).filter(|b| !b.voided) {
                bid_count += 1;
                let amount = bid.amount.amount;
                let next = match best {
                    Some(b) if !format.better(amount, b) => b,
                    _ => amount,
                };
                best = Some(next);
                match curve.last_mut() {
                    Some(p) if p.server_time == bid.server_time => p.best = next,
                    _ => curve.push(CurvePoint {
                        server_time: bid.server_time,
                        best: next,
                    }),
                }
            }
            SlotReport {
                slot_id: slot.slot_id.clone(),
                description: slot.description.clone(),
                winner: w.winner.clone(),
                bid_count,
                curve,
                reference_amount: reference_amount(state, &slot.slot_id),
            }
        })
        .collect::<Vec<_>>();

    let won: Vec<i64> = winners
        .iter()
        .filter_map(|w| w.winner.as_ref().map(|b| b.amount.amount))
        .collect();
    let total_winning = (!won.is_empty()).then(|| won.iter().sum::<i64>());
    let savings_percent = match (&state.config.historic_value, total_winning) {
        (Some(h), Some(total)) if h.amount > 0 => {
            Some(Percent::ratio(h.amount - total, h.amount).to_string())
        }
        _ => None,
    };
    let extensions_granted = state
        .messages
        .iter()
        .filter(|m| matches!(m.payload, MessagePayload::ExtensionGranted { .. }))
        .count() as u32;

    let participants = state
        .roster
        .values()
        .map(|e| ReportParticipant {
            person_id: e.profile.person_id.clone(),
            name: e.profile.name.clone(),
            company_id: e.profile.company_id.clone(),
            role: e.role,
            pseudonym: state.pseudonym(&e.profile.person_id),
            admitted: e.status.admitted,
            banned: e.status.banned,
        })
        .collect();

    let voided: Vec<Bid> = state.bids.iter().filter(|b| b.voided).cloned().collect();
    Ok(AuctionReport {
        auction_id: state.config.auction_id.clone(),
        title: state.config.title.clone(),
        format,
        currency: state.config.currency.clone(),
        start_time: state.config.start_time,
        opened_at: state.opened_at,
        closed_at: state.closed_at,
        final_phase: state.phase,
        participants,
        slots,
        statistics: Statistics {
            total_bids: state.bids.len() as u32,
            voided_bids: voided.len() as u32,
            extensions_granted,
            total_winning,
            savings_percent,
        },
        binding_result: binding,
        voided,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantLine {
    pub label: String,
    pub role: Role,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub person_id: Option<PersonId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub company_id: Option<CompanyId>,
    pub admitted: bool,
    pub banned: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BidLine {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub person_id: Option<PersonId>,
    pub slot_id: SlotId,
    pub server_time: Millis,
    pub value: ViewValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurveLine {
    pub server_time: Millis,
    pub value: ViewValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotLine {
    pub slot_id: SlotId,
    pub description: String,
    pub winner: Option<BidLine>,
    pub bid_count: u32,
    pub curve: Vec<CurveLine>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatisticsLine {
    pub total_bids: u32,
    pub voided_bids: u32,
    pub extensions_granted: u32,
    pub total_winning: Option<ViewValue>,
    pub savings_percent: Option<String>,
}

/// The report as one role sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleReport {
    pub auction_id: AuctionId,
    pub title: String,
    pub format: AuctionFormat,
    pub role: Role,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub viewer: Option<PersonId>,
    pub opened_at: Option<Millis>,
    pub closed_at: Option<Millis>,
    pub final_phase: Phase,
    pub participants: Vec<ParticipantLine>,
    pub slots: Vec<SlotLine>,
    pub statistics: StatisticsLine,
    pub binding_result: BindingResult,
    pub voided: Vec<BidLine>,
}

struct Redact<'a> {
    report: &'a AuctionReport,
    role: Role,
    viewer: Option<&'a PersonId>,
}

impl Redact<'_> {
    fn reveals(&self, person: &PersonId) -> bool {
        self.role == Role::Auctioneer || self.viewer == Some(person)
    }

    fn value(&self, amount: i64, reference: Option<i64>) -> ViewValue {
        match self.role {
            Role::Observer => match reference.filter(|r| *r > 0) {
                Some(r) => ViewValue::Percent(format!("{}%", Percent::ratio(amount, r))),
                None => ViewValue::Withheld,
            },
            _ => ViewValue::Money(Money {
                amount,
                currency: self.report.currency.clone(),
            }),
        }
    }

    fn label(&self, person: &PersonId) -> String {
        self.report
            .participants
            .iter()
            .find(|p| &p.person_id == person)
            .and_then(|p| p.pseudonym.clone())
            .unwrap_or_else(|| "Bidder-?".to_owned())
    }

    fn bid(&self, bid: &Bid, reference: Option<i64>) -> BidLine {
        BidLine {
            label: self.label(&bid.bidder),
            person_id: self.reveals(&bid.bidder).then(|| bid.bidder.clone()),
            slot_id: bid.slot_id.clone(),
            server_time: bid.server_time,
            value: self.value(bid.amount.amount, reference),
        }
    }
}

/// Redacts `report` for `role`. `viewer` identifies the reader for the
/// per-person variants (their own identity stays visible).
pub fn render(report: &AuctionReport, role: Role, viewer: Option<&PersonId>) -> RoleReport {
    let r = Redact {
        report,
        role,
        viewer,
    };
    let participants = report
        .participants
        .iter()
        .map(|p| {
            let reveal = r.reveals(&p.person_id);
            ParticipantLine {
                label: p
                    .pseudonym
                    .clone()
                    .unwrap_or_else(|| p.role.as_str().to_owned()),
                role: p.role,
                person_id: reveal.then(|| p.person_id.clone()),
                name: reveal.then(|| p.name.clone()),
                company_id: reveal.then(|| p.company_id.clone()),
                admitted: p.admitted,
                banned: p.banned,
            }
        })
        .collect();
    let slots = report
        .slots
        .iter()
        .map(|s| SlotLine {
            slot_id: s.slot_id.clone(),
            description: s.description.clone(),
            winner: s.winner.as_ref().map(|b| r.bid(b, s.reference_amount)),
            bid_count: s.bid_count,
            curve: s
                .curve
                .iter()
                .map(|p| CurveLine {
                    server_time: p.server_time,
                    value: r.value(p.best, s.reference_amount),
                })
                .collect(),
        })
        .collect();
    let slot_reference = |slot: &SlotId| {
        report
            .slots
            .iter()
            .find(|s| &s.slot_id == slot)
            .and_then(|s| s.reference_amount)
    };
    let stats = &report.statistics;
    RoleReport {
        auction_id: report.auction_id.clone(),
        title: report.title.clone(),
        format: report.format,
        role,
        viewer: viewer.cloned(),
        opened_at: report.opened_at,
        closed_at: report.closed_at,
        final_phase: report.final_phase,
        participants,
        slots,
        statistics: StatisticsLine {
            total_bids: stats.total_bids,
            voided_bids: stats.voided_bids,
            extensions_granted: stats.extensions_granted,
            total_winning: match role {
                Role::Observer => None,
                _ => stats.total_winning.map(|t| r.value(t, None)),
            },
            savings_percent: stats.savings_percent.clone(),
        },
        binding_result: report.binding_result,
        voided: report
            .voided
            .iter()
            .map(|b| r.bid(b, slot_reference(&b.slot_id)))
            .collect(),
    }
}

fn value_cell(v: &ViewValue) -> String {
    match v {
        ViewValue::Money(m) => m.to_string(),
        ViewValue::Percent(p) => p.clone(),
        ViewValue::Withheld => String::new(),
    }
}

/// CSV form: one row per participant, winner, curve point, voided bid and
/// statistic, under the header `section,slot_id,label,person_id,server_time,value`.
pub fn to_csv(report: &RoleReport) -> Result<String, ReportError> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_writer(Vec::new());
    w.write_record(["section", "slot_id", "label", "person_id", "server_time", "value"])?;
    let opt = |p: &Option<PersonId>| p.as_ref().map_or(String::new(), |p| p.to_string());
    for p in &report.participants {
        w.write_record([
            "participant",
            "",
            &p.label,
            &opt(&p.person_id),
            "",
            p.role.as_str(),
        ])?;
    }
    for s in &report.slots {
        if let Some(b) = &s.winner {
            w.write_record([
                "winner",
                s.slot_id.as_str(),
                &b.label,
                &opt(&b.person_id),
                &b.server_time.to_string(),
                &value_cell(&b.value),
            ])?;
        }
        for p in &s.curve {
            w.write_record([
                "curve",
                s.slot_id.as_str(),
                "",
                "",
                &p.server_time.to_string(),
                &value_cell(&p.value),
            ])?;
        }
    }
    for b in &report.voided {
        w.write_record([
            "voided",
            b.slot_id.as_str(),
            &b.label,
            &opt(&b.person_id),
            &b.server_time.to_string(),
            &value_cell(&b.value),
        ])?;
    }
    let st = &report.statistics;
    let binding = match report.binding_result {
        BindingResult::Binding => "binding",
        BindingResult::FreeChoice => "free_choice",
    };
    let mut stats = vec![
        ("total_bids", st.total_bids.to_string()),
        ("voided_bids", st.voided_bids.to_string()),
        ("extensions_granted", st.extensions_granted.to_string()),
        ("binding_result", binding.to_owned()),
    ];
    if let Some(t) = &st.total_winning {
        stats.push(("total_winning", value_cell(t)));
    }
    if let Some(s) = &st.savings_percent {
        stats.push(("savings_percent", format!("{s}%")));
    }
    for (name, value) in stats {
        w.write_record(["statistic", "", name, "", "", &value])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 input"))
}

/// Writes every role's variant under `<dir>/reports/<auction_id>/`:
/// `report.<role>.{json,csv}` for auctioneer, originator and observer, and
/// `report.bidder.<person_id>.{json,csv}` for each bidder.
pub fn write_reports(data_dir: &Path, state: &AuctionState) -> Result<Vec<PathBuf>, ReportError> {
    let report = generate_report(state)?;
    let dir = data_dir
        .join("reports")
        .join(report.auction_id.as_str());
    fs::create_dir_all(&dir)?;
    let mut variants: Vec<(String, RoleReport)> = [Role::Auctioneer, Role::Originator, Role::Observer]
        .into_iter()
        .map(|role| (role.as_str().to_owned(), render(&report, role, None)))
        .collect();
    for p in report.participants.iter().filter(|p| p.role == Role::Bidder) {
        variants.push((
            format!("bidder.{}", p.person_id),
            render(&report, Role::Bidder, Some(&p.person_id)),
        ));
    }
    let mut written = Vec::new();
    for (name, variant) in variants {
        let json = dir.join(format!("report.{name}.json"));
        let mut body = serde_json::to_string_pretty(&variant).expect("reports serialize");
        body.push('\n');
        fs::write(&json, body)?;
        let csv = dir.join(format!("report.{name}.csv"));
        fs::write(&csv, to_csv(&variant)?)?;
        written.push(json);
        written.push(csv);
    }
    Ok(written)
}
