//! Offline commands: log inspection and verification, report regeneration,
//! simulation runs. Each returns its text output; `main` does the printing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use openfloor_core::domain::AuctionId;
use openfloor_core::report::write_reports;
use openfloor_core::rpc::Directory;
use openfloor_core::sim::{
    self, check_close_agreement, check_delivery, check_fairness, check_no_late_win, Scenario,
    Trace,
};
use openfloor_core::store::{inspect_lines, plausibility_check, read_dir_log, replay};

/// A command that could not run at all.
#[derive(Debug)]
pub struct ToolError(pub String);

impl<E: std::fmt::Display> From<E> for ToolError {
    fn from(e: E) -> Self {
        ToolError(e.to_string())
    }
}

pub fn load_directory(path: &Path) -> Result<Directory, ToolError> {
    let text = fs::read_to_string(path).map_err(|e| ToolError(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ToolError(format!("{}: {e}", path.display())))
}

pub fn inspect(dir: &Path) -> Result<String, ToolError> {
    Ok(inspect_lines(dir)?.join("\n"))
}

/// Verdict of `verify`: the report text and whether the log is clean.
pub fn verify(dir: &Path) -> Result<(String, bool), ToolError> {
    let contents = read_dir_log(dir)?;
    let violations = plausibility_check(&contents.records);
    let mut out = format!(
        "{} records, {} torn bytes, {} violations\n",
        contents.records.len(),
        contents.torn_bytes,
        violations.len()
    );
    for v in &violations {
        writeln!(out, "{}", serde_json::to_string(v)?)?;
    }
    Ok((out, violations.is_empty()))
}

/// Rebuilds the auction from the log and writes its role reports.
pub fn report(dir: &Path, auction_id: &AuctionId) -> Result<Vec<PathBuf>, ToolError> {
    let registry = replay(&read_dir_log(dir)?.records);
    let state = registry
        .get(auction_id)
        .ok_or_else(|| ToolError(format!("no auction {auction_id} in {}", dir.display())))?;
    Ok(write_reports(dir, state)?)
}

pub struct SimSummary {
    pub text: String,
    pub clean: bool,
    pub trace: Trace,
}

pub fn run_sim(path: &Path, seed: Option<u64>) -> Result<SimSummary, ToolError> {
    let text = fs::read_to_string(path).map_err(|e| ToolError(format!("{}: {e}", path.display())))?;
    let mut scenario: Scenario = serde_json::from_str(&text)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let trace = sim::run(&scenario)?;

    let mut out = String::new();
    writeln!(out, "seed {}", trace.seed)?;
    for a in &trace.auctions {
        writeln!(
            out,
            "auction {}: {:?}, end {}, closed at {:?}",
            a.auction_id, a.phase, a.current_end, a.closed_at
        )?;
    }
    for c in check_close_agreement(&trace) {
        writeln!(
            out,
            "close lag {}: max {} ms, {} missing, {} disconnected",
            c.auction_id,
            c.max_lag_ms,
            c.missing.len(),
            c.disconnected.len()
        )?;
    }
    let accepted = trace
        .bids
        .iter()
        .filter(|b| b.outcome.as_ref().is_some_and(|o| o.is_accepted()))
        .count();
    writeln!(out, "bids: {} sent, {accepted} accepted", trace.bids.len())?;
    let mut clean = true;
    for (name, found) in [
        ("fairness", check_fairness(&trace)),
        ("no late win", check_no_late_win(&trace)),
        ("delivery", check_delivery(&trace)),
    ] {
        writeln!(out, "{name}: {} violations", found.len())?;
        for f in &found {
            writeln!(out, "  {f}")?;
        }
        clean &= found.is_empty();
    }
    Ok(SimSummary {
        text: out,
        clean,
        trace,
    })
}

/// The trace as JSON lines: log records, then bids, clients and auctions,
/// each tagged with its kind.
pub fn trace_lines(trace: &Trace) -> Result<String, ToolError> {
    let mut out = String::new();
    let mut line = |kind: &str, value: serde_json::Value| -> Result<(), ToolError> {
        let v = serde_json::json!({ "type": kind, "data": value });
        writeln!(out, "{}", serde_json::to_string(&v)?)?;
        Ok(())
    };
    for r in &trace.log {
        line("record", serde_json::to_value(r)?)?;
    }
    for b in &trace.bids {
        line("bid", serde_json::to_value(b)?)?;
    }
    for c in &trace.clients {
        line("client", serde_json::to_value(c)?)?;
    }
    for a in &trace.auctions {
        line("auction", serde_json::to_value(a)?)?;
    }
    Ok(out)
}
