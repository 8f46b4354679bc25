use serde::{Deserialize, Serialize};

use super::bidding::rank_order;
use super::EngineError;
use crate::domain::{AuctionFormat, AuctionState, Bid, Phase, SlotId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotWinner {
    pub slot_id: SlotId,
    pub winner: Option<Bid>,
}

/// Whether the buyer must sign the contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingResult {
    /// The result hit the target value.
    Binding,
    FreeChoice,
}

/// Best non-voided bid per slot, in config slot order. Ties go to the earlier
/// bid. A cancelled auction has no winners.
pub fn determine_winners(state: &AuctionState) -> Result<Vec<SlotWinner>, EngineError> {
    if !state.phase.is_terminal() {
        return Err(EngineError::NotClosed);
    }
    let cancelled = state.phase == Phase::Cancelled;
    Ok(state
        .config
        .slots
        .iter()
        .map(|slot| SlotWinner {
            slot_id: slot.slot_id.clone(),
            winner: if cancelled {
                None
            } else {
                state
                    .bids_on(&slot.slot_id)
                    .filter(|b| !b.voided)
                    .min_by(|a, b| rank_order(state.config.format, a, b))
                    .cloned()
            },
        })
        .collect())
}

/// Binding iff a target is set, every slot found a winner, and the winning
/// amounts sum to at most the target.
pub fn binding_result(
    state: &AuctionState,
    winners: &[SlotWinner],
) -> Result<BindingResult, EngineError> {
    if !state.phase.is_terminal() {
        return Err(EngineError::NotClosed);
    }
    if state.phase == Phase::Cancelled || state.config.format != AuctionFormat::Reverse {
        return Ok(BindingResult::FreeChoice);
    }
    let Some(target) = &state.config.target_value else {
        return Ok(BindingResult::FreeChoice);
    };
    let mut total: i64 = 0;
    for w in winners {
        match &w.winner {
            Some(bid) => total += bid.amount.amount,
            None => return Ok(BindingResult::FreeChoice),
        }
    }
    Ok(if total <= target.amount {
        BindingResult::Binding
    } else {
        BindingResult::FreeChoice
    })
}
