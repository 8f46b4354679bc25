use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Applied, Command, CommandEnvelope, EngineError};
use crate::domain::{validate_config, AuctionId, AuctionState};

/// All auctions known to one server, keyed by id. The registry is what the
/// event log rebuilds and what snapshots capture.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Registry {
    auctions: BTreeMap<AuctionId, AuctionState>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &AuctionId) -> Option<&AuctionState> {
        self.auctions.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AuctionId, &AuctionState)> {
        self.auctions.iter()
    }

    pub fn len(&self) -> usize {
        self.auctions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.auctions.is_empty()
    }

    pub fn apply(&mut self, env: &CommandEnvelope) -> Result<Applied, EngineError> {
        if let Command::CreateAuction { config, originator } = &env.command {
            if config.auction_id != env.auction_id {
                return Err(EngineError::UnknownReference {
                    what: format!("config id {} for {}", config.auction_id, env.auction_id),
                });
            }
            if self.auctions.contains_key(&env.auction_id) {
                return Err(EngineError::AuctionExists {
                    auction_id: env.auction_id.clone(),
                });
            }
            let violations = validate_config(config);
            if !violations.is_empty() {
                return Err(EngineError::InvalidConfig { violations });
            }
            let mut state = AuctionState::new(config.clone(), originator.clone());
            state.last_time = env.received_at;
            self.auctions.insert(env.auction_id.clone(), state);
            return Ok(Applied::default());
        }
        let state = self
            .auctions
            .get_mut(&env.auction_id)
            .ok_or_else(|| EngineError::UnknownAuction {
                auction_id: env.auction_id.clone(),
            })?;
        state.apply(env)
    }

    /// Applies `env` to a scratch copy of the affected auction and installs
    /// the result only once `commit` succeeds. `commit` runs whenever the
    /// command reached an auction (even if the engine refused it, since the
    /// refusal still advanced that auction's clock); registry-level refusals
    /// change nothing and skip it.
    pub fn apply_with<E>(
        &mut self,
        env: &CommandEnvelope,
        commit: impl FnOnce(&Result<Applied, EngineError>) -> Result<(), E>,
    ) -> Result<Result<Applied, EngineError>, E> {
        let mut scratch = Registry::new();
        if let Some(state) = self.auctions.get(&env.auction_id) {
            scratch.auctions.insert(env.auction_id.clone(), state.clone());
        } else if !matches!(env.command, Command::CreateAuction { .. }) {
            return Ok(Err(EngineError::UnknownAuction {
                auction_id: env.auction_id.clone(),
            }));
        }
        let result = scratch.apply(env);
        let Some(state) = scratch.auctions.remove(&env.auction_id) else {
            return Ok(result);
        };
        if result.is_err() && matches!(env.command, Command::CreateAuction { .. }) {
            return Ok(result);
        }
        commit(&result)?;
        self.auctions.insert(env.auction_id.clone(), state);
        Ok(result)
    }

    /// SHA-256 over the canonical JSON of every auction.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("registry serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
