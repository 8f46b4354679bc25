use super::EngineError;
use crate::domain::{
    grant_access, AccessRight, AuctionState, ClosingWindow, MessagePayload, Millis,
    ParticipantProfile, ParticipantStatus, Phase, PersonId, Role, RosterEntry, SlotId,
};

impl AuctionState {
    /// Moves the phase machine forward to `now`.
    ///
    /// Closing runs in two phases: when the end passes, ClosingAnnounced opens
    /// a grace window in which bids from clients that had not yet seen the
    /// announcement are still honoured; when the grace window passes, Closed is
    /// final. Reaching the hard cap closes immediately, without grace.
    pub(crate) fn advance(&mut self, now: Millis) {
        loop {
            match self.phase {
                Phase::Scheduled => {
                    if now < self.config.start_time || self.auctioneer().is_none() {
                        return;
                    }
                    self.set_open(now);
                }
                Phase::Open | Phase::Extension(_) => {
                    if now >= self.cap_end {
                        self.close(now);
                    } else if now >= self.current_end {
                        let announced_end = self.current_end;
                        let grace_until =
                            (announced_end + self.config.closing_grace_ms).min(self.cap_end);
                        self.phase = Phase::Closing;
                        let seq = self.push_message(
                            now,
                            MessagePayload::ClosingAnnounced {
                                announced_end,
                                grace_until,
                            },
                        );
                        self.closing = Some(ClosingWindow {
                            announced_seq: seq,
                            announced_end,
                        });
                    } else {
                        return;
                    }
                }
                Phase::Closing => {
                    let announced_end = self.closing.map_or(self.current_end, |c| c.announced_end);
                    let grace_until =
                        (announced_end + self.config.closing_grace_ms).min(self.cap_end);
                    if now < grace_until {
                        return;
                    }
                    self.close(now);
                }
                Phase::Closed | Phase::Cancelled => return,
            }
        }
    }

    fn set_open(&mut self, now: Millis) {
        self.phase = Phase::Open;
        self.opened_at = Some(now);
        self.push_message(
            now,
            MessagePayload::StateChanged {
                from: Phase::Scheduled,
                to: Phase::Open,
            },
        );
    }

    fn close(&mut self, now: Millis) {
        self.phase = Phase::Closed;
        self.closing = None;
        self.closed_at = Some(now);
        self.push_message(now, MessagePayload::Closed { closed_at: now });
    }

    fn ensure_not_terminal(&self) -> Result<(), EngineError> {
        if self.phase.is_terminal() {
            Err(EngineError::AlreadyClosed)
        } else {
            Ok(())
        }
    }

    /// Explicit admin start, ahead of the configured start time.
    pub(crate) fn open(&mut self, now: Millis) -> Result<(), EngineError> {
        if self.phase != Phase::Scheduled {
            return Err(EngineError::IllegalPhase { phase: self.phase });
        }
        if self.auctioneer().is_none() {
            return Err(EngineError::NoAuctioneer);
        }
        self.set_open(now);
        Ok(())
    }

    pub(crate) fn invite(
        &mut self,
        profile: &ParticipantProfile,
        role: Role,
        slot: Option<&SlotId>,
    ) -> Result<(), EngineError> {
        self.ensure_not_terminal()?;
        if role == Role::Originator {
            return Err(EngineError::InvalidRole { role });
        }
        if let Some(existing) = self.roster.get(&profile.person_id) {
            return Err(if existing.role == role {
                EngineError::AlreadyInvited
            } else {
                crate::domain::AccessError::RoleConflict.into()
            });
        }
        if let Some(slot) = slot {
            if self.config.slot(slot).is_none() {
                return Err(EngineError::UnknownReference {
                    what: format!("slot {slot}"),
                });
            }
        }
        if role == Role::Auctioneer && self.auctioneer().is_some() {
            return Err(crate::domain::AccessError::AuctioneerAlreadyAssigned.into());
        }
        let person_id = profile.person_id.clone();
        self.roster.insert(
            person_id.clone(),
            RosterEntry {
                profile: profile.clone(),
                role,
                slot_id: slot.cloned(),
                right: None,
                status: ParticipantStatus::invited(person_id.clone(), self.config.auction_id.clone()),
            },
        );
        // Bidders get their right on admission; everyone else right away.
        if role != Role::Bidder {
            let right = self.right_for(&person_id, role, slot.cloned());
            grant_access(&mut self.roster, right).expect("checked above");
        }
        Ok(())
    }

    fn right_for(&self, person: &PersonId, role: Role, slot: Option<SlotId>) -> AccessRight {
        AccessRight {
            person_id: person.clone(),
            auction_id: self.config.auction_id.clone(),
            slot_id: slot,
            role,
            valid_from: None,
            valid_until: None,
        }
    }

    pub(crate) fn update_status(
        &mut self,
        person: &PersonId,
        update: impl FnOnce(&mut ParticipantStatus),
    ) -> Result<(), EngineError> {
        self.ensure_not_terminal()?;
        let entry = self
            .roster
            .get_mut(person)
            .ok_or_else(|| EngineError::NotFound {
                person_id: person.clone(),
            })?;
        update(&mut entry.status);
        Ok(())
    }

    /// Admits an invited bidder once the auction contract is signed.
    pub(crate) fn admit(&mut self, person: &PersonId, now: Millis) -> Result<(), EngineError> {
        self.ensure_not_terminal()?;
        let entry = self.roster.get(person).ok_or_else(|| EngineError::NotFound {
            person_id: person.clone(),
        })?;
        if entry.role != Role::Bidder {
            return Err(EngineError::InvalidRole { role: entry.role });
        }
        if entry.status.banned {
            return Err(EngineError::Banned);
        }
        if entry.status.admitted {
            return Ok(());
        }
        if !entry.status.invited || !entry.status.contract_signed {
            return Err(EngineError::NotSigned);
        }
        let right = self.right_for(person, Role::Bidder, entry.slot_id.clone());

        let entry = self.roster.get_mut(person).expect("present");
        entry.status.admitted = true;
        if let Err(e) = grant_access(&mut self.roster, right) {
            self.roster.get_mut(person).expect("present").status.admitted = false;
            return Err(e.into());
        }
        self.push_message(
            now,
            MessagePayload::ParticipantAdmitted {
                person_id: person.clone(),
            },
        );
        Ok(())
    }

    /// Expels a participant: their right is revoked and all their bids are
    /// voided. The end time is not rolled back.
    pub(crate) fn ban(&mut self, person: &PersonId, now: Millis) -> Result<(), EngineError> {
        self.ensure_not_terminal()?;
        let entry = self
            .roster
            .get_mut(person)
            .ok_or_else(|| EngineError::NotFound {
                person_id: person.clone(),
            })?;
        if entry.status.banned {
            return Ok(());
        }
        entry.status.banned = true;
        entry.status.admitted = false;
        entry.right = None;
        let mut voided = Vec::new();
        for bid in self.bids.iter_mut().filter(|b| &b.bidder == person && !b.voided) {
            bid.voided = true;
            voided.push(bid.seq);
        }
        self.push_message(
            now,
            MessagePayload::ParticipantBanned {
                person_id: person.clone(),
                voided_bids: voided,
            },
        );
        Ok(())
    }

    /// Admin override: moves both the current end and the definitive end.
    pub(crate) fn prolong(&mut self, delta_ms: Millis, now: Millis) -> Result<(), EngineError> {
        self.ensure_not_terminal()?;
        self.current_end += delta_ms;
        self.cap_end += delta_ms;
        self.push_message(
            now,
            MessagePayload::AuctionProlonged {
                delta_ms,
                new_end: self.current_end,
                new_cap: self.cap_end,
            },
        );
        if self.phase == Phase::Closing && self.current_end > now {
            let to = match self.extension_count {
                0 => Phase::Open,
                k => Phase::Extension(k),
            };
            self.phase = to;
            self.closing = None;
            self.push_message(
                now,
                MessagePayload::StateChanged {
                    from: Phase::Closing,
                    to,
                },
            );
        }
        Ok(())
    }

    pub(crate) fn cancel(&mut self, now: Millis) -> Result<(), EngineError> {
        self.ensure_not_terminal()?;
        self.phase = Phase::Cancelled;
        self.closing = None;
        self.closed_at = Some(now);
        self.push_message(now, MessagePayload::AuctionCancelled {});
        Ok(())
    }
}
