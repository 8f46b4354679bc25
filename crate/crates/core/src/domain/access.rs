use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AccessRight, PersonId, Role, RosterEntry};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum AccessError {
    #[error("person {0} is not part of this auction")]
    UnknownPerson(PersonId),
    #[error("company already has an admitted bidder in this auction")]
    SecondBidderSameCompany,
    #[error("person already holds a different role in this auction")]
    RoleConflict,
    #[error("bidder rights require admission")]
    NotAdmitted,
    #[error("the auction already has an auctioneer")]
    AuctioneerAlreadyAssigned,
}

/// Records `right` in the roster. One role per (person, auction), one admitted
/// bidder per company, one auctioneer per auction.
pub fn grant_access(
    roster: &mut BTreeMap<PersonId, RosterEntry>,
    right: AccessRight,
) -> Result<(), AccessError> {
    let entry = roster
        .get(&right.person_id)
        .ok_or_else(|| AccessError::UnknownPerson(right.person_id.clone()))?;
    if entry.role != right.role {
        return Err(AccessError::RoleConflict);
    }
    match right.role {
        Role::Bidder => {
            if !entry.status.admitted || entry.status.banned {
                return Err(AccessError::NotAdmitted);
            }
            let company = &entry.profile.company_id;
            let taken = roster.values().any(|other| {
                other.profile.person_id != right.person_id
                    && other.role == Role::Bidder
                    && other.right.is_some()
                    && &other.profile.company_id == company
            });
            if taken {
                return Err(AccessError::SecondBidderSameCompany);
            }
        }
        Role::Auctioneer => {
            let taken = roster.values().any(|other| {
                other.profile.person_id != right.person_id
                    && other.role == Role::Auctioneer
                    && other.right.is_some()
            });
            if taken {
                return Err(AccessError::AuctioneerAlreadyAssigned);
            }
        }
        Role::Originator | Role::Observer => {}
    }
    let person = right.person_id.clone();
    roster.get_mut(&person).expect("checked above").right = Some(right);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ParticipantProfile, ParticipantStatus};

    fn entry(person: &str, company: &str, role: Role, admitted: bool) -> RosterEntry {
        let mut status = ParticipantStatus::invited(person.into(), "a1".into());
        status.contract_signed = admitted;
        status.admitted = admitted;
        RosterEntry {
            profile: ParticipantProfile {
                person_id: person.into(),
                name: person.to_uppercase(),
                company_id: company.into(),
            },
            role,
            slot_id: None,
            right: None,
            status,
        }
    }

    fn right(person: &str, role: Role) -> AccessRight {
        AccessRight {
            person_id: person.into(),
            auction_id: "a1".into(),
            slot_id: None,
            role,
            valid_from: None,
            valid_until: None,
        }
    }

    fn roster(entries: Vec<RosterEntry>) -> BTreeMap<PersonId, RosterEntry> {
        entries
            .into_iter()
            .map(|e| (e.profile.person_id.clone(), e))
            .collect()
    }

    #[test]
    fn one_bidder_per_company() {
        let mut r = roster(vec![
            entry("p1", "c", Role::Bidder, true),
            entry("p2", "c", Role::Bidder, true),
            entry("p3", "d", Role::Bidder, true),
        ]);
        assert_eq!(grant_access(&mut r, right("p1", Role::Bidder)), Ok(()));
        assert_eq!(
            grant_access(&mut r, right("p2", Role::Bidder)),
            Err(AccessError::SecondBidderSameCompany)
        );
        assert_eq!(grant_access(&mut r, right("p3", Role::Bidder)), Ok(()));
    }

    #[test]
    fn observers_from_the_bidders_company_are_fine() {
        let mut r = roster(vec![
            entry("p1", "c", Role::Bidder, true),
            entry("p2", "c", Role::Observer, false),
            entry("p3", "c", Role::Observer, false),
        ]);
        grant_access(&mut r, right("p1", Role::Bidder)).unwrap();
        grant_access(&mut r, right("p2", Role::Observer)).unwrap();
        grant_access(&mut r, right("p3", Role::Observer)).unwrap();
    }

    #[test]
    fn role_conflict() {
        let mut r = roster(vec![entry("p1", "c", Role::Bidder, true)]);
        grant_access(&mut r, right("p1", Role::Bidder)).unwrap();
        assert_eq!(
            grant_access(&mut r, right("p1", Role::Observer)),
            Err(AccessError::RoleConflict)
        );
    }

    #[test]
    fn bidder_needs_admission() {
        let mut r = roster(vec![entry("p1", "c", Role::Bidder, false)]);
        assert_eq!(
            grant_access(&mut r, right("p1", Role::Bidder)),
            Err(AccessError::NotAdmitted)
        );
        assert_eq!(
            grant_access(&mut r, right("p9", Role::Bidder)),
            Err(AccessError::UnknownPerson("p9".into()))
        );
    }

    #[test]
    fn single_auctioneer() {
        let mut r = roster(vec![
            entry("p1", "c", Role::Auctioneer, false),
            entry("p2", "d", Role::Auctioneer, false),
        ]);
        grant_access(&mut r, right("p1", Role::Auctioneer)).unwrap();
        assert_eq!(
            grant_access(&mut r, right("p2", Role::Auctioneer)),
            Err(AccessError::AuctioneerAlreadyAssigned)
        );
    }
}
