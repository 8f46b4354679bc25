use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Company, Millis, Person, PersonId};

/// Sessions expire after twelve hours without use.
pub const SESSION_IDLE_MS: Millis = 12 * 60 * 60 * 1_000;

const HASH_SCHEME: &str = "sha256";

/// `sha256$<salt hex>$<hex digest of salt ‖ password>`
pub fn hash_password(password: &str, rng: &mut dyn RngCore) -> String {
    let mut salt = [0u8; 16];
    rng.fill_bytes(&mut salt);
    let salt = hex::encode(salt);
    format!("{HASH_SCHEME}${salt}${}", salted_digest(&salt, password))
}

fn salted_digest(salt: &str, password: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(password.as_bytes());
    hex::encode(h.finalize())
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

pub fn verify_password(stored: &str, password: &str) -> bool {
    let mut parts = stored.splitn(3, '$');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(HASH_SCHEME), Some(salt), Some(digest)) => {
            constant_time_eq(salted_digest(salt, password).as_bytes(), digest.as_bytes())
        }
        _ => false,
    }
}

/// Registered people and companies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directory {
    #[serde(default)]
    pub companies: Vec<Company>,
    #[serde(default)]
    pub persons: Vec<Person>,
}

impl Directory {
    pub fn person(&self, id: &PersonId) -> Option<&Person> {
        self.persons.iter().find(|p| &p.person_id == id)
    }

    pub fn add_person(&mut self, person: Person) {
        self.persons.retain(|p| p.person_id != person.person_id);
        self.persons.push(person);
    }

    /// Checks a login. Unknown users and wrong passwords take the same path.
    pub fn authenticate(&self, username: &str, password: &str) -> Option<&Person> {
        const DUMMY: &str = "sha256$00000000000000000000000000000000$";
        let person = self.persons.iter().find(|p| p.person_id.as_str() == username);
        let stored = person.map_or(DUMMY, |p| p.credential_hash.as_str());
        let ok = verify_password(stored, password);
        person.filter(|_| ok)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Session {
    person_id: PersonId,
    last_used: Millis,
}

/// Opaque bearer tokens, 128 random bits each.
pub struct Sessions {
    rng: Box<dyn RngCore + Send>,
    tokens: BTreeMap<String, Session>,
}

impl Sessions {
    pub fn new(rng: Box<dyn RngCore + Send>) -> Self {
        Self {
            rng,
            tokens: BTreeMap::new(),
        }
    }

    pub fn issue(&mut self, person_id: PersonId, now: Millis) -> String {
        let mut raw = [0u8; 16];
        self.rng.fill_bytes(&mut raw);
        let token = hex::encode(raw);
        self.tokens.insert(
            token.clone(),
            Session {
                person_id,
                last_used: now,
            },
        );
        token
    }

    /// Resolves and refreshes a token.
    pub fn resolve(&mut self, token: &str, now: Millis) -> Option<PersonId> {
        let session = self.tokens.get_mut(token)?;
        if now.saturating_sub(session.last_used) > SESSION_IDLE_MS {
            self.tokens.remove(token);
            return None;
        }
        session.last_used = session.last_used.max(now);
        Some(session.person_id.clone())
    }

    pub fn rng(&mut self) -> &mut dyn RngCore {
        &mut *self.rng
    }
}
