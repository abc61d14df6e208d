//! Users, salted password hashes and bearer-token sessions.

use std::collections::{BTreeMap, HashMap};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

pub const DEFAULT_SESSION_TTL_S: f64 = 30.0 * 60.0;
pub const LOCKOUT_THRESHOLD: u32 = 10;
const PBKDF2_ROUNDS: u32 = 20_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("bad credentials")]
    BadCredentials,
    #[error("account locked after repeated failures")]
    LockedOut,
    #[error("missing session token")]
    MissingToken,
    #[error("unknown session token")]
    InvalidToken,
    #[error("session expired")]
    SessionExpired,
}

/// Stored form: `pbkdf2-sha256$<rounds>$<salt hex>$<hash hex>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PasswordHash(pub String);

fn derive(password: &str, salt: &[u8], rounds: u32) -> [u8; 32] {
    let mut out = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, rounds, &mut out);
    out
}

impl PasswordHash {
    pub fn create(password: &str) -> Self {
        let mut salt = [0u8; 16];
        rand::rng().fill_bytes(&mut salt);
        Self::with_salt(password, &salt, PBKDF2_ROUNDS)
    }

    pub fn with_salt(password: &str, salt: &[u8], rounds: u32) -> Self {
        let hash = derive(password, salt, rounds);
        PasswordHash(format!("pbkdf2-sha256${rounds}${}${}", hex::encode(salt), hex::encode(hash)))
    }

    pub fn verify(&self, password: &str) -> bool {
        let parts: Vec<&str> = self.0.split('$').collect();
        let [scheme, rounds, salt, hash] = parts[..] else { return false };
        if scheme != "pbkdf2-sha256" {
            return false;
        }
        let (Ok(rounds), Ok(salt), Ok(expected)) = (rounds.parse::<u32>(), hex::decode(salt), hex::decode(hash)) else {
            return false;
        };
        let got = derive(password, &salt, rounds);
        // constant-time compare
        expected.len() == got.len() && expected.iter().zip(got.iter()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
    }

    pub fn is_well_formed(&self) -> bool {
        let parts: Vec<&str> = self.0.split('$').collect();
        parts.len() == 4
            && parts[0] == "pbkdf2-sha256"
            && parts[1].parse::<u32>().is_ok()
            && hex::decode(parts[2]).is_ok()
            && hex::decode(parts[3]).is_ok_and(|h| h.len() == 32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub hash: PasswordHash,
    pub consecutive_failures: u32,
}

impl UserRecord {
    pub fn locked(&self) -> bool {
        self.consecutive_failures >= LOCKOUT_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub user: String,
    pub token: String,
    pub expiry: f64,
}

/// Registered users and live sessions. Sessions live in memory only.
#[derive(Debug, Clone, Default)]
pub struct Auth {
    users: BTreeMap<String, UserRecord>,
    sessions: HashMap<String, Session>,
    ttl: f64,
}

impl Auth {
    pub fn new(ttl: f64) -> Self {
        Auth { users: BTreeMap::new(), sessions: HashMap::new(), ttl }
    }

    pub fn ttl(&self) -> f64 {
        self.ttl
    }

    pub fn add_user(&mut self, user: &str, hash: PasswordHash) {
        self.users.insert(user.to_string(), UserRecord { hash, consecutive_failures: 0 });
    }

    pub fn user(&self, user: &str) -> Option<&UserRecord> {
        self.users.get(user)
    }

    pub fn users(&self) -> &BTreeMap<String, UserRecord> {
        &self.users
    }

    pub(crate) fn set_failures(&mut self, user: &str, n: u32) {
        if let Some(u) = self.users.get_mut(user) {
            u.consecutive_failures = n;
        }
    }

    /// Unknown users and wrong passwords look the same to the caller.
    pub fn login(&mut self, user: &str, password: &str, now: f64) -> Result<Session, AuthError> {
        let Some(record) = self.users.get_mut(user) else {
            return Err(AuthError::BadCredentials);
        };
        if record.locked() {
            return Err(AuthError::LockedOut);
        }
        if !record.hash.verify(password) {
            record.consecutive_failures += 1;
            return Err(if record.locked() { AuthError::LockedOut } else { AuthError::BadCredentials });
        }
        record.consecutive_failures = 0;
        let mut raw = [0u8; 32];
        rand::rng().fill_bytes(&mut raw);
        let session = Session { user: user.to_string(), token: hex::encode(raw), expiry: now + self.ttl };
        self.sessions.insert(session.token.clone(), session.clone());
        Ok(session)
    }

    pub fn logout(&mut self, token: &str) -> bool {
        self.sessions.remove(token).is_some()
    }

    pub fn authorize(&mut self, token: Option<&str>, now: f64) -> Result<String, AuthError> {
        let token = token.ok_or(AuthError::MissingToken)?;
        let session = self.sessions.get(token).ok_or(AuthError::InvalidToken)?;
        if now >= session.expiry {
            self.sessions.remove(token);
            return Err(AuthError::SessionExpired);
        }
        Ok(session.user.clone())
    }

    pub fn clear_sessions(&mut self) {
        self.sessions.clear();
    }
}
