//! Accounts with argon2 password hashes and opaque session tokens.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use rand::RngCore;

use crate::store::{Store, StoreError, UserRecord};

pub const MIN_PASSWORD_LEN: usize = 8;
pub const DEFAULT_TOKEN_TTL: Duration = Duration::from_secs(24 * 60 * 60);

#[derive(Debug, thiserror::Error)]
pub enum AuthError {
    #[error("username must not be empty")]
    EmptyUsername,
    #[error("password must be at least {MIN_PASSWORD_LEN} characters")]
    ShortPassword,
    #[error("username already exists")]
    UsernameTaken,
    #[error("invalid credentials")]
    InvalidCredentials,
    #[error("invalid or expired token")]
    InvalidToken,
    #[error("password hashing failed: {0}")]
    Hash(String),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for AuthError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UsernameTaken(_) => AuthError::UsernameTaken,
            other => AuthError::Store(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub username: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuedToken {
    pub token: String,
    pub expires_at: DateTime<Utc>,
}

fn hash_password(password: &str) -> Result<String, AuthError> {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    let salt = SaltString::encode_b64(&bytes).map_err(|e| AuthError::Hash(e.to_string()))?;
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| AuthError::Hash(e.to_string()))
}

fn verify_password(password: &str, hash: &str) -> bool {
    PasswordHash::new(hash)
        .map(|parsed| {
            Argon2::default()
                .verify_password(password.as_bytes(), &parsed)
                .is_ok()
        })
        .unwrap_or(false)
}

/// Hash checked for unknown usernames so that a miss costs the same as a
/// wrong password.
fn dummy_hash() -> &'static str {
    static HASH: OnceLock<String> = OnceLock::new();
    HASH.get_or_init(|| hash_password("not-a-real-password").expect("argon2 with defaults"))
}

pub struct Auth {
    store: Arc<Store>,
    ttl: Duration,
    sessions: Mutex<HashMap<String, Session>>,
}

impl Auth {
    pub fn new(store: Arc<Store>, ttl: Duration) -> Self {
        Self {
            store,
            ttl,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn register(&self, username: &str, password: &str) -> Result<UserRecord, AuthError> {
        if username.trim().is_empty() {
            return Err(AuthError::EmptyUsername);
        }
        if password.chars().count() < MIN_PASSWORD_LEN {
            return Err(AuthError::ShortPassword);
        }
        if self.store.user(username).is_some() {
            return Err(AuthError::UsernameTaken);
        }
        let user = UserRecord {
            username: username.to_owned(),
            password_hash: hash_password(password)?,
            created_at: Utc::now(),
        };
        self.store.insert_user(user.clone())?;
        Ok(user)
    }

    pub fn login(&self, username: &str, password: &str) -> Result<IssuedToken, AuthError> {
        let user = self.store.user(username);
        let hash = user.as_ref().map_or(dummy_hash(), |u| u.password_hash.as_str());
        let ok = verify_password(password, hash);
        if !(ok && user.is_some()) {
            return Err(AuthError::InvalidCredentials);
        }
        let mut bytes = [0u8; 16];
        rand::rng().fill_bytes(&mut bytes);
        let token = hex::encode(bytes);
        let expires_at = Utc::now()
            + chrono::Duration::from_std(self.ttl).unwrap_or(chrono::Duration::MAX);
        let mut sessions = self.sessions.lock();
        let now = Utc::now();
        sessions.retain(|_, s| s.expires_at > now);
        sessions.insert(
            token.clone(),
            Session {
                username: username.to_owned(),
                expires_at,
            },
        );
        Ok(IssuedToken { token, expires_at })
    }

    pub fn check(&self, token: &str) -> Result<Session, AuthError> {
        let mut sessions = self.sessions.lock();
        match sessions.get(token) {
            Some(s) if s.expires_at > Utc::now() => Ok(s.clone()),
            Some(_) => {
                sessions.remove(token);
                Err(AuthError::InvalidToken)
            }
            None => Err(AuthError::InvalidToken),
        }
    }

    pub fn logout(&self, token: &str) -> bool {
        self.sessions.lock().remove(token).is_some()
    }
}
