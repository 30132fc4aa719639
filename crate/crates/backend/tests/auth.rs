use std::sync::Arc;
use std::time::Duration;

use smartfridge_backend::{Auth, AuthError, Store};

fn auth(ttl: Duration) -> (Auth, Arc<Store>, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).unwrap());
    (Auth::new(Arc::clone(&store), ttl), store, dir)
}

#[test]
fn register_then_login() {
    let (a, _, _d) = auth(Duration::from_secs(60));
    a.register("alice", "correct horse").unwrap();
    let t = a.login("alice", "correct horse").unwrap();
    assert_eq!(t.token.len(), 32);
    assert!(t.token.chars().all(|c| c.is_ascii_hexdigit()));
    assert_eq!(a.check(&t.token).unwrap().username, "alice");
    let t2 = a.login("alice", "correct horse").unwrap();
    assert_ne!(t.token, t2.token);
}

#[test]
fn rejections() {
    let (a, _, _d) = auth(Duration::from_secs(60));
    a.register("bob", "password1").unwrap();
    assert!(matches!(a.login("bob", "password2"), Err(AuthError::InvalidCredentials)));
    assert!(matches!(a.login("nobody", "password1"), Err(AuthError::InvalidCredentials)));
    assert!(matches!(a.register("bob", "another-one"), Err(AuthError::UsernameTaken)));
    assert!(matches!(a.register("", "password1"), Err(AuthError::EmptyUsername)));
    assert!(matches!(a.register("carol", "short"), Err(AuthError::ShortPassword)));
    assert!(matches!(a.check("deadbeef"), Err(AuthError::InvalidToken)));
}

#[test]
fn hashes_are_salted_and_persisted() {
    let (a, store, dir) = auth(Duration::from_secs(60));
    a.register("u1", "same-password").unwrap();
    a.register("u2", "same-password").unwrap();
    let h1 = store.user("u1").unwrap().password_hash;
    let h2 = store.user("u2").unwrap().password_hash;
    assert_ne!(h1, h2);
    assert!(h1.starts_with("$argon2"));
    let raw = std::fs::read_to_string(dir.path().join("users.jsonl")).unwrap();
    assert!(!raw.contains("same-password"));
    drop(a);
    drop(store);
    let store = Arc::new(Store::open(dir.path()).unwrap());
    let a = Auth::new(store, Duration::from_secs(60));
    a.login("u1", "same-password").unwrap();
    assert!(matches!(a.register("u2", "whatever1"), Err(AuthError::UsernameTaken)));
}

#[test]
fn tokens_expire_and_log_out() {
    let (a, _, _d) = auth(Duration::ZERO);
    a.register("dave", "password1").unwrap();
    let t = a.login("dave", "password1").unwrap();
    assert!(matches!(a.check(&t.token), Err(AuthError::InvalidToken)));

    let (a, _, _d) = auth(Duration::from_secs(60));
    a.register("erin", "password1").unwrap();
    let t = a.login("erin", "password1").unwrap();
    assert!(a.logout(&t.token));
    assert!(a.check(&t.token).is_err());
}
