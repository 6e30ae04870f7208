use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use super::{ValidationReport, Verdict};
use crate::domain::to_canonical_string;

type HmacSha256 = Hmac<Sha256>;

pub const DEFAULT_TTL_SECS: u64 = 24 * 3600;

/// Wall-clock seconds, injectable so expiry can be tested.
pub trait Clock: Send + Sync {
    fn now_secs(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_secs(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }
}

#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(secs: u64) -> Self {
        ManualClock(AtomicU64::new(secs))
    }

    pub fn set(&self, secs: u64) {
        self.0.store(secs, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_secs(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("validation verdict is not pass")]
    VerdictNotPass,
    #[error("token does not verify")]
    InvalidToken,
    #[error("token expired")]
    Expired,
    #[error("token was issued for a different validation suite")]
    TokenSuiteMismatch,
    #[error("signing key is empty")]
    EmptyKey,
}

/// Capability binding one validated policy to the suite it passed on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentToken {
    pub policy_id: String,
    pub suite_hash: String,
    pub issued_at: u64,
    pub ttl: u64,
    /// Base64 HMAC-SHA256 over the canonical JSON of the other fields.
    pub mac: String,
}

#[derive(Serialize)]
struct Claims<'a> {
    issued_at: u64,
    policy_id: &'a str,
    suite_hash: &'a str,
    ttl: u64,
}

fn mac_for(key: &[u8], policy_id: &str, suite_hash: &str, issued_at: u64, ttl: u64) -> Result<HmacSha256, TokenError> {
    if key.is_empty() {
        return Err(TokenError::EmptyKey);
    }
    let claims = Claims {
        issued_at,
        policy_id,
        suite_hash,
        ttl,
    };
    let mut mac = HmacSha256::new_from_slice(key).map_err(|_| TokenError::EmptyKey)?;
    mac.update(to_canonical_string(&claims).as_bytes());
    Ok(mac)
}

pub fn issue_token(report: &ValidationReport, key: &[u8], now: u64, ttl: u64) -> Result<DeploymentToken, TokenError> {
    if report.verdict != Verdict::Pass {
        return Err(TokenError::VerdictNotPass);
    }
    let mac = mac_for(key, &report.policy_id, &report.suite_hash, now, ttl)?;
    Ok(DeploymentToken {
        policy_id: report.policy_id.clone(),
        suite_hash: report.suite_hash.clone(),
        issued_at: now,
        ttl,
        mac: STANDARD.encode(mac.finalize().into_bytes()),
    })
}

/// Checks the MAC in constant time, then expiry.
pub fn verify_token(token: &DeploymentToken, key: &[u8], now: u64) -> Result<(), TokenError> {
    let mac = mac_for(key, &token.policy_id, &token.suite_hash, token.issued_at, token.ttl)?;
    let tag = STANDARD.decode(&token.mac).map_err(|_| TokenError::InvalidToken)?;
    mac.verify_slice(&tag).map_err(|_| TokenError::InvalidToken)?;
    if now >= token.issued_at.saturating_add(token.ttl) {
        return Err(TokenError::Expired);
    }
    Ok(())
}

impl DeploymentToken {
    /// Canonical JSON wire form.
    pub fn to_wire(&self) -> String {
        to_canonical_string(self)
    }

    pub fn from_wire(s: &str) -> Result<Self, TokenError> {
        serde_json::from_str(s).map_err(|_| TokenError::InvalidToken)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Verifier, VerifierConfig};
    use super::*;
    use crate::dsl::builtin;
    use crate::sim::gen_longtail_batch;

    const KEY: &[u8] = b"test-key";

    fn report() -> ValidationReport {
        let suite = vec![gen_longtail_batch(7, 1_000, 1, 10_000).unwrap()];
        let fair = builtin("fair_vruntime").unwrap();
        Verifier::new(VerifierConfig::default()).run_pipeline(&fair, &suite, &fair, None)
    }

    #[test]
    fn pass_report_yields_verifying_token() {
        let r = report();
        assert_eq!(r.verdict, Verdict::Pass);
        let t = issue_token(&r, KEY, 1000, DEFAULT_TTL_SECS).unwrap();
        assert_eq!(verify_token(&t, KEY, 1000), Ok(()));
        assert_eq!(verify_token(&t, b"other-key", 1000), Err(TokenError::InvalidToken));
        let round = DeploymentToken::from_wire(&t.to_wire()).unwrap();
        assert_eq!(round, t);
    }

    #[test]
    fn tampering_and_expiry() {
        let t = issue_token(&report(), KEY, 1000, 60).unwrap();
        let mut raw = STANDARD.decode(&t.mac).unwrap();
        raw[0] ^= 1;
        let bad = DeploymentToken {
            mac: STANDARD.encode(raw),
            ..t.clone()
        };
        assert_eq!(verify_token(&bad, KEY, 1000), Err(TokenError::InvalidToken));
        let stretched = DeploymentToken { ttl: 1_000_000, ..t.clone() };
        assert_eq!(verify_token(&stretched, KEY, 1000), Err(TokenError::InvalidToken));
        assert_eq!(verify_token(&t, KEY, 1059), Ok(()));
        assert_eq!(verify_token(&t, KEY, 1060), Err(TokenError::Expired));
    }

    #[test]
    fn failing_report_gets_no_token() {
        let mut r = report();
        r.verdict = Verdict::Fail;
        assert_eq!(issue_token(&r, KEY, 0, 60), Err(TokenError::VerdictNotPass));
        assert_eq!(issue_token(&report(), b"", 0, 60), Err(TokenError::EmptyKey));
    }

    #[test]
    fn manual_clock_moves() {
        let c = ManualClock::new(5);
        c.advance(10);
        assert_eq!(c.now_secs(), 15);
        c.set(1);
        assert_eq!(c.now_secs(), 1);
    }
}
