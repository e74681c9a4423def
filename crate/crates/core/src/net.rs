//! The only place the engine opens outbound connections. Every request goes
//! through [`post_json`], which bumps a process-wide counter so tests can
//! assert that mock-mode runs stay offline.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use thiserror::Error;

static OUTBOUND_REQUESTS: AtomicU64 = AtomicU64::new(0);

/// Number of outbound HTTP requests attempted by this process so far.
pub fn outbound_requests() -> u64 {
    OUTBOUND_REQUESTS.load(Ordering::SeqCst)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("endpoint unreachable: {0}")]
    Unavailable(String),
}

/// POSTs a JSON body and returns `(status, body)` for any HTTP status.
pub fn post_json(
    url: &str,
    bearer: Option<&str>,
    body: &serde_json::Value,
    timeout: Duration,
) -> Result<(u16, String), NetError> {
    OUTBOUND_REQUESTS.fetch_add(1, Ordering::SeqCst);
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into();
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = bearer {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    let mut resp = req.send(body.to_string()).map_err(|e| NetError::Unavailable(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| NetError::Unavailable(e.to_string()))?;
    Ok((status, text))
}
