//! Shared plumbing for the blocking HTTP adapters (embeddings, web search,
//! chat completion): client construction and retry with backoff.

use std::thread;
use std::time::Duration;

use reqwest::StatusCode;

/// Outcome of one attempt; only `Transient` failures are retried.
#[derive(Debug)]
pub enum Attempt<E> {
    Transient(E),
    Fatal(E),
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
        }
    }

    /// Runs `op` until it succeeds, fails fatally, or attempts run out.
    /// The delay doubles after each transient failure.
    pub fn run<T, E>(&self, mut op: impl FnMut(u32) -> Result<T, Attempt<E>>) -> Result<T, E> {
        let attempts = self.attempts.max(1);
        let mut delay = self.base_delay;
        for attempt in 1..=attempts {
            match op(attempt) {
                Ok(value) => return Ok(value),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(e)) if attempt == attempts => return Err(e),
                Err(Attempt::Transient(_)) => {
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    delay *= 2;
                }
            }
        }
        unreachable!("loop returns on the last attempt")
    }
}

pub fn is_transient_status(status: StatusCode) -> bool {
    status == StatusCode::TOO_MANY_REQUESTS || status == StatusCode::REQUEST_TIMEOUT || status.is_server_error()
}

pub fn is_transient_error(err: &reqwest::Error) -> bool {
    err.is_connect() || err.is_timeout() || err.is_request()
}

/// A blocking client built on first use. The blocking client owns a small
/// runtime, so constructing it eagerly would make configured-but-unused
/// clients expensive and unsafe to drop inside async code.
#[derive(Debug, Clone)]
pub struct LazyClient {
    timeout: Duration,
    cell: std::sync::OnceLock<reqwest::blocking::Client>,
}

impl LazyClient {
    pub fn new(timeout: Duration) -> Self {
        Self {
            timeout,
            cell: std::sync::OnceLock::new(),
        }
    }

    pub fn get(&self) -> &reqwest::blocking::Client {
        self.cell.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(self.timeout)
                .build()
                .expect("TLS backend initializes")
        })
    }
}
