use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::http;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebHit {
    pub title: String,
    pub url: String,
    pub snippet: String,
    /// 1-based position in the search response.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WebSearchError {
    #[error("search quota exceeded: {0}")]
    QuotaExceeded(String),
    #[error("search transport failure: {0}")]
    TransportFailure(String),
    #[error("malformed search response: {0}")]
    Malformed(String),
}

pub trait WebSearchClient: Send + Sync {
    /// At most `n` hits ranked `1..`.
    fn search(&self, query: &str, n: usize) -> Result<Vec<WebHit>, WebSearchError>;
}

/// Runs a search and normalizes the result: drops hits without a URL,
/// caps the count at `n` and renumbers ranks from 1.
pub fn search_web(client: &dyn WebSearchClient, query: &str, n: usize) -> Result<Vec<WebHit>, WebSearchError> {
    let hits = client.search(query, n)?;
    Ok(hits
        .into_iter()
        .filter(|h| !h.url.trim().is_empty())
        .take(n)
        .enumerate()
        .map(|(i, hit)| WebHit { rank: i + 1, ..hit })
        .collect())
}

/// Token bucket shared by every clone of a client.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    state: Arc<Mutex<Bucket>>,
}

#[derive(Debug)]
struct Bucket {
    capacity: f64,
    tokens: f64,
    per_second: f64,
    refilled: Instant,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        let rate = rate.max(f64::MIN_POSITIVE);
        Self {
            state: Arc::new(Mutex::new(Bucket {
                capacity: rate.max(1.0),
                tokens: rate.max(1.0),
                per_second: rate,
                refilled: Instant::now(),
            })),
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut bucket = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let elapsed = now.duration_since(bucket.refilled).as_secs_f64();
                bucket.tokens = (bucket.tokens + elapsed * bucket.per_second).min(bucket.capacity);
                bucket.refilled = now;
                if bucket.tokens >= 1.0 {
                    bucket.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - bucket.tokens) / bucket.per_second)
            };
            thread::sleep(wait);
        }
    }
}

pub const CUSTOM_SEARCH_ENDPOINT: &str = "https://www.googleapis.com/customsearch/v1";
const MAX_RESULTS_PER_CALL: usize = 10;

/// Custom Search JSON API client (`GET ?key=&cx=&q=&num=`).
#[derive(Debug, Clone)]
pub struct CustomSearchClient {
    endpoint: String,
    key: String,
    cx: String,
    limiter: RateLimiter,
    client: http::LazyClient,
}

#[derive(Deserialize)]
struct SearchResponse {
    #[serde(default)]
    items: Vec<SearchItem>,
}

#[derive(Deserialize)]
struct SearchItem {
    #[serde(default)]
    title: String,
    #[serde(default)]
    link: String,
    #[serde(default)]
    snippet: String,
}

impl CustomSearchClient {
    pub fn new(key: impl Into<String>, cx: impl Into<String>) -> Self {
        Self {
            endpoint: CUSTOM_SEARCH_ENDPOINT.to_string(),
            key: key.into(),
            cx: cx.into(),
            limiter: RateLimiter::per_second(5.0),
            client: http::LazyClient::new(Duration::from_secs(20)),
        }
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = endpoint.into();
        self
    }

    pub fn with_limiter(mut self, limiter: RateLimiter) -> Self {
        self.limiter = limiter;
        self
    }

    /// Maps a response body onto hits, preserving item order as rank.
    pub fn parse_response(body: &str) -> Result<Vec<WebHit>, WebSearchError> {
        let response: SearchResponse =
            serde_json::from_str(body).map_err(|e| WebSearchError::Malformed(e.to_string()))?;
        Ok(response
            .items
            .into_iter()
            .enumerate()
            .map(|(i, item)| WebHit {
                title: item.title,
                url: item.link,
                snippet: item.snippet,
                rank: i + 1,
            })
            .collect())
    }
}

impl WebSearchClient for CustomSearchClient {
    fn search(&self, query: &str, n: usize) -> Result<Vec<WebHit>, WebSearchError> {
        let num = n.clamp(1, MAX_RESULTS_PER_CALL).to_string();
        self.limiter.acquire();
        let response = self
            .client
            .get()
            .get(&self.endpoint)
            .query(&[
                ("key", self.key.as_str()),
                ("cx", &self.cx),
                ("q", query),
                ("num", &num),
            ])
            .send()
            .map_err(|e| WebSearchError::TransportFailure(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| WebSearchError::TransportFailure(e.to_string()))?;
        if status.as_u16() == 429
            || (status.as_u16() == 403 && (body.contains("quota") || body.contains("LimitExceeded")))
        {
            return Err(WebSearchError::QuotaExceeded(format!("{status}")));
        }
        if !status.is_success() {
            return Err(WebSearchError::TransportFailure(format!("{status}: {body}")));
        }
        let mut hits = Self::parse_response(&body)?;
        hits.truncate(n);
        Ok(hits)
    }
}

/// Web search that never returns anything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoWebSearch;

impl WebSearchClient for NoWebSearch {
    fn search(&self, _: &str, _: usize) -> Result<Vec<WebHit>, WebSearchError> {
        Ok(Vec::new())
    }
}

/// Replays canned hits per query, with an optional fallback list or a
/// fixed failure.
#[derive(Debug, Clone, Default)]
pub struct ScriptedWebSearch {
    by_query: BTreeMap<String, Vec<WebHit>>,
    fallback: Vec<WebHit>,
    failure: Option<WebSearchError>,
}

impl ScriptedWebSearch {
    pub fn new(fallback: Vec<WebHit>) -> Self {
        Self {
            fallback,
            ..Self::default()
        }
    }

    pub fn with_query(mut self, query: impl Into<String>, hits: Vec<WebHit>) -> Self {
        self.by_query.insert(query.into(), hits);
        self
    }

    pub fn failing(error: WebSearchError) -> Self {
        Self {
            failure: Some(error),
            ..Self::default()
        }
    }
}

impl WebSearchClient for ScriptedWebSearch {
    fn search(&self, query: &str, n: usize) -> Result<Vec<WebHit>, WebSearchError> {
        if let Some(err) = &self.failure {
            return Err(err.clone());
        }
        let hits = self.by_query.get(query).unwrap_or(&self.fallback);
        Ok(hits.iter().take(n).cloned().collect())
    }
}

/// Deterministic offline stand-in that fabricates `per_query` hits from
/// the query text itself.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticWebSearch {
    pub per_query: usize,
}

impl Default for SyntheticWebSearch {
    fn default() -> Self {
        Self { per_query: 2 }
    }
}

impl WebSearchClient for SyntheticWebSearch {
    fn search(&self, query: &str, n: usize) -> Result<Vec<WebHit>, WebSearchError> {
        let slug: String = query
            .split_whitespace()
            .map(|w| w.to_lowercase())
            .map(|w| w.chars().filter(|c| c.is_alphanumeric()).collect::<String>())
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join("-");
        Ok((1..=self.per_query.min(n))
            .map(|rank| WebHit {
                title: format!("{query} (result {rank})"),
                url: format!("https://example.org/{slug}/{rank}"),
                snippet: format!("Overview {rank} of {query}."),
                rank,
            })
            .collect())
    }
}
