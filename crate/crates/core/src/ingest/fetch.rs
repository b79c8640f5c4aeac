//! HTTP client for public measurement-result archives.
//!
//! All network access in the pipeline goes through [`fetch_measurements`]. The
//! endpoint serves pages of result records as JSON; pages are concatenated
//! into the canonical newline-delimited record format the parsers accept, and
//! paging is resumable via an opaque cursor.

use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

/// Environment variable holding the archive API key, if the endpoint needs one.
pub const API_KEY_ENV: &str = "SPOOFSCOPE_API_KEY";

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("http request failed after {attempts} attempts: {last}")]
    Http { attempts: u32, last: String },
    #[error("endpoint returned status {0}")]
    Status(u16),
    #[error("malformed result page: {0}")]
    BadPage(String),
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    /// Retries per page on transport errors and 5xx responses.
    pub max_retries: u32,
    pub backoff: Duration,
}

impl FetchConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        FetchConfig {
            base_url: base_url.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            max_retries: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Deserialize)]
struct ResultPage {
    results: Vec<serde_json::Value>,
    #[serde(default)]
    next_cursor: Option<String>,
}

/// Fetches all result records of one measurement in `[start, stop)` and
/// returns them as canonical record lines.
///
/// 5xx responses and transport errors are retried with exponential backoff up
/// to `max_retries`; 4xx responses and malformed pages fail immediately, so a
/// truncated page can never pass silently as an empty one.
pub fn fetch_measurements(
    config: &FetchConfig,
    measurement_id: u64,
    start: i64,
    stop: i64,
) -> Result<Vec<u8>, FetchError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(60)))
        .build()
        .into();

    let mut out = Vec::new();
    let mut cursor: Option<String> = None;
    loop {
        let mut url = format!(
            "{}/measurements/{}/results?start={}&stop={}",
            config.base_url.trim_end_matches('/'),
            measurement_id,
            start,
            stop
        );
        if let Some(c) = &cursor {
            url.push_str("&cursor=");
            url.push_str(c);
        }
        let body = get_with_retry(&agent, config, &url)?;
        let page: ResultPage =
            serde_json::from_str(&body).map_err(|e| FetchError::BadPage(e.to_string()))?;
        for record in &page.results {
            // serde_json maps are key-sorted, so re-serialization is canonical
            out.extend_from_slice(record.to_string().as_bytes());
            out.push(b'\n');
        }
        match page.next_cursor {
            Some(next) => cursor = Some(next),
            None => break,
        }
    }
    Ok(out)
}

fn get_with_retry(
    agent: &ureq::Agent,
    config: &FetchConfig,
    url: &str,
) -> Result<String, FetchError> {
    let mut last_err = String::new();
    for attempt in 0..=config.max_retries {
        if attempt > 0 {
            std::thread::sleep(config.backoff * 2u32.pow(attempt - 1));
        }
        let mut req = agent.get(url);
        if let Some(key) = &config.api_key {
            req = req.header("x-api-key", key);
        }
        match req.call() {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if (200..300).contains(&status) {
                    return resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| FetchError::BadPage(e.to_string()));
                }
                if status >= 500 {
                    last_err = format!("status {status}");
                    continue;
                }
                return Err(FetchError::Status(status));
            }
            Err(e) => {
                last_err = e.to_string();
            }
        }
    }
    Err(FetchError::Http {
        attempts: config.max_retries + 1,
        last: last_err,
    })
}
