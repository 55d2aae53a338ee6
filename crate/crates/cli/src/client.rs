//! Blocking HTTP client for a running referee service.

use anyhow::{anyhow, bail, Context, Result};
use reqwest::blocking::{Client, RequestBuilder};
use reqwest::{StatusCode, Url};
use serde::de::DeserializeOwned;

use edgeref_api::{ApiError, RunRequest, RunStarted, SubmitRequest, SubmitResponse, ADMIN_TOKEN_HEADER, IDEMPOTENCY_HEADER};
use edgeref_core::referee::{LeaderboardEntry, RunReport, ScoreHistory, SubmissionView};

pub struct ServiceClient {
    base: String,
    http: Client,
    admin_token: Option<String>,
}

impl ServiceClient {
    pub fn new(base: &str, admin_token: Option<String>) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            http: Client::new(),
            admin_token,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// Base URL plus percent-encoded path segments.
    fn segments(&self, parts: &[&str]) -> Result<Url> {
        let mut url = Url::parse(&self.base).with_context(|| format!("bad server URL `{}`", self.base))?;
        url.path_segments_mut()
            .map_err(|_| anyhow!("bad server URL `{}`", self.base))?
            .pop_if_empty()
            .extend(parts);
        Ok(url)
    }

    fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T> {
        let resp = req.send().with_context(|| format!("cannot reach {}", self.base))?;
        let status = resp.status();
        let body = resp.bytes()?;
        if status.is_success() {
            return serde_json::from_slice(&body).context("unexpected response body");
        }
        if status == StatusCode::UNAUTHORIZED {
            bail!("service refused the admin token");
        }
        match serde_json::from_slice::<ApiError>(&body) {
            Ok(e) => match e.detail {
                Some(d) => Err(anyhow!("{} ({status}): {d}", e.message)),
                None => Err(anyhow!("{} ({status})", e.message)),
            },
            Err(_) => Err(anyhow!("service answered {status}")),
        }
    }

    fn admin(&self, req: RequestBuilder) -> Result<RequestBuilder> {
        let token = self
            .admin_token
            .as_deref()
            .ok_or_else(|| anyhow!("admin token required (--admin-token or EDGEREF_ADMIN_TOKEN)"))?;
        Ok(req.header(ADMIN_TOKEN_HEADER, token))
    }

    pub fn submit(&self, body: &SubmitRequest, key: Option<&str>) -> Result<SubmitResponse> {
        let mut req = self.http.post(self.url("/api/v1/submissions")).json(body);
        if let Some(k) = key {
            req = req.header(IDEMPOTENCY_HEADER, k);
        }
        self.send(req)
    }

    pub fn status(&self, id: &str) -> Result<SubmissionView> {
        self.send(self.http.get(self.segments(&["api", "v1", "submissions", id])?))
    }

    pub fn leaderboard(&self, track: u8) -> Result<Vec<LeaderboardEntry>> {
        self.send(self.http.get(self.url(&format!("/api/v1/leaderboard/{track}"))))
    }

    pub fn history(&self, team: &str, track: u8) -> Result<ScoreHistory> {
        let mut url = self.segments(&["api", "v1", "teams", team, "history"])?;
        url.query_pairs_mut().append_pair("track", &track.to_string());
        self.send(self.http.get(url))
    }

    pub fn start_run(&self, track: Option<u8>) -> Result<RunStarted> {
        let req = self.http.post(self.url("/api/v1/admin/runs")).json(&RunRequest { track });
        self.send(self.admin(req)?)
    }

    pub fn run_report(&self, run_id: &str) -> Result<RunReport> {
        let req = self.http.get(self.segments(&["api", "v1", "admin", "runs", run_id])?);
        self.send(self.admin(req)?)
    }
}
