//! Async client for the `/v1/` API served by `adasup serve`.

use adasup_core::data::Point;
use adasup_core::wire::{self, Accepted, ApiError, BoxObject, BoxSubmission, ClickSubmission, QueueItem, Series, Status};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server answered {status}: {message}")]
    Api {
        status: u16,
        message: String,
        field: Option<String>,
    },
}

impl ClientError {
    /// HTTP status for API errors, `None` for transport failures.
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(_) => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_owned(),
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let (message, field) = match serde_json::from_str::<ApiError>(&text) {
            Ok(e) => (e.error, e.field),
            Err(_) => (text, None),
        };
        Err(ClientError::Api {
            status: status.as_u16(),
            message,
            field,
        })
    }

    pub async fn status(&self) -> Result<Status> {
        Self::decode(self.http.get(self.url(wire::STATUS)).send().await?).await
    }

    /// The next open query, or `None` when the loop is not waiting on one.
    pub async fn next_item(&self) -> Result<Option<QueueItem>> {
        let resp = self.http.get(self.url(wire::QUEUE_NEXT)).send().await?;
        if resp.status() == StatusCode::NO_CONTENT {
            return Ok(None);
        }
        Self::decode(resp).await.map(Some)
    }

    pub async fn submit_clicks(&self, ticket_id: &str, clicks: Vec<Point>) -> Result<Accepted> {
        let body = ClickSubmission {
            ticket_id: ticket_id.to_owned(),
            clicks,
        };
        Self::decode(self.http.post(self.url(wire::CLICKS)).json(&body).send().await?).await
    }

    pub async fn submit_boxes(&self, ticket_id: &str, objects: Vec<BoxObject>) -> Result<Accepted> {
        let body = BoxSubmission {
            ticket_id: ticket_id.to_owned(),
            objects,
        };
        Self::decode(self.http.post(self.url(wire::BOXES)).json(&body).send().await?).await
    }

    pub async fn series(&self) -> Result<Series> {
        Self::decode(self.http.get(self.url(wire::SERIES)).send().await?).await
    }
}
