//! JSON bodies of the `/v1/` HTTP API, shared by the service and its clients.

use serde::{Deserialize, Serialize};

use crate::config::{OracleMode, Variant};
use crate::data::{ImageId, Point};
use crate::engine::{EpisodeMode, StopReason};
use crate::oracle::AnnotationMode;
use crate::results::SeriesPoint;

pub const STATUS: &str = "/v1/status";
pub const QUEUE_NEXT: &str = "/v1/queue/next";
pub const CLICKS: &str = "/v1/annotations/clicks";
pub const BOXES: &str = "/v1/annotations/boxes";
pub const SERIES: &str = "/v1/results/series";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub ticket_id: String,
    pub image_id: ImageId,
    pub requested_mode: AnnotationMode,
    pub width: u32,
    pub height: u32,
    /// Where a console can fetch the pixels: `{image_base_url}/{image_id}.jpg`
    /// when a base URL is configured, the bare image id otherwise.
    pub display_ref: String,
    /// Unix time in milliseconds after which the ticket is re-queued.
    pub expiry: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initializing,
    Running,
    Finished,
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSizes {
    pub strong: usize,
    pub weak: usize,
    pub unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub phase: Phase,
    /// Index of the last committed episode; 0 until the initial pool is trained.
    pub episode: u32,
    /// Mode the next episode runs in.
    pub next_mode: Option<EpisodeMode>,
    pub variant: Variant,
    pub hard_fired: bool,
    pub pools: PoolSizes,
    /// Ledger total including annotations of the episode in progress.
    pub cumulative_seconds: f64,
    /// Ledger total at the last commit.
    pub committed_seconds: f64,
    pub budget_seconds: f64,
    pub latest_map: Option<f64>,
    pub stop_reason: Option<StopReason>,
    pub oracle: OracleMode,
    pub categories: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickSubmission {
    pub ticket_id: String,
    pub clicks: Vec<Point>,
}

/// A category given by registry index or by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CategoryRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxObject {
    pub category: CategoryRef,
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSubmission {
    pub ticket_id: String,
    pub objects: Vec<BoxObject>,
}

/// Reply to an accepted submission, sent once the ledger has recorded it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub ticket_id: String,
    pub image_id: ImageId,
    pub mode: AnnotationMode,
    pub seconds: f64,
    pub cumulative_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub points: Vec<SeriesPoint>,
}
