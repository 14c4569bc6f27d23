//! State shared by the HTTP handlers and the loop thread: the ticket broker
//! that turns oracle queries into queue items, and the status snapshot.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{mpsc, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use adasup_core::checkpoint::Journal;
use adasup_core::config::RunConfig;
use adasup_core::data::{BBox, CategoryId, ImageId, ImageRecord, Point};
use adasup_core::engine::{RunObserver, RunResult, RunState};
use adasup_core::oracle::{AnnotationMode, AnnotationSource, DeciSeconds, LedgerEntry};
use adasup_core::results::{series, SeriesPoint};
use adasup_core::wire::{Accepted, Phase, PoolSizes, QueueItem, Status};
use tokio::sync::oneshot;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Clicks(Vec<Point>),
    Boxes(Vec<(CategoryId, BBox)>),
}

impl Payload {
    fn mode(&self) -> AnnotationMode {
        match self {
            Payload::Clicks(_) => AnnotationMode::Weak,
            Payload::Boxes(_) => AnnotationMode::Strong,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SubmitError {
    #[error("unknown ticket {0}")]
    UnknownTicket(String),
    #[error("ticket {0} expired and was re-queued")]
    Expired(String),
    #[error("ticket {ticket} requests {expected} annotation, got {got}")]
    ModeMismatch {
        ticket: String,
        expected: AnnotationMode,
        got: AnnotationMode,
    },
    #[error("{message}")]
    Invalid { field: String, message: String },
    #[error("the run is no longer accepting annotations")]
    Closed,
}

struct Request {
    image: ImageRecord,
    mode: AnnotationMode,
    reply: mpsc::Sender<Answer>,
}

struct Answer {
    payload: Payload,
    ack: PendingAck,
}

struct PendingAck {
    ticket_id: String,
    image_id: ImageId,
    mode: AnnotationMode,
    tx: oneshot::Sender<Accepted>,
}

struct Ticket {
    request: Request,
    deadline: Instant,
    item: QueueItem,
}

#[derive(Default)]
struct Broker {
    pending: VecDeque<Request>,
    open: BTreeMap<String, Ticket>,
    expired: BTreeSet<String>,
    issued: u64,
    awaiting_ack: Option<PendingAck>,
    closed: bool,
}

pub struct Hub {
    broker: Mutex<Broker>,
    status: RwLock<Status>,
    series: RwLock<Vec<SeriesPoint>>,
    label: String,
    expiry: Duration,
    image_base_url: Option<String>,
    journal: Option<Journal>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn unix_ms(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Hub {
    pub fn new(config: &RunConfig, categories: Vec<String>, journal: Option<Journal>) -> Self {
        let status = Status {
            phase: Phase::Initializing,
            episode: 0,
            next_mode: None,
            variant: config.variant,
            hard_fired: false,
            pools: PoolSizes::default(),
            cumulative_seconds: 0.0,
            committed_seconds: 0.0,
            budget_seconds: config.budget().seconds(),
            latest_map: None,
            stop_reason: None,
            oracle: config.oracle,
            categories,
            error: None,
        };
        Self {
            broker: Mutex::new(Broker::default()),
            status: RwLock::new(status),
            series: RwLock::new(Vec::new()),
            label: format!("{}/{}", config.variant, config.strategy),
            expiry: Duration::from_secs_f64(config.ticket_expiry_minutes * 60.0),
            image_base_url: config.image_base_url.clone(),
            journal,
        }
    }

    pub fn status(&self) -> Status {
        self.status.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn series(&self) -> (String, Vec<SeriesPoint>) {
        (self.label.clone(), self.series.read().unwrap_or_else(|p| p.into_inner()).clone())
    }

    fn update_status(&self, f: impl FnOnce(&mut Status)) {
        f(&mut self.status.write().unwrap_or_else(|p| p.into_inner()));
    }

    /// Blocks the calling (loop) thread until someone answers a ticket for
    /// `image`.
    pub fn request(&self, image: &ImageRecord, mode: AnnotationMode) -> adasup_core::Result<Payload> {
        self.flush_ack(DeciSeconds::ZERO);
        let (tx, rx) = mpsc::channel();
        {
            let mut b = lock(&self.broker);
            if b.closed {
                return Err(adasup_core::Error::Annotation("annotation service closed".into()));
            }
            b.pending.push_back(Request {
                image: image.clone(),
                mode,
                reply: tx,
            });
        }
        let answer = rx
            .recv()
            .map_err(|_| adasup_core::Error::Annotation("annotation service closed".into()))?;
        lock(&self.broker).awaiting_ack = Some(answer.ack);
        Ok(answer.payload)
    }

    fn sweep(&self, b: &mut Broker, now: Instant) {
        let stale: Vec<String> = b
            .open
            .iter()
            .filter(|(_, t)| t.deadline <= now)
            .map(|(id, _)| id.clone())
            .collect();
        for id in stale {
            let t = b.open.remove(&id).expect("listed above");
            log::info!("ticket {id} for {} expired, re-queued", t.item.image_id);
            b.expired.insert(id);
            b.pending.push_front(t.request);
        }
    }

    /// Hands out the oldest unanswered query, or `None` when idle.
    pub fn next_ticket(&self) -> Option<QueueItem> {
        let now = Instant::now();
        let mut b = lock(&self.broker);
        self.sweep(&mut b, now);
        let request = b.pending.pop_front()?;
        debug_assert!(b.open.values().all(|t| t.item.image_id != request.image.image_id));
        b.issued += 1;
        let ticket_id = format!("t{:06}", b.issued);
        let image_id = request.image.image_id.clone();
        let item = QueueItem {
            ticket_id: ticket_id.clone(),
            display_ref: match &self.image_base_url {
                Some(base) => format!("{}/{image_id}.jpg", base.trim_end_matches('/')),
                None => image_id.to_string(),
            },
            image_id,
            requested_mode: request.mode,
            width: request.image.width,
            height: request.image.height,
            expiry: unix_ms(SystemTime::now() + self.expiry),
        };
        b.open.insert(
            ticket_id,
            Ticket {
                request,
                deadline: now + self.expiry,
                item: item.clone(),
            },
        );
        Some(item)
    }

    /// Validates a submission against its ticket and passes it to the loop.
    /// The receiver resolves once the ledger has recorded the annotation.
    pub fn submit(
        &self,
        ticket_id: &str,
        mode: AnnotationMode,
        build: impl FnOnce(&ImageRecord) -> Result<Payload, SubmitError>,
    ) -> Result<oneshot::Receiver<Accepted>, SubmitError> {
        let mut b = lock(&self.broker);
        self.sweep(&mut b, Instant::now());
        if b.expired.contains(ticket_id) {
            return Err(SubmitError::Expired(ticket_id.to_owned()));
        }
        let ticket = b
            .open
            .get(ticket_id)
            .ok_or_else(|| SubmitError::UnknownTicket(ticket_id.to_owned()))?;
        if ticket.request.mode != mode {
            return Err(SubmitError::ModeMismatch {
                ticket: ticket_id.to_owned(),
                expected: ticket.request.mode,
                got: mode,
            });
        }
        let payload = build(&ticket.request.image)?;
        debug_assert_eq!(payload.mode(), mode);
        let ticket = b.open.remove(ticket_id).expect("checked above");
        let (tx, rx) = oneshot::channel();
        let ack = PendingAck {
            ticket_id: ticket_id.to_owned(),
            image_id: ticket.item.image_id.clone(),
            mode,
            tx,
        };
        ticket
            .request
            .reply
            .send(Answer { payload, ack })
            .map_err(|_| SubmitError::Closed)?;
        Ok(rx)
    }

    fn flush_ack(&self, seconds: DeciSeconds) {
        let Some(ack) = lock(&self.broker).awaiting_ack.take() else {
            return;
        };
        let cumulative = self.status().cumulative_seconds;
        let _ = ack.tx.send(Accepted {
            ticket_id: ack.ticket_id,
            image_id: ack.image_id,
            mode: ack.mode,
            seconds: seconds.seconds(),
            cumulative_seconds: cumulative,
        });
    }

    /// Stops handing out work; a loop blocked on a query gets an error.
    pub fn close(&self) {
        let mut b = lock(&self.broker);
        b.closed = true;
        b.pending.clear();
        b.open.clear();
    }

    pub fn finish(&self, outcome: &adasup_core::Result<RunResult>) {
        self.flush_ack(DeciSeconds::ZERO);
        self.close();
        self.update_status(|s| match outcome {
            Ok(r) => {
                s.phase = Phase::Finished;
                s.stop_reason = Some(r.stop_reason);
                s.next_mode = None;
            }
            Err(e) => {
                s.phase = Phase::Failed;
                s.error = Some(e.to_string());
            }
        });
    }
}

impl RunObserver for Hub {
    fn annotation(&self, entry: &LedgerEntry, cumulative: DeciSeconds) {
        self.update_status(|s| s.cumulative_seconds = cumulative.seconds());
        self.flush_ack(entry.seconds);
    }

    fn committed(&self, state: &RunState) -> adasup_core::Result<()> {
        if let Some(j) = &self.journal {
            j.committed(state)?;
        }
        let committed = state.ledger().cumulative().seconds();
        self.update_status(|s| {
            s.phase = Phase::Running;
            s.episode = state.episodes.last().map_or(0, |e| e.index);
            s.next_mode = state.stop.is_none().then(|| state.switch.episode_mode());
            s.hard_fired = state.switch.hard_fired;
            s.pools = PoolSizes {
                strong: state.pools.strong().len(),
                weak: state.pools.weak().len(),
                unlabeled: state.pools.unlabeled().len(),
            };
            s.cumulative_seconds = committed;
            s.committed_seconds = committed;
            s.latest_map = state.latest_map();
            s.stop_reason = state.stop;
        });
        *self.series.write().unwrap_or_else(|p| p.into_inner()) = series(&state.episodes);
        self.flush_ack(DeciSeconds::ZERO);
        Ok(())
    }
}

/// Oracle answered through the HTTP queue.
pub struct LiveSource<'a> {
    pub hub: &'a Hub,
}

impl AnnotationSource for LiveSource<'_> {
    fn clicks(&mut self, image: &ImageRecord) -> adasup_core::Result<Vec<Point>> {
        match self.hub.request(image, AnnotationMode::Weak)? {
            Payload::Clicks(c) => Ok(c),
            Payload::Boxes(_) => Err(adasup_core::Error::Annotation("boxes answered a click query".into())),
        }
    }

    fn boxes(&mut self, image: &ImageRecord) -> adasup_core::Result<Vec<(CategoryId, BBox)>> {
        match self.hub.request(image, AnnotationMode::Strong)? {
            Payload::Boxes(b) => Ok(b),
            Payload::Clicks(_) => Err(adasup_core::Error::Annotation("clicks answered a box query".into())),
        }
    }
}
