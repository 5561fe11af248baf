//! Pending actions: handles to in-flight API calls.
//!
//! A pending action is backed either by a scheduled completion on the virtual
//! clock or by a worker thread that delivers its outcome over a channel.

use crossbeam::channel::{Receiver, Sender, TryRecvError};
use serde::{Deserialize, Serialize};

use crate::call::{ActionValue, CallSpec};
use crate::error::HandlerError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendingStatus {
    InFlight,
    Resolved,
    Cancelled,
    /// The handler returned an error; no value will ever be produced.
    Failed,
}

pub(crate) type Outcome = (Result<ActionValue, HandlerError>, f64);

enum Backend {
    Scheduled { completes_at: f64, outcome: Option<Result<ActionValue, HandlerError>> },
    Thread { rx: Receiver<Outcome>, cancel: Option<Sender<()>> },
}

pub struct PendingAction {
    spec: CallSpec,
    issued_at: f64,
    latency: f64,
    cancellable: bool,
    status: PendingStatus,
    value: Option<ActionValue>,
    resolved_at: Option<f64>,
    error: Option<HandlerError>,
    backend: Backend,
}

impl std::fmt::Debug for PendingAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PendingAction")
            .field("spec", &self.spec)
            .field("issued_at", &self.issued_at)
            .field("status", &self.status)
            .field("resolved_at", &self.resolved_at)
            .finish()
    }
}

impl PendingAction {
    /// A call whose outcome is already known and lands at `issued_at + latency`
    /// on the virtual clock.
    pub fn scheduled(
        spec: CallSpec,
        issued_at: f64,
        latency: f64,
        cancellable: bool,
        outcome: Result<ActionValue, HandlerError>,
    ) -> Self {
        Self {
            spec,
            issued_at,
            latency,
            cancellable,
            status: PendingStatus::InFlight,
            value: None,
            resolved_at: None,
            error: None,
            backend: Backend::Scheduled { completes_at: issued_at + latency, outcome: Some(outcome) },
        }
    }

    pub(crate) fn threaded(
        spec: CallSpec,
        issued_at: f64,
        latency: f64,
        rx: Receiver<Outcome>,
        cancel: Option<Sender<()>>,
    ) -> Self {
        let cancellable = cancel.is_some();
        Self {
            spec,
            issued_at,
            latency,
            cancellable,
            status: PendingStatus::InFlight,
            value: None,
            resolved_at: None,
            error: None,
            backend: Backend::Thread { rx, cancel },
        }
    }

    pub fn spec(&self) -> &CallSpec {
        &self.spec
    }

    pub fn status(&self) -> PendingStatus {
        self.status
    }

    pub fn issued_at(&self) -> f64 {
        self.issued_at
    }

    pub fn resolved_at(&self) -> Option<f64> {
        self.resolved_at
    }

    pub fn value(&self) -> Option<&ActionValue> {
        self.value.as_ref()
    }

    /// Sampled latency of the underlying call.
    pub fn latency(&self) -> f64 {
        self.latency
    }

    pub fn is_cancellable(&self) -> bool {
        self.cancellable
    }

    /// Virtual completion time, if this action lives on the virtual clock.
    pub fn completes_at(&self) -> Option<f64> {
        match &self.backend {
            Backend::Scheduled { completes_at, .. } => Some(*completes_at),
            Backend::Thread { .. } => None,
        }
    }

    /// Result channel of a threaded action that has not settled yet.
    pub(crate) fn channel(&self) -> Option<Receiver<Outcome>> {
        match &self.backend {
            Backend::Thread { rx, .. } if self.status == PendingStatus::InFlight => Some(rx.clone()),
            _ => None,
        }
    }

    fn settle(&mut self, outcome: Result<ActionValue, HandlerError>, at: f64) {
        debug_assert_eq!(self.status, PendingStatus::InFlight);
        let at = at.max(self.issued_at);
        match outcome {
            Ok(v) => {
                self.value = Some(v);
                self.resolved_at = Some(at);
                self.status = PendingStatus::Resolved;
            }
            Err(e) => {
                self.error = Some(e);
                self.status = PendingStatus::Failed;
            }
        }
    }

    pub(crate) fn settle_from_channel(&mut self, outcome: Outcome) {
        if self.status == PendingStatus::InFlight {
            self.settle(outcome.0, outcome.1);
        }
    }

    /// Non-blocking progress check against the clock reading `now`.
    pub fn poll(&mut self, now: f64) -> PendingStatus {
        if self.status != PendingStatus::InFlight {
            return self.status;
        }
        match &mut self.backend {
            Backend::Scheduled { completes_at, outcome } => {
                if *completes_at <= now {
                    let at = *completes_at;
                    let o = outcome.take().expect("in-flight scheduled action keeps its outcome");
                    self.settle(o, at);
                }
            }
            Backend::Thread { rx, .. } => match rx.try_recv() {
                Ok(o) => self.settle(o.0, o.1),
                Err(TryRecvError::Empty) => {}
                Err(TryRecvError::Disconnected) => {
                    let handler = self.spec.handler_id().to_owned();
                    self.settle(Err(HandlerError::new(handler, "worker disconnected")), self.issued_at);
                }
            },
        }
        self.status
    }

    /// Block until the action settles. Returns the value and the resolution
    /// time in the run's clock domain.
    pub fn wait(&mut self) -> Result<(ActionValue, f64), HandlerError> {
        if self.status == PendingStatus::InFlight {
            match &mut self.backend {
                Backend::Scheduled { completes_at, outcome } => {
                    let at = *completes_at;
                    let o = outcome.take().expect("in-flight scheduled action keeps its outcome");
                    self.settle(o, at);
                }
                Backend::Thread { rx, .. } => {
                    let o = rx.recv().unwrap_or_else(|_| {
                        (Err(HandlerError::new(self.spec.handler_id(), "worker disconnected")), self.issued_at)
                    });
                    self.settle(o.0, o.1);
                }
            }
        }
        match self.status {
            PendingStatus::Resolved => Ok((
                self.value.clone().expect("resolved implies value"),
                self.resolved_at.expect("resolved implies timestamp"),
            )),
            PendingStatus::Failed => Err(self.error.clone().expect("failed implies error")),
            PendingStatus::Cancelled => Err(HandlerError::new(self.spec.handler_id(), "awaited a cancelled action")),
            PendingStatus::InFlight => unreachable!("wait settles the action"),
        }
    }

    /// Cancel if still in flight at `now` and the handler supports it.
    /// Returns whether the action is now cancelled. Settled actions are left alone.
    pub fn cancel(&mut self, now: f64) -> bool {
        if self.poll(now) != PendingStatus::InFlight || !self.cancellable {
            return self.status == PendingStatus::Cancelled;
        }
        if let Backend::Thread { cancel, .. } = &mut self.backend {
            if let Some(tx) = cancel.take() {
                let _ = tx.send(());
            }
        }
        if let Backend::Scheduled { outcome, .. } = &mut self.backend {
            outcome.take();
        }
        self.status = PendingStatus::Cancelled;
        true
    }
}
