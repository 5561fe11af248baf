//! Clock domains for the executor.
//!
//! [`VirtualRuntime`] is a single-threaded discrete-event clock: handlers run
//! eagerly and their results land at `issue time + sampled latency`, so a run
//! is a pure function of the seed. [`WallRuntime`] runs every call on its own
//! scoped worker thread that sleeps for the sampled latency (times a scale
//! factor) before invoking the handler, so several calls are genuinely in
//! flight at once.

use std::thread::Scope;
use std::time::{Duration, Instant};

use crossbeam::channel::{bounded, Receiver};
use crossbeam::select;

use crate::call::{ActionValue, CallSpec};
use crate::env::HandlerEntry;
use crate::error::{HandlerError, SpeculatorError};
use crate::pending::PendingAction;
use crate::strategies::SpeculationTree;

pub(crate) type SpecOutcome<S> = Result<SpeculationTree<S>, SpeculatorError>;
pub(crate) type SpecJob<'e, S> = Box<dyn FnOnce() -> SpecOutcome<S> + Send + 'e>;

pub(crate) enum SpecTicket<S> {
    Ready { at: f64, outcome: SpecOutcome<S> },
    Waiting { rx: Receiver<(SpecOutcome<S>, f64)> },
}

pub(crate) trait Runtime<'e, S> {
    fn now(&self) -> f64;

    fn launch(&mut self, entry: &HandlerEntry, call: CallSpec, latency: f64) -> PendingAction;

    fn launch_speculator(&mut self, latency: f64, job: SpecJob<'e, S>) -> SpecTicket<S>;

    /// Block until either the actor or the speculator finishes; true when the
    /// speculator finished first (or at the same instant).
    fn speculator_first(&mut self, actor: &mut PendingAction, ticket: &mut SpecTicket<S>) -> bool;

    fn await_speculator(&mut self, ticket: SpecTicket<S>) -> SpecOutcome<S>;

    fn await_action(&mut self, pending: &mut PendingAction) -> Result<ActionValue, HandlerError>;
}

#[derive(Debug, Default)]
pub(crate) struct VirtualRuntime {
    now: f64,
}

impl<'e, S> Runtime<'e, S> for VirtualRuntime {
    fn now(&self) -> f64 {
        self.now
    }

    fn launch(&mut self, entry: &HandlerEntry, call: CallSpec, latency: f64) -> PendingAction {
        let outcome = entry.handler.invoke(&call);
        PendingAction::scheduled(call, self.now, latency, entry.cancellable, outcome)
    }

    fn launch_speculator(&mut self, latency: f64, job: SpecJob<'e, S>) -> SpecTicket<S> {
        SpecTicket::Ready { at: self.now + latency, outcome: job() }
    }

    fn speculator_first(&mut self, actor: &mut PendingAction, ticket: &mut SpecTicket<S>) -> bool {
        let SpecTicket::Ready { at, .. } = ticket else {
            unreachable!("virtual tickets are always ready");
        };
        let actor_at = actor.completes_at().expect("virtual actions are scheduled");
        *at <= actor_at
    }

    fn await_speculator(&mut self, ticket: SpecTicket<S>) -> SpecOutcome<S> {
        match ticket {
            SpecTicket::Ready { at, outcome } => {
                self.now = self.now.max(at);
                outcome
            }
            SpecTicket::Waiting { .. } => unreachable!("virtual tickets are always ready"),
        }
    }

    fn await_action(&mut self, pending: &mut PendingAction) -> Result<ActionValue, HandlerError> {
        let (v, t) = pending.wait()?;
        self.now = self.now.max(t);
        Ok(v)
    }
}

pub(crate) struct WallRuntime<'s, 'e> {
    scope: &'s Scope<'s, 'e>,
    start: Instant,
    scale: f64,
}

impl<'s, 'e> WallRuntime<'s, 'e> {
    /// `scale` is real seconds per unit of latency.
    pub(crate) fn new(scope: &'s Scope<'s, 'e>, scale: f64) -> Self {
        Self { scope, start: Instant::now(), scale }
    }

    fn elapsed(start: Instant, scale: f64) -> f64 {
        start.elapsed().as_secs_f64() / scale
    }

    fn duration(&self, latency: f64) -> Duration {
        Duration::from_secs_f64((latency * self.scale).max(0.0))
    }
}

impl<'s, 'e, S: Send + 'e> Runtime<'e, S> for WallRuntime<'s, 'e> {
    fn now(&self) -> f64 {
        Self::elapsed(self.start, self.scale)
    }

    fn launch(&mut self, entry: &HandlerEntry, call: CallSpec, latency: f64) -> PendingAction {
        let (tx, rx) = bounded(1);
        let (cancel_tx, cancel_rx) = if entry.cancellable {
            let (t, r) = bounded::<()>(1);
            (Some(t), Some(r))
        } else {
            (None, None)
        };
        let handler = entry.handler.clone();
        let dur = self.duration(latency);
        let (start, scale) = (self.start, self.scale);
        let worker_call = call.clone();
        let issued_at = Self::elapsed(start, scale);
        self.scope.spawn(move || {
            match cancel_rx {
                Some(crx) => select! {
                    recv(crx) -> _ => return,
                    default(dur) => {}
                },
                None => std::thread::sleep(dur),
            }
            let outcome = handler.invoke(&worker_call);
            let _ = tx.send((outcome, Self::elapsed(start, scale)));
        });
        PendingAction::threaded(call, issued_at, latency, rx, cancel_tx)
    }

    fn launch_speculator(&mut self, latency: f64, job: SpecJob<'e, S>) -> SpecTicket<S> {
        let (tx, rx) = bounded(1);
        let dur = self.duration(latency);
        let (start, scale) = (self.start, self.scale);
        self.scope.spawn(move || {
            let began = Instant::now();
            let outcome = job();
            if let Some(rest) = dur.checked_sub(began.elapsed()) {
                std::thread::sleep(rest);
            }
            let _ = tx.send((outcome, Self::elapsed(start, scale)));
        });
        SpecTicket::Waiting { rx }
    }

    fn speculator_first(&mut self, actor: &mut PendingAction, ticket: &mut SpecTicket<S>) -> bool {
        let spec_rx = match ticket {
            SpecTicket::Ready { .. } => return true,
            SpecTicket::Waiting { rx } => rx.clone(),
        };
        let Some(actor_rx) = actor.channel() else {
            return true;
        };
        select! {
            recv(spec_rx) -> msg => {
                let (outcome, at) = msg.unwrap_or_else(|_| (Err(SpeculatorError::Failed("worker disconnected".into())), Self::elapsed(self.start, self.scale)));
                *ticket = SpecTicket::Ready { at, outcome };
                true
            }
            recv(actor_rx) -> msg => {
                if let Ok(o) = msg {
                    actor.settle_from_channel(o);
                }
                false
            }
        }
    }

    fn await_speculator(&mut self, ticket: SpecTicket<S>) -> SpecOutcome<S> {
        match ticket {
            SpecTicket::Ready { outcome, .. } => outcome,
            SpecTicket::Waiting { rx } => {
                rx.recv().map(|(o, _)| o).unwrap_or_else(|_| Err(SpeculatorError::Failed("worker disconnected".into())))
            }
        }
    }

    fn await_action(&mut self, pending: &mut PendingAction) -> Result<ActionValue, HandlerError> {
        pending.wait().map(|(v, _)| v)
    }
}
