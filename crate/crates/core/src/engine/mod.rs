//! Discrete-event kernel.
//!
//! Events are dispatched strictly in `(time, seq)` order where `seq` is the
//! insertion counter, so simultaneous events fire in the order they were
//! scheduled. Time is fixed-point milliseconds.

mod queue;
mod rng;

pub use queue::{Agenda, Event, EventHandle, EventQueue, LinearQueue};
pub use rng::{splitmix64, substream};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Milliseconds since the simulation epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs(s: f64) -> Self {
        SimTime((s * 1000.0).round().max(0.0) as u64)
    }

    pub fn from_hours(h: f64) -> Self {
        Self::from_secs(h * 3600.0)
    }

    pub fn ms(self) -> u64 {
        self.0
    }

    pub fn secs(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl std::ops::Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, ms: u64) -> SimTime {
        SimTime(self.0 + ms)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0 / 1000;
        write!(f, "{}d{:02}:{:02}:{:02}.{:03}", s / 86_400, s / 3600 % 24, s / 60 % 60, s % 60, self.0 % 1000)
    }
}

/// Converts a non-negative delay in seconds to milliseconds.
pub fn delay_ms(seconds: f64) -> Result<u64> {
    if !(seconds >= 0.0) {
        return Err(Error::NegativeDelay(seconds));
    }
    Ok((seconds * 1000.0).round() as u64)
}

/// Reacts to dispatched events, possibly scheduling or cancelling others.
pub trait Handler<E> {
    fn handle(&mut self, event: Event<E>, agenda: &mut dyn Agenda<E>) -> std::result::Result<(), String>;
}

impl<E, F> Handler<E> for F
where
    F: FnMut(Event<E>, &mut dyn Agenda<E>) -> std::result::Result<(), String>,
{
    fn handle(&mut self, event: Event<E>, agenda: &mut dyn Agenda<E>) -> std::result::Result<(), String> {
        self(event, agenda)
    }
}

/// Dispatches every pending event with `time <= t_end` and leaves the clock
/// at `t_end`. A handler error aborts the run and names the event.
pub fn run_until<E, A, H>(agenda: &mut A, handler: &mut H, t_end: SimTime) -> Result<SimTime>
where
    A: Agenda<E>,
    H: Handler<E> + ?Sized,
{
    while let Some(ev) = agenda.pop_until(t_end) {
        let (time_ms, seq) = (ev.time.0, ev.seq);
        handler.handle(ev, agenda).map_err(|msg| Error::Handler { time_ms, seq, msg })?;
    }
    agenda.advance_to(t_end);
    Ok(agenda.now())
}
