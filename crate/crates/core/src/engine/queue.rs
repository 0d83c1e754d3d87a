use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::SimTime;

/// Identifies a scheduled event for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct Event<E> {
    pub time: SimTime,
    pub seq: u64,
    pub payload: E,
}

/// A time-ordered agenda with a clock.
pub trait Agenda<E> {
    fn now(&self) -> SimTime;
    fn schedule_at(&mut self, time: SimTime, payload: E) -> EventHandle;
    /// Returns `true` if the event was still pending (it will now never fire).
    fn cancel(&mut self, handle: EventHandle) -> bool;
    /// Removes the next live event with `time <= t_end` and advances the clock to it.
    fn pop_until(&mut self, t_end: SimTime) -> Option<Event<E>>;
    fn advance_to(&mut self, t: SimTime);
    /// Live (scheduled, not yet fired or cancelled) events.
    fn len(&self) -> usize;
    fn peek_time(&self) -> Option<SimTime>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Schedules `payload` at `now + delay_ms`.
    fn schedule(&mut self, delay_ms: u64, payload: E) -> EventHandle {
        let at = self.now() + delay_ms;
        self.schedule_at(at, payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pending,
    Fired,
    Cancelled,
}

/// Tracks per-seq lifecycle; seqs are dense so a vector suffices.
#[derive(Debug, Default, Clone)]
struct Ledger {
    status: Vec<Status>,
    live: usize,
}

impl Ledger {
    fn issue(&mut self) -> u64 {
        self.status.push(Status::Pending);
        self.live += 1;
        (self.status.len() - 1) as u64
    }

    fn cancel(&mut self, seq: u64) -> bool {
        match self.status.get_mut(seq as usize) {
            Some(s @ Status::Pending) => {
                *s = Status::Cancelled;
                self.live -= 1;
                true
            }
            _ => false,
        }
    }

    fn is_pending(&self, seq: u64) -> bool {
        self.status[seq as usize] == Status::Pending
    }

    fn fire(&mut self, seq: u64) {
        self.status[seq as usize] = Status::Fired;
        self.live -= 1;
    }
}

struct Entry<E>(Event<E>);

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time, other.0.seq).cmp(&(self.0.time, self.0.seq))
    }
}

/// Binary-heap agenda; cancelled events are dropped lazily on pop.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    ledger: Ledger,
    now: SimTime,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self { heap: BinaryHeap::new(), ledger: Ledger::default(), now: SimTime::ZERO }
    }

    fn purge(&mut self) {
        while let Some(top) = self.heap.peek() {
            if self.ledger.is_pending(top.0.seq) {
                break;
            }
            self.heap.pop();
        }
    }
}

impl<E> Agenda<E> for EventQueue<E> {
    fn now(&self) -> SimTime {
        self.now
    }

    fn schedule_at(&mut self, time: SimTime, payload: E) -> EventHandle {
        let time = time.max(self.now);
        let seq = self.ledger.issue();
        self.heap.push(Entry(Event { time, seq, payload }));
        EventHandle(seq)
    }

    fn cancel(&mut self, handle: EventHandle) -> bool {
        self.ledger.cancel(handle.0)
    }

    fn pop_until(&mut self, t_end: SimTime) -> Option<Event<E>> {
        self.purge();
        if self.heap.peek()?.0.time > t_end {
            return None;
        }
        let Entry(ev) = self.heap.pop()?;
        self.ledger.fire(ev.seq);
        debug_assert!(ev.time >= self.now);
        self.now = ev.time;
        Some(ev)
    }

    fn advance_to(&mut self, t: SimTime) {
        self.now = self.now.max(t);
    }

    fn len(&self) -> usize {
        self.ledger.live
    }

    fn peek_time(&self) -> Option<SimTime> {
        self.heap.iter().filter(|e| self.ledger.is_pending(e.0.seq)).map(|e| e.0.time).min()
    }
}

/// Reference agenda: an unsorted vector scanned for the minimum on every pop.
/// Slow, obviously correct; used to cross-check [`EventQueue`].
pub struct LinearQueue<E> {
    events: Vec<Event<E>>,
    next_seq: u64,
    now: SimTime,
}

impl<E> Default for LinearQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> LinearQueue<E> {
    pub fn new() -> Self {
        Self { events: Vec::new(), next_seq: 0, now: SimTime::ZERO }
    }
}

impl<E> Agenda<E> for LinearQueue<E> {
    fn now(&self) -> SimTime {
        self.now
    }

    fn schedule_at(&mut self, time: SimTime, payload: E) -> EventHandle {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(Event { time: time.max(self.now), seq, payload });
        EventHandle(seq)
    }

    fn cancel(&mut self, handle: EventHandle) -> bool {
        match self.events.iter().position(|e| e.seq == handle.0) {
            Some(i) => {
                self.events.remove(i);
                true
            }
            None => false,
        }
    }

    fn pop_until(&mut self, t_end: SimTime) -> Option<Event<E>> {
        let (i, _) =
            self.events.iter().enumerate().filter(|(_, e)| e.time <= t_end).min_by_key(|(_, e)| (e.time, e.seq))?;
        let ev = self.events.remove(i);
        self.now = ev.time;
        Some(ev)
    }

    fn advance_to(&mut self, t: SimTime) {
        self.now = self.now.max(t);
    }

    fn len(&self) -> usize {
        self.events.len()
    }

    fn peek_time(&self) -> Option<SimTime> {
        self.events.iter().map(|e| e.time).min()
    }
}
