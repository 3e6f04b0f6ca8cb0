use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use super::{Addr, ClientId, Micros, NodeId, TimerTag};
use crate::error::{Error, Result};

/// Monotone virtual clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    now: Micros,
}

impl SimClock {
    pub fn now(&self) -> Micros {
        self.now
    }

    pub(crate) fn advance_to(&mut self, t: Micros) {
        debug_assert!(t >= self.now, "clock moved backwards");
        self.now = t;
    }
}

#[derive(Debug, Clone)]
pub enum EventPayload<M> {
    Deliver {
        from: Addr,
        to: Addr,
        msg: M,
    },
    TimerFire {
        owner: Addr,
        tag: TimerTag,
    },
    FaultStart(usize),
    FaultStop(usize),
    ClientTick(ClientId),
    /// A node finished processing the head of its inbox.
    Dispatch(NodeId),
}

impl<M> EventPayload<M> {
    pub(crate) fn code(&self) -> u8 {
        match self {
            EventPayload::Deliver { .. } => 0,
            EventPayload::TimerFire { .. } => 1,
            EventPayload::FaultStart(_) => 2,
            EventPayload::FaultStop(_) => 3,
            EventPayload::ClientTick(_) => 4,
            EventPayload::Dispatch(_) => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(pub u64);

#[derive(Debug, Clone)]
pub struct SimEvent<M> {
    pub fire_at: Micros,
    pub seq: u64,
    pub payload: EventPayload<M>,
}

/// Heap entry. Payloads live in a slab so the heap only shuffles these
/// small keys around.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Key {
    fire_at: Micros,
    seq: u64,
    slot: u32,
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest (fire_at, seq).
impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Single global queue ordered by `(fire_at, seq)`.
#[derive(Debug)]
pub struct EventQueue<M> {
    heap: BinaryHeap<Key>,
    slots: Vec<Option<EventPayload<M>>>,
    free: Vec<u32>,
    next_seq: u64,
    cancelled: BTreeSet<u64>,
}

impl<M> Default for EventQueue<M> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), slots: Vec::new(), free: Vec::new(), next_seq: 0, cancelled: BTreeSet::new() }
    }
}

impl<M> EventQueue<M> {
    pub fn schedule(&mut self, now: Micros, fire_at: Micros, payload: EventPayload<M>) -> Result<EventHandle> {
        if fire_at < now {
            return Err(Error::PastEvent { now, fire_at });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let slot = match self.free.pop() {
            Some(i) => {
                self.slots[i as usize] = Some(payload);
                i
            }
            None => {
                self.slots.push(Some(payload));
                (self.slots.len() - 1) as u32
            }
        };
        self.heap.push(Key { fire_at, seq, slot });
        Ok(EventHandle(seq))
    }

    pub fn cancel(&mut self, handle: EventHandle) {
        if handle.0 < self.next_seq {
            self.cancelled.insert(handle.0);
        }
    }

    /// Earliest live event time.
    pub fn peek_time(&mut self) -> Option<Micros> {
        self.skip_cancelled();
        self.heap.peek().map(|k| k.fire_at)
    }

    pub fn pop(&mut self) -> Option<SimEvent<M>> {
        self.skip_cancelled();
        let key = self.heap.pop()?;
        Some(SimEvent { fire_at: key.fire_at, seq: key.seq, payload: self.release(key.slot) })
    }

    /// Live (non-cancelled) events still queued.
    pub fn len(&self) -> usize {
        self.heap.iter().filter(|k| !self.cancelled.contains(&k.seq)).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Live payloads in no particular order.
    pub(crate) fn payloads(&self) -> impl Iterator<Item = &EventPayload<M>> {
        self.heap.iter().filter(|k| !self.cancelled.contains(&k.seq)).filter_map(|k| self.slots[k.slot as usize].as_ref())
    }

    fn release(&mut self, slot: u32) -> EventPayload<M> {
        self.free.push(slot);
        self.slots[slot as usize].take().expect("queued slot holds a payload")
    }

    fn skip_cancelled(&mut self) {
        while let Some(top) = self.heap.peek() {
            if self.cancelled.is_empty() || !self.cancelled.remove(&top.seq) {
                break;
            }
            let slot = top.slot;
            self.heap.pop();
            self.release(slot);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tick(c: usize) -> EventPayload<()> {
        EventPayload::ClientTick(ClientId(c))
    }

    #[test]
    fn first_event_gets_a_handle() {
        let mut q = EventQueue::default();
        let h = q.schedule(0, 150_000, EventPayload::<()>::TimerFire { owner: Addr::Node(NodeId(0)), tag: 0 }).unwrap();
        assert_eq!(h, EventHandle(0));
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn ties_pop_in_insertion_order() {
        let mut q = EventQueue::default();
        for c in 0..5 {
            q.schedule(0, 42, tick(c)).unwrap();
        }
        let order: Vec<_> = std::iter::from_fn(|| q.pop())
            .map(|e| match e.payload {
                EventPayload::ClientTick(ClientId(c)) => c,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn past_scheduling_is_an_engine_fault() {
        let mut q = EventQueue::default();
        assert!(matches!(q.schedule(10, 5, tick(0)), Err(Error::PastEvent { now: 10, fire_at: 5 })));
    }

    #[test]
    fn cancelled_events_are_skipped() {
        let mut q = EventQueue::default();
        let a = q.schedule(0, 1, tick(0)).unwrap();
        q.schedule(0, 2, tick(1)).unwrap();
        q.cancel(a);
        assert_eq!(q.len(), 1);
        assert_eq!(q.peek_time(), Some(2));
        assert_eq!(q.pop().unwrap().seq, 1);
        assert!(q.pop().is_none());
    }
}
