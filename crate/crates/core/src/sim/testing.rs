use std::collections::BTreeMap;

use super::{Addr, Env, Micros, Observation, TimerTag};
use crate::rng::{self, SimRng};

/// An [`Env`] that records effects instead of executing them, for driving
/// protocol handlers directly in tests.
#[derive(Debug)]
pub struct RecordingEnv<M> {
    pub now: Micros,
    pub me: Addr,
    pub rng: SimRng,
    pub sent: Vec<(Addr, M)>,
    /// Armed timers and their delays.
    pub timers: BTreeMap<TimerTag, Micros>,
    pub cancelled: Vec<TimerTag>,
    pub observations: Vec<Observation>,
}

impl<M> RecordingEnv<M> {
    pub fn new(me: impl Into<Addr>, seed: u64) -> Self {
        Self {
            now: 0,
            me: me.into(),
            rng: rng::stream(seed, "recording", 0),
            sent: Vec::new(),
            timers: BTreeMap::new(),
            cancelled: Vec::new(),
            observations: Vec::new(),
        }
    }

    /// Drain the messages recorded so far.
    pub fn take_sent(&mut self) -> Vec<(Addr, M)> {
        std::mem::take(&mut self.sent)
    }
}

impl<M> Env<M> for RecordingEnv<M> {
    fn now(&self) -> Micros {
        self.now
    }

    fn me(&self) -> Addr {
        self.me
    }

    fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    fn send(&mut self, to: Addr, msg: M) {
        self.sent.push((to, msg));
    }

    fn set_timer(&mut self, tag: TimerTag, delay: Micros) {
        self.timers.insert(tag, delay);
    }

    fn cancel_timer(&mut self, tag: TimerTag) {
        self.timers.remove(&tag);
        self.cancelled.push(tag);
    }

    fn observe(&mut self, obs: Observation) {
        self.observations.push(obs);
    }
}
