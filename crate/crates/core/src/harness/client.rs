use std::collections::BTreeSet;

use crate::sim::{Actor, Addr, ClientId, ClientRequest, Env, Micros, NodeId, Payload, RequestId, TimerTag};

const RETRY_TIMER: TimerTag = 1;

/// Where a client sends its requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Targeting {
    /// Send to one node (the believed leader), rotate on timeout and follow
    /// leader hints in replies. One reply completes a request.
    Leader { n: usize, hint: NodeId },
    /// Send to every node and wait for `needed` distinct replies.
    Broadcast { n: usize, needed: usize },
}

#[derive(Debug, Clone)]
struct InFlight {
    id: RequestId,
    sent_at: Micros,
    replies: BTreeSet<NodeId>,
}

/// Closed-loop load generator: at most one request in flight, the next one
/// leaves as soon as the previous is answered.
#[derive(Debug, Clone)]
pub struct ClosedLoopClient {
    id: ClientId,
    targeting: Targeting,
    retry_us: Micros,
    next_seq: u64,
    pending: Option<InFlight>,
    latencies: Vec<Micros>,
    retries: u64,
}

impl ClosedLoopClient {
    pub fn new(id: ClientId, targeting: Targeting, retry_us: Micros) -> Self {
        Self { id, targeting, retry_us, next_seq: 1, pending: None, latencies: Vec::new(), retries: 0 }
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    /// Consensus time of every answered request, in completion order.
    pub fn latencies(&self) -> &[Micros] {
        &self.latencies
    }

    pub fn in_flight(&self) -> usize {
        usize::from(self.pending.is_some())
    }

    pub fn retries(&self) -> u64 {
        self.retries
    }

    fn transmit<M: Payload, E: Env<M>>(&self, env: &mut E, id: RequestId) {
        let req = M::client_request(ClientRequest { id });
        match self.targeting {
            Targeting::Leader { hint, .. } => env.send(Addr::Node(hint), req),
            Targeting::Broadcast { n, .. } => {
                for i in 0..n {
                    env.send(Addr::Node(NodeId(i)), req.clone());
                }
            }
        }
    }

    fn issue<M: Payload, E: Env<M>>(&mut self, env: &mut E) {
        let id = RequestId { client: self.id, seq: self.next_seq };
        self.next_seq += 1;
        self.pending = Some(InFlight { id, sent_at: env.now(), replies: BTreeSet::new() });
        self.transmit(env, id);
        if matches!(self.targeting, Targeting::Leader { .. }) {
            env.set_timer(RETRY_TIMER, self.retry_us);
        }
    }
}

impl<M: Payload> Actor<M> for ClosedLoopClient {
    fn on_start<E: Env<M>>(&mut self, env: &mut E) {
        if self.pending.is_none() {
            self.issue(env);
        }
    }

    fn on_message<E: Env<M>>(&mut self, env: &mut E, _from: Addr, msg: M) {
        let Some(reply) = msg.as_reply() else { return };
        let Some(p) = self.pending.as_mut() else { return };
        if reply.id != p.id {
            return;
        }
        p.replies.insert(reply.from);
        let needed = match &mut self.targeting {
            Targeting::Leader { hint, .. } => {
                *hint = reply.leader_hint.unwrap_or(reply.from);
                1
            }
            Targeting::Broadcast { needed, .. } => *needed,
        };
        if p.replies.len() < needed {
            return;
        }
        let elapsed = env.now() - p.sent_at;
        self.latencies.push(elapsed.max(1));
        self.pending = None;
        env.cancel_timer(RETRY_TIMER);
        self.issue(env);
    }

    fn on_timer<E: Env<M>>(&mut self, env: &mut E, tag: TimerTag) {
        if tag != RETRY_TIMER {
            return;
        }
        let Some(id) = self.pending.as_ref().map(|p| p.id) else { return };
        if let Targeting::Leader { n, hint } = &mut self.targeting {
            *hint = NodeId((hint.0 + 1) % *n);
        }
        self.retries += 1;
        self.transmit(env, id);
        env.set_timer(RETRY_TIMER, self.retry_us);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raft::RaftMsg;
    use crate::sim::{ClientReply, RecordingEnv};

    #[test]
    fn one_request_in_flight_until_answered() {
        let mut c = ClosedLoopClient::new(ClientId(0), Targeting::Broadcast { n: 4, needed: 2 }, 1_000);
        let mut e: RecordingEnv<RaftMsg> = RecordingEnv::new(ClientId(0), 1);
        Actor::<RaftMsg>::on_start(&mut c, &mut e);
        assert_eq!(e.take_sent().len(), 4);
        let id = RequestId { client: ClientId(0), seq: 1 };
        e.now = 700;
        let reply = |from| RaftMsg::Reply(ClientReply { id, from: NodeId(from), leader_hint: None });
        c.on_message(&mut e, Addr::Node(NodeId(1)), reply(1));
        c.on_message(&mut e, Addr::Node(NodeId(1)), reply(1));
        assert!(e.sent.is_empty(), "same replica twice is one reply");
        c.on_message(&mut e, Addr::Node(NodeId(2)), reply(2));
        assert_eq!(c.latencies(), &[700]);
        assert_eq!(e.sent.len(), 4);
        assert_eq!(c.in_flight(), 1);
    }

    #[test]
    fn leader_client_rotates_on_timeout() {
        let mut c = ClosedLoopClient::new(ClientId(0), Targeting::Leader { n: 3, hint: NodeId(2) }, 1_000);
        let mut e: RecordingEnv<RaftMsg> = RecordingEnv::new(ClientId(0), 1);
        Actor::<RaftMsg>::on_start(&mut c, &mut e);
        Actor::<RaftMsg>::on_timer(&mut c, &mut e, RETRY_TIMER);
        let targets: Vec<_> = e.sent.iter().map(|(to, _)| *to).collect();
        assert_eq!(targets, vec![Addr::Node(NodeId(2)), Addr::Node(NodeId(0))]);
        assert_eq!(c.retries(), 1);
    }
}
