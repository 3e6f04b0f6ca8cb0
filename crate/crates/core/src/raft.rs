//! Crash-tolerant replication: follower/candidate/leader roles, randomized
//! election timeouts, term-stamped votes, heartbeats and majority commit.
//!
//! Clients may contact any master. Followers forward requests to the leader
//! they know of and buffer them while no leader is known; ordering stays
//! leader-driven. Leaders also step down when a majority has gone quiet for
//! a whole check-quorum interval.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quorum;
use crate::sim::{Actor, Addr, ClientReply, ClientRequest, Env, Micros, NodeId, Observation, Payload, RequestId, TimerTag};

pub const ELECTION_TIMER: TimerTag = 1;
pub const HEARTBEAT_TIMER: TimerTag = 2;
pub const CHECK_QUORUM_TIMER: TimerTag = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaftTimeouts {
    pub election_min_us: Micros,
    pub election_max_us: Micros,
    pub heartbeat_interval_us: Micros,
}

impl Default for RaftTimeouts {
    fn default() -> Self {
        Self { election_min_us: 150_000, election_max_us: 300_000, heartbeat_interval_us: 50_000 }
    }
}

impl RaftTimeouts {
    pub fn validate(&self) -> Result<()> {
        if 0 < self.heartbeat_interval_us
            && self.heartbeat_interval_us < self.election_min_us
            && self.election_min_us <= self.election_max_us
        {
            Ok(())
        } else {
            Err(Error::ConfigRejected(format!("raft timeouts need 0 < heartbeat < election_min <= election_max, got {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaftConfig {
    pub timeouts: RaftTimeouts,
    pub check_quorum: bool,
    pub max_entries_per_append: usize,
    /// Requests a node holds while it knows no leader; more are rejected.
    pub forward_buffer: usize,
}

impl Default for RaftConfig {
    fn default() -> Self {
        Self { timeouts: RaftTimeouts::default(), check_quorum: true, max_entries_per_append: 64, forward_buffer: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogEntry {
    pub term: u64,
    /// `None` marks the no-op a new leader appends to commit earlier terms.
    pub request: Option<RequestId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteRequest {
    pub term: u64,
    pub candidate: NodeId,
    pub last_log_index: u64,
    pub last_log_term: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteResponse {
    pub term: u64,
    pub granted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppendEntries {
    pub term: u64,
    pub leader: NodeId,
    pub prev_index: u64,
    pub prev_term: u64,
    pub entries: Vec<LogEntry>,
    pub leader_commit: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppendResponse {
    pub term: u64,
    pub success: bool,
    /// Highest replicated index on success; the follower's retry hint on
    /// failure.
    pub match_index: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RaftMsg {
    Request(ClientRequest),
    Reply(ClientReply),
    Forward { req: ClientRequest, hops: u8 },
    RequestVote(VoteRequest),
    Vote(VoteResponse),
    AppendEntries(AppendEntries),
    AppendResponse(AppendResponse),
}

impl Payload for RaftMsg {
    fn client_request(req: ClientRequest) -> Self {
        RaftMsg::Request(req)
    }

    fn as_reply(&self) -> Option<&ClientReply> {
        match self {
            RaftMsg::Reply(r) => Some(r),
            _ => None,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            RaftMsg::Request(_) => "request",
            RaftMsg::Reply(_) => "reply",
            RaftMsg::Forward { .. } => "forward",
            RaftMsg::RequestVote(_) => "request_vote",
            RaftMsg::Vote(_) => "vote",
            RaftMsg::AppendEntries(_) => "append_entries",
            RaftMsg::AppendResponse(_) => "append_response",
        }
    }
}

/// What a heartbeat did to the receiver's election timer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerAction {
    /// Timer re-armed with the given fresh delay.
    Reset(Micros),
    /// Stale term; nothing changed.
    Ignored,
}

#[derive(Debug, Clone)]
pub struct RaftNode {
    id: NodeId,
    n: usize,
    majority: usize,
    cfg: RaftConfig,
    role: Role,
    current_term: u64,
    voted_for: Option<NodeId>,
    log: Vec<LogEntry>,
    commit_index: u64,
    leader_hint: Option<NodeId>,
    votes: Vec<bool>,
    next_index: Vec<u64>,
    match_index: Vec<u64>,
    recent_active: Vec<bool>,
    buffered: VecDeque<ClientRequest>,
    index_of: HashMap<RequestId, u64>,
}

impl RaftNode {
    pub fn new(id: NodeId, n: usize, cfg: RaftConfig) -> Result<Self> {
        cfg.timeouts.validate()?;
        if id.0 >= n {
            return Err(Error::InvalidCluster(format!("{id} outside cluster of {n}")));
        }
        Ok(Self {
            id,
            n,
            majority: quorum::raft_majority(n)?,
            cfg,
            role: Role::Follower,
            current_term: 0,
            voted_for: None,
            log: Vec::new(),
            commit_index: 0,
            leader_hint: None,
            votes: vec![false; n],
            next_index: vec![1; n],
            match_index: vec![0; n],
            recent_active: vec![false; n],
            buffered: VecDeque::new(),
            index_of: HashMap::new(),
        })
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn current_term(&self) -> u64 {
        self.current_term
    }

    pub fn voted_for(&self) -> Option<NodeId> {
        self.voted_for
    }

    pub fn leader_hint(&self) -> Option<NodeId> {
        self.leader_hint
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn commit_index(&self) -> u64 {
        self.commit_index
    }

    pub fn committed(&self) -> &[LogEntry] {
        &self.log[..self.commit_index as usize]
    }

    pub fn buffered(&self) -> usize {
        self.buffered.len()
    }

    fn last_index(&self) -> u64 {
        self.log.len() as u64
    }

    fn last_term(&self) -> u64 {
        self.log.last().map_or(0, |e| e.term)
    }

    fn term_at(&self, index: u64) -> u64 {
        if index == 0 {
            0
        } else {
            self.log[index as usize - 1].term
        }
    }

    fn peers(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.n).map(NodeId).filter(move |p| *p != self.id)
    }

    fn arm_election_timer<E: Env<RaftMsg>>(&self, env: &mut E) -> Micros {
        let t = &self.cfg.timeouts;
        let delay = env.rng().gen_range(t.election_min_us..=t.election_max_us);
        env.set_timer(ELECTION_TIMER, delay);
        delay
    }

    fn append(&mut self, entry: LogEntry) {
        self.log.push(entry);
        if let Some(id) = entry.request {
            self.index_of.insert(id, self.last_index());
        }
    }

    fn truncate(&mut self, len: u64) {
        debug_assert!(len >= self.commit_index, "truncating committed entries");
        for e in self.log.drain(len as usize..) {
            if let Some(id) = e.request {
                self.index_of.remove(&id);
            }
        }
    }

    /// Follower or candidate timer expiry: start an election for the next
    /// term.
    pub fn on_election_timeout<E: Env<RaftMsg>>(&mut self, env: &mut E) -> Result<()> {
        if self.role == Role::Leader {
            return Err(Error::Protocol(format!("{} is leader but its election timer fired", self.id)));
        }
        self.role = Role::Candidate;
        self.current_term += 1;
        self.voted_for = Some(self.id);
        self.leader_hint = None;
        self.votes.fill(false);
        self.votes[self.id.0] = true;
        self.arm_election_timer(env);
        if self.majority <= 1 {
            self.become_leader(env);
            return Ok(());
        }
        let req =
            VoteRequest { term: self.current_term, candidate: self.id, last_log_index: self.last_index(), last_log_term: self.last_term() };
        for p in self.peers().collect::<Vec<_>>() {
            env.send(Addr::Node(p), RaftMsg::RequestVote(req));
        }
        Ok(())
    }

    /// Grant a vote to a candidate with a newer term whose log is at least
    /// as up to date as ours; at most one vote per term.
    pub fn on_request_vote<E: Env<RaftMsg>>(&mut self, env: &mut E, req: VoteRequest) -> Option<VoteResponse> {
        if req.term > self.current_term {
            self.step_down(env, req.term);
        }
        let up_to_date = (req.last_log_term, req.last_log_index) >= (self.last_term(), self.last_index());
        let granted = req.term == self.current_term && self.voted_for.is_none_or(|v| v == req.candidate) && up_to_date;
        if granted {
            self.voted_for = Some(req.candidate);
            self.arm_election_timer(env);
        }
        let resp = VoteResponse { term: self.current_term, granted };
        env.send(Addr::Node(req.candidate), RaftMsg::Vote(resp));
        Some(resp)
    }

    fn on_vote<E: Env<RaftMsg>>(&mut self, env: &mut E, from: NodeId, resp: VoteResponse) {
        if resp.term > self.current_term {
            self.step_down(env, resp.term);
            return;
        }
        if self.role != Role::Candidate || resp.term != self.current_term || !resp.granted {
            return;
        }
        self.votes[from.0] = true;
        if self.votes.iter().filter(|v| **v).count() >= self.majority {
            self.become_leader(env);
        }
    }

    fn become_leader<E: Env<RaftMsg>>(&mut self, env: &mut E) {
        self.role = Role::Leader;
        self.leader_hint = Some(self.id);
        env.cancel_timer(ELECTION_TIMER);
        env.observe(Observation::BecameLeader { epoch: self.current_term });
        let next = self.last_index() + 1;
        self.next_index.fill(next);
        self.match_index.fill(0);
        self.recent_active.fill(false);
        self.append(LogEntry { term: self.current_term, request: None });
        self.broadcast_append(env);
        env.set_timer(HEARTBEAT_TIMER, self.cfg.timeouts.heartbeat_interval_us);
        if self.cfg.check_quorum {
            env.set_timer(CHECK_QUORUM_TIMER, self.cfg.timeouts.election_min_us);
        }
        self.advance_commit(env);
        while let Some(req) = self.buffered.pop_front() {
            self.leader_accept(env, req);
        }
    }

    fn step_down<E: Env<RaftMsg>>(&mut self, env: &mut E, term: u64) {
        let led = self.current_term;
        if term > self.current_term {
            self.current_term = term;
            self.voted_for = None;
        }
        if self.role == Role::Leader {
            env.observe(Observation::SteppedDown { epoch: led });
            env.cancel_timer(HEARTBEAT_TIMER);
            env.cancel_timer(CHECK_QUORUM_TIMER);
            self.leader_hint = None;
            self.role = Role::Follower;
            self.arm_election_timer(env);
        }
        self.role = Role::Follower;
    }

    fn send_append<E: Env<RaftMsg>>(&mut self, env: &mut E, peer: NodeId) {
        let next = self.next_index[peer.0].clamp(1, self.last_index() + 1);
        let prev_index = next - 1;
        let end = (prev_index as usize + self.cfg.max_entries_per_append).min(self.log.len());
        let entries = self.log[prev_index as usize..end].to_vec();
        self.next_index[peer.0] = end as u64 + 1;
        let msg = AppendEntries {
            term: self.current_term,
            leader: self.id,
            prev_index,
            prev_term: self.term_at(prev_index),
            entries,
            leader_commit: self.commit_index,
        };
        env.send(Addr::Node(peer), RaftMsg::AppendEntries(msg));
    }

    fn broadcast_append<E: Env<RaftMsg>>(&mut self, env: &mut E) {
        for p in self.peers().collect::<Vec<_>>() {
            self.send_append(env, p);
        }
    }

    /// AppendEntries from a leader: doubles as the heartbeat.
    pub fn on_heartbeat<E: Env<RaftMsg>>(&mut self, env: &mut E, msg: AppendEntries) -> TimerAction {
        if msg.term < self.current_term {
            let resp = AppendResponse { term: self.current_term, success: false, match_index: 0 };
            env.send(Addr::Node(msg.leader), RaftMsg::AppendResponse(resp));
            return TimerAction::Ignored;
        }
        if msg.term > self.current_term || self.role != Role::Follower {
            self.step_down(env, msg.term);
        }
        self.leader_hint = Some(msg.leader);
        let delay = self.arm_election_timer(env);
        while let Some(req) = self.buffered.pop_front() {
            env.send(Addr::Node(msg.leader), RaftMsg::Forward { req, hops: 1 });
        }

        let resp = if msg.prev_index > self.last_index() {
            AppendResponse { term: self.current_term, success: false, match_index: self.last_index() }
        } else if self.term_at(msg.prev_index) != msg.prev_term {
            AppendResponse { term: self.current_term, success: false, match_index: msg.prev_index - 1 }
        } else {
            let mut index = msg.prev_index;
            for entry in msg.entries {
                index += 1;
                if index <= self.last_index() {
                    if self.term_at(index) == entry.term {
                        continue;
                    }
                    self.truncate(index - 1);
                }
                self.append(entry);
            }
            let new_commit = msg.leader_commit.min(index);
            if new_commit > self.commit_index {
                self.commit_index = new_commit;
            }
            AppendResponse { term: self.current_term, success: true, match_index: index }
        };
        env.send(Addr::Node(msg.leader), RaftMsg::AppendResponse(resp));
        TimerAction::Reset(delay)
    }

    fn on_append_response<E: Env<RaftMsg>>(&mut self, env: &mut E, from: NodeId, resp: AppendResponse) {
        if resp.term > self.current_term {
            self.step_down(env, resp.term);
            return;
        }
        if self.role != Role::Leader || resp.term != self.current_term {
            return;
        }
        self.recent_active[from.0] = true;
        if resp.success {
            if resp.match_index > self.match_index[from.0] {
                self.match_index[from.0] = resp.match_index;
            }
            let m = self.match_index[from.0];
            if self.next_index[from.0] <= m {
                self.next_index[from.0] = m + 1;
            }
            self.advance_commit(env);
        } else {
            let retry = (resp.match_index + 1).min(self.next_index[from.0].saturating_sub(1)).max(1);
            self.next_index[from.0] = retry.max(self.match_index[from.0] + 1);
            self.send_append(env, from);
        }
    }

    fn advance_commit<E: Env<RaftMsg>>(&mut self, env: &mut E) {
        let old = self.commit_index;
        let mut candidate = self.last_index();
        while candidate > old {
            if self.term_at(candidate) == self.current_term {
                let acks = 1 + self.peers().filter(|p| self.match_index[p.0] >= candidate).count();
                if acks >= self.majority {
                    break;
                }
            }
            candidate -= 1;
        }
        if candidate <= old {
            return;
        }
        self.commit_index = candidate;
        for i in old..candidate {
            if let Some(id) = self.log[i as usize].request {
                self.reply(env, id);
            }
        }
    }

    fn reply<E: Env<RaftMsg>>(&self, env: &mut E, id: RequestId) {
        let reply = ClientReply { id, from: self.id, leader_hint: Some(self.id) };
        env.send(Addr::Client(id.client), RaftMsg::Reply(reply));
    }

    fn leader_accept<E: Env<RaftMsg>>(&mut self, env: &mut E, req: ClientRequest) {
        if let Some(&index) = self.index_of.get(&req.id) {
            if index <= self.commit_index {
                self.reply(env, req.id);
            }
            return;
        }
        self.append(LogEntry { term: self.current_term, request: Some(req.id) });
        for p in self.peers().collect::<Vec<_>>() {
            // Only peers that are caught up get the new entry right away;
            // lagging ones catch up on the next response or heartbeat.
            if self.next_index[p.0] == self.last_index() {
                self.send_append(env, p);
            }
        }
        self.advance_commit(env);
    }

    /// A client request (or one forwarded by a peer). Leaders replicate it;
    /// other nodes forward to the known leader or buffer until one emerges.
    pub fn on_client_request<E: Env<RaftMsg>>(&mut self, env: &mut E, req: ClientRequest, hops: u8) {
        if self.role == Role::Leader {
            self.leader_accept(env, req);
            return;
        }
        match self.leader_hint {
            Some(leader) if leader != self.id && (hops as usize) < self.n => {
                env.send(Addr::Node(leader), RaftMsg::Forward { req, hops: hops + 1 });
            }
            _ if self.buffered.len() < self.cfg.forward_buffer => {
                if !self.buffered.iter().any(|r| r.id == req.id) {
                    self.buffered.push_back(req);
                }
            }
            _ => env.observe(Observation::RequestRejected(req.id)),
        }
    }

    fn on_heartbeat_timer<E: Env<RaftMsg>>(&mut self, env: &mut E) {
        if self.role != Role::Leader {
            return;
        }
        for p in self.peers().collect::<Vec<_>>() {
            self.next_index[p.0] = self.match_index[p.0] + 1;
            self.send_append(env, p);
        }
        env.set_timer(HEARTBEAT_TIMER, self.cfg.timeouts.heartbeat_interval_us);
    }

    fn on_check_quorum<E: Env<RaftMsg>>(&mut self, env: &mut E) {
        if self.role != Role::Leader {
            return;
        }
        let active = 1 + self.recent_active.iter().enumerate().filter(|(i, a)| **a && *i != self.id.0).count();
        self.recent_active.fill(false);
        if active < self.majority {
            self.step_down(env, self.current_term);
        } else {
            env.set_timer(CHECK_QUORUM_TIMER, self.cfg.timeouts.election_min_us);
        }
    }
}

impl Actor<RaftMsg> for RaftNode {
    fn on_start<E: Env<RaftMsg>>(&mut self, env: &mut E) {
        self.arm_election_timer(env);
    }

    fn on_message<E: Env<RaftMsg>>(&mut self, env: &mut E, from: Addr, msg: RaftMsg) {
        let peer = match from {
            Addr::Node(p) => Some(p),
            Addr::Client(_) => None,
        };
        match (msg, peer) {
            (RaftMsg::Request(req), _) => self.on_client_request(env, req, 0),
            (RaftMsg::Forward { req, hops }, Some(_)) => self.on_client_request(env, req, hops),
            (RaftMsg::RequestVote(req), Some(_)) => {
                self.on_request_vote(env, req);
            }
            (RaftMsg::Vote(resp), Some(p)) => self.on_vote(env, p, resp),
            (RaftMsg::AppendEntries(ae), Some(_)) => {
                self.on_heartbeat(env, ae);
            }
            (RaftMsg::AppendResponse(resp), Some(p)) => self.on_append_response(env, p, resp),
            _ => {}
        }
    }

    fn on_timer<E: Env<RaftMsg>>(&mut self, env: &mut E, tag: TimerTag) {
        match tag {
            ELECTION_TIMER => {
                if self.role != Role::Leader {
                    let _ = self.on_election_timeout(env);
                }
            }
            HEARTBEAT_TIMER => self.on_heartbeat_timer(env),
            CHECK_QUORUM_TIMER => self.on_check_quorum(env),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ClientId, RecordingEnv};

    fn node(id: usize, n: usize) -> RaftNode {
        RaftNode::new(NodeId(id), n, RaftConfig::default()).unwrap()
    }

    fn env(id: usize) -> RecordingEnv<RaftMsg> {
        RecordingEnv::new(NodeId(id), 11)
    }

    fn req(c: usize, seq: u64) -> ClientRequest {
        ClientRequest { id: RequestId { client: ClientId(c), seq } }
    }

    fn vote_requests(sent: &[(Addr, RaftMsg)]) -> usize {
        sent.iter().filter(|(_, m)| matches!(m, RaftMsg::RequestVote(_))).count()
    }

    #[test]
    fn timeout_starts_election() {
        let mut a = node(0, 5);
        a.current_term = 3;
        let mut e = env(0);
        a.on_election_timeout(&mut e).unwrap();
        assert_eq!(a.role(), Role::Candidate);
        assert_eq!(a.current_term(), 4);
        assert_eq!(a.voted_for(), Some(NodeId(0)));
        assert_eq!(vote_requests(&e.sent), 4);
        let delay = e.timers[&ELECTION_TIMER];
        assert!((150_000..=300_000).contains(&delay));
    }

    #[test]
    fn singleton_becomes_leader_immediately() {
        let mut a = node(0, 1);
        let mut e = env(0);
        a.on_election_timeout(&mut e).unwrap();
        assert_eq!(a.role(), Role::Leader);
        assert!(e.observations.contains(&Observation::BecameLeader { epoch: 1 }));
        a.on_client_request(&mut e, req(0, 1), 0);
        assert_eq!(a.commit_index(), 2);
        assert!(e.sent.iter().any(|(to, m)| *to == Addr::Client(ClientId(0)) && matches!(m, RaftMsg::Reply(_))));
    }

    #[test]
    fn election_timeout_on_leader_is_a_bug() {
        let mut a = node(0, 1);
        let mut e = env(0);
        a.on_election_timeout(&mut e).unwrap();
        assert!(matches!(a.on_election_timeout(&mut e), Err(Error::Protocol(_))));
    }

    #[test]
    fn grants_vote_for_newer_term() {
        let mut b = node(1, 5);
        b.current_term = 2;
        let mut e = env(1);
        let resp = b.on_request_vote(&mut e, VoteRequest { term: 3, candidate: NodeId(0), last_log_index: 0, last_log_term: 0 }).unwrap();
        assert!(resp.granted);
        assert_eq!(b.current_term(), 3);
        assert_eq!(b.role(), Role::Follower);
    }

    #[test]
    fn one_vote_per_term() {
        let mut b = node(1, 5);
        b.current_term = 5;
        b.voted_for = Some(NodeId(2));
        let mut e = env(1);
        let resp = b.on_request_vote(&mut e, VoteRequest { term: 5, candidate: NodeId(0), last_log_index: 9, last_log_term: 5 }).unwrap();
        assert!(!resp.granted);
        assert_eq!(b.voted_for(), Some(NodeId(2)));
    }

    #[test]
    fn leader_steps_down_for_higher_term_vote() {
        let mut a = node(0, 3);
        let mut e = env(0);
        a.current_term = 3;
        a.on_election_timeout(&mut e).unwrap();
        a.on_vote(&mut e, NodeId(1), VoteResponse { term: 4, granted: true });
        assert_eq!(a.role(), Role::Leader);
        // Logs match (the candidate below is as up to date as us).
        let resp = a.on_request_vote(&mut e, VoteRequest { term: 9, candidate: NodeId(2), last_log_index: 1, last_log_term: 4 }).unwrap();
        assert!(resp.granted);
        assert_eq!(a.role(), Role::Follower);
        assert_eq!(a.current_term(), 9);
    }

    #[test]
    fn stale_log_candidate_refused() {
        let mut b = node(1, 3);
        b.log.push(LogEntry { term: 2, request: None });
        b.current_term = 2;
        let mut e = env(1);
        let resp = b.on_request_vote(&mut e, VoteRequest { term: 3, candidate: NodeId(0), last_log_index: 5, last_log_term: 1 }).unwrap();
        assert!(!resp.granted);
        assert_eq!(b.current_term(), 3);
    }

    #[test]
    fn heartbeat_resets_timer() {
        let mut b = node(1, 5);
        let mut e = env(1);
        b.on_start(&mut e);
        e.now = 100_000;
        let hb = AppendEntries { term: 1, leader: NodeId(0), prev_index: 0, prev_term: 0, entries: vec![], leader_commit: 0 };
        match b.on_heartbeat(&mut e, hb) {
            TimerAction::Reset(d) => {
                let deadline = e.now + d;
                assert!((250_000..=400_000).contains(&deadline));
            }
            TimerAction::Ignored => panic!("heartbeat ignored"),
        }
        assert_eq!(b.leader_hint(), Some(NodeId(0)));
    }

    #[test]
    fn stale_heartbeat_ignored() {
        let mut b = node(1, 5);
        b.current_term = 4;
        let mut e = env(1);
        let hb = AppendEntries { term: 3, leader: NodeId(0), prev_index: 0, prev_term: 0, entries: vec![], leader_commit: 0 };
        assert_eq!(b.on_heartbeat(&mut e, hb), TimerAction::Ignored);
        assert!(e.timers.is_empty());
        assert_eq!(b.leader_hint(), None);
    }

    #[test]
    fn leader_steps_down_on_higher_term_heartbeat() {
        let mut a = node(0, 3);
        let mut e = env(0);
        a.on_election_timeout(&mut e).unwrap();
        a.on_vote(&mut e, NodeId(1), VoteResponse { term: 1, granted: true });
        assert_eq!(a.role(), Role::Leader);
        let hb = AppendEntries { term: 2, leader: NodeId(2), prev_index: 0, prev_term: 0, entries: vec![], leader_commit: 0 };
        assert!(matches!(a.on_heartbeat(&mut e, hb), TimerAction::Reset(_)));
        assert_eq!(a.role(), Role::Follower);
        assert_eq!(a.leader_hint(), Some(NodeId(2)));
        assert!(e.observations.contains(&Observation::SteppedDown { epoch: 1 }));
    }

    #[test]
    fn follower_forwards_to_leader() {
        let mut b = node(1, 5);
        b.leader_hint = Some(NodeId(0));
        let mut e = env(1);
        b.on_client_request(&mut e, req(0, 1), 0);
        assert_eq!(e.sent.len(), 1);
        assert!(matches!(e.sent[0], (Addr::Node(NodeId(0)), RaftMsg::Forward { .. })));
    }

    #[test]
    fn request_without_leader_is_buffered_then_rejected_on_overflow() {
        let cfg = RaftConfig { forward_buffer: 2, ..RaftConfig::default() };
        let mut b = RaftNode::new(NodeId(1), 3, cfg).unwrap();
        let mut e = env(1);
        for s in 0..3 {
            b.on_client_request(&mut e, req(0, s), 0);
        }
        assert_eq!(b.buffered(), 2);
        assert!(e.sent.is_empty());
        assert_eq!(e.observations, vec![Observation::RequestRejected(req(0, 2).id)]);
    }

    #[test]
    fn majority_commit_of_five() {
        let mut a = node(0, 5);
        let mut e = env(0);
        a.on_election_timeout(&mut e).unwrap();
        a.on_vote(&mut e, NodeId(1), VoteResponse { term: 1, granted: true });
        a.on_vote(&mut e, NodeId(2), VoteResponse { term: 1, granted: true });
        assert_eq!(a.role(), Role::Leader);
        a.on_client_request(&mut e, req(0, 1), 0);
        assert_eq!(a.last_index(), 2);
        e.take_sent();
        a.on_append_response(&mut e, NodeId(1), AppendResponse { term: 1, success: true, match_index: 2 });
        assert_eq!(a.commit_index(), 0, "2 of 5 is not a majority");
        a.on_append_response(&mut e, NodeId(3), AppendResponse { term: 1, success: true, match_index: 2 });
        assert_eq!(a.commit_index(), 2);
        let replies: Vec<_> = e.sent.iter().filter(|(_, m)| matches!(m, RaftMsg::Reply(_))).collect();
        assert_eq!(replies.len(), 1);
    }

    #[test]
    fn conflicting_suffix_is_replaced() {
        let mut b = node(1, 3);
        let mut e = env(1);
        b.log = vec![LogEntry { term: 1, request: None }, LogEntry { term: 1, request: Some(req(0, 9).id) }];
        b.index_of.insert(req(0, 9).id, 2);
        b.current_term = 1;
        let ae = AppendEntries {
            term: 2,
            leader: NodeId(0),
            prev_index: 1,
            prev_term: 1,
            entries: vec![LogEntry { term: 2, request: None }],
            leader_commit: 2,
        };
        b.on_heartbeat(&mut e, ae);
        assert_eq!(b.log(), &[LogEntry { term: 1, request: None }, LogEntry { term: 2, request: None }]);
        assert_eq!(b.commit_index(), 2);
        assert!(!b.index_of.contains_key(&req(0, 9).id));
    }

    #[test]
    fn check_quorum_steps_down_when_isolated() {
        let mut a = node(0, 3);
        let mut e = env(0);
        a.on_election_timeout(&mut e).unwrap();
        a.on_vote(&mut e, NodeId(1), VoteResponse { term: 1, granted: true });
        a.on_check_quorum(&mut e);
        assert_eq!(a.role(), Role::Follower);
        assert!(e.timers.contains_key(&ELECTION_TIMER));
    }
}
