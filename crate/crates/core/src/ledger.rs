//! Domain primitives shared by every protocol: ordered item keys, arrival
//! events, messages and the communication cost ledger.
//!
//! Costs are counted in words. A message carrying `j` integer fields costs
//! one message and `j` words. A broadcast is recorded as `k` directed
//! coordinator-to-site messages.

use crate::error::{Error, Result};

/// An item together with its arrival sequence number.
///
/// Keys order by `(value, seq)`, which breaks ties between equal values and
/// makes every arrival distinct. `seq == 0` never names a real arrival, so
/// `Key::floor(x)` sorts before every copy of `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Key {
    pub value: u64,
    pub seq: u64,
}

impl Key {
    pub const fn new(value: u64, seq: u64) -> Self {
        Key { value, seq }
    }

    /// Smallest key carrying `value`.
    pub const fn floor(value: u64) -> Self {
        Key { value, seq: 0 }
    }
}

/// One item observed by one site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArrivalEvent {
    pub seq: u64,
    /// Zero-based site index.
    pub site: usize,
    pub item: u64,
}

impl ArrivalEvent {
    pub fn new(seq: u64, site: usize, item: u64) -> Self {
        ArrivalEvent { seq, site, item }
    }

    pub fn key(&self) -> Key {
        Key::new(self.item, self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToCoordinator,
    ToSite,
    Broadcast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    /// Warm-up: an arrival forwarded verbatim.
    Forward,
    AllSignal,
    ItemSignal,
    /// Left/right drift report around the tracked quantile.
    DriftUpdate,
    /// Per-interval (or per-tree-node) count increment.
    IntervalUpdate,
    PollRequest,
    PollReply,
    BroadcastState,
    ProbeRequest,
    ProbeReply,
}

impl MessageKind {
    pub const ALL: [MessageKind; 10] = [
        MessageKind::Forward,
        MessageKind::AllSignal,
        MessageKind::ItemSignal,
        MessageKind::DriftUpdate,
        MessageKind::IntervalUpdate,
        MessageKind::PollRequest,
        MessageKind::PollReply,
        MessageKind::BroadcastState,
        MessageKind::ProbeRequest,
        MessageKind::ProbeReply,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Forward => "forward",
            MessageKind::AllSignal => "all-signal",
            MessageKind::ItemSignal => "item-signal",
            MessageKind::DriftUpdate => "drift-update",
            MessageKind::IntervalUpdate => "interval-update",
            MessageKind::PollRequest => "poll-request",
            MessageKind::PollReply => "poll-reply",
            MessageKind::BroadcastState => "broadcast-state",
            MessageKind::ProbeRequest => "probe-request",
            MessageKind::ProbeReply => "probe-reply",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Message {
    pub direction: Direction,
    pub kind: MessageKind,
    pub words: u64,
}

impl Message {
    pub fn up(kind: MessageKind, words: u64) -> Self {
        Message { direction: Direction::ToCoordinator, kind, words: words.max(1) }
    }

    pub fn down(kind: MessageKind, words: u64) -> Self {
        Message { direction: Direction::ToSite, kind, words: words.max(1) }
    }

    pub fn broadcast(kind: MessageKind, words: u64) -> Self {
        Message { direction: Direction::Broadcast, kind, words: words.max(1) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Totals {
    pub messages: u64,
    pub words: u64,
}

/// Cumulative message and word counts, split by kind, with optional
/// per-round snapshots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostLedger {
    k: usize,
    messages: [u64; MessageKind::ALL.len()],
    words: [u64; MessageKind::ALL.len()],
    rounds: Vec<(u64, Totals)>,
}

impl CostLedger {
    pub fn new(k: usize) -> Self {
        CostLedger { k, messages: [0; MessageKind::ALL.len()], words: [0; MessageKind::ALL.len()], rounds: Vec::new() }
    }

    pub fn sites(&self) -> usize {
        self.k
    }

    pub fn record(&mut self, msg: Message) {
        let copies = match msg.direction {
            Direction::Broadcast => self.k as u64,
            _ => 1,
        };
        let i = msg.kind.index();
        self.messages[i] += copies;
        self.words[i] += copies * msg.words;
    }

    /// Coordinator asks every site for `reply_words` integers: `k` one-word
    /// requests and `k` replies.
    pub fn poll(&mut self, reply_words: u64) {
        self.poll_with(1, reply_words);
    }

    pub fn poll_with(&mut self, request_words: u64, reply_words: u64) {
        for _ in 0..self.k {
            self.record(Message::down(MessageKind::PollRequest, request_words));
            self.record(Message::up(MessageKind::PollReply, reply_words));
        }
    }

    /// One probe round trip to every site.
    pub fn probe(&mut self, request_words: u64, reply_words: u64) {
        for _ in 0..self.k {
            self.record(Message::down(MessageKind::ProbeRequest, request_words));
            self.record(Message::up(MessageKind::ProbeReply, reply_words));
        }
    }

    pub fn messages(&self, kind: MessageKind) -> u64 {
        self.messages[kind.index()]
    }

    pub fn words(&self, kind: MessageKind) -> u64 {
        self.words[kind.index()]
    }

    pub fn totals(&self) -> Totals {
        Totals { messages: self.messages.iter().sum(), words: self.words.iter().sum() }
    }

    pub fn total_messages(&self) -> u64 {
        self.totals().messages
    }

    /// Stores the cumulative totals under `round`. Round ids must increase.
    pub fn snapshot_round(&mut self, round: u64) -> Result<()> {
        if let Some(&(prev, _)) = self.rounds.last() {
            if round <= prev {
                return Err(Error::NonMonotoneRound { previous: prev, got: round });
            }
        }
        let t = self.totals();
        self.rounds.push((round, t));
        Ok(())
    }

    pub fn snapshots(&self) -> &[(u64, Totals)] {
        &self.rounds
    }

    pub fn last_round(&self) -> Option<u64> {
        self.rounds.last().map(|&(r, _)| r)
    }

    /// Messages and words spent in each snapshotted round.
    pub fn round_deltas(&self) -> Vec<(u64, Totals)> {
        let mut prev = Totals::default();
        self.rounds
            .iter()
            .map(|&(r, t)| {
                let d = Totals { messages: t.messages - prev.messages, words: t.words - prev.words };
                prev = t;
                (r, d)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_all_signal() {
        let mut l = CostLedger::new(4);
        l.record(Message::up(MessageKind::AllSignal, 2));
        assert_eq!(l.totals(), Totals { messages: 1, words: 2 });
    }

    #[test]
    fn broadcast_expands_to_k() {
        let mut l = CostLedger::new(4);
        l.record(Message::broadcast(MessageKind::BroadcastState, 3));
        assert_eq!(l.totals(), Totals { messages: 4, words: 12 });
        assert_eq!(l.messages(MessageKind::BroadcastState), 4);
    }

    #[test]
    fn additive() {
        let mut l = CostLedger::new(2);
        l.record(Message::up(MessageKind::ItemSignal, 1));
        l.record(Message::up(MessageKind::ItemSignal, 1));
        assert_eq!(l.totals(), Totals { messages: 2, words: 2 });
    }

    #[test]
    fn round_deltas() {
        let mut l = CostLedger::new(2);
        for _ in 0..5 {
            l.record(Message::up(MessageKind::DriftUpdate, 1));
        }
        l.snapshot_round(1).unwrap();
        for _ in 0..4 {
            l.record(Message::up(MessageKind::DriftUpdate, 1));
        }
        l.snapshot_round(2).unwrap();
        l.snapshot_round(3).unwrap();
        let d: Vec<u64> = l.round_deltas().iter().map(|(_, t)| t.messages).collect();
        assert_eq!(d, vec![5, 4, 0]);
    }

    #[test]
    fn non_monotone_round_rejected() {
        let mut l = CostLedger::new(2);
        l.snapshot_round(2).unwrap();
        assert!(matches!(l.snapshot_round(1), Err(Error::NonMonotoneRound { .. })));
        assert!(l.snapshot_round(2).is_err());
    }

    #[test]
    fn poll_costs_two_k() {
        let mut l = CostLedger::new(3);
        l.poll(2);
        assert_eq!(l.messages(MessageKind::PollRequest), 3);
        assert_eq!(l.words(MessageKind::PollReply), 6);
        assert_eq!(l.total_messages(), 6);
    }

    #[test]
    fn key_tie_order() {
        assert!(Key::new(5, 9) < Key::new(6, 1));
        assert!(Key::new(5, 1) < Key::new(5, 2));
        assert!(Key::floor(5) < Key::new(5, 1));
    }
}
