use super::wire::{Message, MessageKind};
use serde::Serialize;
use std::collections::BTreeMap;

/// Bandwidth category of a message kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Category {
    PlaceRecognition,
    GeometricVerification,
    Dpgo,
}

impl From<MessageKind> for Category {
    fn from(k: MessageKind) -> Self {
        match k {
            MessageKind::BowQuery | MessageKind::BowMatch => Category::PlaceRecognition,
            MessageKind::KeypointRequest
            | MessageKind::KeypointResponse
            | MessageKind::LoopCandidate
            | MessageKind::CliqueUpdate => Category::GeometricVerification,
            MessageKind::PublicPoses => Category::Dpgo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ChannelStats {
    pub bytes: u64,
    pub messages: u64,
}

type Channel = (u32, u32, MessageKind);

/// Cumulative traffic per (sender, receiver, kind), booked once by the
/// sender when a message leaves and once by the receiver when it arrives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelLedger {
    sent: BTreeMap<Channel, ChannelStats>,
    received: BTreeMap<Channel, ChannelStats>,
    /// `(event time, cumulative bytes delivered)` after each delivery.
    history: Vec<(u64, u64)>,
    delivered: u64,
}

fn book(map: &mut BTreeMap<Channel, ChannelStats>, m: &Message) {
    let s = map.entry((m.from, m.to, m.kind)).or_default();
    s.bytes += m.byte_size() as u64;
    s.messages += 1;
}

impl ChannelLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_sent(&mut self, m: &Message) {
        book(&mut self.sent, m);
    }

    pub fn record_received(&mut self, m: &Message, time: u64) {
        book(&mut self.received, m);
        self.delivered += m.byte_size() as u64;
        self.history.push((time, self.delivered));
    }

    /// Send and receive in one step, for a message delivered immediately.
    pub fn record(&mut self, m: &Message, time: u64) {
        self.record_sent(m);
        self.record_received(m, time);
    }

    /// Sender-side entries.
    pub fn channels(&self) -> impl Iterator<Item = (&Channel, &ChannelStats)> {
        self.sent.iter()
    }

    pub fn received_channels(&self) -> impl Iterator<Item = (&Channel, &ChannelStats)> {
        self.received.iter()
    }

    /// Every sent byte was received on the same channel.
    pub fn is_conserved(&self) -> bool {
        self.sent == self.received
    }

    pub fn history(&self) -> &[(u64, u64)] {
        &self.history
    }

    pub fn total_bytes(&self) -> u64 {
        self.sent.values().map(|s| s.bytes).sum()
    }

    pub fn total_messages(&self) -> u64 {
        self.sent.values().map(|s| s.messages).sum()
    }

    pub fn kind_bytes(&self, kind: MessageKind) -> u64 {
        self.sent.iter().filter(|((_, _, k), _)| *k == kind).map(|(_, s)| s.bytes).sum()
    }

    pub fn category_bytes(&self, c: Category) -> u64 {
        self.sent.iter().filter(|((_, _, k), _)| Category::from(*k) == c).map(|(_, s)| s.bytes).sum()
    }

    /// Bytes per unordered robot pair.
    pub fn pair_bytes(&self) -> BTreeMap<(u32, u32), u64> {
        let mut out = BTreeMap::new();
        for ((a, b, _), s) in &self.sent {
            *out.entry(((*a).min(*b), (*a).max(*b))).or_insert(0) += s.bytes;
        }
        out
    }

    /// One CSV row per channel: `sender,receiver,kind,category,bytes,messages`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sender,receiver,kind,category,bytes,messages\n");
        for ((a, b, k), st) in &self.sent {
            s.push_str(&format!("{a},{b},{k:?},{:?},{},{}\n", Category::from(*k), st.bytes, st.messages));
        }
        s
    }
}
