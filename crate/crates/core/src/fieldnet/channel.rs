//! Lossy node -> gateway link: frame erasure plus a binary-symmetric channel.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::frame::{Frame, FrameError, FRAME_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransportProfile {
    #[default]
    LocalWireless,
    Satellite,
}

impl TransportProfile {
    pub fn default_latency(self) -> f64 {
        match self {
            TransportProfile::LocalWireless => 0.01,
            TransportProfile::Satellite => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid channel parameters: {0}")]
pub struct ChannelConfigError(pub String);

/// `p_bit` and `eb_n0_db` are alternatives; with neither set the link is
/// bit-error free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub p_drop: f64,
    pub p_bit: Option<f64>,
    pub eb_n0_db: Option<f64>,
    pub latency: Option<f64>,
    pub profile: TransportProfile,
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

/// BPSK bit error rate `Q(sqrt(2 Eb/N0))`.
pub fn bpsk_bit_error(eb_n0_db: f64) -> f64 {
    q_function((2.0 * 10f64.powf(eb_n0_db / 10.0)).sqrt())
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelConfigError> {
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(ChannelConfigError(format!("p_drop = {} outside [0, 1]", self.p_drop)));
        }
        if let Some(p) = self.p_bit {
            if !(0.0..=1.0).contains(&p) {
                return Err(ChannelConfigError(format!("p_bit = {p} outside [0, 1]")));
            }
        }
        if self.p_bit.is_some() && self.eb_n0_db.is_some() {
            return Err(ChannelConfigError("set either p_bit or eb_n0_db, not both".into()));
        }
        if let Some(db) = self.eb_n0_db {
            if !db.is_finite() {
                return Err(ChannelConfigError("eb_n0_db must be finite".into()));
            }
        }
        if let Some(l) = self.latency {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(ChannelConfigError(format!("latency = {l} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn bit_error_probability(&self) -> f64 {
        match (self.p_bit, self.eb_n0_db) {
            (Some(p), _) => p,
            (None, Some(db)) => bpsk_bit_error(db),
            (None, None) => 0.0,
        }
    }

    pub fn latency(&self) -> f64 {
        self.latency.unwrap_or_else(|| self.profile.default_latency())
    }
}

/// One pass through the link. `None` when the frame is erased.
pub fn channel_transmit<R: Rng + ?Sized>(
    bytes: &[u8; FRAME_LEN],
    params: &ChannelParams,
    rng: &mut R,
) -> Option<[u8; FRAME_LEN]> {
    if params.p_drop > 0.0 && rng.random::<f64>() < params.p_drop {
        return None;
    }
    let mut out = *bytes;
    let p_bit = params.bit_error_probability();
    if p_bit > 0.0 {
        let bits = FRAME_LEN * 8;
        let flips = Binomial::new(bits as u64, p_bit).map(|b| b.sample(rng) as usize).unwrap_or(0);
        for pos in index::sample(rng, bits, flips) {
            out[pos / 8] ^= 0x80 >> (pos % 8);
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelStats {
    pub sent: u64,
    pub dropped: u64,
    pub rejected: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone)]
struct InFlight {
    deliver_at: f64,
    emit_time: f64,
    node_id: u8,
    order: u64,
    bytes: [u8; FRAME_LEN],
}

impl InFlight {
    fn key(&self) -> (f64, f64, u8, u64) {
        (self.deliver_at, self.emit_time, self.node_id, self.order)
    }
}

impl PartialEq for InFlight {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for InFlight {}

impl PartialOrd for InFlight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InFlight {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    }
}

/// Ordered delivery queue from all nodes to the gateway receiver.
#[derive(Debug)]
pub struct Channel {
    params: ChannelParams,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<InFlight>>,
    next_order: u64,
    stats: ChannelStats,
}

impl Channel {
    pub fn new(params: ChannelParams, rng: ChaCha8Rng) -> Result<Self, ChannelConfigError> {
        params.validate()?;
        Ok(Channel { params, rng, queue: BinaryHeap::new(), next_order: 0, stats: ChannelStats::default() })
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn send(&mut self, frame: &Frame, emit_time: f64) {
        self.stats.sent += 1;
        let Some(bytes) = channel_transmit(&frame.encode(), &self.params, &mut self.rng) else {
            self.stats.dropped += 1;
            return;
        };
        let item = InFlight {
            deliver_at: emit_time + self.params.latency(),
            emit_time,
            node_id: frame.node_id,
            order: self.next_order,
            bytes,
        };
        self.next_order += 1;
        self.queue.push(Reverse(item));
    }

    /// Frames due by `t` that pass the receiver's sync and CRC checks, in
    /// delivery order.
    pub fn deliver_until(&mut self, t: f64) -> Vec<(f64, Frame)> {
        let mut out = Vec::new();
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.deliver_at > t {
                break;
            }
            let Reverse(item) = self.queue.pop().expect("peeked");
            match receive(&item.bytes) {
                Ok(frame) => {
                    self.stats.delivered += 1;
                    out.push((item.deliver_at, frame));
                }
                Err(_) => self.stats.rejected += 1,
            }
        }
        out
    }
}

/// Receiver front end.
pub fn receive(bytes: &[u8]) -> Result<Frame, FrameError> {
    Frame::decode(bytes)
}
