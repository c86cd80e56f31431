//! Seeded in-process network with latency, jitter and loss.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ParticipantId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub latency_mean_ns: i64,
    /// Half-width of the uniform jitter around the mean.
    pub jitter_ns: i64,
    pub drop_probability: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { latency_mean_ns: 0, jitter_ns: 0, drop_probability: 0.0, seed: 0 }
    }
}

impl NetworkConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.latency_mean_ns < 0 {
            out.push(format!("network latency mean {} must be >= 0", self.latency_mean_ns));
        }
        if self.jitter_ns < 0 {
            out.push(format!("network jitter {} must be >= 0", self.jitter_ns));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            out.push(format!("drop probability {} outside [0, 1]", self.drop_probability));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub src: ParticipantId,
    pub dst: ParticipantId,
    pub sent_ns: i64,
    pub arrival_ns: i64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetworkStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

/// Messages in flight on a virtual clock.
///
/// Each send consumes exactly two draws from a ChaCha8 stream seeded with
/// `config.seed`: one for loss, one for jitter. Arrival times per
/// (src, dst) pair never decrease.
#[derive(Debug)]
pub struct SimNetwork {
    config: NetworkConfig,
    rng: ChaCha8Rng,
    last_arrival: HashMap<(ParticipantId, ParticipantId), i64>,
    in_flight: Vec<(u64, Delivery)>,
    next_id: u64,
    severed: bool,
    stats: NetworkStats,
}

impl SimNetwork {
    pub fn new(config: NetworkConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            last_arrival: HashMap::new(),
            in_flight: Vec::new(),
            next_id: 0,
            severed: false,
            stats: NetworkStats::default(),
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn stats(&self) -> NetworkStats {
        self.stats
    }

    /// Drops every later send.
    pub fn sever(&mut self) {
        self.severed = true;
    }

    /// Queues a message; returns its arrival time, or `None` if lost.
    pub fn send(&mut self, now_ns: i64, src: ParticipantId, dst: ParticipantId, bytes: Vec<u8>) -> Option<i64> {
        self.stats.sent += 1;
        let loss_draw: f64 = self.rng.random();
        let jitter_draw: f64 = self.rng.random();
        if self.severed || loss_draw < self.config.drop_probability {
            self.stats.dropped += 1;
            return None;
        }
        let jitter = (2.0 * jitter_draw - 1.0) * self.config.jitter_ns as f64;
        let latency = (self.config.latency_mean_ns as f64 + jitter).round().max(0.0) as i64;
        let last = self.last_arrival.entry((src, dst)).or_insert(i64::MIN);
        let arrival = (now_ns + latency).max(*last);
        *last = arrival;
        self.in_flight.push((self.next_id, Delivery { src, dst, sent_ns: now_ns, arrival_ns: arrival, bytes }));
        self.next_id += 1;
        Some(arrival)
    }

    /// Removes and returns every message for `dst` arriving at or before
    /// `now_ns`, ordered by arrival then send order.
    pub fn deliver_due(&mut self, now_ns: i64, dst: ParticipantId) -> Vec<Delivery> {
        let mut due = Vec::new();
        let mut i = 0;
        while i < self.in_flight.len() {
            let d = &self.in_flight[i].1;
            if d.dst == dst && d.arrival_ns <= now_ns {
                due.push(self.in_flight.swap_remove(i));
            } else {
                i += 1;
            }
        }
        due.sort_by_key(|(id, d)| (d.arrival_ns, *id));
        self.stats.delivered += due.len() as u64;
        due.into_iter().map(|(_, d)| d).collect()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendEvent {
    pub time_ns: i64,
    pub src: ParticipantId,
    pub dst: ParticipantId,
    pub bytes: Vec<u8>,
}

/// Arrival time for each send (in the given order), `None` when dropped.
pub fn simulated_network_deliver(config: NetworkConfig, sends: &[SendEvent]) -> Vec<Option<i64>> {
    let mut net = SimNetwork::new(config);
    sends.iter().map(|s| net.send(s.time_ns, s.src, s.dst, s.bytes.clone())).collect()
}
