//! Deterministic discrete-event network simulation.
//!
//! Time is an integer tick counter. Every flow owns its own seeded random
//! stream for loss and jitter, so adding a flow never perturbs the randomness
//! seen by existing flows. Delivery order is totally ordered by
//! (delivery tick, flow id, send sequence) which makes every run reproducible
//! bit for bit.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{AddressIndex, BitString, FlowId, HostId, StreamIndex};
use crate::ips::CarrierProtocolTag;

pub type Tick = u64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub seed: u64,
    /// Per-packet drop probability in [0, 1].
    pub loss_probability: f64,
    /// Maximum extra delivery jitter in ticks.
    pub reorder_window: Tick,
    /// Fixed propagation delay in ticks.
    pub base_delay: Tick,
    /// Fraction of overt packets that are retransmissions absent any covert
    /// activity. Used by anomaly detectors as the clean baseline.
    pub natural_retransmission_rate: f64,
    /// Fraction of overt packets that carry padding absent covert activity.
    pub natural_padding_rate: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            seed: 0,
            loss_probability: 0.0,
            reorder_window: 0,
            base_delay: 0,
            natural_retransmission_rate: 0.0,
            natural_padding_rate: 0.0,
        }
    }
}

/// One simulated protocol data unit. Carrier codecs write into the
/// carrier-specific fields (`stream`, `dest_address`, `chunk_count`,
/// `padding`, `retransmitted`, `payload_bits`) and leave the rest alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvertPacket {
    pub flow: FlowId,
    pub send_time: Tick,
    pub payload_len: u32,
    pub stream: StreamIndex,
    pub dest_address: AddressIndex,
    pub chunk_count: u32,
    pub padding: Vec<u8>,
    pub retransmitted: bool,
    pub protocol: CarrierProtocolTag,
    /// Covert payload carried in place of user data; only the retransmission
    /// carrier uses this.
    pub payload_bits: BitString,
}

impl OvertPacket {
    /// A plain overt packet with no carrier fields set.
    pub fn plain(flow: FlowId, send_time: Tick, payload_len: u32, protocol: CarrierProtocolTag) -> Self {
        OvertPacket {
            flow,
            send_time,
            payload_len,
            stream: 0,
            dest_address: 0,
            chunk_count: 1,
            padding: Vec::new(),
            retransmitted: false,
            protocol,
            payload_bits: BitString::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Flow {
    pub id: FlowId,
    pub src: HostId,
    pub dst: HostId,
    pub protocol: CarrierProtocolTag,
    pub stream_count: u32,
    pub address_count: u32,
    /// src == dst is allowed but flagged.
    pub loopback: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("unknown flow {0:?}")]
    UnknownFlow(FlowId),
    #[error("clock would move backwards: now {now}, requested {requested}")]
    ClockRegression { now: Tick, requested: Tick },
}

/// A packet that reached the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivered {
    pub packet: OvertPacket,
    pub delivery_time: Tick,
    /// Per-flow send ordinal, the tie-breaker for equal delivery ticks.
    pub send_seq: u64,
}

struct FlowState {
    flow: Flow,
    rng: ChaCha8Rng,
    send_seq: u64,
}

struct Pending {
    delivery_time: Tick,
    send_seq: u64,
    packet: OvertPacket,
}

/// The simulation. Single-threaded; a finished run's delivered packets are
/// plain values and can be analysed from any thread.
pub struct Network {
    config: NetworkConfig,
    flows: BTreeMap<FlowId, FlowState>,
    queue: Vec<Pending>,
    clock: Tick,
    next_flow: u32,
    pub sent: u64,
    pub dropped: u64,
    pub delivered_count: u64,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Self {
        Network {
            config,
            flows: BTreeMap::new(),
            queue: Vec::new(),
            clock: 0,
            next_flow: 0,
            sent: 0,
            dropped: 0,
            delivered_count: 0,
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn flow(&self, id: FlowId) -> Option<&Flow> {
        self.flows.get(&id).map(|s| &s.flow)
    }

    pub fn open_flow(
        &mut self,
        src: HostId,
        dst: HostId,
        protocol: CarrierProtocolTag,
        stream_count: u32,
        address_count: u32,
    ) -> FlowId {
        let id = FlowId(self.next_flow);
        self.next_flow += 1;
        // Each flow's stream is derived from the network seed and the flow id
        // so that opening extra flows never shifts existing flows' draws.
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.config.seed.to_le_bytes());
        seed[8..12].copy_from_slice(&id.0.to_le_bytes());
        let state = FlowState {
            flow: Flow {
                id,
                src,
                dst,
                protocol,
                stream_count: stream_count.max(1),
                address_count: address_count.max(1),
                loopback: src == dst,
            },
            rng: ChaCha8Rng::from_seed(seed),
            send_seq: 0,
        };
        self.flows.insert(id, state);
        id
    }

    pub fn send(&mut self, flow: FlowId, packet: OvertPacket) -> Result<(), NetError> {
        let state = self.flows.get_mut(&flow).ok_or(NetError::UnknownFlow(flow))?;
        debug_assert_eq!(packet.flow, flow);
        let send_seq = state.send_seq;
        state.send_seq += 1;
        self.sent += 1;

        let lost = state.rng.gen::<f64>() < self.config.loss_probability;
        let jitter = if self.config.reorder_window > 0 {
            state.rng.gen_range(0..=self.config.reorder_window)
        } else {
            0
        };
        if lost {
            self.dropped += 1;
            return Ok(());
        }
        let delivery_time = packet.send_time + self.config.base_delay + jitter;
        self.queue.push(Pending {
            delivery_time,
            send_seq,
            packet,
        });
        Ok(())
    }

    /// Advances the clock and emits every packet due at or before `until`,
    /// each exactly once, ordered by delivery tick, then flow, then send
    /// order.
    pub fn advance(&mut self, until: Tick) -> Result<Vec<Delivered>, NetError> {
        if until < self.clock {
            return Err(NetError::ClockRegression {
                now: self.clock,
                requested: until,
            });
        }
        self.clock = until;
        let (due, rest): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.queue).into_iter().partition(|p| p.delivery_time <= until);
        self.queue = rest;
        let mut due: Vec<Delivered> = due
            .into_iter()
            .map(|p| Delivered {
                delivery_time: p.delivery_time,
                send_seq: p.send_seq,
                packet: p.packet,
            })
            .collect();
        due.sort_by_key(|d| (d.delivery_time, d.packet.flow, d.send_seq));
        self.delivered_count += due.len() as u64;
        Ok(due)
    }

    /// Drains everything still in flight.
    pub fn drain(&mut self) -> Vec<Delivered> {
        let horizon = self
            .queue
            .iter()
            .map(|p| p.delivery_time)
            .max()
            .unwrap_or(self.clock)
            .max(self.clock);
        self.advance(horizon).expect("horizon >= clock")
    }

    pub fn clock(&self) -> Tick {
        self.clock
    }
}
