//! Steganogram scattering: split a steganogram into fragments, spread them
//! over channels (flows across one or more host pairs), and reassemble at
//! the receiver.
//!
//! Three ordering strategies are supported. `PositionalHeader` ships a small
//! fixed-width header with every fragment. `TimeOrdered` transmits no index
//! at all: the fragment whose sending starts earlier occupies the earlier
//! position in the reassembled steganogram, so fragment position p starts at
//! `epoch + p * stagger`. `PreAssigned` binds fragment i to channel i ahead
//! of time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carriers::{self, CarrierConfig, CarrierError, CarrierMethodId};
use crate::core::{BitString, FlowId, Steganogram};
use crate::simnet::{Delivered, NetError, Network, OvertPacket, Tick};

/// Fixed-width fragment header: 16-bit steganogram id, 8-bit index, 8-bit k,
/// 16-bit bit length, MSB-first.
pub const HEADER_BITS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderingStrategy {
    PositionalHeader,
    TimeOrdered,
    PreAssigned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub steg_id: u16,
    pub index: usize,
    pub bit_len: usize,
    pub body: BitString,
}

/// One scattering agreement, shared by sender and receiver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterPlan {
    pub strategy: OrderingStrategy,
    pub k: usize,
    /// Ordered channel list; each channel is one flow paired with the
    /// carrier method used on it.
    pub channels: Vec<(FlowId, CarrierMethodId)>,
    /// Replica count per fragment index; absent indices default to 1.
    #[serde(default)]
    pub redundancy: BTreeMap<usize, usize>,
    /// Ticks between fragment start times (TimeOrdered only).
    #[serde(default)]
    pub stagger: Tick,
    /// Tick at which the first fragment starts.
    #[serde(default)]
    pub epoch: Tick,
}

impl ScatterPlan {
    pub fn replicas(&self, index: usize) -> usize {
        self.redundancy.get(&index).copied().unwrap_or(1).max(1)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SgsError {
    #[error("plan does not fit the fragment set: {0}")]
    PlanMismatch(String),
    #[error("no surviving replica for fragment indices {0:?}")]
    MissingFragment(Vec<usize>),
    #[error("time-ordered fragments share a first-bit send time")]
    OrderAmbiguity,
    #[error(transparent)]
    Carrier(#[from] CarrierError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Splits a payload into `k` fragments whose bodies concatenate back to the
/// payload. Sizes are front-loaded: the first `len % k` fragments get one
/// extra bit.
pub fn split(s: &Steganogram, k: usize) -> Vec<Fragment> {
    assert!(k >= 1, "k must be at least 1");
    let sizes = fragment_sizes(s.payload.len(), k);
    let mut rest = s.payload.clone();
    sizes
        .iter()
        .enumerate()
        .map(|(index, &size)| {
            let (body, remaining) = rest.take(size).expect("sizes sum to len");
            rest = remaining;
            Fragment {
                steg_id: s.id,
                index,
                bit_len: size,
                body,
            }
        })
        .collect()
}

/// Front-loaded ceiling split sizes; deterministic, so the receiver can
/// recover fragment lengths from the total alone.
pub fn fragment_sizes(total_bits: usize, k: usize) -> Vec<usize> {
    let base = total_bits / k;
    let extra = total_bits % k;
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}

/// Upper bound on host-based channels between n sender and m receiver hosts.
pub fn max_channels(n: usize, m: usize) -> usize {
    n * m
}

fn header_bits(f: &Fragment, k: usize) -> BitString {
    let mut h = BitString::from_value(f.steg_id as u64, 16);
    h.extend(&BitString::from_value(f.index as u64, 8));
    h.extend(&BitString::from_value(k as u64, 8));
    h.extend(&BitString::from_value(f.bit_len as u64, 16));
    h
}

#[derive(Debug, Clone, Copy)]
struct Header {
    steg_id: u16,
    index: usize,
    k: usize,
    bit_len: usize,
}

fn parse_header(bits: &BitString) -> Option<Header> {
    if bits.len() < HEADER_BITS {
        return None;
    }
    Some(Header {
        steg_id: bits.prefix(16).to_value() as u16,
        index: bits.prefix(24).suffix(8).to_value() as usize,
        k: bits.prefix(32).suffix(8).to_value() as usize,
        bit_len: bits.prefix(48).suffix(16).to_value() as usize,
    })
}

/// Channel indices carrying each replica of fragment `index`.
fn replica_channels(plan: &ScatterPlan, index: usize) -> Result<Vec<usize>, SgsError> {
    let len = plan.channels.len();
    let r = plan.replicas(index);
    match plan.strategy {
        OrderingStrategy::PositionalHeader => {
            let picks: Vec<usize> = (0..r).map(|j| (index + j * plan.k) % len).collect();
            let mut dedup = picks.clone();
            dedup.sort_unstable();
            dedup.dedup();
            if dedup.len() != picks.len() {
                return Err(SgsError::PlanMismatch(format!(
                    "replicas of fragment {index} collide on a channel; need more channels"
                )));
            }
            Ok(picks)
        }
        OrderingStrategy::PreAssigned => {
            let picks: Vec<usize> = (0..r).map(|j| j * plan.k + index).collect();
            if picks.iter().any(|&c| c >= len) {
                return Err(SgsError::PlanMismatch(format!(
                    "pre-assigned replicas of fragment {index} exceed channel list"
                )));
            }
            Ok(picks)
        }
        OrderingStrategy::TimeOrdered => {
            if r != 1 {
                return Err(SgsError::PlanMismatch(
                    "time-ordered scattering cannot replicate fragments without ambiguity".into(),
                ));
            }
            if index >= len {
                return Err(SgsError::PlanMismatch("fewer channels than fragments".into()));
            }
            Ok(vec![index])
        }
    }
}

#[derive(Debug, Clone)]
pub struct SendRecord {
    pub fragment_index: usize,
    pub replica: usize,
    pub channel: usize,
    pub flow: FlowId,
    pub method: CarrierMethodId,
    pub first_bit_time: Tick,
    pub packet_count: usize,
}

fn validate(plan: &ScatterPlan, fragments: &[Fragment], net: &Network) -> Result<(), SgsError> {
    if plan.channels.is_empty() {
        return Err(SgsError::PlanMismatch("empty channel list".into()));
    }
    if fragments.len() != plan.k {
        return Err(SgsError::PlanMismatch(format!(
            "plan expects k={} fragments, got {}",
            plan.k,
            fragments.len()
        )));
    }
    if plan.strategy == OrderingStrategy::TimeOrdered {
        // Stagger must clear the jitter window or first-bit ordering breaks.
        if plan.stagger <= net.config().reorder_window {
            return Err(SgsError::PlanMismatch(
                "stagger must exceed the reorder window".into(),
            ));
        }
        if plan.channels.len() < plan.k {
            return Err(SgsError::PlanMismatch("fewer channels than fragments".into()));
        }
    }
    for (flow, _) in &plan.channels {
        if net.flow(*flow).is_none() {
            return Err(SgsError::PlanMismatch(format!("unknown flow {:?}", flow)));
        }
    }
    Ok(())
}

/// Sends every fragment (and replica) over its channel. `payload_len` sets
/// the overt payload size of each emitted packet, which also determines
/// padding capacity for the frame-padding carrier.
pub fn scatter_send(
    fragments: &[Fragment],
    plan: &ScatterPlan,
    cfg: &CarrierConfig,
    payload_len: u32,
    net: &mut Network,
) -> Result<Vec<SendRecord>, SgsError> {
    validate(plan, fragments, net)?;
    let mut records = Vec::new();
    for fragment in fragments {
        let wire = match plan.strategy {
            OrderingStrategy::PositionalHeader => {
                header_bits(fragment, plan.k).concat(&fragment.body)
            }
            _ => fragment.body.clone(),
        };
        let start = match plan.strategy {
            OrderingStrategy::TimeOrdered => {
                plan.epoch + fragment.index as Tick * plan.stagger
            }
            _ => plan.epoch,
        };
        for (replica, &channel) in replica_channels(plan, fragment.index)?.iter().enumerate() {
            let (flow, method) = plan.channels[channel];
            let protocol = net.flow(flow).expect("validated").protocol;
            let template = OvertPacket::plain(flow, start, payload_len, protocol);
            let packets = carriers::encode_stream(method, cfg, &wire, &template, start)?;
            let count = packets.len();
            for packet in packets {
                net.send(flow, packet)?;
            }
            records.push(SendRecord {
                fragment_index: fragment.index,
                replica,
                channel,
                flow,
                method,
                first_bit_time: start,
                packet_count: count,
            });
        }
    }
    Ok(records)
}

/// Decodes the bits carried on one channel, packets sorted by send time.
fn decode_channel(
    method: CarrierMethodId,
    cfg: &CarrierConfig,
    packets: &[&OvertPacket],
    total_bits: usize,
) -> Option<BitString> {
    let mut out = BitString::new();
    for packet in packets {
        if out.len() >= total_bits {
            break;
        }
        let want = total_bits - out.len();
        let cap = carriers::capacity(method, cfg, packet).ok()?;
        let n = cap.min(want);
        out.extend(&carriers::extract_partial(method, cfg, packet, n).ok()?);
    }
    (out.len() == total_bits).then_some(out)
}

/// Full-width decode used to peek at a positional header before the true
/// bit length is known.
fn decode_channel_raw(
    method: CarrierMethodId,
    cfg: &CarrierConfig,
    packets: &[&OvertPacket],
    limit: usize,
) -> BitString {
    let mut out = BitString::new();
    for packet in packets {
        if out.len() >= limit {
            break;
        }
        match carriers::extract(method, cfg, packet) {
            Ok(bits) => out.extend(&bits),
            Err(_) => break,
        }
    }
    out
}

/// Reconstructs the steganogram from delivered packets.
///
/// `total_payload_bits` is the agreed payload length; `TimeOrdered` and
/// `PreAssigned` need it to derive fragment sizes (they transmit no header).
pub fn reassemble(
    delivered: &[Delivered],
    plan: &ScatterPlan,
    cfg: &CarrierConfig,
    total_payload_bits: usize,
    steg_id: u16,
) -> Result<Steganogram, SgsError> {
    // Group by channel; a flow may back several channels, so match on the
    // channel's flow and keep packet order by send time.
    let mut per_channel: Vec<Vec<&OvertPacket>> = vec![Vec::new(); plan.channels.len()];
    for d in delivered {
        for (c, (flow, _)) in plan.channels.iter().enumerate() {
            if d.packet.flow == *flow {
                per_channel[c].push(&d.packet);
            }
        }
    }
    for packets in &mut per_channel {
        packets.sort_by_key(|p| p.send_time);
    }

    let sizes = fragment_sizes(total_payload_bits, plan.k);
    let mut bodies: BTreeMap<usize, BitString> = BTreeMap::new();

    match plan.strategy {
        OrderingStrategy::PositionalHeader => {
            for (c, packets) in per_channel.iter().enumerate() {
                if packets.is_empty() {
                    continue;
                }
                let method = plan.channels[c].1;
                let raw = decode_channel_raw(method, cfg, packets, HEADER_BITS);
                let Some(header) = parse_header(&raw) else { continue };
                if header.steg_id != steg_id || header.k != plan.k || header.index >= plan.k {
                    continue;
                }
                let total = HEADER_BITS + header.bit_len;
                let Some(wire) = decode_channel(method, cfg, packets, total) else {
                    continue;
                };
                let body = wire.suffix(header.bit_len);
                bodies.entry(header.index).or_insert(body);
            }
        }
        OrderingStrategy::PreAssigned => {
            for (c, packets) in per_channel.iter().enumerate() {
                if packets.is_empty() {
                    continue;
                }
                let index = c % plan.k;
                let method = plan.channels[c].1;
                if let Some(body) = decode_channel(method, cfg, packets, sizes[index]) {
                    bodies.entry(index).or_insert(body);
                }
            }
        }
        OrderingStrategy::TimeOrdered => {
            // Order channels by the send time of their first bit; earlier
            // start means earlier position in the steganogram.
            let mut starts: Vec<(Tick, usize)> = per_channel
                .iter()
                .enumerate()
                .filter(|(_, pkts)| !pkts.is_empty())
                .map(|(c, pkts)| (pkts[0].send_time, c))
                .collect();
            starts.sort_by_key(|&(t, c)| (t, c));
            for w in starts.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(SgsError::OrderAmbiguity);
                }
            }
            for (position, &(_, c)) in starts.iter().enumerate() {
                if position >= plan.k {
                    break;
                }
                let method = plan.channels[c].1;
                if let Some(body) = decode_channel(method, cfg, &per_channel[c], sizes[position]) {
                    bodies.entry(position).or_insert(body);
                }
            }
        }
    }

    let missing: Vec<usize> = (0..plan.k).filter(|i| !bodies.contains_key(i)).collect();
    if !missing.is_empty() {
        return Err(SgsError::MissingFragment(missing));
    }
    let mut payload = BitString::new();
    for (_, body) in bodies {
        payload.extend(&body);
    }
    Ok(Steganogram::new(steg_id, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::HostId;
    use crate::ips::CarrierProtocolTag;
    use crate::simnet::NetworkConfig;

    fn steg(bits: &str) -> Steganogram {
        Steganogram::new(1, BitString::parse(bits))
    }

    #[test]
    fn split_even() {
        let frags = split(&steg("101100111000"), 3);
        assert_eq!(frags.len(), 3);
        assert!(frags.iter().all(|f| f.bit_len == 4));
        assert_eq!(frags[0].body, BitString::parse("1011"));
    }

    #[test]
    fn split_k1_is_identity() {
        let s = steg("10110");
        let frags = split(&s, 1);
        assert_eq!(frags.len(), 1);
        assert_eq!(frags[0].body, s.payload);
    }

    #[test]
    fn split_front_loaded() {
        // 13 bits over 3 fragments: 5, 4, 4
        assert_eq!(fragment_sizes(13, 3), vec![5, 4, 4]);
        let frags = split(&steg("1011001110001"), 3);
        assert_eq!(frags[0].bit_len, 5);
        assert_eq!(frags[1].bit_len, 4);
        assert_eq!(frags[2].bit_len, 4);
        let joined = frags
            .iter()
            .fold(BitString::new(), |acc, f| acc.concat(&f.body));
        assert_eq!(joined, BitString::parse("1011001110001"));
    }

    #[test]
    fn split_empty_payload_allowed() {
        let frags = split(&Steganogram::new(0, BitString::new()), 3);
        assert_eq!(frags.len(), 3);
        assert!(frags.iter().all(|f| f.body.is_empty()));
    }

    #[test]
    fn max_channels_formula() {
        assert_eq!(max_channels(1, 1), 1);
        assert_eq!(max_channels(2, 3), 6);
        assert_eq!(max_channels(3, 2), max_channels(2, 3));
    }

    #[test]
    fn header_round_trip() {
        let f = Fragment {
            steg_id: 513,
            index: 2,
            bit_len: 300,
            body: BitString::new(),
        };
        let h = parse_header(&header_bits(&f, 5)).unwrap();
        assert_eq!(h.steg_id, 513);
        assert_eq!(h.index, 2);
        assert_eq!(h.k, 5);
        assert_eq!(h.bit_len, 300);
    }

    fn lossless_net(flows: usize, methods: CarrierMethodId) -> (Network, ScatterPlan) {
        let mut net = Network::new(NetworkConfig::default());
        let channels: Vec<(FlowId, CarrierMethodId)> = (0..flows)
            .map(|i| {
                let f = net.open_flow(
                    HostId(0),
                    HostId(1),
                    CarrierProtocolTag::Tcp,
                    4,
                    2,
                );
                let _ = i;
                (f, methods)
            })
            .collect();
        let plan = ScatterPlan {
            strategy: OrderingStrategy::PositionalHeader,
            k: flows,
            channels,
            redundancy: BTreeMap::new(),
            stagger: 1,
            epoch: 0,
        };
        (net, plan)
    }

    fn run_round_trip(strategy: OrderingStrategy, k: usize, bits: &str) {
        let (mut net, mut plan) = lossless_net(k, CarrierMethodId::MultiStreaming);
        plan.strategy = strategy;
        plan.k = k;
        let s = steg(bits);
        let frags = split(&s, k);
        scatter_send(&frags, &plan, &CarrierConfig::default(), 100, &mut net).unwrap();
        let delivered = net.drain();
        let got = reassemble(&delivered, &plan, &CarrierConfig::default(), s.payload.len(), s.id)
            .unwrap();
        assert_eq!(got.payload, s.payload);
    }

    #[test]
    fn round_trip_all_strategies() {
        for strategy in [
            OrderingStrategy::PositionalHeader,
            OrderingStrategy::TimeOrdered,
            OrderingStrategy::PreAssigned,
        ] {
            for k in 1..=4 {
                run_round_trip(strategy, k, "110100101100111010101");
            }
        }
    }

    #[test]
    fn time_ordered_never_transmits_index_bits() {
        // With TimeOrdered each channel carries exactly its body bits and
        // nothing else: total carried bits equal the payload length.
        let (mut net, mut plan) = lossless_net(3, CarrierMethodId::MultiStreaming);
        plan.strategy = OrderingStrategy::TimeOrdered;
        let s = steg("101100111000");
        let frags = split(&s, 3);
        let records =
            scatter_send(&frags, &plan, &CarrierConfig::default(), 100, &mut net).unwrap();
        let total_packets: usize = records.iter().map(|r| r.packet_count).sum();
        // 12 bits at 2 bits/packet = 6 packets; a header would need more
        assert_eq!(total_packets, 6);
    }

    #[test]
    fn time_ordered_reproduces_worked_example() {
        // Three fragments labeled 1..3 where "fragment 3" is sent first:
        // assembled order is fragment 3, fragment 2, fragment 1.
        let (mut net, mut plan) = lossless_net(3, CarrierMethodId::MultiStreaming);
        plan.strategy = OrderingStrategy::TimeOrdered;
        plan.stagger = 100;
        let frag3 = BitString::parse("1010");
        let frag2 = BitString::parse("0110");
        let frag1 = BitString::parse("1100");
        // the steganogram assembles as frag3 ++ frag2 ++ frag1
        let payload = frag3.concat(&frag2).concat(&frag1);
        let s = Steganogram::new(7, payload.clone());
        let frags = split(&s, 3);
        // position 0 (fragment 3) starts first, position 2 (fragment 1) last
        let records =
            scatter_send(&frags, &plan, &CarrierConfig::default(), 100, &mut net).unwrap();
        assert_eq!(records[0].first_bit_time, 0);
        assert_eq!(records[1].first_bit_time, 100);
        assert_eq!(records[2].first_bit_time, 200);
        let delivered = net.drain();
        let got =
            reassemble(&delivered, &plan, &CarrierConfig::default(), payload.len(), 7).unwrap();
        assert_eq!(got.payload, payload);
        assert_eq!(got.payload.prefix(4), frag3);
    }

    #[test]
    fn redundancy_places_replicas_on_distinct_channels() {
        let (mut net, mut plan) = lossless_net(4, CarrierMethodId::MultiStreaming);
        plan.k = 2;
        plan.redundancy.insert(0, 2);
        let s = steg("10110011");
        let frags = split(&s, 2);
        let records =
            scatter_send(&frags, &plan, &CarrierConfig::default(), 100, &mut net).unwrap();
        let frag0_channels: Vec<usize> = records
            .iter()
            .filter(|r| r.fragment_index == 0)
            .map(|r| r.channel)
            .collect();
        assert_eq!(frag0_channels.len(), 2);
        assert_ne!(frag0_channels[0], frag0_channels[1]);
    }

    #[test]
    fn redundancy_survives_single_channel_loss() {
        let (mut net, mut plan) = lossless_net(4, CarrierMethodId::MultiStreaming);
        plan.k = 2;
        plan.redundancy.insert(0, 2);
        plan.redundancy.insert(1, 2);
        let s = steg("1011001110");
        let frags = split(&s, 2);
        scatter_send(&frags, &plan, &CarrierConfig::default(), 100, &mut net).unwrap();
        let delivered = net.drain();
        for dropped_channel in 0..4 {
            let survivors: Vec<Delivered> = delivered
                .iter()
                .filter(|d| d.packet.flow != plan.channels[dropped_channel].0)
                .cloned()
                .collect();
            let got = reassemble(&survivors, &plan, &CarrierConfig::default(), 10, s.id).unwrap();
            assert_eq!(got.payload, s.payload);
        }
    }

    #[test]
    fn missing_fragment_reported() {
        let (mut net, plan) = lossless_net(2, CarrierMethodId::MultiStreaming);
        let s = steg("10110011");
        let frags = split(&s, 2);
        scatter_send(&frags, &plan, &CarrierConfig::default(), 100, &mut net).unwrap();
        let delivered: Vec<Delivered> = net
            .drain()
            .into_iter()
            .filter(|d| d.packet.flow != plan.channels[1].0)
            .collect();
        assert_eq!(
            reassemble(&delivered, &plan, &CarrierConfig::default(), 8, s.id),
            Err(SgsError::MissingFragment(vec![1]))
        );
    }

    #[test]
    fn time_ordered_equal_starts_is_ambiguous() {
        let (mut net, mut plan) = lossless_net(2, CarrierMethodId::MultiStreaming);
        plan.strategy = OrderingStrategy::TimeOrdered;
        plan.stagger = 1;
        let s = steg("10110011");
        let frags = split(&s, 2);
        scatter_send(&frags, &plan, &CarrierConfig::default(), 100, &mut net).unwrap();
        let mut delivered = net.drain();
        // force both channels to share a first-bit time
        for d in &mut delivered {
            d.packet.send_time = 0;
        }
        assert_eq!(
            reassemble(&delivered, &plan, &CarrierConfig::default(), 8, s.id),
            Err(SgsError::OrderAmbiguity)
        );
    }

    #[test]
    fn stagger_must_clear_reorder_window() {
        let cfg = NetworkConfig {
            reorder_window: 5,
            ..NetworkConfig::default()
        };
        let mut net = Network::new(cfg);
        let f0 = net.open_flow(HostId(0), HostId(1), CarrierProtocolTag::Tcp, 4, 2);
        let f1 = net.open_flow(HostId(0), HostId(1), CarrierProtocolTag::Tcp, 4, 2);
        let plan = ScatterPlan {
            strategy: OrderingStrategy::TimeOrdered,
            k: 2,
            channels: vec![
                (f0, CarrierMethodId::MultiStreaming),
                (f1, CarrierMethodId::MultiStreaming),
            ],
            redundancy: BTreeMap::new(),
            stagger: 5,
            epoch: 0,
        };
        let s = steg("1011");
        let frags = split(&s, 2);
        assert!(matches!(
            scatter_send(&frags, &plan, &CarrierConfig::default(), 100, &mut net),
            Err(SgsError::PlanMismatch(_))
        ));
    }
}
