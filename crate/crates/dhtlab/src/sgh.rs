//! Steganogram hopping: rotate the carrier method within a single flow
//! according to a pre-shared schedule, so the steganogram's in-packet
//! location keeps moving.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carriers::{self, CarrierConfig, CarrierError, CarrierMethodId};
use crate::core::{BitString, FlowId};
use crate::simnet::{NetError, Network, OvertPacket, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoppingSchedule {
    /// Ordered (method, packet budget) entries; budgets count
    /// steganogram-carrying packets, not ticks.
    pub entries: Vec<(CarrierMethodId, u64)>,
    /// When set, the schedule repeats from entry 0 after the last budget.
    pub cyclic: bool,
}

impl HoppingSchedule {
    pub fn single(method: CarrierMethodId) -> Self {
        HoppingSchedule {
            entries: vec![(method, 1)],
            cyclic: true,
        }
    }

    pub fn total_budget(&self) -> u64 {
        self.entries.iter().map(|(_, b)| b).sum()
    }

    pub fn validate(&self) -> Result<(), SghError> {
        if self.entries.is_empty() {
            return Err(SghError::EmptySchedule);
        }
        if self.entries.iter().any(|(_, b)| *b == 0) {
            return Err(SghError::ZeroBudget);
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SghError {
    #[error("hopping schedule has no entries")]
    EmptySchedule,
    #[error("hopping schedule entry has zero budget")]
    ZeroBudget,
    #[error("schedule exhausted at packet ordinal {0}")]
    ScheduleExhausted(u64),
    #[error(transparent)]
    Carrier(#[from] CarrierError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Method in effect for the packet with the given ordinal, by cumulative
/// budget lookup.
pub fn method_at(schedule: &HoppingSchedule, ordinal: u64) -> Result<CarrierMethodId, SghError> {
    schedule.validate()?;
    let total = schedule.total_budget();
    let pos = if schedule.cyclic {
        ordinal % total
    } else if ordinal >= total {
        return Err(SghError::ScheduleExhausted(ordinal));
    } else {
        ordinal
    };
    let mut cumulative = 0;
    for (method, budget) in &schedule.entries {
        cumulative += budget;
        if pos < cumulative {
            return Ok(*method);
        }
    }
    unreachable!("pos < total budget")
}

#[derive(Debug, Clone)]
pub struct HopRecord {
    pub ordinal: u64,
    pub method: CarrierMethodId,
    pub bits_consumed: usize,
}

/// Embeds `bits` over one flow, switching the carrier method per packet as
/// the schedule dictates. Packets are stamped with consecutive send times
/// starting at `start`.
pub fn hop_encode(
    bits: &BitString,
    schedule: &HoppingSchedule,
    flow: FlowId,
    cfg: &CarrierConfig,
    payload_len: u32,
    start: Tick,
    net: &mut Network,
) -> Result<Vec<HopRecord>, SghError> {
    schedule.validate()?;
    let protocol = net
        .flow(flow)
        .ok_or(NetError::UnknownFlow(flow))?
        .protocol;
    let mut records = Vec::new();
    let mut rest = bits.clone();
    let mut ordinal = 0u64;
    let mut t = start;
    while !rest.is_empty() {
        let method = method_at(schedule, ordinal)?;
        let template = OvertPacket::plain(flow, t, payload_len, protocol);
        let before = rest.len();
        let (packet, remaining) = carriers::embed(method, cfg, &rest, &template)?;
        net.send(flow, packet)?;
        records.push(HopRecord {
            ordinal,
            method,
            bits_consumed: before - remaining.len(),
        });
        rest = remaining;
        ordinal += 1;
        t += 1;
    }
    Ok(records)
}

/// Inverse of [`hop_encode`]: packets must arrive in the flow's send order
/// and `total_bits` is the agreed steganogram length.
pub fn hop_decode(
    packets: &[OvertPacket],
    schedule: &HoppingSchedule,
    cfg: &CarrierConfig,
    total_bits: usize,
) -> Result<BitString, SghError> {
    schedule.validate()?;
    let mut out = BitString::new();
    for (ordinal, packet) in packets.iter().enumerate() {
        if out.len() >= total_bits {
            break;
        }
        let method = method_at(schedule, ordinal as u64)?;
        let cap = carriers::capacity(method, cfg, packet)?;
        let n = cap.min(total_bits - out.len());
        out.extend(&carriers::extract_partial(method, cfg, packet, n)?);
    }
    Ok(out)
}

/// What a single-method extractor recovers from a hopped stream: for each
/// packet whose scheduled method coincides with `method`, the bits at that
/// packet's positions. Returns (bit positions, bits).
pub fn single_method_view(
    records: &[HopRecord],
    packets: &[OvertPacket],
    method: CarrierMethodId,
    cfg: &CarrierConfig,
) -> Result<(Vec<usize>, BitString), SghError> {
    let mut positions = Vec::new();
    let mut bits = BitString::new();
    let mut offset = 0usize;
    for (record, packet) in records.iter().zip(packets) {
        if record.method == method {
            let got = carriers::extract_partial(method, cfg, packet, record.bits_consumed)?;
            positions.extend(offset..offset + record.bits_consumed);
            bits.extend(&got);
        }
        offset += record.bits_consumed;
    }
    Ok((positions, bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::HostId;
    use crate::ips::CarrierProtocolTag;
    use crate::simnet::NetworkConfig;
    use proptest::prelude::*;

    fn three_method() -> HoppingSchedule {
        HoppingSchedule {
            entries: vec![
                (CarrierMethodId::MultiHoming, 5),
                (CarrierMethodId::MultiStreaming, 5),
                (CarrierMethodId::ChunkCount, 5),
            ],
            cyclic: true,
        }
    }

    #[test]
    fn method_at_first_entry() {
        assert_eq!(method_at(&three_method(), 0), Ok(CarrierMethodId::MultiHoming));
    }

    #[test]
    fn method_at_cumulative_lookup() {
        // 5 <= 7 < 10 lands in the second entry
        assert_eq!(method_at(&three_method(), 7), Ok(CarrierMethodId::MultiStreaming));
        assert_eq!(method_at(&three_method(), 14), Ok(CarrierMethodId::ChunkCount));
        // cyclic wrap
        assert_eq!(method_at(&three_method(), 15), Ok(CarrierMethodId::MultiHoming));
    }

    #[test]
    fn single_entry_is_constant() {
        let s = HoppingSchedule::single(CarrierMethodId::EthPadding);
        for ordinal in 0..100 {
            assert_eq!(method_at(&s, ordinal), Ok(CarrierMethodId::EthPadding));
        }
    }

    #[test]
    fn finite_schedule_exhausts() {
        let s = HoppingSchedule {
            entries: vec![(CarrierMethodId::MultiHoming, 3)],
            cyclic: false,
        };
        assert!(method_at(&s, 2).is_ok());
        assert_eq!(method_at(&s, 3), Err(SghError::ScheduleExhausted(3)));
    }

    fn net_with_flow() -> (Network, FlowId) {
        let mut net = Network::new(NetworkConfig::default());
        let f = net.open_flow(HostId(0), HostId(1), CarrierProtocolTag::Tcp, 4, 2);
        (net, f)
    }

    #[test]
    fn empty_bits_sends_nothing() {
        let (mut net, f) = net_with_flow();
        let records = hop_encode(
            &BitString::new(),
            &three_method(),
            f,
            &CarrierConfig::default(),
            40,
            0,
            &mut net,
        )
        .unwrap();
        assert!(records.is_empty());
        assert_eq!(net.sent, 0);
    }

    #[test]
    fn single_entry_schedule_matches_plain_embedding() {
        let bits = BitString::from_bytes(&[0xCA, 0xFE]);
        let cfg = CarrierConfig::default();
        let (mut net, f) = net_with_flow();
        hop_encode(
            &bits,
            &HoppingSchedule::single(CarrierMethodId::MultiStreaming),
            f,
            &cfg,
            40,
            0,
            &mut net,
        )
        .unwrap();
        let hopped: Vec<OvertPacket> = net.drain().into_iter().map(|d| d.packet).collect();

        let template = OvertPacket::plain(f, 0, 40, CarrierProtocolTag::Tcp);
        let plain =
            carriers::encode_stream(CarrierMethodId::MultiStreaming, &cfg, &bits, &template, 0)
                .unwrap();
        assert_eq!(hopped, plain);
    }

    #[test]
    fn wrong_single_method_recovers_only_its_scheduled_positions() {
        let bits = BitString::from_bytes(&[0xDE, 0xAD, 0xBE, 0xEF]);
        let cfg = CarrierConfig::default();
        let schedule = HoppingSchedule {
            entries: vec![
                (CarrierMethodId::MultiStreaming, 2),
                (CarrierMethodId::ChunkCount, 2),
            ],
            cyclic: true,
        };
        let (mut net, f) = net_with_flow();
        let records = hop_encode(&bits, &schedule, f, &cfg, 40, 0, &mut net).unwrap();
        let packets: Vec<OvertPacket> = net.drain().into_iter().map(|d| d.packet).collect();

        let (positions, got) =
            single_method_view(&records, &packets, CarrierMethodId::MultiStreaming, &cfg).unwrap();
        // independently compute the positions scheduled to MultiStreaming
        let mut expected_positions = Vec::new();
        let mut offset = 0;
        for r in &records {
            if r.method == CarrierMethodId::MultiStreaming {
                expected_positions.extend(offset..offset + r.bits_consumed);
            }
            offset += r.bits_consumed;
        }
        assert_eq!(positions, expected_positions);
        for (i, &pos) in positions.iter().enumerate() {
            assert_eq!(got.bit(i), bits.bit(pos));
        }
        // and it recovers strictly less than everything
        assert!(positions.len() < bits.len());
    }

    proptest! {
        #[test]
        fn hop_round_trip(bytes in proptest::collection::vec(any::<u8>(), 1..16)) {
            let bits = BitString::from_bytes(&bytes);
            let cfg = CarrierConfig::default();
            let (mut net, f) = net_with_flow();
            hop_encode(&bits, &three_method(), f, &cfg, 40, 0, &mut net).unwrap();
            let packets: Vec<OvertPacket> = net.drain().into_iter().map(|d| d.packet).collect();
            let got = hop_decode(&packets, &three_method(), &cfg, bits.len()).unwrap();
            prop_assert_eq!(got, bits);
        }
    }
}
