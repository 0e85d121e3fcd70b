//! Multi-level steganography: a lower-level channel encoded in whether the
//! upper-level method emits a steganogram-carrying packet within each fixed
//! time slot. A packet in slot i means lower bit 1, silence means 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carriers::{self, CarrierConfig, CarrierError, CarrierMethodId};
use crate::core::{BitString, FlowId};
use crate::sgh::{self, HoppingSchedule, SghError};
use crate::simnet::{Delivered, NetError, Network, OvertPacket, Tick};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum UpperMethod {
    Single(CarrierMethodId),
    Hopping(HoppingSchedule),
}

impl UpperMethod {
    fn method_at(&self, stego_ordinal: u64) -> Result<CarrierMethodId, SghError> {
        match self {
            UpperMethod::Single(m) => Ok(*m),
            UpperMethod::Hopping(schedule) => sgh::method_at(schedule, stego_ordinal),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlsStack {
    pub upper: UpperMethod,
    /// Slot width T in ticks; lower bit i owns [epoch + iT, epoch + (i+1)T).
    pub slot_ticks: Tick,
    pub epoch: Tick,
    /// Emit a plain overt packet in every 0-slot. Only allowed when the
    /// upper method is distinguishable from clean traffic (retransmission or
    /// padding carriers); index-valued carriers decode on every packet.
    #[serde(default)]
    pub overt_filler: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MlsError {
    #[error("slot {slot} needs upper bits but none remain")]
    UpperBitsExhausted { slot: usize },
    #[error("overt filler requires a carrier distinguishable from clean traffic")]
    FillerUnsupported,
    #[error("slot_ticks must be at least 1")]
    ZeroSlot,
    #[error(transparent)]
    Carrier(#[from] CarrierError),
    #[error(transparent)]
    Hop(#[from] SghError),
    #[error(transparent)]
    Net(#[from] NetError),
}

fn filler_compatible(upper: &UpperMethod) -> bool {
    let distinguishable = |m: CarrierMethodId| {
        matches!(
            m,
            CarrierMethodId::RetransPayload | CarrierMethodId::EthPadding
        )
    };
    match upper {
        UpperMethod::Single(m) => distinguishable(*m),
        UpperMethod::Hopping(s) => s.entries.iter().all(|(m, _)| distinguishable(*m)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlsRunReport {
    pub slot_count: usize,
    pub slot_ticks: Tick,
    pub lower_ones: usize,
    pub upper_bits_sent: usize,
    pub overt_bits_sent: u64,
    pub upper_bits_remaining: usize,
}

impl MlsRunReport {
    pub fn horizon_ticks(&self) -> Tick {
        self.slot_count as Tick * self.slot_ticks
    }
}

/// Overt, upper, and lower steganographic bandwidth in bits per tick.
/// Lower-level bits conveyed are the 1-slots (an upper-stego packet present).
pub fn mls_bandwidths(report: &MlsRunReport) -> (f64, f64, f64) {
    let horizon = report.horizon_ticks() as f64;
    if horizon == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    (
        report.overt_bits_sent as f64 / horizon,
        report.upper_bits_sent as f64 / horizon,
        report.lower_ones as f64 / horizon,
    )
}

/// Encodes both levels onto one flow. Each 1-slot carries exactly one
/// upper-stego packet placed at slot start + T/4 (guard band against
/// jitter); 0-slots stay silent apart from optional overt filler.
pub fn mls_encode(
    upper_bits: &BitString,
    lower_bits: &BitString,
    stack: &MlsStack,
    flow: FlowId,
    cfg: &CarrierConfig,
    payload_len: u32,
    net: &mut Network,
) -> Result<MlsRunReport, MlsError> {
    if stack.slot_ticks == 0 {
        return Err(MlsError::ZeroSlot);
    }
    if stack.overt_filler && !filler_compatible(&stack.upper) {
        return Err(MlsError::FillerUnsupported);
    }
    let protocol = net.flow(flow).ok_or(NetError::UnknownFlow(flow))?.protocol;
    let guard = stack.slot_ticks / 4;

    let mut rest = upper_bits.clone();
    let mut stego_ordinal = 0u64;
    let mut upper_sent = 0usize;
    let mut overt_bits = 0u64;
    let mut ones = 0usize;

    for (slot, lower_bit) in lower_bits.iter().enumerate() {
        let t = stack.epoch + slot as Tick * stack.slot_ticks + guard;
        if lower_bit {
            if rest.is_empty() {
                return Err(MlsError::UpperBitsExhausted { slot });
            }
            let method = stack.upper.method_at(stego_ordinal)?;
            let template = OvertPacket::plain(flow, t, payload_len, protocol);
            let before = rest.len();
            let (packet, remaining) = carriers::embed(method, cfg, &rest, &template)?;
            overt_bits += packet.payload_len as u64 * 8;
            net.send(flow, packet)?;
            upper_sent += before - remaining.len();
            rest = remaining;
            stego_ordinal += 1;
            ones += 1;
        } else if stack.overt_filler {
            // Clean packet: payload at least the padding minimum, so no
            // padding and no retransmission flag.
            let filler = OvertPacket::plain(
                flow,
                t,
                payload_len.max(cfg.min_payload_bytes),
                protocol,
            );
            overt_bits += filler.payload_len as u64 * 8;
            net.send(flow, filler)?;
        }
    }

    Ok(MlsRunReport {
        slot_count: lower_bits.len(),
        slot_ticks: stack.slot_ticks,
        lower_ones: ones,
        upper_bits_sent: upper_sent,
        overt_bits_sent: overt_bits,
        upper_bits_remaining: rest.len(),
    })
}

/// Decodes both levels from delivered packets.
///
/// `delay_offset` is the network's base propagation delay; slot membership
/// is judged on delivery time minus that offset, so only jitter can move a
/// packet between slots. `slot_count` and `upper_total_bits` are part of the
/// shared plan; silence past the horizon is never decoded.
pub fn mls_decode(
    delivered: &[Delivered],
    stack: &MlsStack,
    cfg: &CarrierConfig,
    slot_count: usize,
    upper_total_bits: usize,
    delay_offset: Tick,
) -> Result<(BitString, BitString), MlsError> {
    if stack.slot_ticks == 0 {
        return Err(MlsError::ZeroSlot);
    }
    let mut ordered: Vec<&Delivered> = delivered.iter().collect();
    ordered.sort_by_key(|d| (d.delivery_time, d.send_seq));

    let mut lower = vec![false; slot_count];
    let mut upper = BitString::new();
    let mut stego_ordinal = 0u64;

    for d in ordered {
        let arrival = d.delivery_time.saturating_sub(delay_offset);
        if arrival < stack.epoch {
            continue;
        }
        let slot = ((arrival - stack.epoch) / stack.slot_ticks) as usize;
        if slot >= slot_count {
            continue;
        }
        // Classify: does this packet decode under the upper method? The
        // lower level depends entirely on that classification.
        let method = match stack.upper.method_at(stego_ordinal) {
            Ok(m) => m,
            Err(_) => break,
        };
        let cap = match carriers::capacity(method, cfg, &d.packet) {
            Ok(c) => c,
            Err(_) => continue, // not an upper-stego packet
        };
        let want = upper_total_bits.saturating_sub(upper.len());
        let n = cap.min(want);
        match carriers::extract_partial(method, cfg, &d.packet, n) {
            Ok(bits) => {
                lower[slot] = true;
                upper.extend(&bits);
                stego_ordinal += 1;
            }
            Err(_) => continue,
        }
    }

    let mut lower_bits = BitString::new();
    for b in lower {
        lower_bits.push(b);
    }
    Ok((upper, lower_bits))
}
