//! Embed/extract codecs for the five simulated carrier methods.
//!
//! Each codec maps steganogram bits into one designated field group of an
//! [`OvertPacket`] and back. Index-valued carriers (stream, address, chunk
//! count) use direct binary indexing: the next log2(S) bits select the
//! index, so stream/address/chunk-count spaces are restricted to powers of
//! two. Codecs never touch fields outside their designated group.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::BitString;
use crate::simnet::OvertPacket;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CarrierMethodId {
    /// Destination address index of a multi-homed association carries bits.
    MultiHoming,
    /// Stream index of a multi-streaming association carries bits.
    MultiStreaming,
    /// Number of chunks bundled in one packet carries bits.
    ChunkCount,
    /// Frame padding bytes below the minimum payload size carry bits.
    EthPadding,
    /// A flagged retransmission carries bits in place of user data.
    RetransPayload,
}

impl CarrierMethodId {
    pub const ALL: [CarrierMethodId; 5] = [
        CarrierMethodId::MultiHoming,
        CarrierMethodId::MultiStreaming,
        CarrierMethodId::ChunkCount,
        CarrierMethodId::EthPadding,
        CarrierMethodId::RetransPayload,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CarrierMethodId::MultiHoming => "multi_homing",
            CarrierMethodId::MultiStreaming => "multi_streaming",
            CarrierMethodId::ChunkCount => "chunk_count",
            CarrierMethodId::EthPadding => "eth_padding",
            CarrierMethodId::RetransPayload => "retrans_payload",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarrierConfig {
    /// Stream count S; power of two.
    pub stream_count: u32,
    /// Address count A; power of two.
    pub address_count: u32,
    /// Maximum chunk count C; power of two. Encoded value is index + 1.
    pub max_chunk_count: u32,
    /// Minimum payload size below which frames are padded.
    pub min_payload_bytes: u32,
    /// Bits carried by one covert retransmission.
    pub retrans_payload_bits: u32,
}

impl Default for CarrierConfig {
    fn default() -> Self {
        CarrierConfig {
            stream_count: 4,
            address_count: 2,
            max_chunk_count: 4,
            min_payload_bytes: 46,
            retrans_payload_bits: 32,
        }
    }
}

impl CarrierConfig {
    pub fn validate(&self) -> Result<(), CarrierError> {
        for (name, v) in [
            ("stream_count", self.stream_count),
            ("address_count", self.address_count),
            ("max_chunk_count", self.max_chunk_count),
        ] {
            if v == 0 || !v.is_power_of_two() {
                return Err(CarrierError::BadConfig {
                    field: name,
                    value: v,
                });
            }
        }
        if self.min_payload_bytes == 0 {
            return Err(CarrierError::BadConfig {
                field: "min_payload_bytes",
                value: 0,
            });
        }
        if self.retrans_payload_bits == 0 {
            return Err(CarrierError::BadConfig {
                field: "retrans_payload_bits",
                value: 0,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CarrierError {
    #[error("no capacity for {method:?} on this packet")]
    NoCapacity { method: CarrierMethodId },
    #[error("packet is not a {method:?} carrier")]
    NotACarrier { method: CarrierMethodId },
    #[error("carrier config field {field} has invalid value {value}")]
    BadConfig { field: &'static str, value: u32 },
}

fn log2(v: u32) -> usize {
    debug_assert!(v.is_power_of_two());
    v.trailing_zeros() as usize
}

/// Bits one packet can carry under the given method.
pub fn capacity(
    method: CarrierMethodId,
    cfg: &CarrierConfig,
    template: &OvertPacket,
) -> Result<usize, CarrierError> {
    let bits = match method {
        CarrierMethodId::MultiStreaming => log2(cfg.stream_count),
        CarrierMethodId::MultiHoming => log2(cfg.address_count),
        CarrierMethodId::ChunkCount => log2(cfg.max_chunk_count),
        CarrierMethodId::EthPadding => {
            if template.payload_len >= cfg.min_payload_bytes {
                return Err(CarrierError::NoCapacity { method });
            }
            8 * (cfg.min_payload_bytes - template.payload_len) as usize
        }
        CarrierMethodId::RetransPayload => cfg.retrans_payload_bits as usize,
    };
    Ok(bits)
}

/// Embeds up to `capacity` bits into a copy of `template`, returning the
/// modified packet and the unconsumed remainder.
pub fn embed(
    method: CarrierMethodId,
    cfg: &CarrierConfig,
    bits: &BitString,
    template: &OvertPacket,
) -> Result<(OvertPacket, BitString), CarrierError> {
    let cap = capacity(method, cfg, template)?;
    if cap == 0 {
        return Err(CarrierError::NoCapacity { method });
    }
    let n = cap.min(bits.len());
    let (taken, rest) = bits.take(n).expect("n <= len");
    let mut packet = template.clone();
    match method {
        CarrierMethodId::MultiStreaming => packet.stream = taken.to_value() as u32,
        CarrierMethodId::MultiHoming => packet.dest_address = taken.to_value() as u32,
        CarrierMethodId::ChunkCount => packet.chunk_count = taken.to_value() as u32 + 1,
        CarrierMethodId::EthPadding => {
            // Padding size is fixed by the frame; a short final byte is
            // zero-filled. The true bit length travels in the fragment header.
            let pad_bytes = (cfg.min_payload_bytes - template.payload_len) as usize;
            let mut padded = taken.clone();
            while padded.len() < pad_bytes * 8 {
                padded.push(false);
            }
            packet.padding = padded.to_bytes().expect("octet aligned by fill");
        }
        CarrierMethodId::RetransPayload => {
            packet.retransmitted = true;
            packet.payload_bits = taken.clone();
        }
    }
    Ok((packet, rest))
}

/// Reads the carrier field back out.
///
/// Index-valued carriers return the full field width (log2 of the space);
/// padding returns every padding bit including the zero fill. When the
/// embedder consumed fewer bits than the field width, use
/// [`extract_partial`] with the known residual count.
pub fn extract(
    method: CarrierMethodId,
    cfg: &CarrierConfig,
    packet: &OvertPacket,
) -> Result<BitString, CarrierError> {
    match method {
        CarrierMethodId::MultiStreaming => Ok(BitString::from_value(
            packet.stream as u64,
            log2(cfg.stream_count),
        )),
        CarrierMethodId::MultiHoming => Ok(BitString::from_value(
            packet.dest_address as u64,
            log2(cfg.address_count),
        )),
        CarrierMethodId::ChunkCount => {
            if packet.chunk_count == 0 || packet.chunk_count > cfg.max_chunk_count {
                return Err(CarrierError::NotACarrier { method });
            }
            Ok(BitString::from_value(
                packet.chunk_count as u64 - 1,
                log2(cfg.max_chunk_count),
            ))
        }
        CarrierMethodId::EthPadding => {
            if packet.padding.is_empty() {
                return Err(CarrierError::NotACarrier { method });
            }
            Ok(BitString::from_bytes(&packet.padding))
        }
        CarrierMethodId::RetransPayload => {
            if !packet.retransmitted {
                return Err(CarrierError::NotACarrier { method });
            }
            Ok(packet.payload_bits.clone())
        }
    }
}

/// Extracts exactly `nbits` from a packet whose embedder consumed `nbits`.
///
/// For index-valued carriers a short final consumption encodes its value in
/// the low bits of the field, so the residual bits are the suffix of the
/// full-width extraction. Padding fills from the front, so its residual is a
/// prefix. The retransmission carrier stores the exact bits.
pub fn extract_partial(
    method: CarrierMethodId,
    cfg: &CarrierConfig,
    packet: &OvertPacket,
    nbits: usize,
) -> Result<BitString, CarrierError> {
    let full = extract(method, cfg, packet)?;
    let out = match method {
        CarrierMethodId::MultiStreaming
        | CarrierMethodId::MultiHoming
        | CarrierMethodId::ChunkCount => full.suffix(nbits),
        CarrierMethodId::EthPadding | CarrierMethodId::RetransPayload => full.prefix(nbits),
    };
    Ok(out)
}

/// Embeds a whole bit string across as many packets as it takes, stamping
/// send times `start, start+1, ...`. Returns the carrier packets.
pub fn encode_stream(
    method: CarrierMethodId,
    cfg: &CarrierConfig,
    bits: &BitString,
    template: &OvertPacket,
    start: crate::simnet::Tick,
) -> Result<Vec<OvertPacket>, CarrierError> {
    let mut packets = Vec::new();
    let mut rest = bits.clone();
    let mut t = start;
    while !rest.is_empty() {
        let mut tpl = template.clone();
        tpl.send_time = t;
        let (pkt, remaining) = embed(method, cfg, &rest, &tpl)?;
        packets.push(pkt);
        rest = remaining;
        t += 1;
    }
    Ok(packets)
}

/// Inverse of [`encode_stream`] given the original bit count.
pub fn decode_stream(
    method: CarrierMethodId,
    cfg: &CarrierConfig,
    packets: &[OvertPacket],
    total_bits: usize,
) -> Result<BitString, CarrierError> {
    let mut out = BitString::new();
    for packet in packets {
        if out.len() >= total_bits {
            break;
        }
        let want = total_bits - out.len();
        let cap = capacity(method, cfg, packet)?;
        let n = cap.min(want);
        out.extend(&extract_partial(method, cfg, packet, n)?);
    }
    Ok(out)
}
