//! Inter-protocol steganography: the frame-padding channel gated by an
//! upper-layer carrier protocol, with keyed carrier-protocol hopping.
//!
//! Only frames whose protocol tag matches the keyed hop sequence count as
//! carriers; everything else is skipped without advancing the hop counter,
//! so decoy traffic cannot desynchronize the channel.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::carriers::{self, CarrierConfig, CarrierError, CarrierMethodId};
use crate::core::BitString;
use crate::simnet::OvertPacket;

/// Upper-layer protocols that cause short frames to be padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CarrierProtocolTag {
    Arp,
    Tcp,
    Udp,
    Icmp,
}

impl CarrierProtocolTag {
    pub const ALL: [CarrierProtocolTag; 4] = [
        CarrierProtocolTag::Arp,
        CarrierProtocolTag::Tcp,
        CarrierProtocolTag::Udp,
        CarrierProtocolTag::Icmp,
    ];
}

/// Shared secret steering the carrier-protocol hop sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopKey(pub Vec<u8>);

impl HopKey {
    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        Ok(HopKey(hex::decode(s)?))
    }
}

/// Deterministic keyed selection of the carrier protocol for hop `ordinal`.
/// Uniform over the four tags for long sequences.
pub fn carrier_protocol_at(key: &HopKey, ordinal: u64) -> CarrierProtocolTag {
    let mut hasher = Sha256::new();
    hasher.update(&key.0);
    hasher.update(ordinal.to_le_bytes());
    let digest = hasher.finalize();
    CarrierProtocolTag::ALL[(digest[0] & 0x03) as usize]
}

/// Embeds bits into the padding of a short frame and stamps it with the
/// hop-selected protocol tag.
pub fn ips_embed(
    bits: &BitString,
    key: &HopKey,
    ordinal: u64,
    cfg: &CarrierConfig,
    frame_template: &OvertPacket,
) -> Result<(OvertPacket, BitString), CarrierError> {
    let (mut frame, rest) = carriers::embed(CarrierMethodId::EthPadding, cfg, bits, frame_template)?;
    frame.protocol = carrier_protocol_at(key, ordinal);
    Ok((frame, rest))
}

/// Receiver-side hop state: the ordinal counter plus accumulated bits.
#[derive(Debug, Clone)]
pub struct IpsExtractor {
    key: HopKey,
    counter: u64,
    bits: BitString,
}

impl IpsExtractor {
    pub fn new(key: HopKey) -> Self {
        IpsExtractor {
            key,
            counter: 0,
            bits: BitString::new(),
        }
    }

    /// Examines one frame in delivery order. A frame whose protocol does not
    /// match the expected hop tag is skipped and the counter stays put.
    /// Returns true if the frame was consumed as a carrier.
    pub fn observe(&mut self, cfg: &CarrierConfig, frame: &OvertPacket) -> bool {
        if frame.protocol != carrier_protocol_at(&self.key, self.counter) {
            return false;
        }
        match carriers::extract(CarrierMethodId::EthPadding, cfg, frame) {
            Ok(extracted) => {
                self.bits.extend(&extracted);
                self.counter += 1;
                true
            }
            Err(_) => false,
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// All bits recovered so far, truncated to `total_bits` when the true
    /// steganogram length is known (padding is zero-filled past it).
    pub fn bits(&self, total_bits: Option<usize>) -> BitString {
        match total_bits {
            Some(n) => self.bits.prefix(n),
            None => self.bits.clone(),
        }
    }
}
