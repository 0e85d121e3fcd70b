//! Scenario configuration: one JSON document describing the network, the
//! flows, the steganogram, the technique stack, and the detector set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carriers::{CarrierConfig, CarrierMethodId};
use crate::cmc::AnomalyKind;
use crate::core::BitString;
use crate::ips::{CarrierProtocolTag, HopKey};
use crate::sgh::HoppingSchedule;
use crate::sgs::OrderingStrategy;
use crate::simnet::{NetworkConfig, Tick};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowSpec {
    pub src: u32,
    pub dst: u32,
    pub protocol: CarrierProtocolTag,
    #[serde(default = "one")]
    pub stream_count: u32,
    #[serde(default = "one")]
    pub address_count: u32,
}

fn one() -> u32 {
    1
}

/// Bits given literally as hex or drawn from a seeded generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BitSpec {
    Hex { hex: String },
    Random { random_bits: usize, seed: u64 },
}

impl BitSpec {
    pub fn materialize(&self) -> Result<BitString, ConfigError> {
        match self {
            BitSpec::Hex { hex } => {
                let bytes = hex::decode(hex)
                    .map_err(|e| invalid("steganogram.hex", e.to_string()))?;
                Ok(BitString::from_bytes(&bytes))
            }
            BitSpec::Random { random_bits, seed } => {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                Ok(BitString::random(&mut rng, *random_bits))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// Index into the scenario's flow list.
    pub flow: usize,
    pub method: CarrierMethodId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgsConfig {
    pub strategy: OrderingStrategy,
    pub k: usize,
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub redundancy: BTreeMap<usize, usize>,
    #[serde(default)]
    pub stagger: Tick,
    #[serde(default)]
    pub epoch: Tick,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmcConfig {
    /// Rate-reduction gate probability; both ends derive the gate sequence
    /// from `gate_seed`, which is how the receiver distinguishes clean
    /// packets for carriers that would otherwise decode on every packet.
    pub rate_reduction_p: Option<f64>,
    #[serde(default)]
    pub gate_seed: u64,
    /// Cap the carrier's anomaly rate at the network's natural one.
    pub anomaly_ride: Option<AnomalyKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IpsConfig {
    pub key_hex: String,
}

impl IpsConfig {
    pub fn key(&self) -> Result<HopKey, ConfigError> {
        HopKey::from_hex(&self.key_hex)
            .map_err(|e| invalid("techniques.ips.key_hex", e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlsConfig {
    pub slot_ticks: Tick,
    #[serde(default)]
    pub epoch: Tick,
    pub lower_bits: BitSpec,
    #[serde(default)]
    pub overt_filler: bool,
}

/// Ordered technique stack; composition order is fixed SGS, SGH, CMC, IPS,
/// MLS from outermost to innermost.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TechniqueStack {
    #[serde(default)]
    pub sgs: Option<SgsConfig>,
    #[serde(default)]
    pub sgh: Option<HoppingSchedule>,
    #[serde(default)]
    pub cmc: Option<CmcConfig>,
    #[serde(default)]
    pub ips: Option<IpsConfig>,
    #[serde(default)]
    pub mls: Option<MlsConfig>,
}

impl TechniqueStack {
    pub fn is_empty(&self) -> bool {
        self.sgs.is_none()
            && self.sgh.is_none()
            && self.cmc.is_none()
            && self.ips.is_none()
            && self.mls.is_none()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    StreamUsage { baseline: Vec<f64> },
    AddressUsage { baseline: Vec<f64> },
    ChunkUsage { baseline: Vec<f64> },
    RetransmissionRate,
    PaddingRate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HostCounts {
    pub senders: usize,
    pub receivers: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub network: NetworkConfig,
    pub hosts: HostCounts,
    pub flows: Vec<FlowSpec>,
    pub carrier: CarrierConfig,
    /// Overt payload size of carrier packets.
    pub payload_len: u32,
    pub steganogram: BitSpec,
    /// Carrier method used by the naive baseline run (and by the hidden run
    /// when no hopping schedule is given).
    pub naive_method: CarrierMethodId,
    #[serde(default)]
    pub techniques: TechniqueStack,
    #[serde(default)]
    pub detectors: Vec<DetectorSpec>,
    /// Seed count; run r uses seed network.seed + r.
    #[serde(default = "one_rep")]
    pub repetitions: usize,
}

fn one_rep() -> usize {
    1
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.carrier
            .validate()
            .map_err(|e| invalid("carrier", e.to_string()))?;
        if self.flows.is_empty() {
            return Err(invalid("flows", "at least one flow is required"));
        }
        if self.hosts.senders == 0 || self.hosts.receivers == 0 {
            return Err(invalid("hosts", "sender and receiver counts must be positive"));
        }
        for (i, f) in self.flows.iter().enumerate() {
            if f.src as usize >= self.hosts.senders {
                return Err(invalid(
                    &format!("flows[{i}].src"),
                    format!("host {} out of range (senders = {})", f.src, self.hosts.senders),
                ));
            }
            if f.dst as usize >= self.hosts.receivers {
                return Err(invalid(
                    &format!("flows[{i}].dst"),
                    format!("host {} out of range (receivers = {})", f.dst, self.hosts.receivers),
                ));
            }
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.network.loss_probability) {
            return Err(invalid("network.loss_probability", "must lie in [0, 1]"));
        }
        self.steganogram.materialize()?;

        let t = &self.techniques;
        if let Some(sgs) = &t.sgs {
            if sgs.k == 0 {
                return Err(invalid("techniques.sgs.k", "must be at least 1"));
            }
            if sgs.channels.is_empty() {
                return Err(invalid("techniques.sgs.channels", "must not be empty"));
            }
            for (i, ch) in sgs.channels.iter().enumerate() {
                if ch.flow >= self.flows.len() {
                    return Err(invalid(
                        &format!("techniques.sgs.channels[{i}].flow"),
                        format!("flow index {} out of range", ch.flow),
                    ));
                }
            }
            if t.sgh.is_some() || t.cmc.is_some() || t.ips.is_some() || t.mls.is_some() {
                return Err(invalid(
                    "techniques",
                    "scattering composes with per-channel methods only; \
                     drop the other techniques or drop sgs",
                ));
            }
        }
        if let Some(schedule) = &t.sgh {
            schedule
                .validate()
                .map_err(|e| invalid("techniques.sgh", e.to_string()))?;
        }
        if let Some(cmc) = &t.cmc {
            if let Some(p) = cmc.rate_reduction_p {
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid("techniques.cmc.rate_reduction_p", "must lie in [0, 1]"));
                }
            }
        }
        if let Some(ips) = &t.ips {
            ips.key()?;
            let eth_only = match &t.sgh {
                Some(s) => s
                    .entries
                    .iter()
                    .all(|(m, _)| *m == CarrierMethodId::EthPadding),
                None => self.naive_method == CarrierMethodId::EthPadding,
            };
            if !eth_only {
                return Err(invalid(
                    "techniques.ips",
                    "carrier-protocol hopping rides the frame-padding carrier; \
                     use eth_padding as the method",
                ));
            }
        }
        if let Some(mls) = &t.mls {
            if mls.slot_ticks == 0 {
                return Err(invalid("techniques.mls.slot_ticks", "must be at least 1"));
            }
            mls.lower_bits.materialize()?;
            if t.cmc.is_some() {
                return Err(invalid(
                    "techniques",
                    "mls and cmc cannot be combined; gating would erase the slot channel",
                ));
            }
        }

        for (i, d) in self.detectors.iter().enumerate() {
            let check_baseline = |baseline: &Vec<f64>, expected_len: usize, name: &str| {
                if baseline.len() != expected_len {
                    return Err(invalid(
                        &format!("detectors[{i}].baseline"),
                        format!("{name} baseline needs {expected_len} weights, got {}", baseline.len()),
                    ));
                }
                let sum: f64 = baseline.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(invalid(
                        &format!("detectors[{i}].baseline"),
                        format!("weights sum to {sum}, want 1"),
                    ));
                }
                Ok(())
            };
            match d {
                DetectorSpec::StreamUsage { baseline } => {
                    check_baseline(baseline, self.carrier.stream_count as usize, "stream")?
                }
                DetectorSpec::AddressUsage { baseline } => {
                    check_baseline(baseline, self.carrier.address_count as usize, "address")?
                }
                DetectorSpec::ChunkUsage { baseline } => {
                    check_baseline(baseline, self.carrier.max_chunk_count as usize, "chunk")?
                }
                DetectorSpec::RetransmissionRate | DetectorSpec::PaddingRate => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "network": {
                "seed": 1, "loss_probability": 0.0, "reorder_window": 0,
                "base_delay": 0, "natural_retransmission_rate": 0.02,
                "natural_padding_rate": 0.05
            },
            "hosts": {"senders": 1, "receivers": 1},
            "flows": [{"src": 0, "dst": 0, "protocol": "Tcp", "stream_count": 4, "address_count": 2}],
            "carrier": {
                "stream_count": 4, "address_count": 2, "max_chunk_count": 4,
                "min_payload_bytes": 46, "retrans_payload_bits": 32
            },
            "payload_len": 40,
            "steganogram": {"hex": "a5a5"},
            "naive_method": "MultiStreaming",
            "repetitions": 2
        })
    }

    #[test]
    fn minimal_scenario_parses() {
        let s = Scenario::from_json(&minimal_json().to_string()).unwrap();
        assert_eq!(s.repetitions, 2);
        assert!(s.techniques.is_empty());
    }

    #[test]
    fn bad_flow_host_reported_with_path() {
        let mut v = minimal_json();
        v["flows"][0]["src"] = serde_json::json!(5);
        let err = Scenario::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("flows[0].src"), "{err}");
    }

    #[test]
    fn non_power_of_two_carrier_rejected() {
        let mut v = minimal_json();
        v["carrier"]["stream_count"] = serde_json::json!(3);
        assert!(Scenario::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn sgs_channel_out_of_range_rejected() {
        let mut v = minimal_json();
        v["techniques"] = serde_json::json!({
            "sgs": {
                "strategy": "PositionalHeader", "k": 2,
                "channels": [
                    {"flow": 0, "method": "MultiStreaming"},
                    {"flow": 3, "method": "MultiStreaming"}
                ]
            }
        });
        let err = Scenario::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("channels[1]"), "{err}");
    }

    #[test]
    fn ips_requires_padding_carrier() {
        let mut v = minimal_json();
        v["techniques"] = serde_json::json!({"ips": {"key_hex": "00ff"}});
        assert!(Scenario::from_json(&v.to_string()).is_err());
        v["naive_method"] = serde_json::json!("EthPadding");
        assert!(Scenario::from_json(&v.to_string()).is_ok());
    }

    #[test]
    fn random_steganogram_is_seed_stable() {
        let spec = BitSpec::Random {
            random_bits: 64,
            seed: 9,
        };
        assert_eq!(spec.materialize().unwrap(), spec.materialize().unwrap());
        assert_eq!(spec.materialize().unwrap().len(), 64);
    }
}
