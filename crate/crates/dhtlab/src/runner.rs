//! Experiment runner: executes a scenario as paired seeded simulations,
//! one naive and one with the technique stack applied, and scores both with
//! the configured detectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::carriers::{self, CarrierError, CarrierMethodId};
use crate::cmc;
use crate::config::{CmcConfig, ConfigError, DetectorSpec, Scenario, TechniqueStack};
use crate::core::{BitString, FlowId, HostId, Steganogram};
use crate::ips::{self, HopKey, IpsExtractor};
use crate::mls::{self, MlsError, MlsStack, UpperMethod};
use crate::sgh::{self, HoppingSchedule, SghError};
use crate::sgs::{self, ScatterPlan, SgsError};
use crate::simnet::{Delivered, NetError, Network, NetworkConfig, OvertPacket};
use crate::steganalysis::{self, DetectorReport, StegError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Carrier(#[from] CarrierError),
    #[error(transparent)]
    Sgs(#[from] SgsError),
    #[error(transparent)]
    Sgh(#[from] SghError),
    #[error(transparent)]
    Mls(#[from] MlsError),
    #[error(transparent)]
    Detector(#[from] StegError),
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub recovered: bool,
    pub overt_bps: f64,
    pub upper_bps: f64,
    pub lower_bps: f64,
    pub detectors: Vec<DetectorReport>,
    /// Max over detectors of the hidden/naive statistic ratio.
    pub detectability_score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub seeds: Vec<SeedReport>,
}

/// One finished simulation: what the wire saw and what the receiver decoded.
pub struct Trace {
    pub delivered: Vec<Delivered>,
    pub decoded: Option<BitString>,
    pub sent_packets: u64,
    pub overt_bits_sent: u64,
    pub upper_bits_sent: usize,
    pub lower_ones: usize,
    pub horizon: u64,
}

/// Per-opportunity embed gate replayed identically by sender and receiver.
struct GateStream {
    rng: ChaCha8Rng,
    p: f64,
}

impl GateStream {
    fn new(p: f64, seed: u64) -> Self {
        GateStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            p,
        }
    }

    fn next(&mut self) -> bool {
        match self.p {
            p if p >= 1.0 => true,
            p if p <= 0.0 => false,
            p => self.rng.gen::<f64>() < p,
        }
    }
}

fn effective_gate(cmc_cfg: Option<&CmcConfig>, net_cfg: &NetworkConfig) -> Option<(f64, u64)> {
    let cmc_cfg = cmc_cfg?;
    let requested = cmc_cfg.rate_reduction_p.unwrap_or(1.0);
    let p = match cmc_cfg.anomaly_ride {
        Some(cmc::AnomalyKind::Retransmission) => {
            cmc::ride(requested, net_cfg.natural_retransmission_rate)
        }
        Some(cmc::AnomalyKind::Padding) => cmc::ride(requested, net_cfg.natural_padding_rate),
        None => requested,
    };
    if p >= 1.0 && cmc_cfg.anomaly_ride.is_none() && cmc_cfg.rate_reduction_p.is_none() {
        None
    } else {
        Some((p, cmc_cfg.gate_seed))
    }
}

fn open_flows(scenario: &Scenario, net: &mut Network) -> Vec<FlowId> {
    scenario
        .flows
        .iter()
        .map(|f| {
            net.open_flow(
                HostId(f.src),
                // receiver host ids live after the sender ids
                HostId(scenario.hosts.senders as u32 + f.dst),
                f.protocol,
                f.stream_count,
                f.address_count,
            )
        })
        .collect()
}

/// Runs one seeded simulation of the scenario with the given technique
/// stack (pass an empty stack for the naive baseline).
pub fn execute(
    scenario: &Scenario,
    stack: &TechniqueStack,
    seed: u64,
) -> Result<Trace, RunError> {
    let payload = scenario.steganogram.materialize()?;
    let net_cfg = NetworkConfig {
        seed,
        ..scenario.network.clone()
    };
    let mut net = Network::new(net_cfg.clone());
    let flows = open_flows(scenario, &mut net);
    let cfg = &scenario.carrier;

    if let Some(sgs_cfg) = &stack.sgs {
        let steg = Steganogram::new(0, payload.clone());
        let fragments = sgs::split(&steg, sgs_cfg.k);
        let plan = ScatterPlan {
            strategy: sgs_cfg.strategy,
            k: sgs_cfg.k,
            channels: sgs_cfg
                .channels
                .iter()
                .map(|c| (flows[c.flow], c.method))
                .collect(),
            redundancy: sgs_cfg.redundancy.clone(),
            stagger: sgs_cfg.stagger,
            epoch: sgs_cfg.epoch,
        };
        sgs::scatter_send(&fragments, &plan, cfg, scenario.payload_len, &mut net)?;
        let sent_packets = net.sent;
        let delivered = net.drain();
        let decoded = sgs::reassemble(&delivered, &plan, cfg, payload.len(), steg.id)
            .ok()
            .map(|s| s.payload);
        let overt_bits: u64 = delivered.iter().map(|d| d.packet.payload_len as u64 * 8).sum();
        return Ok(Trace {
            horizon: net.clock().max(1),
            decoded,
            sent_packets,
            overt_bits_sent: overt_bits,
            upper_bits_sent: payload.len(),
            lower_ones: 0,
            delivered,
        });
    }

    if let Some(mls_cfg) = &stack.mls {
        let upper = match &stack.sgh {
            Some(schedule) => UpperMethod::Hopping(schedule.clone()),
            None => UpperMethod::Single(scenario.naive_method),
        };
        let mls_stack = MlsStack {
            upper,
            slot_ticks: mls_cfg.slot_ticks,
            epoch: mls_cfg.epoch,
            overt_filler: mls_cfg.overt_filler,
        };
        let lower = mls_cfg.lower_bits.materialize()?;
        let report = mls::mls_encode(
            &payload,
            &lower,
            &mls_stack,
            flows[0],
            cfg,
            scenario.payload_len,
            &mut net,
        )?;
        let sent_packets = net.sent;
        let delivered = net.drain();
        let (got_upper, got_lower) = mls::mls_decode(
            &delivered,
            &mls_stack,
            cfg,
            lower.len(),
            report.upper_bits_sent,
            net_cfg.base_delay,
        )?;
        let recovered = report.upper_bits_remaining == 0
            && got_upper == payload
            && got_lower == lower;
        return Ok(Trace {
            horizon: report.horizon_ticks().max(1),
            decoded: recovered.then(|| got_upper),
            sent_packets,
            overt_bits_sent: report.overt_bits_sent,
            upper_bits_sent: report.upper_bits_sent,
            lower_ones: report.lower_ones,
            delivered,
        });
    }

    // Single-flow pipeline: optional hopping, gating, protocol hopping.
    let flow = flows[0];
    let protocol = net.flow(flow).expect("just opened").protocol;
    let schedule = stack.sgh.clone();
    let gate_params = effective_gate(stack.cmc.as_ref(), &net_cfg);
    let mut gate = gate_params.map(|(p, s)| GateStream::new(p, s));
    let ips_key: Option<HopKey> = match &stack.ips {
        Some(i) => Some(i.key()?),
        None => None,
    };
    // natural anomaly background on clean packets
    let mut background = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEECE66D);

    let mut rest = payload.clone();
    let mut stego_count = 0u64;
    let mut upper_sent = 0usize;
    let mut overt_bits = 0u64;
    let mut t = 0u64;
    while !rest.is_empty() {
        let embed_now = gate.as_mut().map_or(true, |g| g.next());
        let template = OvertPacket::plain(flow, t, scenario.payload_len, protocol);
        if embed_now {
            let method = method_for(&schedule, scenario.naive_method, stego_count)?;
            let before = rest.len();
            let (mut packet, remaining) = carriers::embed(method, cfg, &rest, &template)?;
            if let Some(key) = &ips_key {
                packet.protocol = ips::carrier_protocol_at(key, stego_count);
            }
            overt_bits += packet.payload_len as u64 * 8;
            net.send(flow, packet)?;
            upper_sent += before - remaining.len();
            rest = remaining;
            stego_count += 1;
        } else {
            let mut packet = template;
            if background.gen::<f64>() < net_cfg.natural_retransmission_rate {
                packet.retransmitted = true;
            }
            // natural padding would collide with the protocol-gated padding
            // channel, so it only appears when ips is off
            if ips_key.is_none()
                && packet.payload_len < cfg.min_payload_bytes
                && background.gen::<f64>() < net_cfg.natural_padding_rate
            {
                packet.padding =
                    vec![0u8; (cfg.min_payload_bytes - packet.payload_len) as usize];
            }
            overt_bits += packet.payload_len as u64 * 8;
            net.send(flow, packet)?;
        }
        t += 1;
    }

    let sent_packets = net.sent;
    let delivered = net.drain();
    let decoded = decode_single_flow(
        &delivered,
        &schedule,
        scenario.naive_method,
        gate_params.map(|(p, s)| (p, s)),
        ips_key.as_ref(),
        cfg,
        payload.len(),
    );

    Ok(Trace {
        horizon: net.clock().max(1),
        decoded,
        sent_packets,
        overt_bits_sent: overt_bits,
        upper_bits_sent: upper_sent,
        lower_ones: 0,
        delivered,
    })
}

fn method_for(
    schedule: &Option<HoppingSchedule>,
    naive: CarrierMethodId,
    stego_ordinal: u64,
) -> Result<CarrierMethodId, SghError> {
    match schedule {
        Some(s) => sgh::method_at(s, stego_ordinal),
        None => Ok(naive),
    }
}

fn decode_single_flow(
    delivered: &[Delivered],
    schedule: &Option<HoppingSchedule>,
    naive: CarrierMethodId,
    gate_params: Option<(f64, u64)>,
    ips_key: Option<&HopKey>,
    cfg: &crate::carriers::CarrierConfig,
    total_bits: usize,
) -> Option<BitString> {
    let mut packets: Vec<&OvertPacket> = delivered.iter().map(|d| &d.packet).collect();
    packets.sort_by_key(|p| p.send_time);

    if let Some(key) = ips_key {
        // protocol-gated extraction; gated-out clean packets carry no
        // padding and are skipped without advancing the hop counter
        let mut rx = IpsExtractor::new(key.clone());
        for p in &packets {
            rx.observe(cfg, p);
        }
        let bits = rx.bits(Some(total_bits));
        return (bits.len() == total_bits).then_some(bits);
    }

    let mut gate = gate_params.map(|(p, s)| GateStream::new(p, s));
    let mut out = BitString::new();
    let mut stego_count = 0u64;
    for packet in packets {
        if out.len() >= total_bits {
            break;
        }
        let embed_here = gate.as_mut().map_or(true, |g| g.next());
        if !embed_here {
            continue;
        }
        let method = method_for(schedule, naive, stego_count).ok()?;
        stego_count += 1;
        let cap = carriers::capacity(method, cfg, packet).ok()?;
        let n = cap.min(total_bits - out.len());
        out.extend(&carriers::extract_partial(method, cfg, packet, n).ok()?);
    }
    (out.len() == total_bits).then_some(out)
}

/// Detector reports for one trace. Thresholds are Monte-Carlo percentiles
/// of clean traffic at the trace's own sample size, seeded from the
/// scenario so repeated runs agree.
pub fn detect(
    scenario: &Scenario,
    trace: &Trace,
    calibration_seed: u64,
) -> Result<Vec<DetectorReport>, RunError> {
    const TRIALS: usize = 200;
    const PERCENTILE: f64 = 0.95;
    let packets: Vec<OvertPacket> = trace.delivered.iter().map(|d| d.packet.clone()).collect();
    let n = packets.len().max(1);
    let mut reports = Vec::new();
    for (i, spec) in scenario.detectors.iter().enumerate() {
        let det_seed = calibration_seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(i as u64);
        let report = match spec {
            DetectorSpec::StreamUsage { baseline } => {
                let threshold = steganalysis::calibrate_chi_square_threshold(
                    baseline, n, TRIALS, PERCENTILE, det_seed,
                )?;
                steganalysis::stream_usage_stat(
                    &packets,
                    scenario.carrier.stream_count,
                    baseline,
                    threshold,
                )?
            }
            DetectorSpec::AddressUsage { baseline } => {
                let threshold = steganalysis::calibrate_chi_square_threshold(
                    baseline, n, TRIALS, PERCENTILE, det_seed,
                )?;
                steganalysis::address_usage_stat(
                    &packets,
                    scenario.carrier.address_count,
                    baseline,
                    threshold,
                )?
            }
            DetectorSpec::ChunkUsage { baseline } => {
                let threshold = steganalysis::calibrate_chi_square_threshold(
                    baseline, n, TRIALS, PERCENTILE, det_seed,
                )?;
                steganalysis::chunk_count_stat(
                    &packets,
                    scenario.carrier.max_chunk_count,
                    baseline,
                    threshold,
                )?
            }
            DetectorSpec::RetransmissionRate => {
                let rate = scenario.network.natural_retransmission_rate;
                let threshold = if rate > 0.0 && rate < 1.0 {
                    steganalysis::calibrate_anomaly_threshold(rate, n, TRIALS, PERCENTILE, det_seed)
                } else {
                    3.0
                };
                steganalysis::anomaly_rate_stat(
                    &packets,
                    cmc::AnomalyKind::Retransmission,
                    rate,
                    threshold,
                )
            }
            DetectorSpec::PaddingRate => {
                let rate = scenario.network.natural_padding_rate;
                let threshold = if rate > 0.0 && rate < 1.0 {
                    steganalysis::calibrate_anomaly_threshold(rate, n, TRIALS, PERCENTILE, det_seed)
                } else {
                    3.0
                };
                steganalysis::anomaly_rate_stat(&packets, cmc::AnomalyKind::Padding, rate, threshold)
            }
        };
        reports.push(report);
    }
    Ok(reports)
}

/// Runs every repetition of the scenario, pairing each hidden run with a
/// naive baseline on the same seed.
pub fn run(scenario: &Scenario) -> Result<ExperimentReport, RunError> {
    scenario.validate()?;
    let payload = scenario.steganogram.materialize()?;
    let naive_stack = TechniqueStack::default();
    let mut seeds = Vec::with_capacity(scenario.repetitions);
    for rep in 0..scenario.repetitions {
        let seed = scenario.network.seed + rep as u64;
        let naive_trace = execute(scenario, &naive_stack, seed)?;
        let dht_trace = if scenario.techniques.is_empty() {
            execute(scenario, &naive_stack, seed)?
        } else {
            execute(scenario, &scenario.techniques, seed)?
        };
        let naive_reports = detect(scenario, &naive_trace, scenario.network.seed)?;
        let dht_reports = detect(scenario, &dht_trace, scenario.network.seed)?;
        let score = if naive_reports.is_empty() {
            1.0
        } else {
            steganalysis::detectability_score(&naive_reports, &dht_reports)?.score
        };
        let recovered = dht_trace.decoded.as_ref() == Some(&payload);
        let horizon = dht_trace.horizon as f64;
        seeds.push(SeedReport {
            seed,
            recovered,
            overt_bps: dht_trace.overt_bits_sent as f64 / horizon,
            upper_bps: dht_trace.upper_bits_sent as f64 / horizon,
            lower_bps: dht_trace.lower_ones as f64 / horizon,
            detectors: dht_reports,
            detectability_score: score,
        });
    }
    Ok(ExperimentReport { seeds })
}
