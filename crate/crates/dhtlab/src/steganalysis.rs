//! Statistical detectors scoring traffic for covert-channel evidence.
//!
//! Pearson chi-square over carrier field usage and binomial z-scores over
//! anomaly rates. Thresholds come from Monte-Carlo percentiles of clean
//! seeded traffic rather than asymptotic quantiles, so small samples need
//! no distributional assumptions.

use rand::{distributions::WeightedIndex, prelude::Distribution, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmc::AnomalyKind;
use crate::simnet::OvertPacket;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Clean,
    Suspicious,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorReport {
    pub detector: String,
    pub statistic: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub sample_size: usize,
}

impl DetectorReport {
    pub fn new(detector: impl Into<String>, statistic: f64, threshold: f64, n: usize) -> Self {
        let verdict = if statistic > threshold {
            Verdict::Suspicious
        } else {
            Verdict::Clean
        };
        DetectorReport {
            detector: detector.into(),
            statistic,
            threshold,
            verdict,
            sample_size: n,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StegError {
    #[error("chi-square needs at least 2 categories, got {0}")]
    TooFewCategories(usize),
    #[error("observed/expected length mismatch: {observed} vs {expected}")]
    LengthMismatch { observed: usize, expected: usize },
    #[error("expected weight {index} is zero but {count} observations fall there")]
    DegenerateExpected { index: usize, count: u64 },
    #[error("expected weights sum to {0}, want 1")]
    UnnormalizedExpected(f64),
    #[error("paired traces disagree on detector set")]
    ScenarioMismatch,
}

/// Pearson statistic: sum of (O - E)^2 / E with E_i = total * weight_i.
pub fn chi_square(observed: &[u64], expected_weights: &[f64]) -> Result<f64, StegError> {
    if observed.len() < 2 {
        return Err(StegError::TooFewCategories(observed.len()));
    }
    if observed.len() != expected_weights.len() {
        return Err(StegError::LengthMismatch {
            observed: observed.len(),
            expected: expected_weights.len(),
        });
    }
    let weight_sum: f64 = expected_weights.iter().sum();
    if (weight_sum - 1.0).abs() > 1e-9 {
        return Err(StegError::UnnormalizedExpected(weight_sum));
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Ok(0.0);
    }
    let mut stat = 0.0;
    for (i, (&o, &w)) in observed.iter().zip(expected_weights).enumerate() {
        if w <= 0.0 {
            if o > 0 {
                return Err(StegError::DegenerateExpected { index: i, count: o });
            }
            continue;
        }
        let e = total as f64 * w;
        stat += (o as f64 - e).powi(2) / e;
    }
    Ok(stat)
}

fn usage_report(
    name: &str,
    counts: Vec<u64>,
    baseline: &[f64],
    threshold: f64,
) -> Result<DetectorReport, StegError> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Ok(DetectorReport::new(name, 0.0, threshold, 0));
    }
    let stat = chi_square(&counts, baseline)?;
    Ok(DetectorReport::new(name, stat, threshold, n as usize))
}

/// Chi-square of stream-index usage against the clean baseline.
pub fn stream_usage_stat(
    packets: &[OvertPacket],
    stream_count: u32,
    baseline: &[f64],
    threshold: f64,
) -> Result<DetectorReport, StegError> {
    let mut counts = vec![0u64; stream_count as usize];
    for p in packets {
        if (p.stream as usize) < counts.len() {
            counts[p.stream as usize] += 1;
        }
    }
    usage_report("stream_usage", counts, baseline, threshold)
}

/// Chi-square of destination-address usage against the clean baseline.
pub fn address_usage_stat(
    packets: &[OvertPacket],
    address_count: u32,
    baseline: &[f64],
    threshold: f64,
) -> Result<DetectorReport, StegError> {
    let mut counts = vec![0u64; address_count as usize];
    for p in packets {
        if (p.dest_address as usize) < counts.len() {
            counts[p.dest_address as usize] += 1;
        }
    }
    usage_report("address_usage", counts, baseline, threshold)
}

/// Chi-square of chunk-count values (1..=C) against the clean baseline.
pub fn chunk_count_stat(
    packets: &[OvertPacket],
    max_chunk_count: u32,
    baseline: &[f64],
    threshold: f64,
) -> Result<DetectorReport, StegError> {
    let mut counts = vec![0u64; max_chunk_count as usize];
    for p in packets {
        let idx = p.chunk_count.saturating_sub(1) as usize;
        if idx < counts.len() {
            counts[idx] += 1;
        }
    }
    usage_report("chunk_usage", counts, baseline, threshold)
}

/// Binomial z-score of the observed anomaly rate against the natural rate:
/// |empirical - natural| / sqrt(natural * (1 - natural) / n).
pub fn anomaly_rate_stat(
    packets: &[OvertPacket],
    kind: AnomalyKind,
    natural_rate: f64,
    threshold: f64,
) -> DetectorReport {
    let name = match kind {
        AnomalyKind::Retransmission => "retransmission_rate",
        AnomalyKind::Padding => "padding_rate",
    };
    let n = packets.len();
    if n == 0 || natural_rate <= 0.0 || natural_rate >= 1.0 {
        return DetectorReport::new(name, 0.0, threshold, n);
    }
    let anomalous = packets
        .iter()
        .filter(|p| match kind {
            AnomalyKind::Retransmission => p.retransmitted,
            AnomalyKind::Padding => !p.padding.is_empty(),
        })
        .count() as f64;
    let empirical = anomalous / n as f64;
    let se = (natural_rate * (1.0 - natural_rate) / n as f64).sqrt();
    DetectorReport::new(name, (empirical - natural_rate).abs() / se, threshold, n)
}

/// Empirical percentile of the chi-square statistic over clean traffic
/// sampled from the baseline. `percentile` in (0, 1).
pub fn calibrate_chi_square_threshold(
    baseline: &[f64],
    packets_per_trial: usize,
    trials: usize,
    percentile: f64,
    seed: u64,
) -> Result<f64, StegError> {
    let dist = WeightedIndex::new(baseline.iter())
        .map_err(|_| StegError::UnnormalizedExpected(baseline.iter().sum()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut counts = vec![0u64; baseline.len()];
        for _ in 0..packets_per_trial {
            counts[dist.sample(&mut rng)] += 1;
        }
        stats.push(chi_square(&counts, baseline)?);
    }
    stats.sort_by(|a, b| a.total_cmp(b));
    let idx = ((trials as f64 * percentile).ceil() as usize).min(trials) - 1;
    Ok(stats[idx])
}

/// Empirical percentile of the binomial z-score over clean traffic with the
/// given natural anomaly rate.
pub fn calibrate_anomaly_threshold(
    natural_rate: f64,
    packets_per_trial: usize,
    trials: usize,
    percentile: f64,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let se = (natural_rate * (1.0 - natural_rate) / packets_per_trial as f64).sqrt();
    let mut stats = Vec::with_capacity(trials);
    for _ in 0..trials {
        let hits = (0..packets_per_trial)
            .filter(|_| rng.gen::<f64>() < natural_rate)
            .count() as f64;
        let empirical = hits / packets_per_trial as f64;
        stats.push((empirical - natural_rate).abs() / se);
    }
    stats.sort_by(|a, b| a.total_cmp(b));
    let idx = ((trials as f64 * percentile).ceil() as usize).min(trials) - 1;
    stats[idx]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub detector: String,
    pub naive_statistic: f64,
    pub dht_statistic: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityScore {
    pub pairs: Vec<PairedReport>,
    /// Max over detectors of dht/naive statistic ratio.
    pub score: f64,
}

/// Side-by-side detector statistics for the same overt scenario and seed,
/// one trace naive and one with hiding techniques applied.
pub fn detectability_score(
    naive: &[DetectorReport],
    dht: &[DetectorReport],
) -> Result<DetectabilityScore, StegError> {
    if naive.len() != dht.len()
        || naive
            .iter()
            .zip(dht)
            .any(|(a, b)| a.detector != b.detector)
    {
        return Err(StegError::ScenarioMismatch);
    }
    let pairs: Vec<PairedReport> = naive
        .iter()
        .zip(dht)
        .map(|(a, b)| {
            let ratio = if a.statistic == 0.0 {
                if b.statistic == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            } else {
                b.statistic / a.statistic
            };
            PairedReport {
                detector: a.detector.clone(),
                naive_statistic: a.statistic,
                dht_statistic: b.statistic,
                ratio,
            }
        })
        .collect();
    let score = pairs.iter().map(|p| p.ratio).fold(0.0, f64::max);
    Ok(DetectabilityScore { pairs, score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::FlowId;
    use crate::ips::CarrierProtocolTag;

    #[test]
    fn chi_square_exact_match_is_zero() {
        let stat = chi_square(&[100, 100, 100, 100], &[0.25; 4]).unwrap();
        assert_eq!(stat, 0.0);
    }

    #[test]
    fn chi_square_concentrated_counts() {
        // E_i = 100 each; (300^2 + 3 * 100^2) / 100 = 1200
        let stat = chi_square(&[400, 0, 0, 0], &[0.25; 4]).unwrap();
        assert!((stat - 1200.0).abs() < 1e-9);
    }

    #[test]
    fn chi_square_single_category_rejected() {
        assert_eq!(chi_square(&[5], &[1.0]), Err(StegError::TooFewCategories(1)));
    }

    #[test]
    fn chi_square_degenerate_expected() {
        assert_eq!(
            chi_square(&[10, 10], &[1.0, 0.0]),
            Err(StegError::DegenerateExpected { index: 1, count: 10 })
        );
    }

    #[test]
    fn chi_square_nonnegative_and_zero_iff_proportional() {
        let stat = chi_square(&[30, 10], &[0.75, 0.25]).unwrap();
        assert_eq!(stat, 0.0);
        let stat = chi_square(&[31, 9], &[0.75, 0.25]).unwrap();
        assert!(stat > 0.0);
    }

    fn packet_with_stream(stream: u32) -> OvertPacket {
        let mut p = OvertPacket::plain(FlowId(0), 0, 40, CarrierProtocolTag::Tcp);
        p.stream = stream;
        p
    }

    #[test]
    fn zero_packets_reports_clean() {
        let report = stream_usage_stat(&[], 4, &[0.25; 4], 1.0).unwrap();
        assert_eq!(report.sample_size, 0);
        assert_eq!(report.verdict, Verdict::Clean);
    }

    #[test]
    fn uniform_embedding_under_skewed_baseline_is_loud() {
        // Uniform random bits spread streams uniformly; against a 0.7/0.1/0.1/0.1
        // clean baseline the expected statistic has a closed form:
        // n * sum_i (u_i - w_i)^2 / w_i with u uniform.
        let baseline = [0.7, 0.1, 0.1, 0.1];
        let n = 4000u64;
        let packets: Vec<OvertPacket> =
            (0..n).map(|i| packet_with_stream((i % 4) as u32)).collect();
        let report = stream_usage_stat(&packets, 4, &baseline, 1.0).unwrap();
        let expected_floor: f64 = (n as f64)
            * baseline
                .iter()
                .map(|w| (0.25 - w) * (0.25 - w) / w)
                .sum::<f64>()
            * 0.5; // generous floor at half the closed-form expectation
        assert!(report.statistic > expected_floor);
        assert_eq!(report.verdict, Verdict::Suspicious);
    }

    #[test]
    fn clean_traffic_stays_below_calibrated_threshold() {
        use rand::prelude::*;
        let baseline = [0.7, 0.1, 0.1, 0.1];
        let threshold =
            calibrate_chi_square_threshold(&baseline, 500, 200, 0.95, 1).unwrap();
        let dist = WeightedIndex::new(baseline.iter()).unwrap();
        let mut clean_below = 0;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let packets: Vec<OvertPacket> = (0..500)
                .map(|_| packet_with_stream(dist.sample(&mut rng) as u32))
                .collect();
            let report = stream_usage_stat(&packets, 4, &baseline, threshold).unwrap();
            if report.verdict == Verdict::Clean {
                clean_below += 1;
            }
        }
        assert!(clean_below >= 45, "only {clean_below}/50 clean trials below threshold");
    }

    #[test]
    fn anomaly_stat_null_case_small() {
        let n = 10_000;
        let natural = 0.02;
        let packets: Vec<OvertPacket> = (0..n)
            .map(|i| {
                let mut p = packet_with_stream(0);
                // empirical rate exactly the natural rate
                p.retransmitted = i % 50 == 0;
                p
            })
            .collect();
        let report = anomaly_rate_stat(&packets, AnomalyKind::Retransmission, natural, 3.0);
        assert!(report.statistic < 0.5);
    }

    #[test]
    fn anomaly_stat_triple_rate_is_loud() {
        let n = 10_000;
        let natural = 0.02;
        let packets: Vec<OvertPacket> = (0..n)
            .map(|i| {
                let mut p = packet_with_stream(0);
                p.retransmitted = i % 50 < 3; // 6% = 3x natural
                p
            })
            .collect();
        let report = anomaly_rate_stat(&packets, AnomalyKind::Retransmission, natural, 3.0);
        assert!(report.statistic > 3.0, "statistic {}", report.statistic);
        assert_eq!(report.verdict, Verdict::Suspicious);
    }

    #[test]
    fn anomaly_stat_empty_is_clean() {
        let report = anomaly_rate_stat(&[], AnomalyKind::Padding, 0.02, 3.0);
        assert_eq!(report.sample_size, 0);
        assert_eq!(report.verdict, Verdict::Clean);
    }

    #[test]
    fn identical_traces_score_one() {
        let reports = vec![
            DetectorReport::new("stream_usage", 2.0, 5.0, 100),
            DetectorReport::new("retransmission_rate", 0.5, 3.0, 100),
        ];
        let score = detectability_score(&reports, &reports).unwrap();
        assert_eq!(score.score, 1.0);
        assert!(score.pairs.iter().all(|p| p.ratio == 1.0));
    }

    #[test]
    fn mismatched_detector_sets_rejected() {
        let a = vec![DetectorReport::new("stream_usage", 1.0, 5.0, 10)];
        let b = vec![DetectorReport::new("chunk_usage", 1.0, 5.0, 10)];
        assert_eq!(detectability_score(&a, &b), Err(StegError::ScenarioMismatch));
    }
}
