//! Carrier modifications camouflage: policies that gate or reshape the
//! embedding decision without ever touching the bits that do get embedded.

use rand::{distributions::WeightedIndex, prelude::Distribution, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carriers::CarrierConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CamouflagePolicy {
    /// Accept each embed opportunity independently with probability `p`.
    RateReduction { p: f64 },
    /// Switch the effective carrier config at fixed packet ordinals.
    ParameterWalk { steps: Vec<WalkStep> },
    /// Fit covert sessions to an hour-of-day traffic histogram.
    PatternFit { histogram: [f64; 24] },
    /// Ride a natural traffic anomaly, never exceeding its observed rate.
    AnomalyRide { kind: AnomalyKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnomalyKind {
    Retransmission,
    Padding,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WalkStep {
    /// First packet ordinal at which the override applies (inclusive).
    pub at_ordinal: u64,
    pub config: CarrierConfig,
}

#[derive(Debug, Error, PartialEq)]
pub enum CmcError {
    #[error("pattern histogram weights are all zero")]
    DegenerateHistogram,
    #[error("pattern histogram weights sum to {0}, expected 1")]
    UnnormalizedHistogram(f64),
    #[error("walk step ordinals must be strictly increasing")]
    UnorderedWalk,
    #[error("rate {0} outside [0, 1]")]
    BadRate(f64),
}

/// Per-opportunity embed decisions for a rate-reduction gate. Both ends run
/// this from the same seed, so the receiver knows which packets are clean.
pub fn gate(p: f64, opportunities: usize, seed: u64) -> Result<Vec<bool>, CmcError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CmcError::BadRate(p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..opportunities)
        .map(|_| match p {
            p if p >= 1.0 => true,
            p if p <= 0.0 => false,
            p => rng.gen::<f64>() < p,
        })
        .collect())
}

/// Effective carrier config at a packet ordinal: the last step at or before
/// the ordinal, or the base config before any step.
pub fn walk(
    base: &CarrierConfig,
    steps: &[WalkStep],
    ordinal: u64,
) -> Result<CarrierConfig, CmcError> {
    if steps.windows(2).any(|w| w[0].at_ordinal >= w[1].at_ordinal) {
        return Err(CmcError::UnorderedWalk);
    }
    Ok(steps
        .iter()
        .rev()
        .find(|s| s.at_ordinal <= ordinal)
        .map(|s| s.config.clone())
        .unwrap_or_else(|| base.clone()))
}

/// Samples hour-of-day assignments for covert sessions from a normalized
/// 24-bin histogram.
pub fn fit_sessions(
    histogram: &[f64; 24],
    session_count: usize,
    seed: u64,
) -> Result<Vec<u8>, CmcError> {
    let sum: f64 = histogram.iter().sum();
    if sum == 0.0 {
        return Err(CmcError::DegenerateHistogram);
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CmcError::UnnormalizedHistogram(sum));
    }
    let dist = WeightedIndex::new(histogram.iter()).map_err(|_| CmcError::DegenerateHistogram)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..session_count)
        .map(|_| dist.sample(&mut rng) as u8)
        .collect())
}

/// Caps the requested anomaly rate at the observed natural one.
pub fn ride(requested_rate: f64, observed_natural_rate: f64) -> f64 {
    requested_rate.min(observed_natural_rate).max(0.0)
}
