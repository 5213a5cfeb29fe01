//! Missing-data injection and the interpolation used by baseline models.
//!
//! Injection seeds missing entries independently per grid entry, then
//! extends each seed into a burst whose length follows an exponential
//! decay over 1..=10 following entries. The per-entry randomness is
//! counter-based, so the realized rate is a monotone function of the seed
//! probability and can be calibrated by bisection with one shared seed.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::SeriesSet;
use crate::fmath;
use crate::graph::haversine;

/// Errors raised by corruption operations.
#[derive(Debug, Clone, PartialEq)]
pub enum CorruptionError {
    /// Target missing rate must be below 1.
    InvalidTargetRate(f64),
    /// No station has any available value, so nothing can be imputed.
    ImputationImpossible,
}

impl fmt::Display for CorruptionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorruptionError::InvalidTargetRate(r) => {
                write!(f, "target missing rate must be in [0, 1), got {r}")
            }
            CorruptionError::ImputationImpossible => {
                write!(f, "every station is empty; imputation impossible")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CorruptionError {}

/// Exponential burst missingness model.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstModel {
    /// Desired overall fraction of removed grid entries, in [0, 1).
    pub target_rate: f64,
    /// Decay scale of the burst-length distribution.
    pub decay_scale: f64,
    /// Longest possible burst extension.
    pub max_burst: usize,
    pub seed: u64,
}

impl BurstModel {
    pub fn new(target_rate: f64, seed: u64) -> Result<Self, CorruptionError> {
        if !(0.0..1.0).contains(&target_rate) {
            return Err(CorruptionError::InvalidTargetRate(target_rate));
        }
        Ok(BurstModel { target_rate, decay_scale: 10.0, max_burst: 10, seed })
    }

    /// p_n = exp(-n/scale) / Σ_{j=1..max} exp(-j/scale); sums to 1.
    pub fn burst_probs(&self) -> Vec<f64> {
        let weights: Vec<f64> =
            (1..=self.max_burst).map(|n| fmath::exp(-(n as f64) / self.decay_scale)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter().map(|w| w / total).collect()
    }
}

/// Burst length (1..=probs.len()) drawn from `probs` by inverse CDF.
pub fn burst_length_from_uniform(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i + 1;
        }
    }
    probs.len()
}

/// Audit log of removed entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionLog {
    /// (station_id, frequency_minutes, timestamp) of every removed entry.
    pub removed: Vec<(String, u32, i64)>,
    /// |removed| / |grid entries|.
    pub realized_rate: f64,
}

use crate::seedstream::{mix64, unit_uniform};

// Counter-based draws: each grid entry gets an independent, reproducible
// pair regardless of evaluation order.
fn entry_draws(seed: u64, station: usize, slot: usize) -> (f64, f64) {
    let key = mix64(seed ^ mix64((station as u64) << 32 | slot as u64));
    (unit_uniform(key), unit_uniform(mix64(key ^ 0xa5a5_a5a5_a5a5_a5a5)))
}

// Removal mask for seed probability b: entry (s, t) seeds a removal when
// its uniform is below b, and the burst extends n following slots of the
// same station. Burst entries do not seed new bursts.
fn removal_mask(data: &SeriesSet, probs: &[f64], seed: u64, b: f64) -> Vec<bool> {
    let n_st = data.n_stations();
    let len = data.len();
    let mut removed = vec![false; n_st * len];
    for s in 0..n_st {
        for t in 0..len {
            if !data.is_present(s, t) {
                continue;
            }
            let (u, v) = entry_draws(seed, s, t);
            if u < b {
                let burst = burst_length_from_uniform(probs, v);
                for k in 0..=burst {
                    if t + k < len {
                        removed[s * len + t + k] = true;
                    }
                }
            }
        }
    }
    removed
}

fn realized_rate(data: &SeriesSet, removed: &[bool]) -> f64 {
    let len = data.len();
    let mut count = 0usize;
    for s in 0..data.n_stations() {
        for t in 0..len {
            if removed[s * len + t] && data.is_present(s, t) {
                count += 1;
            }
        }
    }
    count as f64 / data.grid_size().max(1) as f64
}

/// Remove entries from `data` so the realized missing rate approaches the
/// model's target, returning the corrupted copy and an audit log.
///
/// The seed probability is calibrated by bisection against the realized
/// rate measured on this grid; with the counter-based draws the whole
/// procedure is deterministic in the model seed.
pub fn inject_missing(
    data: &SeriesSet,
    model: &BurstModel,
) -> Result<(SeriesSet, CorruptionLog), CorruptionError> {
    if !(0.0..1.0).contains(&model.target_rate) {
        return Err(CorruptionError::InvalidTargetRate(model.target_rate));
    }
    if model.target_rate == 0.0 {
        return Ok((
            data.clone(),
            CorruptionLog { removed: Vec::new(), realized_rate: 0.0 },
        ));
    }
    let probs = model.burst_probs();
    let mut lo = 0.0f64;
    let mut hi = model.target_rate;
    // ensure the bracket contains the target
    while realized_rate(data, &removal_mask(data, &probs, model.seed, hi)) < model.target_rate
        && hi < 0.999
    {
        hi = (hi * 2.0).min(0.999);
    }
    let mut best_b = hi;
    let mut best_err = f64::INFINITY;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let rate = realized_rate(data, &removal_mask(data, &probs, model.seed, mid));
        let err = fmath::abs(rate - model.target_rate);
        if err < best_err {
            best_err = err;
            best_b = mid;
        }
        if rate < model.target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let removed = removal_mask(data, &probs, model.seed, best_b);
    let mut out = data.clone();
    let mut log = Vec::new();
    let len = data.len();
    for s in 0..data.n_stations() {
        for t in 0..len {
            if removed[s * len + t] && data.is_present(s, t) {
                out.clear(s, t);
                log.push((
                    data.stations()[s].station_id.clone(),
                    data.frequency_minutes(),
                    data.slot_minute(t),
                ));
            }
        }
    }
    let rate = log.len() as f64 / data.grid_size().max(1) as f64;
    Ok((out, CorruptionLog { removed: log, realized_rate: rate }))
}

/// Fill every missing entry so the output mask is full.
///
/// Missing entries are linearly interpolated in time between the nearest
/// available past and future values of the same station; when only one side
/// exists that value is held. Wind direction is interpolated through its
/// sine/cosine components to respect wrap-around. A station with no values
/// at all copies the series of its geographically closest station with
/// data, ties broken by smallest station id.
pub fn interpolate_impute(data: &SeriesSet) -> Result<SeriesSet, CorruptionError> {
    let n_st = data.n_stations();
    let len = data.len();
    let mut out = data.clone();
    let nonempty: Vec<usize> =
        (0..n_st).filter(|&s| (0..len).any(|t| data.is_present(s, t))).collect();
    if nonempty.is_empty() {
        if n_st == 0 || len == 0 {
            return Ok(out);
        }
        return Err(CorruptionError::ImputationImpossible);
    }
    for s in 0..n_st {
        let avail: Vec<usize> = (0..len).filter(|&t| data.is_present(s, t)).collect();
        if avail.is_empty() {
            continue; // handled by the nearest-station pass below
        }
        for t in 0..len {
            if data.is_present(s, t) {
                continue;
            }
            let prev = avail.iter().rev().find(|&&a| a < t).copied();
            let next = avail.iter().find(|&&a| a > t).copied();
            let filled = match (prev, next) {
                (Some(p), Some(n)) => {
                    let w = (t - p) as f64 / (n - p) as f64;
                    blend(data.raw(s, p).unwrap(), data.raw(s, n).unwrap(), w)
                }
                (Some(p), None) => data.raw(s, p).unwrap(),
                (None, Some(n)) => data.raw(s, n).unwrap(),
                (None, None) => unreachable!("avail is non-empty"),
            };
            out.set(s, t, filled);
        }
    }
    for s in 0..n_st {
        if (0..len).any(|t| data.is_present(s, t)) {
            continue;
        }
        let me = &data.stations()[s];
        let donor = nonempty
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = haversine(me, &data.stations()[a]);
                let db = haversine(me, &data.stations()[b]);
                da.partial_cmp(&db)
                    .unwrap()
                    .then_with(|| data.stations()[a].station_id.cmp(&data.stations()[b].station_id))
            })
            .expect("nonempty checked above");
        for t in 0..len {
            out.set(s, t, out.raw(donor, t).expect("donor imputed to full mask"));
        }
    }
    Ok(out)
}

fn blend(a: [f64; 4], b: [f64; 4], w: f64) -> [f64; 4] {
    let lerp = |x: f64, y: f64| x + (y - x) * w;
    let two_pi = 2.0 * core::f64::consts::PI;
    let (sa, ca) = (fmath::sin2pi(a[1] / 360.0), fmath::cos2pi(a[1] / 360.0));
    let (sb, cb) = (fmath::sin2pi(b[1] / 360.0), fmath::cos2pi(b[1] / 360.0));
    let mut dir = fmath::atan2(lerp(sa, sb), lerp(ca, cb)) / two_pi * 360.0;
    if dir < 0.0 {
        dir += 360.0;
    }
    if dir >= 360.0 {
        dir = 0.0;
    }
    [lerp(a[0], b[0]), dir, lerp(a[2], b[2]), lerp(a[3], b[3])]
}
