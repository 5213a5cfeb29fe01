//! Station time-series containers and feature encodings.
//!
//! All series live on a shared global time grid per sampling frequency.
//! Missing entries are grid slots with an unset mask flag; nothing in this
//! module imputes values.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use crate::fmath;

/// Raw channels carried by every record: wind speed, wind direction,
/// temperature, pressure.
pub const RAW_CHANNELS: usize = 4;

/// Feature channels after direction decomposition: wind speed, direction
/// sine, direction cosine, temperature, pressure.
pub const FEATURE_CHANNELS: usize = 5;

/// 10-minute look-back length in grid steps.
pub const LOOKBACK_10MIN: usize = 18;
/// Hourly look-back length in grid steps.
pub const LOOKBACK_HOURLY: usize = 12;
/// Forecast horizon in 10-minute steps.
pub const HORIZON: usize = 6;

/// Errors raised by data-model operations.
#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    /// A calendar component was outside its documented range.
    InvalidComponent { name: &'static str, value: i64 },
    /// Wind direction outside [0, 360).
    DirectionOutOfRange(f64),
    /// Latitude/longitude outside bounds.
    CoordinateOutOfRange { name: &'static str, value: f64 },
    /// Negative wind speed or non-finite channel value.
    InvalidChannel { name: &'static str, value: f64 },
    /// Timestamps not strictly increasing or off-grid within a station.
    BadTimestamp { station: String, timestamp: i64 },
    /// Duplicate station identifier in a dataset.
    DuplicateStation(String),
    /// Unknown station referenced by a record.
    UnknownStation(String),
    /// A channel had zero variance, so no scaler can be fit.
    ConstantChannel { channel: usize },
    /// Too few values to fit a scaler.
    TooFewValues { channel: usize, count: usize },
    /// A split would be shorter than the look-back window.
    InsufficientData { split: &'static str, len: usize, need: usize },
    /// Operation requires a specific sampling frequency.
    FrequencyMismatch { expected: u32, got: u32 },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::InvalidComponent { name, value } => {
                write!(f, "timestamp component {name} out of range: {value}")
            }
            DataError::DirectionOutOfRange(v) => {
                write!(f, "wind direction must be in [0, 360), got {v}")
            }
            DataError::CoordinateOutOfRange { name, value } => {
                write!(f, "{name} out of range: {value}")
            }
            DataError::InvalidChannel { name, value } => {
                write!(f, "invalid {name} value: {value}")
            }
            DataError::BadTimestamp { station, timestamp } => {
                write!(f, "station {station}: timestamp {timestamp} not strictly increasing on the grid")
            }
            DataError::DuplicateStation(id) => write!(f, "duplicate station id {id}"),
            DataError::UnknownStation(id) => write!(f, "record references unknown station {id}"),
            DataError::ConstantChannel { channel } => {
                write!(f, "channel {channel} is constant; cannot scale to unit variance")
            }
            DataError::TooFewValues { channel, count } => {
                write!(f, "channel {channel} has {count} values; need at least 2")
            }
            DataError::InsufficientData { split, len, need } => {
                write!(f, "{split} split has {len} grid steps, need at least {need}")
            }
            DataError::FrequencyMismatch { expected, got } => {
                write!(f, "expected {expected}-minute series, got {got}-minute")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DataError {}

/// A measurement station with its physical position.
#[derive(Debug, Clone, PartialEq)]
pub struct StationMeta {
    pub station_id: String,
    pub latitude: f64,
    pub longitude: f64,
}

impl StationMeta {
    pub fn new(station_id: impl Into<String>, latitude: f64, longitude: f64) -> Result<Self, DataError> {
        if !(-90.0..=90.0).contains(&latitude) {
            return Err(DataError::CoordinateOutOfRange { name: "latitude", value: latitude });
        }
        if !(-180.0..=180.0).contains(&longitude) {
            return Err(DataError::CoordinateOutOfRange { name: "longitude", value: longitude });
        }
        Ok(StationMeta { station_id: station_id.into(), latitude, longitude })
    }
}

/// One observation row as ingested: all raw meteorological channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub station_id: String,
    /// Minutes since the Unix epoch, UTC.
    pub timestamp: i64,
    pub wind_speed: f64,
    pub wind_direction: f64,
    pub temperature: f64,
    pub pressure: f64,
}

impl RawRecord {
    fn channels(&self) -> Result<[f64; RAW_CHANNELS], DataError> {
        if !self.wind_speed.is_finite() || self.wind_speed < 0.0 {
            return Err(DataError::InvalidChannel { name: "wind_speed", value: self.wind_speed });
        }
        if !self.wind_direction.is_finite() || !(0.0..360.0).contains(&self.wind_direction) {
            return Err(DataError::DirectionOutOfRange(self.wind_direction));
        }
        if !self.temperature.is_finite() {
            return Err(DataError::InvalidChannel { name: "temperature", value: self.temperature });
        }
        if !self.pressure.is_finite() {
            return Err(DataError::InvalidChannel { name: "pressure", value: self.pressure });
        }
        Ok([self.wind_speed, self.wind_direction, self.temperature, self.pressure])
    }
}

/// Gridded multivariate series for a set of stations at one frequency.
///
/// Storage is station-major: entry `(station, slot)` lives at
/// `station * len + slot`. A value exists iff its mask flag is set.
/// Equality compares the grid, the mask and the present values only;
/// stale buffer contents behind cleared mask flags are ignored.
#[derive(Debug, Clone)]
pub struct SeriesSet {
    stations: Vec<StationMeta>,
    frequency_minutes: u32,
    start_minute: i64,
    len: usize,
    values: Vec<[f64; RAW_CHANNELS]>,
    mask: Vec<bool>,
}

impl SeriesSet {
    /// Empty grid with every slot missing.
    pub fn new_empty(
        stations: Vec<StationMeta>,
        frequency_minutes: u32,
        start_minute: i64,
        len: usize,
    ) -> Result<Self, DataError> {
        for i in 0..stations.len() {
            for j in (i + 1)..stations.len() {
                if stations[i].station_id == stations[j].station_id {
                    return Err(DataError::DuplicateStation(stations[i].station_id.clone()));
                }
            }
        }
        let n = stations.len();
        Ok(SeriesSet {
            stations,
            frequency_minutes,
            start_minute,
            len,
            values: vec![[0.0; RAW_CHANNELS]; n * len],
            mask: vec![false; n * len],
        })
    }

    /// Build a gridded set from per-station record lists.
    ///
    /// The grid spans the min..max record timestamp across all stations.
    /// Timestamps must be strictly increasing per station and divisible by
    /// the sampling period.
    pub fn from_records(
        stations: Vec<StationMeta>,
        frequency_minutes: u32,
        records: &[RawRecord],
    ) -> Result<Self, DataError> {
        let period = frequency_minutes as i64;
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for r in records {
            lo = lo.min(r.timestamp);
            hi = hi.max(r.timestamp);
        }
        let (start, len) = if records.is_empty() {
            (0, 0)
        } else {
            (lo, ((hi - lo) / period + 1) as usize)
        };
        SeriesSet::from_records_on_grid(stations, frequency_minutes, start, len, records)
    }

    /// Build a gridded set with explicit grid bounds, so leading/trailing
    /// missing slots survive serialization round trips.
    pub fn from_records_on_grid(
        stations: Vec<StationMeta>,
        frequency_minutes: u32,
        start: i64,
        len: usize,
        records: &[RawRecord],
    ) -> Result<Self, DataError> {
        let period = frequency_minutes as i64;
        for r in records {
            if r.timestamp % period != 0
                || r.timestamp < start
                || r.timestamp >= start + len as i64 * period
            {
                return Err(DataError::BadTimestamp {
                    station: r.station_id.clone(),
                    timestamp: r.timestamp,
                });
            }
        }
        let mut set = SeriesSet::new_empty(stations, frequency_minutes, start, len)?;
        let mut last_seen: Vec<Option<i64>> = vec![None; set.stations.len()];
        for r in records {
            let s = set
                .station_index(&r.station_id)
                .ok_or_else(|| DataError::UnknownStation(r.station_id.clone()))?;
            if let Some(prev) = last_seen[s] {
                if r.timestamp <= prev {
                    return Err(DataError::BadTimestamp {
                        station: r.station_id.clone(),
                        timestamp: r.timestamp,
                    });
                }
            }
            last_seen[s] = Some(r.timestamp);
            let slot = ((r.timestamp - start) / period) as usize;
            set.set(s, slot, r.channels()?);
        }
        Ok(set)
    }

    pub fn stations(&self) -> &[StationMeta] {
        &self.stations
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn frequency_minutes(&self) -> u32 {
        self.frequency_minutes
    }

    pub fn start_minute(&self) -> i64 {
        self.start_minute
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.station_id == id)
    }

    /// Wall-clock minute of a grid slot.
    pub fn slot_minute(&self, slot: usize) -> i64 {
        self.start_minute + slot as i64 * self.frequency_minutes as i64
    }

    /// Grid slot of a wall-clock minute, if it lies on the grid.
    pub fn minute_slot(&self, minute: i64) -> Option<usize> {
        let period = self.frequency_minutes as i64;
        let off = minute - self.start_minute;
        if off < 0 || off % period != 0 {
            return None;
        }
        let slot = (off / period) as usize;
        (slot < self.len).then_some(slot)
    }

    pub fn is_present(&self, station: usize, slot: usize) -> bool {
        self.mask[station * self.len + slot]
    }

    /// Raw channels `[ws, dir, temp, pressure]` if the entry is present.
    pub fn raw(&self, station: usize, slot: usize) -> Option<[f64; RAW_CHANNELS]> {
        self.is_present(station, slot).then(|| self.values[station * self.len + slot])
    }

    /// Decomposed features `[ws, dir_sin, dir_cos, temp, pressure]`.
    pub fn features(&self, station: usize, slot: usize) -> Option<[f64; FEATURE_CHANNELS]> {
        self.raw(station, slot).map(|[ws, dir, temp, pres]| {
            let (s, c) = decompose_direction_unchecked(dir);
            [ws, s, c, temp, pres]
        })
    }

    pub fn set(&mut self, station: usize, slot: usize, channels: [f64; RAW_CHANNELS]) {
        let idx = station * self.len + slot;
        self.values[idx] = channels;
        self.mask[idx] = true;
    }

    pub fn clear(&mut self, station: usize, slot: usize) {
        self.mask[station * self.len + slot] = false;
    }

    /// Number of present entries.
    pub fn present_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Total grid entries (stations × slots).
    pub fn grid_size(&self) -> usize {
        self.n_stations() * self.len
    }

    /// Contiguous sub-grid `[from, to)` with the same stations.
    pub fn slice_slots(&self, slots: Range<usize>) -> SeriesSet {
        let len = slots.end - slots.start;
        let mut out = SeriesSet::new_empty(
            self.stations.clone(),
            self.frequency_minutes,
            self.slot_minute(slots.start),
            len,
        )
        .expect("station ids already unique");
        for s in 0..self.n_stations() {
            for (k, slot) in slots.clone().enumerate() {
                if let Some(v) = self.raw(s, slot) {
                    out.set(s, k, v);
                }
            }
        }
        out
    }
}

impl PartialEq for SeriesSet {
    fn eq(&self, other: &Self) -> bool {
        if self.stations != other.stations
            || self.frequency_minutes != other.frequency_minutes
            || self.start_minute != other.start_minute
            || self.len != other.len
            || self.mask != other.mask
        {
            return false;
        }
        self.mask
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .all(|(&m, (a, b))| !m || a == b)
    }
}

/// A 10-minute series with its derived hourly companion.
#[derive(Debug, Clone)]
pub struct SeriesPair {
    pub ten_min: SeriesSet,
    pub hourly: SeriesSet,
}

impl SeriesPair {
    /// Pair a 10-minute series with the hourly aggregate derived from it.
    pub fn derive(ten_min: SeriesSet) -> Result<Self, DataError> {
        let hourly = aggregate_hourly(&ten_min)?;
        Ok(SeriesPair { ten_min, hourly })
    }
}

fn component_fraction(name: &'static str, value: i64, lo: i64, hi: i64, period: f64) -> Result<f64, DataError> {
    if value < lo || value > hi {
        return Err(DataError::InvalidComponent { name, value });
    }
    Ok(value as f64 / period)
}

/// Sine/cosine pairs for (minute, hour, day, month) with periods
/// 60, 24, 31 and 12.
pub fn encode_timestamp(minute: u32, hour: u32, day: u32, month: u32) -> Result<[f64; 8], DataError> {
    let fracs = [
        component_fraction("minute", minute as i64, 0, 59, 60.0)?,
        component_fraction("hour", hour as i64, 0, 23, 24.0)?,
        component_fraction("day", day as i64, 1, 31, 31.0)?,
        component_fraction("month", month as i64, 1, 12, 12.0)?,
    ];
    let mut out = [0.0; 8];
    for (i, frac) in fracs.iter().enumerate() {
        out[2 * i] = fmath::sin2pi(*frac);
        out[2 * i + 1] = fmath::cos2pi(*frac);
    }
    Ok(out)
}

/// Calendar components (minute, hour, day, month) of an epoch-minute
/// timestamp in UTC, proleptic Gregorian.
pub fn timestamp_components(epoch_minutes: i64) -> (u32, u32, u32, u32) {
    let minute = epoch_minutes.rem_euclid(60) as u32;
    let total_hours = epoch_minutes.div_euclid(60);
    let hour = total_hours.rem_euclid(24) as u32;
    let days = total_hours.div_euclid(24);
    let (_, month, day) = civil_from_days(days);
    (minute, hour, day, month)
}

// Days-since-epoch to (year, month, day), Gregorian calendar.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

/// Timestamp encoding of an epoch-minute value.
pub fn encode_epoch_minute(epoch_minutes: i64) -> [f64; 8] {
    let (minute, hour, day, month) = timestamp_components(epoch_minutes);
    encode_timestamp(minute, hour, day, month).expect("components from calendar math are in range")
}

/// Sine/cosine decomposition of a wind direction in degrees.
pub fn decompose_direction(deg: f64) -> Result<(f64, f64), DataError> {
    if !deg.is_finite() || !(0.0..360.0).contains(&deg) {
        return Err(DataError::DirectionOutOfRange(deg));
    }
    Ok(decompose_direction_unchecked(deg))
}

fn decompose_direction_unchecked(deg: f64) -> (f64, f64) {
    let frac = deg / 360.0;
    (fmath::sin2pi(frac), fmath::cos2pi(frac))
}

/// Per-channel standardization parameters fit on a training split.
///
/// Uses the population standard deviation (divide by n).
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: [f64; FEATURE_CHANNELS],
    pub std: [f64; FEATURE_CHANNELS],
    /// Frequency of the series the scaler was fit on, as a provenance marker.
    pub fit_frequency_minutes: u32,
}

impl Scaler {
    /// Fit means and population stds over all present entries.
    pub fn fit(train: &SeriesSet) -> Result<Self, DataError> {
        let mut sum = [0.0; FEATURE_CHANNELS];
        let mut count = 0usize;
        for s in 0..train.n_stations() {
            for t in 0..train.len() {
                if let Some(feat) = train.features(s, t) {
                    for c in 0..FEATURE_CHANNELS {
                        sum[c] += feat[c];
                    }
                    count += 1;
                }
            }
        }
        if count < 2 {
            return Err(DataError::TooFewValues { channel: 0, count });
        }
        let mut mean = [0.0; FEATURE_CHANNELS];
        for c in 0..FEATURE_CHANNELS {
            mean[c] = sum[c] / count as f64;
        }
        let mut sq = [0.0; FEATURE_CHANNELS];
        for s in 0..train.n_stations() {
            for t in 0..train.len() {
                if let Some(feat) = train.features(s, t) {
                    for c in 0..FEATURE_CHANNELS {
                        let d = feat[c] - mean[c];
                        sq[c] += d * d;
                    }
                }
            }
        }
        let mut std = [0.0; FEATURE_CHANNELS];
        for c in 0..FEATURE_CHANNELS {
            std[c] = fmath::sqrt(sq[c] / count as f64);
            if std[c] <= 0.0 {
                return Err(DataError::ConstantChannel { channel: c });
            }
        }
        Ok(Scaler { mean, std, fit_frequency_minutes: train.frequency_minutes() })
    }

    pub fn apply(&self, feat: [f64; FEATURE_CHANNELS]) -> [f64; FEATURE_CHANNELS] {
        let mut out = [0.0; FEATURE_CHANNELS];
        for c in 0..FEATURE_CHANNELS {
            out[c] = (feat[c] - self.mean[c]) / self.std[c];
        }
        out
    }

    pub fn invert(&self, scaled: [f64; FEATURE_CHANNELS]) -> [f64; FEATURE_CHANNELS] {
        let mut out = [0.0; FEATURE_CHANNELS];
        for c in 0..FEATURE_CHANNELS {
            out[c] = scaled[c] * self.std[c] + self.mean[c];
        }
        out
    }

    pub fn apply_channel(&self, channel: usize, x: f64) -> f64 {
        (x - self.mean[channel]) / self.std[channel]
    }

    pub fn invert_channel(&self, channel: usize, x: f64) -> f64 {
        x * self.std[channel] + self.mean[channel]
    }
}

/// Hourly means of a 10-minute series.
///
/// Each hourly value averages the available 10-minute samples in that hour;
/// wind direction is averaged circularly via its components. An hour with no
/// available samples stays missing.
pub fn aggregate_hourly(series10: &SeriesSet) -> Result<SeriesSet, DataError> {
    if series10.frequency_minutes() != 10 {
        return Err(DataError::FrequencyMismatch { expected: 10, got: series10.frequency_minutes() });
    }
    let start_h = series10.start_minute().div_euclid(60) * 60;
    let end = series10.start_minute() + series10.len() as i64 * 10;
    let len_h = ((end - start_h) + 59).div_euclid(60).max(0) as usize;
    let mut out = SeriesSet::new_empty(series10.stations().to_vec(), 60, start_h, len_h)?;
    for s in 0..series10.n_stations() {
        for h in 0..len_h {
            let hour_start = start_h + h as i64 * 60;
            let mut acc = [0.0f64; 4]; // ws, dir_sin, dir_cos handled separately
            let mut dir_sin = 0.0;
            let mut dir_cos = 0.0;
            let mut n = 0usize;
            for k in 0..6 {
                let minute = hour_start + k * 10;
                if let Some(slot) = series10.minute_slot(minute) {
                    if let Some([ws, dir, temp, pres]) = series10.raw(s, slot) {
                        let (ds, dc) = decompose_direction_unchecked(dir);
                        acc[0] += ws;
                        acc[2] += temp;
                        acc[3] += pres;
                        dir_sin += ds;
                        dir_cos += dc;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                let nf = n as f64;
                let mut dir = fmath::atan2(dir_sin / nf, dir_cos / nf) / (2.0 * core::f64::consts::PI) * 360.0;
                if dir < 0.0 {
                    dir += 360.0;
                }
                if dir >= 360.0 {
                    dir = 0.0;
                }
                out.set(s, h, [acc[0] / nf, dir, acc[2] / nf, acc[3] / nf]);
            }
        }
    }
    Ok(out)
}

/// Contiguous chronological 60/20/20 split on the global grid.
pub fn split_dataset(full: &SeriesSet) -> Result<(SeriesSet, SeriesSet, SeriesSet), DataError> {
    let len = full.len();
    let i1 = len * 6 / 10;
    let i2 = len * 8 / 10;
    let checks = [("train", i1), ("validation", i2 - i1), ("test", len - i2)];
    for (name, l) in checks {
        if l < LOOKBACK_10MIN {
            return Err(DataError::InsufficientData { split: name, len: l, need: LOOKBACK_10MIN });
        }
    }
    Ok((
        full.slice_slots(0..i1),
        full.slice_slots(i1..i2),
        full.slice_slots(i2..len),
    ))
}

/// Index sets of one forecasting sample on the dual-frequency grid.
///
/// `input10` and `targets` are slot ranges on the 10-minute grid, `input60`
/// on the hourly grid. All ranges are shared by every station; per-station
/// availability is read off the series masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Wall-clock minute of the first target step.
    pub anchor_minute: i64,
    pub input10: Range<usize>,
    pub input60: Range<usize>,
    pub targets: Range<usize>,
}

impl Window {
    pub fn lookback10_len(&self) -> usize {
        self.input10.end - self.input10.start
    }

    pub fn lookback60_len(&self) -> usize {
        self.input60.end - self.input60.start
    }
}

/// All valid windows of a dual-frequency split.
///
/// An anchor is valid when 18 ten-minute slots precede it, 6 target slots
/// follow it, and 12 fully elapsed hourly slots precede it. Windows where
/// every input slot of some station is missing are still emitted.
pub fn make_windows(pair: &SeriesPair) -> Vec<Window> {
    let ten = &pair.ten_min;
    let hourly = &pair.hourly;
    let mut out = Vec::new();
    if ten.len() < LOOKBACK_10MIN + HORIZON {
        return out;
    }
    for anchor in LOOKBACK_10MIN..=(ten.len() - HORIZON) {
        let anchor_minute = ten.slot_minute(anchor);
        // Last hourly slot whose full hour has elapsed by the anchor.
        let last_start = anchor_minute - 60;
        if last_start < hourly.start_minute() {
            continue;
        }
        let j_end = ((last_start - hourly.start_minute()) / 60) as usize;
        if j_end + 1 < LOOKBACK_HOURLY || j_end >= hourly.len() {
            continue;
        }
        out.push(Window {
            anchor_minute,
            input10: anchor - LOOKBACK_10MIN..anchor,
            input60: j_end + 1 - LOOKBACK_HOURLY..j_end + 1,
            targets: anchor..anchor + HORIZON,
        });
    }
    out
}
