//! Graph construction for both formulations: the unified sample-per-node
//! graph and the fixed per-station spatial graph used by baselines.
//!
//! Unified-graph connectivity, per node: the three temporally closest
//! earlier and later observed samples of the same station and frequency,
//! plus one node (minimal |Δt|) from each of the three geographically
//! nearest stations. Forecast placeholder nodes receive edges from every
//! node of their own station and never send to observed nodes.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::{
    encode_epoch_minute, Scaler, SeriesPair, StationMeta, Window, FEATURE_CHANNELS, HORIZON,
};
use crate::fmath;

/// Earth radius used for great-circle distances, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Number of spatial neighbours per station.
pub const SPATIAL_NEIGHBOURS: usize = 3;
/// Number of past/future temporal neighbours per node.
pub const TEMPORAL_NEIGHBOURS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum GraphError {
    /// Baseline tensors need a fully imputed window.
    MissingEntry { station: usize, slot: usize, frequency_minutes: u32 },
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::MissingEntry { station, slot, frequency_minutes } => write!(
                f,
                "missing entry at station {station}, slot {slot} ({frequency_minutes}-minute grid); baselines require imputed inputs"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GraphError {}

/// Great-circle distance between two stations in kilometres.
pub fn haversine(a: &StationMeta, b: &StationMeta) -> f64 {
    let rad = core::f64::consts::PI / 180.0;
    let (lat1, lat2) = (a.latitude * rad, b.latitude * rad);
    let dlat = (b.latitude - a.latitude) * rad;
    let dlon = (b.longitude - a.longitude) * rad;
    let s1 = fmath::sin(dlat / 2.0);
    let s2 = fmath::sin(dlon / 2.0);
    let h = s1 * s1 + fmath::cos(lat1) * fmath::cos(lat2) * s2 * s2;
    2.0 * EARTH_RADIUS_KM * fmath::atan2(fmath::sqrt(h), fmath::sqrt(1.0 - h))
}

/// Fixed k-nearest-neighbour graph over stations.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    /// Per station: neighbour station indices sorted by (distance, id).
    pub neighbors: Vec<Vec<usize>>,
    /// Great-circle distance to each neighbour, km, parallel to `neighbors`.
    pub distances_km: Vec<Vec<f64>>,
}

impl SpatialGraph {
    /// Mean and population std of all neighbour distances, for edge-feature
    /// standardization. Degenerate spreads fall back to std 1.
    pub fn distance_stats(&self) -> (f64, f64) {
        let all: Vec<f64> = self.distances_km.iter().flatten().copied().collect();
        if all.is_empty() {
            return (0.0, 1.0);
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / all.len() as f64;
        let std = fmath::sqrt(var);
        (mean, if std > 1e-9 { std } else { 1.0 })
    }
}

/// Connect every station to its `k` nearest stations by haversine distance,
/// ties broken by smaller station id. With `n` stations each neighbour list
/// has `min(k, n - 1)` entries.
pub fn knn_stations(stations: &[StationMeta], k: usize) -> SpatialGraph {
    let n = stations.len();
    let mut neighbors = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (haversine(&stations[i], &stations[j]), j))
            .collect();
        cand.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then_with(|| stations[a.1].station_id.cmp(&stations[b.1].station_id))
        });
        cand.truncate(k);
        distances.push(cand.iter().map(|c| c.0).collect());
        neighbors.push(cand.iter().map(|c| c.1).collect());
    }
    SpatialGraph { neighbors, distances_km: distances }
}

/// Sampling-frequency flag of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreqFlag {
    TenMin,
    Hourly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Observed,
    ForecastPlaceholder,
}

/// One node of the unified graph: a recorded sample or a forecast
/// placeholder.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub node_id: usize,
    /// Dense station index into the series' station list.
    pub station: usize,
    /// Wall-clock minute.
    pub timestamp: i64,
    pub frequency: FreqFlag,
    pub kind: NodeKind,
    /// Scaled feature channels.
    pub features: [f64; FEATURE_CHANNELS],
    pub time_encoding: [f64; 8],
    /// Position within the node's own sequence; placeholders continue the
    /// 10-minute look-back indexing.
    pub seq_pos: usize,
}

/// Directed edge with raw spatial/temporal deltas (src minus dst).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub src: usize,
    pub dst: usize,
    pub dlat: f64,
    pub dlon: f64,
    pub dt_minutes: f64,
}

/// Raw deltas between two nodes, src value minus dst value.
pub fn edge_deltas(src: &NodeRecord, dst: &NodeRecord, stations: &[StationMeta]) -> EdgeRecord {
    let s = &stations[src.station];
    let d = &stations[dst.station];
    EdgeRecord {
        src: src.node_id,
        dst: dst.node_id,
        dlat: s.latitude - d.latitude,
        dlon: s.longitude - d.longitude,
        dt_minutes: (src.timestamp - dst.timestamp) as f64,
    }
}

/// Unified sample-per-node graph for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedGraph {
    /// Station metadata, shared with the source series.
    pub stations: Vec<StationMeta>,
    pub nodes: Vec<NodeRecord>,
    /// In-edges per node, sorted by (|Δt|, station, Δt, frequency).
    pub in_edges: Vec<Vec<EdgeRecord>>,
    /// Placeholder node ids, `[station][horizon step]`.
    pub forecast_nodes: Vec<Vec<usize>>,
    /// Last recorded wind speed per station in target (10-minute) scale.
    pub persistence_scaled: Vec<f64>,
    /// Stations whose placeholders had to borrow a neighbour's last values.
    pub fallback_stations: Vec<usize>,
}

impl UnifiedGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn observed_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Observed).count()
    }

    pub fn n_edges(&self) -> usize {
        self.in_edges.iter().map(|e| e.len()).sum()
    }
}

/// Scalers for both sampling frequencies, fit on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerPair {
    pub ten_min: Scaler,
    pub hourly: Scaler,
}

fn sort_in_edges(edges: &mut [EdgeRecord], nodes: &[NodeRecord]) {
    edges.sort_by(|a, b| {
        let ka = (fmath::abs(a.dt_minutes), nodes[a.src].station, a.dt_minutes, nodes[a.src].frequency == FreqFlag::Hourly);
        let kb = (fmath::abs(b.dt_minutes), nodes[b.src].station, b.dt_minutes, nodes[b.src].frequency == FreqFlag::Hourly);
        ka.partial_cmp(&kb).unwrap()
    });
}

/// Build the unified graph for one window.
///
/// Observed nodes are exactly the masked-in samples of both frequencies in
/// the window's input ranges; six placeholder nodes per station carry the
/// station's last available values. Missing entries are simply absent.
pub fn build_unified_graph(
    window: &Window,
    pair: &SeriesPair,
    scalers: &ScalerPair,
    spatial: &SpatialGraph,
) -> UnifiedGraph {
    let ten = &pair.ten_min;
    let hourly = &pair.hourly;
    let n_st = ten.n_stations();
    let stations = ten.stations();

    let mut nodes: Vec<NodeRecord> = Vec::new();
    // per station: node ids of 10-min and hourly observations, ascending time
    let mut obs10: Vec<Vec<usize>> = vec![Vec::new(); n_st];
    let mut obs60: Vec<Vec<usize>> = vec![Vec::new(); n_st];

    for s in 0..n_st {
        for (pos, slot) in window.input10.clone().enumerate() {
            if let Some(feat) = ten.features(s, slot) {
                let ts = ten.slot_minute(slot);
                let id = nodes.len();
                nodes.push(NodeRecord {
                    node_id: id,
                    station: s,
                    timestamp: ts,
                    frequency: FreqFlag::TenMin,
                    kind: NodeKind::Observed,
                    features: scalers.ten_min.apply(feat),
                    time_encoding: encode_epoch_minute(ts),
                    seq_pos: pos,
                });
                obs10[s].push(id);
            }
        }
        for (pos, slot) in window.input60.clone().enumerate() {
            if let Some(feat) = hourly.features(s, slot) {
                let ts = hourly.slot_minute(slot);
                let id = nodes.len();
                nodes.push(NodeRecord {
                    node_id: id,
                    station: s,
                    timestamp: ts,
                    frequency: FreqFlag::Hourly,
                    kind: NodeKind::Observed,
                    features: scalers.hourly.apply(feat),
                    time_encoding: encode_epoch_minute(ts),
                    seq_pos: pos,
                });
                obs60[s].push(id);
            }
        }
    }

    // Last available values per station for placeholders: the most recent
    // observation of either frequency, preferring the 10-minute node on a
    // timestamp tie. Empty stations borrow from the nearest station with
    // data, mirroring the imputation fallback.
    let mut last_node: Vec<Option<usize>> = vec![None; n_st];
    for s in 0..n_st {
        let best10 = obs10[s].last().copied();
        let best60 = obs60[s].last().copied();
        last_node[s] = match (best10, best60) {
            (Some(a), Some(b)) => {
                if nodes[b].timestamp > nodes[a].timestamp {
                    Some(b)
                } else {
                    Some(a)
                }
            }
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        };
    }
    let mut fallback_stations = Vec::new();
    let mut placeholder_feat: Vec<[f64; FEATURE_CHANNELS]> = vec![[0.0; FEATURE_CHANNELS]; n_st];
    let mut persistence_scaled = vec![0.0; n_st];
    for s in 0..n_st {
        let source = match last_node[s] {
            Some(id) => Some(id),
            None => {
                // nearest station with data, ties by smaller station id
                let donor = (0..n_st)
                    .filter(|&o| last_node[o].is_some())
                    .min_by(|&a, &b| {
                        let da = haversine(&stations[s], &stations[a]);
                        let db = haversine(&stations[s], &stations[b]);
                        da.partial_cmp(&db)
                            .unwrap()
                            .then_with(|| stations[a].station_id.cmp(&stations[b].station_id))
                    });
                if donor.is_some() {
                    fallback_stations.push(s);
                    log::warn!(
                        "station {} has no samples in window; placeholders borrow last values",
                        stations[s].station_id
                    );
                }
                donor.map(|o| last_node[o].unwrap())
            }
        };
        match source {
            Some(id) => {
                placeholder_feat[s] = nodes[id].features;
                // persistence value in target scale: unscale from the source
                // frequency, rescale with the 10-minute scaler
                let src_scaler = match nodes[id].frequency {
                    FreqFlag::TenMin => &scalers.ten_min,
                    FreqFlag::Hourly => &scalers.hourly,
                };
                let raw_ws = src_scaler.invert_channel(0, nodes[id].features[0]);
                persistence_scaled[s] = scalers.ten_min.apply_channel(0, raw_ws);
            }
            None => {
                // no data anywhere: zero features == per-channel training mean
                placeholder_feat[s] = [0.0; FEATURE_CHANNELS];
                persistence_scaled[s] = 0.0;
            }
        }
    }

    let mut forecast_nodes: Vec<Vec<usize>> = vec![Vec::with_capacity(HORIZON); n_st];
    for s in 0..n_st {
        for (k, slot) in window.targets.clone().enumerate() {
            let ts = ten.slot_minute(slot);
            let id = nodes.len();
            nodes.push(NodeRecord {
                node_id: id,
                station: s,
                timestamp: ts,
                frequency: FreqFlag::TenMin,
                kind: NodeKind::ForecastPlaceholder,
                features: placeholder_feat[s],
                time_encoding: encode_epoch_minute(ts),
                seq_pos: window.lookback10_len() + k,
            });
            forecast_nodes[s].push(id);
        }
    }

    // combined observed node list per station, ascending timestamp, for
    // spatial neighbour selection
    let mut obs_all: Vec<Vec<usize>> = vec![Vec::new(); n_st];
    for s in 0..n_st {
        let mut ids: Vec<usize> = obs10[s].iter().chain(obs60[s].iter()).copied().collect();
        ids.sort_by_key(|&id| (nodes[id].timestamp, nodes[id].frequency == FreqFlag::Hourly));
        obs_all[s] = ids;
    }

    let mut in_edges: Vec<Vec<EdgeRecord>> = vec![Vec::new(); nodes.len()];

    // temporal edges: 3 closest earlier + 3 closest later, same station and
    // frequency
    for s in 0..n_st {
        for list in [&obs10[s], &obs60[s]] {
            for (i, &id) in list.iter().enumerate() {
                let lo = i.saturating_sub(TEMPORAL_NEIGHBOURS);
                for &src in &list[lo..i] {
                    in_edges[id].push(edge_deltas(&nodes[src], &nodes[id], stations));
                }
                let hi = (i + 1 + TEMPORAL_NEIGHBOURS).min(list.len());
                for &src in &list[i + 1..hi] {
                    in_edges[id].push(edge_deltas(&nodes[src], &nodes[id], stations));
                }
            }
        }
    }

    // spatial edges: for each of the 3 nearest stations, the observed node
    // minimizing |Δt|, preferring the same frequency, then the earlier node
    for dst_id in 0..nodes.len() {
        if nodes[dst_id].kind != NodeKind::Observed {
            continue;
        }
        let dst = nodes[dst_id].clone();
        for &nb in &spatial.neighbors[dst.station] {
            let candidates = &obs_all[nb];
            if candidates.is_empty() {
                continue;
            }
            let best = candidates
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let ka = spatial_pick_key(&nodes[a], &dst);
                    let kb = spatial_pick_key(&nodes[b], &dst);
                    ka.partial_cmp(&kb).unwrap()
                })
                .unwrap();
            in_edges[dst_id].push(edge_deltas(&nodes[best], &dst, stations));
        }
    }

    // placeholder edges: from every node of the same station (observed at
    // both frequencies and earlier placeholders)
    for s in 0..n_st {
        for (k, &ph) in forecast_nodes[s].iter().enumerate() {
            let dst = nodes[ph].clone();
            for &src in &obs_all[s] {
                in_edges[ph].push(edge_deltas(&nodes[src], &dst, stations));
            }
            for &earlier in &forecast_nodes[s][..k] {
                in_edges[ph].push(edge_deltas(&nodes[earlier], &dst, stations));
            }
        }
    }

    for (dst, edges) in in_edges.iter_mut().enumerate() {
        debug_assert!(edges.iter().all(|e| e.dst == dst && e.src != dst));
        sort_in_edges(edges, &nodes);
    }

    UnifiedGraph {
        stations: stations.to_vec(),
        nodes,
        in_edges,
        forecast_nodes,
        persistence_scaled,
        fallback_stations,
    }
}

fn spatial_pick_key(cand: &NodeRecord, dst: &NodeRecord) -> (f64, bool, i64) {
    (
        fmath::abs((cand.timestamp - dst.timestamp) as f64),
        cand.frequency != dst.frequency,
        cand.timestamp,
    )
}

/// Population std of the signed Δt over all edges of the given graphs.
///
/// Used to standardize the temporal edge feature before embedding; a
/// degenerate spread falls back to 1.
pub fn edge_dt_scale(graphs: &[UnifiedGraph]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for g in graphs {
        for edges in &g.in_edges {
            for e in edges {
                sum += e.dt_minutes;
                count += 1;
            }
        }
    }
    if count == 0 {
        return 1.0;
    }
    let mean = sum / count as f64;
    let mut sq = 0.0;
    for g in graphs {
        for edges in &g.in_edges {
            for e in edges {
                sq += (e.dt_minutes - mean) * (e.dt_minutes - mean);
            }
        }
    }
    let std = fmath::sqrt(sq / count as f64);
    if std > 1e-9 {
        std
    } else {
        1.0
    }
}

/// Aligned per-timestep tensors for the traditional baselines.
///
/// Feature channels per station and step: the five scaled 10-minute
/// channels plus the held (most recent complete) hourly wind speed, scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedWindow {
    /// Station metadata, shared with the source series.
    pub stations: Vec<StationMeta>,
    /// Fixed k-nearest-neighbour station graph.
    pub spatial: SpatialGraph,
    pub n_stations: usize,
    pub steps: usize,
    pub channels: usize,
    /// `[station][step][channel]`, row-major.
    pub features: Vec<f64>,
    /// Timestamp encoding per step, `[step][8]`.
    pub time_encoding: Vec<f64>,
    /// Wall-clock minute per input step.
    pub timestamps: Vec<i64>,
    /// Wall-clock minute per target step.
    pub target_timestamps: Vec<i64>,
    /// Scaled wind speed at the last input step, per station.
    pub persistence_scaled: Vec<f64>,
    /// Scaled 10-minute wind-speed look-back, `[station][step]`.
    pub ws_lookback: Vec<f64>,
}

/// Number of feature channels in an [`AlignedWindow`].
pub const ALIGNED_CHANNELS: usize = FEATURE_CHANNELS + 1;

/// Assemble aligned `(stations × steps × channels)` inputs for one window.
///
/// Requires a fully imputed window: any missing entry in the input ranges is
/// a validation error.
pub fn build_spatial_graph(
    window: &Window,
    pair: &SeriesPair,
    scalers: &ScalerPair,
    spatial: &SpatialGraph,
) -> Result<AlignedWindow, GraphError> {
    let ten = &pair.ten_min;
    let hourly = &pair.hourly;
    let n_st = ten.n_stations();
    let steps = window.lookback10_len();
    let mut features = vec![0.0; n_st * steps * ALIGNED_CHANNELS];
    let mut ws_lookback = vec![0.0; n_st * steps];
    let mut time_encoding = vec![0.0; steps * 8];
    let mut timestamps = Vec::with_capacity(steps);
    for (pos, slot) in window.input10.clone().enumerate() {
        let ts = ten.slot_minute(slot);
        timestamps.push(ts);
        let enc = encode_epoch_minute(ts);
        time_encoding[pos * 8..pos * 8 + 8].copy_from_slice(&enc);
        for s in 0..n_st {
            let feat = ten.features(s, slot).ok_or(GraphError::MissingEntry {
                station: s,
                slot,
                frequency_minutes: 10,
            })?;
            let scaled = scalers.ten_min.apply(feat);
            let base = (s * steps + pos) * ALIGNED_CHANNELS;
            features[base..base + FEATURE_CHANNELS].copy_from_slice(&scaled);
            // held hourly value: most recent fully elapsed hour
            let held_minute = (ts - 60).div_euclid(60) * 60;
            let hslot = hourly
                .minute_slot(held_minute)
                .ok_or(GraphError::MissingEntry { station: s, slot, frequency_minutes: 60 })?;
            let hfeat = hourly.features(s, hslot).ok_or(GraphError::MissingEntry {
                station: s,
                slot: hslot,
                frequency_minutes: 60,
            })?;
            features[base + FEATURE_CHANNELS] = scalers.hourly.apply(hfeat)[0];
            ws_lookback[s * steps + pos] = scaled[0];
        }
    }
    let target_timestamps = window.targets.clone().map(|t| ten.slot_minute(t)).collect();
    let persistence_scaled = (0..n_st).map(|s| ws_lookback[s * steps + steps - 1]).collect();
    Ok(AlignedWindow {
        stations: ten.stations().to_vec(),
        spatial: spatial.clone(),
        n_stations: n_st,
        steps,
        channels: ALIGNED_CHANNELS,
        features,
        time_encoding,
        timestamps,
        target_timestamps,
        persistence_scaled,
        ws_lookback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SeriesSet, StationMeta};
    use alloc::collections::BTreeSet;
    use alloc::format;
    use approx::assert_abs_diff_eq;

    fn station(id: &str, lat: f64, lon: f64) -> StationMeta {
        StationMeta::new(id, lat, lon).unwrap()
    }

    fn test_pair(n_st: usize, len: usize) -> SeriesPair {
        let stations =
            (0..n_st).map(|i| station(&format!("S{i}"), 58.0 + 0.3 * i as f64, 3.0 + 0.4 * i as f64)).collect();
        let mut set = SeriesSet::new_empty(stations, 10, 0, len).unwrap();
        for s in 0..n_st {
            for t in 0..len {
                let ws = 5.0 + (s as f64) + 0.01 * t as f64;
                set.set(s, t, [ws, (t as f64 * 7.0) % 360.0, 5.0 + 0.1 * s as f64, 1005.0 + t as f64 * 0.001]);
            }
        }
        SeriesPair::derive(set).unwrap()
    }

    fn test_scalers(pair: &SeriesPair) -> ScalerPair {
        ScalerPair {
            ten_min: Scaler::fit(&pair.ten_min).unwrap(),
            hourly: Scaler::fit(&pair.hourly).unwrap(),
        }
    }

    fn full_window(pair: &SeriesPair) -> Window {
        crate::data::make_windows(pair).into_iter().next().unwrap()
    }

    #[test]
    fn haversine_basics() {
        let a = station("A", 0.0, 0.0);
        let b = station("B", 0.0, 1.0);
        assert_eq!(haversine(&a, &a), 0.0);
        assert_abs_diff_eq!(haversine(&a, &b), 6371.0 * core::f64::consts::PI / 180.0, epsilon = 1e-9);
        let c = station("C", 55.3, 7.9);
        let d = station("D", 61.1, 2.2);
        assert_abs_diff_eq!(haversine(&c, &d), haversine(&d, &c), epsilon = 1e-12);
    }

    #[test]
    fn knn_two_stations_clamped() {
        let stations = [station("A", 59.0, 3.0), station("B", 60.0, 4.0)];
        let g = knn_stations(&stations, 3);
        assert_eq!(g.neighbors[0], vec![1]);
        assert_eq!(g.neighbors[1], vec![0]);
    }

    #[test]
    fn knn_matches_brute_force_with_tie_break() {
        // four stations on a meridian, equally spaced
        let stations: Vec<StationMeta> =
            (0..4).map(|i| station(&format!("S{i}"), 58.0 + i as f64, 5.0)).collect();
        let g = knn_stations(&stations, 3);
        for i in 0..4 {
            let mut brute: Vec<(f64, usize)> = (0..4)
                .filter(|&j| j != i)
                .map(|j| (haversine(&stations[i], &stations[j]), j))
                .collect();
            brute.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap()
                    .then_with(|| stations[a.1].station_id.cmp(&stations[b.1].station_id))
            });
            let want: Vec<usize> = brute.iter().take(3).map(|c| c.1).collect();
            assert_eq!(g.neighbors[i], want);
            assert!(!g.neighbors[i].contains(&i));
        }
    }

    #[test]
    fn edge_deltas_examples() {
        let stations = [station("A", 59.0, 3.0)];
        let n0 = NodeRecord {
            node_id: 0,
            station: 0,
            timestamp: 600,
            frequency: FreqFlag::TenMin,
            kind: NodeKind::Observed,
            features: [0.0; FEATURE_CHANNELS],
            time_encoding: [0.0; 8],
            seq_pos: 0,
        };
        let mut n1 = n0.clone();
        n1.node_id = 1;
        n1.timestamp = 610;
        let e = edge_deltas(&n0, &n1, &stations);
        assert_eq!((e.dlat, e.dlon, e.dt_minutes), (0.0, 0.0, -10.0));
        let back = edge_deltas(&n1, &n0, &stations);
        assert_eq!(back.dt_minutes, 10.0);
        // hourly node 30 minutes before a 10-minute node: src - dst = -30
        let mut h = n0.clone();
        h.frequency = FreqFlag::Hourly;
        h.timestamp = 600;
        let mut m = n0.clone();
        m.node_id = 2;
        m.timestamp = 630;
        assert_eq!(edge_deltas(&h, &m, &stations).dt_minutes, -30.0);
    }

    #[test]
    fn unified_single_frequency_node_count() {
        // 5 stations, 7 ten-minute steps, no hourly inputs
        let pair = test_pair(5, 20);
        let scalers = test_scalers(&pair);
        let spatial = knn_stations(pair.ten_min.stations(), SPATIAL_NEIGHBOURS);
        let window = Window {
            anchor_minute: pair.ten_min.slot_minute(7),
            input10: 0..7,
            input60: 0..0,
            targets: 7..13,
        };
        let g = build_unified_graph(&window, &pair, &scalers, &spatial);
        assert_eq!(g.observed_count(), 35);
        assert_eq!(g.n_nodes(), 35 + 5 * HORIZON);
    }

    #[test]
    fn unified_full_counts_and_interior_degree() {
        let pair = test_pair(4, 120);
        let scalers = test_scalers(&pair);
        let spatial = knn_stations(pair.ten_min.stations(), SPATIAL_NEIGHBOURS);
        let window = full_window(&pair);
        let g = build_unified_graph(&window, &pair, &scalers, &spatial);
        let expect_obs = 4 * (18 + 12);
        assert_eq!(g.observed_count(), expect_obs);
        assert_eq!(g.n_nodes(), expect_obs + 4 * HORIZON);
        // interior observed 10-minute node: 3 past + 3 future + 3 spatial
        let node = g
            .nodes
            .iter()
            .find(|n| {
                n.kind == NodeKind::Observed
                    && n.frequency == FreqFlag::TenMin
                    && n.seq_pos >= 3
                    && n.seq_pos <= 14
            })
            .unwrap();
        assert_eq!(g.in_edges[node.node_id].len(), 9);
    }

    #[test]
    fn placeholders_never_feed_observed() {
        let pair = test_pair(3, 120);
        let scalers = test_scalers(&pair);
        let spatial = knn_stations(pair.ten_min.stations(), SPATIAL_NEIGHBOURS);
        let g = build_unified_graph(&full_window(&pair), &pair, &scalers, &spatial);
        for n in &g.nodes {
            if n.kind == NodeKind::Observed {
                for e in &g.in_edges[n.node_id] {
                    assert_eq!(g.nodes[e.src].kind, NodeKind::Observed);
                }
            }
        }
        // placeholders receive from all same-station nodes and earlier
        // placeholders
        for s in 0..3 {
            for (k, &ph) in g.forecast_nodes[s].iter().enumerate() {
                let expect = g
                    .nodes
                    .iter()
                    .filter(|n| n.station == s && n.kind == NodeKind::Observed)
                    .count()
                    + k;
                assert_eq!(g.in_edges[ph].len(), expect);
                for e in &g.in_edges[ph] {
                    assert_eq!(g.nodes[e.src].station, s);
                }
            }
        }
    }

    #[test]
    fn missing_entries_shrink_graph() {
        let pair = test_pair(3, 120);
        let scalers = test_scalers(&pair);
        let spatial = knn_stations(pair.ten_min.stations(), SPATIAL_NEIGHBOURS);
        let window = full_window(&pair);
        let full = build_unified_graph(&window, &pair, &scalers, &spatial);

        let mut corrupted = pair.clone();
        for t in window.input10.clone().take(5) {
            corrupted.ten_min.clear(1, t);
        }
        let corrupted = SeriesPair::derive(corrupted.ten_min).unwrap();
        let g = build_unified_graph(&window, &corrupted, &scalers, &spatial);
        assert!(g.n_nodes() < full.n_nodes());
        let t_total = 18 + 12 + HORIZON;
        assert!(g.n_nodes() < 3 * t_total);
        assert_eq!(g.forecast_nodes.iter().map(|f| f.len()).sum::<usize>(), 3 * HORIZON);
    }

    #[test]
    fn empty_station_still_forecast() {
        let pair = test_pair(3, 120);
        let scalers = test_scalers(&pair);
        let spatial = knn_stations(pair.ten_min.stations(), SPATIAL_NEIGHBOURS);
        let window = full_window(&pair);
        let mut wiped = pair.ten_min.clone();
        for t in 0..wiped.len() {
            wiped.clear(0, t);
        }
        let wiped = SeriesPair::derive(wiped).unwrap();
        let g = build_unified_graph(&window, &wiped, &scalers, &spatial);
        assert_eq!(g.forecast_nodes[0].len(), HORIZON);
        assert_eq!(g.fallback_stations, vec![0]);
        // borrowed features come from the geographically nearest station, S1
        let donor_last = g
            .nodes
            .iter()
            .filter(|n| n.station == 1 && n.kind == NodeKind::Observed)
            .max_by_key(|n| (n.timestamp, n.frequency == FreqFlag::TenMin))
            .unwrap();
        assert_eq!(g.nodes[g.forecast_nodes[0][0]].features, donor_last.features);
    }

    #[test]
    fn in_edges_sorted_and_consistent() {
        let pair = test_pair(4, 130);
        let scalers = test_scalers(&pair);
        let spatial = knn_stations(pair.ten_min.stations(), SPATIAL_NEIGHBOURS);
        let g = build_unified_graph(&full_window(&pair), &pair, &scalers, &spatial);
        for (dst, edges) in g.in_edges.iter().enumerate() {
            for w in edges.windows(2) {
                let ka = (fmath::abs(w[0].dt_minutes), g.nodes[w[0].src].station);
                let kb = (fmath::abs(w[1].dt_minutes), g.nodes[w[1].src].station);
                assert!(ka <= kb);
            }
            for e in edges {
                assert_eq!(e.dst, dst);
                assert!(e.src < g.n_nodes());
                assert_ne!(e.src, e.dst);
                // deltas are exactly src - dst
                let s = &g.nodes[e.src];
                let d = &g.nodes[e.dst];
                assert_eq!(e.dt_minutes, (s.timestamp - d.timestamp) as f64);
            }
        }
    }

    // Brute-force oracle: recompute the expected edge set from the stated
    // connectivity rules with plain O(n^2) scans.
    fn brute_force_edges(g: &UnifiedGraph, spatial: &SpatialGraph) -> BTreeSet<(usize, usize)> {
        let mut want = BTreeSet::new();
        for dst in &g.nodes {
            match dst.kind {
                NodeKind::Observed => {
                    let same: Vec<&NodeRecord> = g
                        .nodes
                        .iter()
                        .filter(|n| {
                            n.kind == NodeKind::Observed
                                && n.station == dst.station
                                && n.frequency == dst.frequency
                                && n.node_id != dst.node_id
                        })
                        .collect();
                    let mut earlier: Vec<&&NodeRecord> =
                        same.iter().filter(|n| n.timestamp < dst.timestamp).collect();
                    earlier.sort_by_key(|n| core::cmp::Reverse(n.timestamp));
                    for n in earlier.iter().take(3) {
                        want.insert((n.node_id, dst.node_id));
                    }
                    let mut later: Vec<&&NodeRecord> =
                        same.iter().filter(|n| n.timestamp > dst.timestamp).collect();
                    later.sort_by_key(|n| n.timestamp);
                    for n in later.iter().take(3) {
                        want.insert((n.node_id, dst.node_id));
                    }
                    for &nb in &spatial.neighbors[dst.station] {
                        let best = g
                            .nodes
                            .iter()
                            .filter(|n| n.kind == NodeKind::Observed && n.station == nb)
                            .min_by(|a, b| {
                                spatial_pick_key(a, dst).partial_cmp(&spatial_pick_key(b, dst)).unwrap()
                            });
                        if let Some(b) = best {
                            want.insert((b.node_id, dst.node_id));
                        }
                    }
                }
                NodeKind::ForecastPlaceholder => {
                    for n in &g.nodes {
                        let is_obs_same = n.kind == NodeKind::Observed && n.station == dst.station;
                        let is_earlier_ph = n.kind == NodeKind::ForecastPlaceholder
                            && n.station == dst.station
                            && n.timestamp < dst.timestamp;
                        if is_obs_same || is_earlier_ph {
                            want.insert((n.node_id, dst.node_id));
                        }
                    }
                }
            }
        }
        want
    }

    #[test]
    fn rebuild_after_removal_matches_brute_force() {
        let pair = test_pair(4, 130);
        let scalers = test_scalers(&pair);
        let spatial = knn_stations(pair.ten_min.stations(), SPATIAL_NEIGHBOURS);
        let window = full_window(&pair);

        let check = |p: &SeriesPair| {
            let g = build_unified_graph(&window, p, &scalers, &spatial);
            let got: BTreeSet<(usize, usize)> = g
                .in_edges
                .iter()
                .flatten()
                .map(|e| (e.src, e.dst))
                .collect();
            assert_eq!(got, brute_force_edges(&g, &spatial));
            assert_eq!(got.len(), g.n_edges(), "no duplicate edges");
        };
        check(&pair);
        // remove a scattered subset and re-check the connectivity rules
        let mut reduced = pair.ten_min.clone();
        for (s, t) in [(0usize, 115usize), (1, 116), (1, 117), (2, 120), (3, 125), (0, 126)] {
            reduced.clear(s, t);
        }
        check(&SeriesPair::derive(reduced).unwrap());
    }

    #[test]
    fn aligned_window_copies_values() {
        let pair = test_pair(3, 120);
        let scalers = test_scalers(&pair);
        let window = full_window(&pair);
        let spatial = knn_stations(pair.ten_min.stations(), SPATIAL_NEIGHBOURS);
        let aligned = build_spatial_graph(&window, &pair, &scalers, &spatial).unwrap();
        assert_eq!(aligned.steps, 18);
        assert_eq!(aligned.channels, 6);
        for s in 0..3 {
            for (pos, slot) in window.input10.clone().enumerate() {
                let feat = scalers.ten_min.apply(pair.ten_min.features(s, slot).unwrap());
                let base = (s * 18 + pos) * ALIGNED_CHANNELS;
                for c in 0..FEATURE_CHANNELS {
                    assert_eq!(aligned.features[base + c], feat[c]);
                }
            }
        }
    }

    #[test]
    fn aligned_window_rejects_missing() {
        let pair = test_pair(3, 120);
        let scalers = test_scalers(&pair);
        let window = full_window(&pair);
        let mut broken = pair.clone();
        broken.ten_min.clear(1, window.input10.start + 2);
        let broken = SeriesPair::derive(broken.ten_min).unwrap();
        let spatial = knn_stations(pair.ten_min.stations(), SPATIAL_NEIGHBOURS);
        assert!(matches!(
            build_spatial_graph(&window, &broken, &scalers, &spatial),
            Err(GraphError::MissingEntry { .. })
        ));
    }

    #[test]
    fn dt_scale_positive() {
        let pair = test_pair(3, 120);
        let scalers = test_scalers(&pair);
        let spatial = knn_stations(pair.ten_min.stations(), SPATIAL_NEIGHBOURS);
        let g = build_unified_graph(&full_window(&pair), &pair, &scalers, &spatial);
        let scale = edge_dt_scale(&[g]);
        assert!(scale > 1.0);
    }
}
