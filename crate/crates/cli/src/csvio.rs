//! CSV schemas: station series, corruption logs and graph dumps.
//!
//! Series schema:
//! `station_id,lat,lon,timestamp,wind_speed,wind_direction,temperature,pressure[,frequency_minutes]`
//! with ISO-8601 UTC timestamps. A row with any empty value field marks a
//! missing grid entry; export writes one row per grid slot so a round trip
//! reproduces the grid exactly.

use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use stugn_core::corruption::CorruptionLog;
use stugn_core::data::{RawRecord, SeriesSet, StationMeta};
use stugn_core::graph::UnifiedGraph;

use crate::CliError;

fn minute_to_iso(minute: i64) -> String {
    let dt: DateTime<Utc> = Utc.timestamp_opt(minute * 60, 0).single().expect("minute in range");
    dt.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn iso_to_minute(text: &str, line: usize) -> Result<i64, CliError> {
    let dt = DateTime::parse_from_rfc3339(text).map_err(|e| {
        CliError::validation(format!("line {line}: bad timestamp `{text}`: {e}"))
    })?;
    let secs = dt.with_timezone(&Utc).timestamp();
    if secs % 60 != 0 {
        return Err(CliError::validation(format!(
            "line {line}: timestamp `{text}` is not on a whole minute"
        )));
    }
    Ok(secs / 60)
}

/// Write a series to CSV, one row per grid slot, missing entries with
/// empty value fields.
pub fn export_series(set: &SeriesSet, path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::runtime(e.to_string()))?;
    w.write_record([
        "station_id",
        "lat",
        "lon",
        "timestamp",
        "wind_speed",
        "wind_direction",
        "temperature",
        "pressure",
        "frequency_minutes",
    ])
    .map_err(|e| CliError::runtime(e.to_string()))?;
    let freq = set.frequency_minutes().to_string();
    for (s, st) in set.stations().iter().enumerate() {
        for t in 0..set.len() {
            let ts = minute_to_iso(set.slot_minute(t));
            let row: [String; 9] = match set.raw(s, t) {
                Some([ws, dir, temp, pres]) => [
                    st.station_id.clone(),
                    st.latitude.to_string(),
                    st.longitude.to_string(),
                    ts,
                    ws.to_string(),
                    dir.to_string(),
                    temp.to_string(),
                    pres.to_string(),
                    freq.clone(),
                ],
                None => [
                    st.station_id.clone(),
                    st.latitude.to_string(),
                    st.longitude.to_string(),
                    ts,
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    freq.clone(),
                ],
            };
            w.write_record(&row).map_err(|e| CliError::runtime(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parse a 10-minute series CSV into a gridded set.
///
/// The `frequency_minutes` column is optional; when present every row must
/// say 10 — hourly series are always derived by aggregation, never
/// ingested. Malformed rows are reported with their line number.
pub fn ingest_series(path: &Path) -> Result<SeriesSet, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::validation(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::validation(e.to_string()))?.clone();
    let expect = ["station_id", "lat", "lon", "timestamp", "wind_speed", "wind_direction", "temperature", "pressure"];
    for (i, name) in expect.iter().enumerate() {
        if headers.get(i) != Some(*name) {
            return Err(CliError::validation(format!(
                "unexpected CSV header: expected column {i} to be `{name}`, got `{}`",
                headers.get(i).unwrap_or("<missing>")
            )));
        }
    }
    let freq_col = headers.iter().position(|h| h == "frequency_minutes");

    let mut stations: Vec<StationMeta> = Vec::new();
    let mut records: Vec<RawRecord> = Vec::new();
    let mut seen: std::collections::HashSet<(String, i64)> = std::collections::HashSet::new();
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for (i, row) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let row = row.map_err(|e| CliError::validation(format!("line {line}: {e}")))?;
        let station_id = row.get(0).unwrap_or("").to_string();
        if station_id.is_empty() {
            return Err(CliError::validation(format!("line {line}: empty station_id")));
        }
        let lat: f64 = parse_field(&row, 1, "lat", line)?;
        let lon: f64 = parse_field(&row, 2, "lon", line)?;
        match stations.iter().find(|s| s.station_id == station_id) {
            Some(existing) => {
                if existing.latitude != lat || existing.longitude != lon {
                    return Err(CliError::validation(format!(
                        "line {line}: station {station_id} changes coordinates"
                    )));
                }
            }
            None => stations.push(
                StationMeta::new(station_id.clone(), lat, lon)
                    .map_err(|e| CliError::validation(format!("line {line}: {e}")))?,
            ),
        }
        if let Some(fc) = freq_col {
            let f = row.get(fc).unwrap_or("10");
            if f != "10" {
                return Err(CliError::validation(format!(
                    "line {line}: frequency_minutes = {f}; only 10-minute rows are ingested (hourly series are derived)"
                )));
            }
        }
        let ts = iso_to_minute(row.get(3).unwrap_or(""), line)?;
        if ts % 10 != 0 {
            return Err(CliError::validation(format!(
                "line {line}: timestamp not on the 10-minute grid"
            )));
        }
        lo = lo.min(ts);
        hi = hi.max(ts);
        if !seen.insert((station_id.clone(), ts)) {
            return Err(CliError::validation(format!(
                "line {line}: duplicate (station {station_id}, timestamp) row"
            )));
        }
        let fields: Vec<&str> = (4..8).map(|c| row.get(c).unwrap_or("")).collect();
        if fields.iter().any(|f| f.is_empty()) {
            continue; // missing entry: grid slot stays masked out
        }
        records.push(RawRecord {
            station_id,
            timestamp: ts,
            wind_speed: parse_field(&row, 4, "wind_speed", line)?,
            wind_direction: parse_field(&row, 5, "wind_direction", line)?,
            temperature: parse_field(&row, 6, "temperature", line)?,
            pressure: parse_field(&row, 7, "pressure", line)?,
        });
    }
    let (start, len) = if lo > hi { (0, 0) } else { (lo, ((hi - lo) / 10 + 1) as usize) };
    SeriesSet::from_records_on_grid(stations, 10, start, len, &records)
        .map_err(|e| CliError::validation(e.to_string()))
}

fn parse_field<T: std::str::FromStr>(
    row: &csv::StringRecord,
    col: usize,
    name: &str,
    line: usize,
) -> Result<T, CliError> {
    let raw = row.get(col).unwrap_or("");
    raw.parse().map_err(|_| {
        CliError::validation(format!("line {line}: cannot parse {name} from `{raw}`"))
    })
}

/// Write the corruption audit log: `station_id,frequency_minutes,timestamp`.
pub fn export_corruption_log(log: &CorruptionLog, path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::runtime(e.to_string()))?;
    w.write_record(["station_id", "frequency_minutes", "timestamp"])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    for (id, freq, minute) in &log.removed {
        w.write_record([id.clone(), freq.to_string(), minute_to_iso(*minute)])
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Debug dump of a unified graph: a node table and an edge table.
pub fn export_graph(graph: &UnifiedGraph, node_path: &Path, edge_path: &Path) -> Result<(), CliError> {
    if let Some(parent) = node_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(node_path).map_err(|e| CliError::runtime(e.to_string()))?;
    w.write_record(["node_id", "station_id", "timestamp", "frequency_minutes", "kind", "seq_pos"])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    for node in &graph.nodes {
        let kind = match node.kind {
            stugn_core::graph::NodeKind::Observed => "observed",
            stugn_core::graph::NodeKind::ForecastPlaceholder => "forecast_placeholder",
        };
        let freq = match node.frequency {
            stugn_core::graph::FreqFlag::TenMin => "10",
            stugn_core::graph::FreqFlag::Hourly => "60",
        };
        w.write_record([
            node.node_id.to_string(),
            graph.stations[node.station].station_id.clone(),
            minute_to_iso(node.timestamp),
            freq.to_string(),
            kind.to_string(),
            node.seq_pos.to_string(),
        ])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(edge_path).map_err(|e| CliError::runtime(e.to_string()))?;
    w.write_record(["src", "dst", "dlat", "dlon", "dt_minutes"])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    for edges in &graph.in_edges {
        for e in edges {
            w.write_record([
                e.src.to_string(),
                e.dst.to_string(),
                e.dlat.to_string(),
                e.dlon.to_string(),
                e.dt_minutes.to_string(),
            ])
            .map_err(|err| CliError::runtime(err.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}
