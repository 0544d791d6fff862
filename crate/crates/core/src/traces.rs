//! Vehicle mobility: GPS record parsing, slot resampling and synthetic traces.
//!
//! Records follow the public Rome taxi layout, one per line:
//!
//! ```text
//! 156;2014-02-01 00:00:00.739166+01;POINT(41.8892 12.4869)
//! ```
//!
//! i.e. `taxi id ; timestamp with UTC offset ; POINT(lat lon)`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, TimeZone, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::topology::Position;

/// Bounding box of the central Rome study area.
pub const ROME_BBOX: BoundingBox = BoundingBox {
    lat_min: 41.856,
    lat_max: 41.928,
    lon_min: 12.442,
    lon_max: 12.5387,
};

pub const DEFAULT_SLOT_SECONDS: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub vehicle_id: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
}

impl fmt::Display for TraceRecord {
    /// Formats in the input layout, in UTC with microsecond precision.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let secs = self.timestamp.floor();
        let mut micros = ((self.timestamp - secs) * 1e6).round() as i64;
        let mut secs = secs as i64;
        if micros >= 1_000_000 {
            secs += 1;
            micros -= 1_000_000;
        }
        let dt = Utc
            .timestamp_opt(secs, (micros * 1000) as u32)
            .single()
            .ok_or(fmt::Error)?;
        write!(
            f,
            "{};{}+00;POINT({} {})",
            self.vehicle_id,
            dt.format("%Y-%m-%d %H:%M:%S%.6f"),
            self.lat,
            self.lon
        )
    }
}

impl FromStr for TraceRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut parts = line.trim().splitn(3, ';');
        let (Some(id), Some(ts), Some(point)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse(format!("expected 3 fields: `{line}`")));
        };
        let vehicle_id = id
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::Parse(format!("bad vehicle id `{id}`: {e}")))?;
        let timestamp = parse_timestamp(ts.trim())?;
        let inner = point
            .trim()
            .strip_prefix("POINT(")
            .and_then(|p| p.strip_suffix(')'))
            .ok_or_else(|| Error::Parse(format!("bad point `{point}`")))?;
        let mut coords = inner.split_whitespace();
        let (Some(lat), Some(lon), None) = (coords.next(), coords.next(), coords.next()) else {
            return Err(Error::Parse(format!("bad point `{point}`")));
        };
        let lat: f64 = lat
            .parse()
            .map_err(|e| Error::Parse(format!("bad latitude `{lat}`: {e}")))?;
        let lon: f64 = lon
            .parse()
            .map_err(|e| Error::Parse(format!("bad longitude `{lon}`: {e}")))?;
        if !(lat.is_finite() && lon.is_finite()) {
            return Err(Error::Parse("non-finite coordinate".into()));
        }
        Ok(TraceRecord {
            vehicle_id,
            timestamp,
            lat,
            lon,
        })
    }
}

fn parse_timestamp(ts: &str) -> Result<f64> {
    let dt: DateTime<FixedOffset> = DateTime::parse_from_str(ts, "%Y-%m-%d %H:%M:%S%.f%#z")
        .map_err(|e| Error::Parse(format!("bad timestamp `{ts}`: {e}")))?;
    Ok(dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedTrace {
    pub records: Vec<TraceRecord>,
    /// Lines that were neither blank nor parsable.
    pub skipped: usize,
}

/// Parse newline-delimited records. Malformed lines are counted and skipped;
/// the output is sorted by `(vehicle_id, timestamp)` with duplicate
/// timestamps per vehicle removed.
pub fn parse_trace_stream<R: BufRead>(reader: R) -> Result<ParsedTrace> {
    let mut records = Vec::new();
    let mut skipped = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match line.parse::<TraceRecord>() {
            Ok(r) => records.push(r),
            Err(_) => skipped += 1,
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no parsable trace records ({skipped} malformed lines)"
        )));
    }
    records.sort_by(|a, b| {
        a.vehicle_id
            .cmp(&b.vehicle_id)
            .then(a.timestamp.total_cmp(&b.timestamp))
    });
    records.dedup_by(|b, a| a.vehicle_id == b.vehicle_id && a.timestamp == b.timestamp);
    Ok(ParsedTrace { records, skipped })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for BoundingBox {
    fn default() -> Self {
        ROME_BBOX
    }
}

impl BoundingBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.lat_min < self.lat_max && self.lon_min < self.lon_max) {
            return Err(Error::invalid("bounding box needs min < max on both axes"));
        }
        Ok(())
    }

    /// Equirectangular map onto `[0, side]^2`, clamping outside points to the
    /// nearest edge first. Longitude maps to x, latitude to y.
    pub fn project(&self, lat: f64, lon: f64, side: f64) -> Position {
        let lat = lat.clamp(self.lat_min, self.lat_max);
        let lon = lon.clamp(self.lon_min, self.lon_max);
        Position {
            x: (lon - self.lon_min) / (self.lon_max - self.lon_min) * side,
            y: (lat - self.lat_min) / (self.lat_max - self.lat_min) * side,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrace {
    pub vehicle_id: u64,
    /// One position per slot.
    pub positions: Vec<Position>,
}

impl VehicleTrace {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Position at `slot`, holding the last point past the end.
    pub fn at(&self, slot: usize) -> Position {
        self.positions[slot.min(self.positions.len() - 1)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotWindow {
    pub start: f64,
    pub slot_seconds: f64,
    pub slots: usize,
}

impl SlotWindow {
    pub fn end(&self) -> f64 {
        self.start + self.slot_seconds * (self.slots.saturating_sub(1)) as f64
    }

    fn validate(&self) -> Result<()> {
        if self.slots == 0 {
            return Err(Error::invalid("window needs at least one slot"));
        }
        if !(self.slot_seconds > 0.0) {
            return Err(Error::invalid("slot duration must be positive"));
        }
        Ok(())
    }
}

/// Resample sorted records onto slot boundaries.
///
/// Each vehicle's position at `start + k * slot_seconds` is linearly
/// interpolated between the bracketing records; slots before the first or
/// after the last record hold that record's position. Vehicles without any
/// record inside the window are dropped.
pub fn resample_to_slots(
    records: &[TraceRecord],
    bbox: &BoundingBox,
    region_side: f64,
    window: SlotWindow,
) -> Result<Vec<VehicleTrace>> {
    bbox.validate()?;
    window.validate()?;
    if !(region_side > 0.0) {
        return Err(Error::invalid("region side must be positive"));
    }
    let (start, end) = (window.start, window.end());

    let mut out = Vec::new();
    for (id, recs) in group_by_vehicle(records) {
        if !recs.iter().any(|r| r.timestamp >= start && r.timestamp <= end) {
            continue;
        }
        let pts: Vec<(f64, Position)> = recs
            .iter()
            .map(|r| (r.timestamp, bbox.project(r.lat, r.lon, region_side)))
            .collect();
        let positions = (0..window.slots)
            .map(|k| interpolate(&pts, start + k as f64 * window.slot_seconds))
            .collect();
        out.push(VehicleTrace {
            vehicle_id: id,
            positions,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(
            "no vehicle has records inside the resampling window".into(),
        ));
    }
    Ok(out)
}

/// Vehicle ids ordered by record count inside the window (descending, then
/// by id), truncated to `n`.
pub fn most_active_vehicles(records: &[TraceRecord], window: SlotWindow, n: usize) -> Vec<u64> {
    let (start, end) = (window.start, window.end());
    let mut counts: Vec<(u64, usize)> = group_by_vehicle(records)
        .into_iter()
        .map(|(id, recs)| {
            let c = recs
                .iter()
                .filter(|r| r.timestamp >= start && r.timestamp <= end)
                .count();
            (id, c)
        })
        .filter(|&(_, c)| c > 0)
        .collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    counts.into_iter().take(n).map(|(id, _)| id).collect()
}

fn group_by_vehicle(records: &[TraceRecord]) -> BTreeMap<u64, Vec<TraceRecord>> {
    let mut by_id: BTreeMap<u64, Vec<TraceRecord>> = BTreeMap::new();
    for r in records {
        by_id.entry(r.vehicle_id).or_default().push(*r);
    }
    for recs in by_id.values_mut() {
        recs.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    }
    by_id
}

fn interpolate(pts: &[(f64, Position)], t: f64) -> Position {
    let idx = pts.partition_point(|(ts, _)| *ts <= t);
    if idx == 0 {
        return pts[0].1;
    }
    let (t0, p0) = pts[idx - 1];
    if idx == pts.len() || t0 == t {
        return p0;
    }
    let (t1, p1) = pts[idx];
    p0.lerp(&p1, (t - t0) / (t1 - t0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MobilityModel {
    #[default]
    RandomWaypoint,
    Linear,
}

impl FromStr for MobilityModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "random_waypoint" | "rwp" => Ok(MobilityModel::RandomWaypoint),
            "linear" => Ok(MobilityModel::Linear),
            other => Err(Error::invalid(format!("unknown mobility model `{other}`"))),
        }
    }
}

impl fmt::Display for MobilityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MobilityModel::RandomWaypoint => "random_waypoint",
            MobilityModel::Linear => "linear",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub model: MobilityModel,
    pub n_vehicles: usize,
    pub slots: usize,
    pub region_side: f64,
    pub speed: f64,
    pub slot_seconds: f64,
    pub seed: u64,
}

/// Seeded synthetic mobility.
///
/// `Linear` moves at constant heading and reflects off the region boundary.
/// `RandomWaypoint` walks constant-speed legs between uniform targets with no
/// pause, carrying leftover distance into the next leg.
pub fn synthetic_traces(spec: &SyntheticSpec) -> Result<Vec<VehicleTrace>> {
    if spec.n_vehicles == 0 || spec.slots == 0 {
        return Err(Error::invalid("need at least one vehicle and one slot"));
    }
    if !(spec.speed >= 0.0 && spec.region_side > 0.0 && spec.slot_seconds > 0.0) {
        return Err(Error::invalid("speed, region side and slot length must be valid"));
    }
    let mut rng = rng_from_seed(spec.seed);
    let side = spec.region_side;
    let step = spec.speed * spec.slot_seconds;
    let mut out = Vec::with_capacity(spec.n_vehicles);
    for v in 0..spec.n_vehicles {
        let mut pos = Position::new(rng.random_range(0.0..=side), rng.random_range(0.0..=side));
        let mut positions = Vec::with_capacity(spec.slots);
        positions.push(pos);
        match spec.model {
            MobilityModel::Linear => {
                let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let (mut dx, mut dy) = (heading.cos(), heading.sin());
                for _ in 1..spec.slots {
                    let (x, fx) = reflect(pos.x + dx * step, side);
                    let (y, fy) = reflect(pos.y + dy * step, side);
                    if fx {
                        dx = -dx;
                    }
                    if fy {
                        dy = -dy;
                    }
                    pos = Position::new(x, y);
                    positions.push(pos);
                }
            }
            MobilityModel::RandomWaypoint => {
                let mut target =
                    Position::new(rng.random_range(0.0..=side), rng.random_range(0.0..=side));
                for _ in 1..spec.slots {
                    let mut left = step;
                    while left > 0.0 {
                        let d = pos.distance(&target);
                        if d > left {
                            pos = pos.lerp(&target, left / d);
                            left = 0.0;
                        } else {
                            pos = target;
                            left -= d;
                            target = Position::new(
                                rng.random_range(0.0..=side),
                                rng.random_range(0.0..=side),
                            );
                        }
                    }
                    positions.push(pos.clamped(side));
                }
            }
        }
        out.push(VehicleTrace {
            vehicle_id: v as u64,
            positions,
        });
    }
    Ok(out)
}

/// Fold a coordinate back into `[0, side]`, reporting whether it bounced an
/// odd number of times.
fn reflect(v: f64, side: f64) -> (f64, bool) {
    let period = 2.0 * side;
    let m = v.rem_euclid(period);
    if m <= side {
        (m, false)
    } else {
        (period - m, true)
    }
}

pub const SLOT_CSV_HEADER: &str = "vehicle_id,slot,x_m,y_m";

/// Slotted traces as CSV with header `vehicle_id,slot,x_m,y_m`.
pub fn write_slot_csv<W: Write>(traces: &[VehicleTrace], mut out: W) -> Result<()> {
    writeln!(out, "{SLOT_CSV_HEADER}")?;
    for t in traces {
        for (k, p) in t.positions.iter().enumerate() {
            writeln!(out, "{},{},{},{}", t.vehicle_id, k, p.x, p.y)?;
        }
    }
    Ok(())
}

pub fn read_slot_csv<R: BufRead>(reader: R) -> Result<Vec<VehicleTrace>> {
    #[derive(Deserialize)]
    struct Row {
        vehicle_id: u64,
        slot: usize,
        x_m: f64,
        y_m: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != SLOT_CSV_HEADER {
        return Err(Error::Parse(format!("expected header `{SLOT_CSV_HEADER}`")));
    }
    let mut by_id: BTreeMap<u64, Vec<(usize, Position)>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let r: Row = row.map_err(|e| Error::Parse(e.to_string()))?;
        by_id.entry(r.vehicle_id).or_default().push((r.slot, Position::new(r.x_m, r.y_m)));
    }
    let mut out = Vec::new();
    for (id, mut pts) in by_id {
        pts.sort_by_key(|(k, _)| *k);
        if pts.iter().enumerate().any(|(i, (k, _))| *k != i) {
            return Err(Error::Parse(format!("vehicle {id} has missing slots")));
        }
        out.push(VehicleTrace {
            vehicle_id: id,
            positions: pts.into_iter().map(|(_, p)| p).collect(),
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("slot CSV has no rows".into()));
    }
    Ok(out)
}
