//! Trace types, CSV ingestion and the local-plane projection.
//!
//! Every downstream computation (map indexing, mobility prediction) runs in a
//! flat east/north frame anchored at a scenario origin. The projection is an
//! equirectangular approximation, which is accurate to well below 0.1 % over
//! the few tens of kilometres a drive-test scenario covers.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean earth radius used by the projection, in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest origin-to-point separation the projection accepts.
pub const MAX_PROJECTION_DISTANCE_M: f64 = 100_000.0;

/// Column header of the trace CSV format.
pub const TRACE_HEADER: [&str; 10] = [
    "timestamp_s",
    "lat",
    "lon",
    "velocity_mps",
    "heading_deg",
    "rsrp_dbm",
    "rsrq_db",
    "snr_db",
    "cqi",
    "datarate_mbps",
];

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("point is {distance_m:.0} m from the origin, beyond the {MAX_PROJECTION_DISTANCE_M} m projection limit")]
    OutOfRange { distance_m: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("row {row}: {message}")]
    Field { row: usize, message: String },
    #[error("row {row}: timestamp {timestamp} does not increase over {previous}")]
    Ordering {
        row: usize,
        timestamp: f64,
        previous: f64,
    },
    #[error("trace needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("trace spans {span_s} s, shorter than one resampling period of {period_s} s")]
    EmptyResample { span_s: f64, period_s: f64 },
    #[error("invalid resampling frequency {0} Hz")]
    InvalidFrequency(f64),
    #[error("csv: {0}")]
    Csv(String),
    #[error("trace store: {0}")]
    Store(String),
}

/// WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(lat.is_finite() && lon.is_finite())
            || !(-90.0..=90.0).contains(&lat)
            || !(-180.0..=180.0).contains(&lon)
        {
            return Err(GeoError::InvalidCoordinate { lat, lon });
        }
        Ok(Self { lat, lon })
    }

    /// Great-circle distance (haversine) in metres.
    pub fn distance_to(&self, other: &GeoPoint) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dlat = p2 - p1;
        let dlon = (other.lon - self.lon).to_radians();
        let h = (dlat / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlon / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
    }
}

/// Position in the local plane: metres east (`x`) and north (`y`) of the origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartesianPoint {
    pub x: f64,
    pub y: f64,
}

impl CartesianPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_to(&self, other: &CartesianPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Passive LTE downlink indicators. Each one may be missing on its own.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelContext {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rsrp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rsrq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cqi: Option<u8>,
}

impl ChannelContext {
    pub fn is_empty(&self) -> bool {
        self.rsrp.is_none() && self.rsrq.is_none() && self.snr.is_none() && self.cqi.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSample {
    pub timestamp: f64,
    pub position: GeoPoint,
    /// Ground speed in m/s.
    pub velocity: f64,
    /// Degrees clockwise from north.
    pub heading: f64,
    pub context: ChannelContext,
    /// Achieved uplink rate in Mbit/s, only for samples taken during a transmission.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub trip_id: String,
    pub samples: Vec<ContextSample>,
    pub origin: GeoPoint,
}

impl Trace {
    /// Builds a trace, checking the sample count and timestamp ordering.
    /// The origin is the first sample's position.
    pub fn new(trip_id: impl Into<String>, samples: Vec<ContextSample>) -> Result<Self, TraceError> {
        if samples.len() < 2 {
            return Err(TraceError::TooShort(samples.len()));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].timestamp <= w[0].timestamp {
                return Err(TraceError::Ordering {
                    row: i + 2,
                    timestamp: w[1].timestamp,
                    previous: w[0].timestamp,
                });
            }
        }
        let origin = samples[0].position;
        Ok(Self {
            trip_id: trip_id.into(),
            samples,
            origin,
        })
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].timestamp
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].timestamp
    }

    /// Sample positions projected against `frame`.
    pub fn local_positions(&self, frame: &GeoPoint) -> Result<Vec<CartesianPoint>, GeoError> {
        self.samples
            .iter()
            .map(|s| to_local(&s.position, frame))
            .collect()
    }
}

/// Equirectangular projection of `point` into the plane anchored at `origin`.
pub fn to_local(point: &GeoPoint, origin: &GeoPoint) -> Result<CartesianPoint, GeoError> {
    let distance_m = point.distance_to(origin);
    if !(distance_m <= MAX_PROJECTION_DISTANCE_M) {
        return Err(GeoError::OutOfRange { distance_m });
    }
    let x = EARTH_RADIUS_M * (point.lon - origin.lon).to_radians() * origin.lat.to_radians().cos();
    let y = EARTH_RADIUS_M * (point.lat - origin.lat).to_radians();
    Ok(CartesianPoint { x, y })
}

/// Inverse of [`to_local`].
pub fn to_geo(point: &CartesianPoint, origin: &GeoPoint) -> Result<GeoPoint, GeoError> {
    let lat = origin.lat + (point.y / EARTH_RADIUS_M).to_degrees();
    let lon = origin.lon + (point.x / (EARTH_RADIUS_M * origin.lat.to_radians().cos())).to_degrees();
    GeoPoint::new(lat, lon)
}

/// One parsed CSV row. `extra` holds the columns after the ten trace columns.
#[derive(Debug, Clone)]
pub(crate) struct RawRow {
    pub sample: ContextSample,
    pub extra: Vec<Option<f64>>,
}

/// Reads a trace-format CSV whose header is [`TRACE_HEADER`] followed by
/// `extra_columns`. Shared between trace ingestion and training-data loading.
pub(crate) fn read_rows<R: Read>(input: R, extra_columns: &[&str]) -> Result<Vec<RawRow>, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| TraceError::Csv(e.to_string()))?
        .clone();
    let expected: Vec<&str> = TRACE_HEADER.iter().chain(extra_columns).copied().collect();
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(TraceError::Header(format!(
            "expected `{}`, found `{}`",
            expected.join(","),
            found.join(",")
        )));
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| TraceError::Field {
            row,
            message: e.to_string(),
        })?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let required = |idx: usize| -> Result<f64, TraceError> {
            let raw = field(idx);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| TraceError::Field {
                    row,
                    message: format!("{} = {raw:?} is not a number", expected[idx]),
                })
        };
        let optional = |idx: usize| -> Result<Option<f64>, TraceError> {
            match field(idx) {
                "" => Ok(None),
                _ => required(idx).map(Some),
            }
        };

        let timestamp = required(0)?;
        let position = GeoPoint::new(required(1)?, required(2)?).map_err(|e| TraceError::Field {
            row,
            message: e.to_string(),
        })?;
        let velocity = required(3)?;
        if velocity < 0.0 {
            return Err(TraceError::Field {
                row,
                message: format!("negative velocity {velocity}"),
            });
        }
        let heading = required(4)?.rem_euclid(360.0);
        let cqi = match optional(8)? {
            None => None,
            Some(v) if v.fract() == 0.0 && (0.0..=15.0).contains(&v) => Some(v as u8),
            Some(v) => {
                return Err(TraceError::Field {
                    row,
                    message: format!("cqi {v} is not an integer in 0..=15"),
                })
            }
        };
        let context = ChannelContext {
            rsrp: optional(5)?,
            rsrq: optional(6)?,
            snr: optional(7)?,
            cqi,
        };
        let measured_rate = optional(9)?;
        let extra = (0..extra_columns.len())
            .map(|k| optional(TRACE_HEADER.len() + k))
            .collect::<Result<Vec<_>, _>>()?;

        if let Some(prev) = rows.last().map(|r: &RawRow| r.sample.timestamp) {
            if timestamp <= prev {
                return Err(TraceError::Ordering {
                    row,
                    timestamp,
                    previous: prev,
                });
            }
        }
        rows.push(RawRow {
            sample: ContextSample {
                timestamp,
                position,
                velocity,
                heading,
                context,
                measured_rate,
            },
            extra,
        });
    }
    Ok(rows)
}

/// Parses a trace CSV. Row numbers in errors count data rows from 1.
pub fn parse_trace<R: Read>(input: R, trip_id: &str) -> Result<Trace, TraceError> {
    let samples = read_rows(input, &[])?.into_iter().map(|r| r.sample).collect();
    Trace::new(trip_id, samples)
}

/// Writes a trace in the CSV format read by [`parse_trace`].
pub fn write_trace<W: std::io::Write>(trace: &Trace, out: W) -> Result<(), TraceError> {
    let mut writer = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| TraceError::Csv(e.to_string());
    writer.write_record(TRACE_HEADER).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for s in &trace.samples {
        writer
            .write_record([
                s.timestamp.to_string(),
                s.position.lat.to_string(),
                s.position.lon.to_string(),
                s.velocity.to_string(),
                s.heading.to_string(),
                opt(s.context.rsrp),
                opt(s.context.rsrq),
                opt(s.context.snr),
                s.context.cqi.map(|c| c.to_string()).unwrap_or_default(),
                opt(s.measured_rate),
            ])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| TraceError::Csv(e.to_string()))
}

pub const TRACE_STORE_VERSION: u32 = 1;

#[derive(Serialize)]
struct TraceStoreRef<'a> {
    version: u32,
    traces: &'a [Trace],
}

#[derive(Deserialize)]
struct TraceStore {
    version: u32,
    traces: Vec<Trace>,
}

/// Validated traces as one JSON document.
pub fn save_trace_store(traces: &[Trace]) -> Vec<u8> {
    serde_json::to_vec(&TraceStoreRef {
        version: TRACE_STORE_VERSION,
        traces,
    })
    .expect("trace store serializes")
}

/// Loads a trace store, re-checking every trace's invariants.
pub fn load_trace_store(bytes: &[u8]) -> Result<Vec<Trace>, TraceError> {
    let store: TraceStore = serde_json::from_slice(bytes).map_err(|e| TraceError::Store(e.to_string()))?;
    if store.version != TRACE_STORE_VERSION {
        return Err(TraceError::Store(format!("unsupported version {}", store.version)));
    }
    store
        .traces
        .into_iter()
        .map(|t| {
            let origin = t.origin;
            let mut checked = Trace::new(t.trip_id, t.samples)?;
            checked.origin = origin;
            Ok(checked)
        })
        .collect()
}

/// Resamples a trace onto a uniform grid of period `1 / f_context`.
///
/// Positions and velocities are interpolated linearly; heading, indicators
/// and measured rates come from the sample nearest in time (earlier one on
/// ties).
pub fn resample_context(trace: &Trace, f_context: f64) -> Result<Trace, TraceError> {
    if !(f_context.is_finite() && f_context > 0.0) {
        return Err(TraceError::InvalidFrequency(f_context));
    }
    let period = 1.0 / f_context;
    let (t0, t_end) = (trace.start_time(), trace.end_time());
    if t_end - t0 < period {
        return Err(TraceError::EmptyResample {
            span_s: t_end - t0,
            period_s: period,
        });
    }

    let samples = &trace.samples;
    let mut out = Vec::new();
    let mut seg = 0usize;
    for k in 0u64.. {
        let t = t0 + k as f64 / f_context;
        if t > t_end {
            break;
        }
        while seg + 2 < samples.len() && samples[seg + 1].timestamp <= t {
            seg += 1;
        }
        let (a, b) = (&samples[seg], &samples[seg + 1]);
        let w = ((t - a.timestamp) / (b.timestamp - a.timestamp)).clamp(0.0, 1.0);
        let lerp = |u: f64, v: f64| if w == 0.0 { u } else if w == 1.0 { v } else { u + (v - u) * w };
        let nearest = if (t - a.timestamp) <= (b.timestamp - t) { a } else { b };
        out.push(ContextSample {
            timestamp: t,
            position: GeoPoint {
                lat: lerp(a.position.lat, b.position.lat),
                lon: lerp(a.position.lon, b.position.lon),
            },
            velocity: lerp(a.velocity, b.velocity),
            heading: nearest.heading,
            context: nearest.context,
            measured_rate: nearest.measured_rate,
        });
    }

    let mut resampled = Trace::new(trace.trip_id.clone(), out)?;
    resampled.origin = trace.origin;
    Ok(resampled)
}
