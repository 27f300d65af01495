//! Future-position estimation: dead-reckoning extrapolation, walking a mean
//! trajectory, and walking a single reference trace. Also the binned error
//! evaluation used to compare the three.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{to_local, CartesianPoint, ChannelContext, GeoError, GeoPoint, Trace};
use crate::stats::{Estimate, RunningStats};

pub const DEFAULT_OFF_ROUTE_M: f64 = 200.0;
pub const DEFAULT_TRAJECTORY_POINTS: usize = 512;
/// 10 km/h.
pub const DEFAULT_SPEED_BIN_MPS: f64 = 10.0 / 3.6;

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("a trajectory needs at least 2 distinct waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("trace {0} has zero path length")]
    Degenerate(String),
    #[error("no traces given")]
    NoTraces,
    #[error("trajectory resolution must be at least 2 points")]
    Resolution,
    #[error("no sample admits a ground truth {tau} s ahead")]
    EmptyEvaluation { tau: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionFailure {
    /// Current position farther than the off-route threshold from the path.
    OffRoute,
    /// Position could not be placed in the scenario frame.
    Projection,
}

impl fmt::Display for PredictionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictionFailure::OffRoute => f.write_str("off route"),
            PredictionFailure::Projection => f.write_str("projection failed"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityState {
    pub position: CartesianPoint,
    /// m/s
    pub velocity: f64,
    /// Degrees clockwise from north.
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionOutcome {
    pub horizon: f64,
    pub position: Result<CartesianPoint, PredictionFailure>,
}

/// Unit (east, north) vector for a compass heading.
///
/// The extrapolation's `(cos λ, sin λ)` pair is read as (north, east), so
/// 0° points north and 90° points east.
pub fn heading_unit(heading_deg: f64) -> CartesianPoint {
    let rad = heading_deg.to_radians();
    CartesianPoint::new(rad.sin(), rad.cos())
}

/// Compass heading of the vector (dx east, dy north), in [0, 360).
pub fn heading_of(dx: f64, dy: f64) -> f64 {
    dx.atan2(dy).to_degrees().rem_euclid(360.0)
}

/// Straight-line extrapolation along the current heading.
pub fn predict_gps(state: &MobilityState, tau: f64) -> PredictionOutcome {
    let dir = heading_unit(state.heading);
    let dist = tau * state.velocity;
    PredictionOutcome {
        horizon: tau,
        position: Ok(CartesianPoint::new(
            state.position.x + dir.x * dist,
            state.position.y + dir.y * dist,
        )),
    }
}

/// Polyline with precomputed cumulative arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    waypoints: Vec<CartesianPoint>,
    cumulative: Vec<f64>,
}

/// Nearest point of a polyline to a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub segment: usize,
    pub point: CartesianPoint,
    /// Arc length from the first waypoint.
    pub arc: f64,
    pub distance: f64,
}

impl Trajectory {
    /// Builds a trajectory, dropping consecutive duplicate points.
    pub fn new(points: impl IntoIterator<Item = CartesianPoint>) -> Result<Self, MobilityError> {
        let mut waypoints: Vec<CartesianPoint> = Vec::new();
        for p in points {
            if waypoints.last() != Some(&p) {
                waypoints.push(p);
            }
        }
        if waypoints.len() < 2 {
            return Err(MobilityError::TooFewWaypoints(waypoints.len()));
        }
        let mut cumulative = Vec::with_capacity(waypoints.len());
        cumulative.push(0.0);
        for w in waypoints.windows(2) {
            let next = cumulative[cumulative.len() - 1] + w[0].distance_to(&w[1]);
            if next <= cumulative[cumulative.len() - 1] {
                return Err(MobilityError::Degenerate("trajectory".into()));
            }
            cumulative.push(next);
        }
        Ok(Self { waypoints, cumulative })
    }

    pub fn waypoints(&self) -> &[CartesianPoint] {
        &self.waypoints
    }

    pub fn cumulative_dist(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn length(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    /// Perpendicular projection onto the nearest segment; ties go to the
    /// lowest segment index.
    pub fn project(&self, p: &CartesianPoint) -> Projection {
        let mut best: Option<Projection> = None;
        for (i, w) in self.waypoints.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len2 = dx * dx + dy * dy;
            let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
            let point = CartesianPoint::new(a.x + dx * t, a.y + dy * t);
            let distance = point.distance_to(p);
            if best.is_none_or(|b| distance < b.distance) {
                let seg_len = self.cumulative[i + 1] - self.cumulative[i];
                best = Some(Projection {
                    segment: i,
                    point,
                    arc: self.cumulative[i] + seg_len * t,
                    distance,
                });
            }
        }
        best.expect("trajectory has at least one segment")
    }

    /// Position at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> CartesianPoint {
        if s <= 0.0 {
            return self.waypoints[0];
        }
        if s >= self.length() {
            return self.waypoints[self.waypoints.len() - 1];
        }
        // First segment whose end lies beyond s.
        let j = self.cumulative.partition_point(|&c| c <= s);
        let i = j - 1;
        let (a, b) = (self.waypoints[i], self.waypoints[j]);
        let d = self.cumulative[j] - self.cumulative[i];
        let offset = s - self.cumulative[i];
        CartesianPoint::new(a.x + (b.x - a.x) / d * offset, a.y + (b.y - a.y) / d * offset)
    }

    /// Distance from `p` to the nearest segment.
    pub fn distance_to(&self, p: &CartesianPoint) -> f64 {
        self.project(p).distance
    }

    /// Walks forward from the projection of `start` by `distance` metres.
    /// Returns the end point and its arc length.
    fn walk(&self, start: &Projection, distance: f64) -> (CartesianPoint, f64) {
        let target = start.arc + distance;
        if target >= self.length() {
            return (self.waypoints[self.waypoints.len() - 1], self.length());
        }
        if distance == 0.0 {
            return (start.point, start.arc);
        }
        // Accumulate whole segments until the travelled distance reaches the
        // potential, then interpolate inside the last one.
        let mut travelled = self.cumulative[start.segment + 1] - start.arc;
        let mut i = start.segment;
        while travelled < distance && i + 2 < self.waypoints.len() {
            i += 1;
            travelled += self.cumulative[i + 1] - self.cumulative[i];
        }
        if i == start.segment {
            let (a, b) = (self.waypoints[i], self.waypoints[i + 1]);
            let d = self.cumulative[i + 1] - self.cumulative[i];
            let offset = start.arc - self.cumulative[i] + distance;
            return (
                CartesianPoint::new(a.x + (b.x - a.x) / d * offset, a.y + (b.y - a.y) / d * offset),
                target,
            );
        }
        let (a, b) = (self.waypoints[i], self.waypoints[i + 1]);
        let d = self.cumulative[i + 1] - self.cumulative[i];
        let offset = (distance - (travelled - d)).clamp(0.0, d);
        (
            CartesianPoint::new(a.x + (b.x - a.x) / d * offset, a.y + (b.y - a.y) / d * offset),
            self.cumulative[i] + offset,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    pub off_route_m: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            off_route_m: DEFAULT_OFF_ROUTE_M,
        }
    }
}

/// Mean trajectory of several drives of the same trip.
///
/// Each trace is resampled to `points` positions equally spaced in
/// normalised arc length, then the resampled traces are averaged pointwise.
pub fn mean_trajectory(traces: &[Trace], frame: &GeoPoint, points: usize) -> Result<Trajectory, MobilityError> {
    if traces.is_empty() {
        return Err(MobilityError::NoTraces);
    }
    if points < 2 {
        return Err(MobilityError::Resolution);
    }
    let mut sum = vec![CartesianPoint::default(); points];
    for trace in traces {
        let local = trace.local_positions(frame)?;
        let path = Trajectory::new(local).map_err(|_| MobilityError::Degenerate(trace.trip_id.clone()))?;
        let len = path.length();
        for (k, acc) in sum.iter_mut().enumerate() {
            let p = path.point_at(len * k as f64 / (points - 1) as f64);
            acc.x += p.x;
            acc.y += p.y;
        }
    }
    let n = traces.len() as f64;
    Trajectory::new(sum.into_iter().map(|p| CartesianPoint::new(p.x / n, p.y / n)))
}

/// Walks `v * tau` metres along `traj` from the projection of the current position.
pub fn predict_on_trajectory(
    state: &MobilityState,
    traj: &Trajectory,
    tau: f64,
    params: &WalkParams,
) -> PredictionOutcome {
    let start = traj.project(&state.position);
    let position = if start.distance > params.off_route_m {
        Err(PredictionFailure::OffRoute)
    } else {
        Ok(traj.walk(&start, state.velocity * tau).0)
    };
    PredictionOutcome { horizon: tau, position }
}

/// A single reference drive prepared for walking: its path plus the arc
/// length and channel context of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrack {
    path: Trajectory,
    sample_arcs: Vec<f64>,
    contexts: Vec<ChannelContext>,
}

impl ReferenceTrack {
    pub fn new(trace: &Trace, frame: &GeoPoint) -> Result<Self, MobilityError> {
        let local = trace.local_positions(frame)?;
        let path = Trajectory::new(local.iter().copied())
            .map_err(|_| MobilityError::Degenerate(trace.trip_id.clone()))?;
        let mut sample_arcs = Vec::with_capacity(local.len());
        let mut arc = 0.0;
        for (i, p) in local.iter().enumerate() {
            if i > 0 {
                arc += local[i - 1].distance_to(p);
            }
            sample_arcs.push(arc);
        }
        Ok(Self {
            path,
            sample_arcs,
            contexts: trace.samples.iter().map(|s| s.context).collect(),
        })
    }

    pub fn path(&self) -> &Trajectory {
        &self.path
    }

    /// Index of the sample closest in arc length to `arc`; lower index on ties.
    fn nearest_sample(&self, arc: f64) -> usize {
        let j = self.sample_arcs.partition_point(|&s| s < arc);
        if j == 0 {
            return 0;
        }
        if j == self.sample_arcs.len() {
            return j - 1;
        }
        if arc - self.sample_arcs[j - 1] <= self.sample_arcs[j] - arc {
            j - 1
        } else {
            j
        }
    }
}

/// Walks the reference drive and returns the predicted position together
/// with the context recorded at the reference sample nearest to it.
pub fn predict_on_reference(
    state: &MobilityState,
    track: &ReferenceTrack,
    tau: f64,
    params: &WalkParams,
) -> (PredictionOutcome, Option<ChannelContext>) {
    let start = track.path.project(&state.position);
    if start.distance > params.off_route_m {
        return (
            PredictionOutcome {
                horizon: tau,
                position: Err(PredictionFailure::OffRoute),
            },
            None,
        );
    }
    let (point, arc) = track.path.walk(&start, state.velocity * tau);
    let ctx = track.contexts[track.nearest_sample(arc)];
    (PredictionOutcome { horizon: tau, position: Ok(point) }, Some(ctx))
}

/// Any of the three position predictors.
#[derive(Debug, Clone)]
pub enum MobilityPredictor {
    Gps,
    Trajectory { trajectory: Trajectory, params: WalkParams },
    Reference { track: ReferenceTrack, params: WalkParams },
}

impl MobilityPredictor {
    pub fn predict(&self, state: &MobilityState, tau: f64) -> PredictionOutcome {
        match self {
            MobilityPredictor::Gps => predict_gps(state, tau),
            MobilityPredictor::Trajectory { trajectory, params } => {
                predict_on_trajectory(state, trajectory, tau, params)
            }
            MobilityPredictor::Reference { track, params } => predict_on_reference(state, track, tau, params).0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBin {
    pub speed_bin_low_mps: f64,
    /// `None` when every prediction in the bin failed.
    pub mean_error_m: Option<f64>,
    pub ci95_halfwidth_m: f64,
    pub n: u64,
    pub failure_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorTable {
    pub tau: f64,
    pub bins: Vec<ErrorBin>,
}

impl ErrorTable {
    /// CSV with header `speed_bin_low_mps,mean_error_m,ci95_halfwidth_m,n,failure_ratio`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("speed_bin_low_mps,mean_error_m,ci95_halfwidth_m,n,failure_ratio\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.speed_bin_low_mps,
                b.mean_error_m.map(|e| e.to_string()).unwrap_or_default(),
                b.ci95_halfwidth_m,
                b.n,
                b.failure_ratio
            ));
        }
        out
    }

    /// Error statistics pooled over all bins.
    pub fn overall(&self) -> Option<f64> {
        let (sum, n) = self
            .bins
            .iter()
            .filter_map(|b| b.mean_error_m.map(|m| (m * b.n as f64, b.n)))
            .fold((0.0, 0u64), |(s, c), (m, n)| (s + m, c + n));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Ground-truth position `t` seconds into the trace, interpolated between
/// neighbouring samples.
fn position_at(times: &[f64], positions: &[CartesianPoint], t: f64) -> Option<CartesianPoint> {
    let last = *times.last()?;
    if t > last + 1e-9 || t < times[0] {
        return None;
    }
    let j = times.partition_point(|&x| x < t - 1e-9);
    if j < times.len() && (times[j] - t).abs() <= 1e-9 {
        return Some(positions[j]);
    }
    if j == 0 || j >= times.len() {
        return None;
    }
    let (ta, tb) = (times[j - 1], times[j]);
    let w = (t - ta) / (tb - ta);
    let (a, b) = (positions[j - 1], positions[j]);
    Some(CartesianPoint::new(a.x + (b.x - a.x) * w, a.y + (b.y - a.y) * w))
}

/// Binned position error of `predictor` over `traces`, with positions
/// projected against `frame`.
pub fn evaluate_prediction_error(
    predictor: &MobilityPredictor,
    traces: &[Trace],
    frame: &GeoPoint,
    tau: f64,
    speed_bin_width: f64,
) -> Result<ErrorTable, MobilityError> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(MobilityError::InvalidParameter(format!("tau = {tau}")));
    }
    if !(speed_bin_width > 0.0 && speed_bin_width.is_finite()) {
        return Err(MobilityError::InvalidParameter(format!("speed bin width = {speed_bin_width}")));
    }
    // bin -> (errors, failures)
    let mut bins: BTreeMap<i64, (RunningStats, u64)> = BTreeMap::new();
    for trace in traces {
        let positions = trace.local_positions(frame)?;
        let times: Vec<f64> = trace.samples.iter().map(|s| s.timestamp).collect();
        for (sample, pos) in trace.samples.iter().zip(&positions) {
            let Some(truth) = position_at(&times, &positions, sample.timestamp + tau) else {
                continue;
            };
            let state = MobilityState {
                position: *pos,
                velocity: sample.velocity,
                heading: sample.heading,
            };
            let bin = bins
                .entry((sample.velocity / speed_bin_width).floor() as i64)
                .or_default();
            match predictor.predict(&state, tau).position {
                Ok(p) => bin.0.push(p.distance_to(&truth)),
                Err(_) => bin.1 += 1,
            }
        }
    }
    if bins.is_empty() {
        return Err(MobilityError::EmptyEvaluation { tau });
    }
    let bins = bins
        .into_iter()
        .map(|(idx, (errors, failures))| {
            let est = Estimate::from_stats(&errors);
            ErrorBin {
                speed_bin_low_mps: idx as f64 * speed_bin_width,
                mean_error_m: est.map(|e| e.mean),
                ci95_halfwidth_m: est.map_or(0.0, |e| e.ci95),
                n: errors.n,
                failure_ratio: failures as f64 / (failures + errors.n) as f64,
            }
        })
        .collect();
    Ok(ErrorTable { tau, bins })
}

/// Mobility state of a trace sample in `frame`.
pub fn state_of(sample: &crate::geo::ContextSample, frame: &GeoPoint) -> Result<MobilityState, GeoError> {
    Ok(MobilityState {
        position: to_local(&sample.position, frame)?,
        velocity: sample.velocity,
        heading: sample.heading,
    })
}
