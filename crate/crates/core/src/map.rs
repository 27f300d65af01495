//! Multi-layer connectivity map: per-cell aggregates of the downlink
//! indicators seen on earlier drives over the same area.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{to_local, CartesianPoint, GeoError, GeoPoint, Trace};
use crate::stats::RunningStats;

pub const MAP_FORMAT_VERSION: u32 = 1;

/// Side length of a 25 m² square cell.
pub const DEFAULT_CELL_SIDE_M: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("cannot build a map from an empty trace collection")]
    Empty,
    #[error("cell side must be positive and finite, got {0}")]
    InvalidCellSide(f64),
    #[error("maps are incompatible: {0}")]
    Incompatible(String),
    #[error("trace {trip_id}: {source}")]
    Projection { trip_id: String, source: GeoError },
    #[error("unsupported map format version {0}")]
    Version(serde_json::Value),
    #[error("corrupt map document: {0}")]
    Format(String),
}

/// Downlink indicator stored as one map layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Indicator {
    Rsrp,
    Rsrq,
    Snr,
    Cqi,
}

impl Indicator {
    pub const ALL: [Indicator; 4] = [Indicator::Rsrp, Indicator::Rsrq, Indicator::Snr, Indicator::Cqi];

    pub fn of(&self, ctx: &crate::geo::ChannelContext) -> Option<f64> {
        match self {
            Indicator::Rsrp => ctx.rsrp,
            Indicator::Rsrq => ctx.rsrq,
            Indicator::Snr => ctx.snr,
            Indicator::Cqi => ctx.cqi.map(f64::from),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub ix: i64,
    pub iy: i64,
}

/// Floor-division map index; negative coordinates land in negative cells.
pub fn cell_index(p: &CartesianPoint, cell_side: f64) -> CellIndex {
    CellIndex {
        ix: (p.x / cell_side).floor() as i64,
        iy: (p.y / cell_side).floor() as i64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rsrp: Option<RunningStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rsrq: Option<RunningStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr: Option<RunningStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cqi: Option<RunningStats>,
}

impl CellEntry {
    pub fn layer(&self, indicator: Indicator) -> Option<&RunningStats> {
        match indicator {
            Indicator::Rsrp => self.rsrp.as_ref(),
            Indicator::Rsrq => self.rsrq.as_ref(),
            Indicator::Snr => self.snr.as_ref(),
            Indicator::Cqi => self.cqi.as_ref(),
        }
    }

    fn layer_mut(&mut self, indicator: Indicator) -> &mut Option<RunningStats> {
        match indicator {
            Indicator::Rsrp => &mut self.rsrp,
            Indicator::Rsrq => &mut self.rsrq,
            Indicator::Snr => &mut self.snr,
            Indicator::Cqi => &mut self.cqi,
        }
    }

    pub fn mean(&self, indicator: Indicator) -> Option<f64> {
        self.layer(indicator).map(|s| s.mean)
    }

    /// Cell means as a channel context. CQI is rounded to the nearest index.
    pub fn mean_context(&self) -> crate::geo::ChannelContext {
        crate::geo::ChannelContext {
            rsrp: self.mean(Indicator::Rsrp),
            rsrq: self.mean(Indicator::Rsrq),
            snr: self.mean(Indicator::Snr),
            cqi: self.mean(Indicator::Cqi).map(|c| c.round().clamp(0.0, 15.0) as u8),
        }
    }

    pub fn is_empty(&self) -> bool {
        Indicator::ALL.iter().all(|i| self.layer(*i).is_none())
    }

    fn push(&mut self, ctx: &crate::geo::ChannelContext) {
        for indicator in Indicator::ALL {
            if let Some(v) = indicator.of(ctx) {
                self.layer_mut(indicator).get_or_insert_with(RunningStats::default).push(v);
            }
        }
    }

    fn merged(&self, other: &CellEntry) -> CellEntry {
        let mut out = CellEntry::default();
        for indicator in Indicator::ALL {
            *out.layer_mut(indicator) = match (self.layer(indicator), other.layer(indicator)) {
                (Some(a), Some(b)) => Some(a.merged(b)),
                (a, b) => a.or(b).copied(),
            };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMap {
    cell_side: f64,
    origin: GeoPoint,
    cells: BTreeMap<CellIndex, CellEntry>,
}

impl ConnectivityMap {
    /// An empty map, the identity element of [`merge`].
    pub fn new(cell_side: f64, origin: GeoPoint) -> Result<Self, MapError> {
        if !(cell_side.is_finite() && cell_side > 0.0) {
            return Err(MapError::InvalidCellSide(cell_side));
        }
        Ok(Self {
            cell_side,
            origin,
            cells: BTreeMap::new(),
        })
    }

    pub fn cell_side(&self) -> f64 {
        self.cell_side
    }

    pub fn origin(&self) -> &GeoPoint {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellIndex, &CellEntry)> {
        self.cells.iter()
    }

    pub fn get(&self, index: &CellIndex) -> Option<&CellEntry> {
        self.cells.get(index)
    }

    /// Folds every sample of `trace` into the map.
    pub fn add_trace(&mut self, trace: &Trace) -> Result<(), MapError> {
        for sample in &trace.samples {
            if sample.context.is_empty() {
                continue;
            }
            let p = to_local(&sample.position, &self.origin).map_err(|source| MapError::Projection {
                trip_id: trace.trip_id.clone(),
                source,
            })?;
            self.cells
                .entry(cell_index(&p, self.cell_side))
                .or_default()
                .push(&sample.context);
        }
        Ok(())
    }
}

/// Builds a map projected against the first trace's origin.
pub fn build_map(traces: &[Trace], cell_side: f64) -> Result<ConnectivityMap, MapError> {
    let first = traces.first().ok_or(MapError::Empty)?;
    build_map_with_origin(traces, cell_side, first.origin)
}

pub fn build_map_with_origin(
    traces: &[Trace],
    cell_side: f64,
    origin: GeoPoint,
) -> Result<ConnectivityMap, MapError> {
    if traces.is_empty() {
        return Err(MapError::Empty);
    }
    let mut map = ConnectivityMap::new(cell_side, origin)?;
    for trace in traces {
        map.add_trace(trace)?;
    }
    Ok(map)
}

/// Entry of the cell containing `p`; `None` for never-visited cells.
pub fn lookup<'a>(map: &'a ConnectivityMap, p: &CartesianPoint) -> Option<&'a CellEntry> {
    map.cells.get(&cell_index(p, map.cell_side))
}

pub fn merge(a: &ConnectivityMap, b: &ConnectivityMap) -> Result<ConnectivityMap, MapError> {
    if a.cell_side != b.cell_side {
        return Err(MapError::Incompatible(format!(
            "cell side {} vs {}",
            a.cell_side, b.cell_side
        )));
    }
    if a.origin != b.origin {
        return Err(MapError::Incompatible(format!(
            "origin ({}, {}) vs ({}, {})",
            a.origin.lat, a.origin.lon, b.origin.lat, b.origin.lon
        )));
    }
    let mut cells = a.cells.clone();
    for (index, entry) in &b.cells {
        cells
            .entry(*index)
            .and_modify(|e| *e = e.merged(entry))
            .or_insert(*entry);
    }
    Ok(ConnectivityMap {
        cell_side: a.cell_side,
        origin: a.origin,
        cells,
    })
}

#[derive(Serialize, Deserialize)]
struct MapDocument {
    version: u32,
    cell_side_m: f64,
    origin: GeoPoint,
    cells: Vec<CellDocument>,
}

#[derive(Serialize, Deserialize)]
struct CellDocument {
    ix: i64,
    iy: i64,
    layers: CellEntry,
}

/// Versioned JSON with cells sorted by `(ix, iy)`.
pub fn save_map(map: &ConnectivityMap) -> Vec<u8> {
    let doc = MapDocument {
        version: MAP_FORMAT_VERSION,
        cell_side_m: map.cell_side,
        origin: map.origin,
        cells: map
            .cells
            .iter()
            .map(|(idx, entry)| CellDocument {
                ix: idx.ix,
                iy: idx.iy,
                layers: *entry,
            })
            .collect(),
    };
    serde_json::to_vec_pretty(&doc).expect("map document serializes")
}

pub fn load_map(bytes: &[u8]) -> Result<ConnectivityMap, MapError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| MapError::Format(e.to_string()))?;
    let version = value.get("version").cloned().unwrap_or(serde_json::Value::Null);
    if version != serde_json::Value::from(MAP_FORMAT_VERSION) {
        return Err(MapError::Version(version));
    }
    let doc: MapDocument = serde_json::from_value(value).map_err(|e| MapError::Format(e.to_string()))?;
    let origin = GeoPoint::new(doc.origin.lat, doc.origin.lon).map_err(|e| MapError::Format(e.to_string()))?;
    let mut map = ConnectivityMap::new(doc.cell_side_m, origin)?;
    for cell in doc.cells {
        let entry = cell.layers;
        if entry.is_empty() {
            return Err(MapError::Format(format!("cell ({}, {}) has no layers", cell.ix, cell.iy)));
        }
        if Indicator::ALL.iter().any(|i| entry.layer(*i).is_some_and(|s| s.n == 0 || s.m2 < 0.0)) {
            return Err(MapError::Format(format!("cell ({}, {}) has an invalid aggregate", cell.ix, cell.iy)));
        }
        if map.cells.insert(CellIndex { ix: cell.ix, iy: cell.iy }, entry).is_some() {
            return Err(MapError::Format(format!("duplicate cell ({}, {})", cell.ix, cell.iy)));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{to_geo, ChannelContext, ContextSample};

    fn origin() -> GeoPoint {
        GeoPoint::new(51.0, 7.0).unwrap()
    }

    fn trace_at(points: &[(f64, f64, Option<f64>)]) -> Trace {
        let samples = points
            .iter()
            .enumerate()
            .map(|(i, (x, y, snr))| ContextSample {
                timestamp: i as f64,
                position: to_geo(&CartesianPoint::new(*x, *y), &origin()).unwrap(),
                velocity: 1.0,
                heading: 0.0,
                context: ChannelContext {
                    snr: *snr,
                    ..Default::default()
                },
                measured_rate: None,
            })
            .collect();
        let mut t = Trace::new("t", samples).unwrap();
        t.origin = origin();
        t
    }

    #[test]
    fn cell_index_examples() {
        assert_eq!(cell_index(&CartesianPoint::new(0.0, 0.0), 5.0), CellIndex { ix: 0, iy: 0 });
        assert_eq!(cell_index(&CartesianPoint::new(12.0, 7.5), 5.0), CellIndex { ix: 2, iy: 1 });
        assert_eq!(cell_index(&CartesianPoint::new(-0.1, 4.9), 5.0), CellIndex { ix: -1, iy: 0 });
        assert_eq!(cell_index(&CartesianPoint::new(5.0, 0.0), 5.0), CellIndex { ix: 1, iy: 0 });
    }

    #[test]
    fn single_cell_welford() {
        let map = build_map(&[trace_at(&[(1.0, 1.0, Some(10.0)), (2.0, 2.0, Some(20.0))])], 5.0).unwrap();
        assert_eq!(map.len(), 1);
        let snr = map.get(&CellIndex { ix: 0, iy: 0 }).unwrap().snr.unwrap();
        assert_eq!((snr.mean, snr.n, snr.variance()), (15.0, 2, Some(50.0)));
    }

    #[test]
    fn empty_samples_contribute_nothing() {
        let map = build_map(&[trace_at(&[(1.0, 1.0, Some(7.0)), (20.0, 2.0, None)])], 5.0).unwrap();
        assert_eq!(map.len(), 1);
        let snr = map.get(&CellIndex { ix: 0, iy: 0 }).unwrap().snr.unwrap();
        assert_eq!((snr.mean, snr.m2), (7.0, 0.0));
    }

    #[test]
    fn disjoint_traces_add_cell_counts() {
        let a = trace_at(&[(1.0, 1.0, Some(1.0)), (11.0, 1.0, Some(2.0))]);
        let b = trace_at(&[(101.0, 1.0, Some(3.0)), (121.0, 1.0, Some(4.0)), (131.0, 1.0, Some(5.0))]);
        let map = build_map(&[a.clone(), b.clone()], 5.0).unwrap();
        let na = build_map(&[a], 5.0).unwrap().len();
        let nb = build_map(&[b], 5.0).unwrap().len();
        assert_eq!(map.len(), na + nb);
        assert_eq!(map.len(), 5);
    }

    #[test]
    fn lookup_hits_and_misses() {
        let map = build_map(&[trace_at(&[(1.0, 1.0, Some(1.0)), (6.0, 1.0, Some(2.0))])], 5.0).unwrap();
        assert_eq!(lookup(&map, &CartesianPoint::new(4.0, 4.0)).unwrap().mean(Indicator::Snr), Some(1.0));
        assert_eq!(lookup(&map, &CartesianPoint::new(5.0, 0.0)).unwrap().mean(Indicator::Snr), Some(2.0));
        assert!(lookup(&map, &CartesianPoint::new(500.0, 0.0)).is_none());
    }

    #[test]
    fn merge_identity_and_union() {
        let m = build_map(&[trace_at(&[(1.0, 1.0, Some(10.0)), (9.0, 1.0, Some(12.0))])], 5.0).unwrap();
        let empty = ConnectivityMap::new(5.0, origin()).unwrap();
        assert_eq!(merge(&m, &empty).unwrap(), m);

        let a = build_map(&[trace_at(&[(1.0, 1.0, Some(10.0)), (30.0, 1.0, None)])], 5.0).unwrap();
        let b = build_map(&[trace_at(&[(2.0, 2.0, Some(20.0)), (30.0, 1.0, None)])], 5.0).unwrap();
        let merged = merge(&a, &b).unwrap();
        let union = build_map(&[trace_at(&[(1.0, 1.0, Some(10.0)), (2.0, 2.0, Some(20.0))])], 5.0).unwrap();
        assert_eq!(merged, union);
        let s = merged.get(&CellIndex { ix: 0, iy: 0 }).unwrap().snr.unwrap();
        assert_eq!(s.n, 2);
    }

    #[test]
    fn merge_rejects_mismatch() {
        let a = ConnectivityMap::new(5.0, origin()).unwrap();
        let b = ConnectivityMap::new(10.0, origin()).unwrap();
        let c = ConnectivityMap::new(5.0, GeoPoint::new(51.0, 7.1).unwrap()).unwrap();
        assert!(matches!(merge(&a, &b), Err(MapError::Incompatible(_))));
        assert!(matches!(merge(&a, &c), Err(MapError::Incompatible(_))));
    }

    #[test]
    fn persistence_round_trip_and_errors() {
        let m = build_map(
            &[trace_at(&[(1.0, 1.0, Some(10.1)), (-7.0, 3.0, Some(1.0 / 3.0)), (12.0, -9.0, Some(-2.7))])],
            5.0,
        )
        .unwrap();
        assert_eq!(m.len(), 3);
        let bytes = save_map(&m);
        assert_eq!(load_map(&bytes).unwrap(), m);

        assert!(matches!(load_map(&bytes[..bytes.len() / 2]), Err(MapError::Format(_))));

        let mut doc: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        doc["version"] = serde_json::json!(7);
        let err = load_map(&serde_json::to_vec(&doc).unwrap()).unwrap_err();
        assert!(err.to_string().contains('7'), "{err}");
    }

    #[test]
    fn saved_cells_are_sorted() {
        let m = build_map(
            &[trace_at(&[(30.0, 1.0, Some(1.0)), (-30.0, 1.0, Some(1.0)), (0.0, -30.0, Some(1.0))])],
            5.0,
        )
        .unwrap();
        let doc: serde_json::Value = serde_json::from_slice(&save_map(&m)).unwrap();
        let idx: Vec<(i64, i64)> = doc["cells"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| (c["ix"].as_i64().unwrap(), c["iy"].as_i64().unwrap()))
            .collect();
        let mut sorted = idx.clone();
        sorted.sort();
        assert_eq!(idx, sorted);
        assert!(doc["cells"][0]["layers"].get("rsrp").is_none());
    }
}
