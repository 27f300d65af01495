//! Scenario documents.
//!
//! A scenario is one JSON object. File references are resolved relative to
//! the document's directory:
//!
//! ```json
//! {
//!   "name": "pcat-snr",
//!   "seed": 1,
//!   "traces": ["drive1.csv", "store.json"],
//!   "map": "map.json",
//!   "predictor": { "kind": "trajectory", "traces": ["prior.json"], "points": 512 },
//!   "scheme": { "mode": "pcat" },
//!   "oracle": { "kind": "synthetic", "indicator": "snr", "slope": 0.5 }
//! }
//! ```
//!
//! `scheme` is merged key by key over a named preset when one is given
//! (`"preset": "paper-defaults"` or the caller's override); without a
//! preset it must be complete.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use crate::datarate::{load_model, RateModel};
use crate::geo::{load_trace_store, parse_trace, resample_context, Trace};
use crate::map::{load_map, ConnectivityMap};
use crate::mobility::{mean_trajectory, WalkParams, DEFAULT_TRAJECTORY_POINTS};
use crate::power::{DeviceCharacteristic, TxPowerParams};
use crate::txscheme::SchemeConfig;

use super::{OracleConfig, PredictorChoice, Scenario, SensorConfig, SimError};

fn default_points() -> usize {
    DEFAULT_TRAJECTORY_POINTS
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum PredictorDoc {
    Gps,
    Trajectory {
        traces: Vec<PathBuf>,
        #[serde(default = "default_points")]
        points: usize,
    },
    Reference {
        trace: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    name: Option<String>,
    #[serde(default)]
    seed: u64,
    traces: Vec<PathBuf>,
    f_context_hz: Option<f64>,
    map: Option<PathBuf>,
    predictor: Option<PredictorDoc>,
    rate_model: Option<PathBuf>,
    preset: Option<String>,
    scheme: Option<Value>,
    #[serde(default)]
    sensor: SensorConfig,
    device: Option<DeviceCharacteristic>,
    #[serde(default)]
    tx_power: TxPowerParams,
    oracle: OracleConfig,
    #[serde(default)]
    walk: WalkParams,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComparisonDoc {
    baseline: String,
    #[serde(default = "default_repetitions")]
    repetitions: usize,
    scenarios: Vec<Value>,
}

fn default_repetitions() -> usize {
    5
}

/// Scenarios to compare, with the baseline name and repetition count.
#[derive(Debug, Clone)]
pub struct ComparisonSet {
    pub baseline: String,
    pub repetitions: usize,
    pub scenarios: Vec<Scenario>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, SimError> {
    fs::read(path).map_err(|e| SimError::Data(format!("{}: {e}", path.display())))
}

fn read_config(path: &Path) -> Result<Value, SimError> {
    let bytes = fs::read(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))
}

/// Loads a trace file: a trace store (`.json`) or a single CSV trace named
/// after its file stem.
pub fn load_traces(path: &Path) -> Result<Vec<Trace>, SimError> {
    let bytes = read_bytes(path)?;
    let data = |e: String| SimError::Data(format!("{}: {e}", path.display()));
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        load_trace_store(&bytes).map_err(|e| data(e.to_string()))
    } else {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        parse_trace(bytes.as_slice(), &stem)
            .map(|t| vec![t])
            .map_err(|e| data(e.to_string()))
    }
}

pub fn load_map_file(path: &Path) -> Result<ConnectivityMap, SimError> {
    load_map(&read_bytes(path)?).map_err(|e| SimError::Data(format!("{}: {e}", path.display())))
}

pub fn load_model_file(path: &Path) -> Result<RateModel, SimError> {
    load_model(&read_bytes(path)?).map_err(|e| SimError::Data(format!("{}: {e}", path.display())))
}

/// Recursively overlays `top` on `base`; non-object values replace.
fn merge_json(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, t) => *slot = t,
    }
}

/// Resolves the scheme from an optional preset and an optional overlay.
pub fn resolve_scheme(preset: Option<&str>, overlay: Option<Value>) -> Result<SchemeConfig, SimError> {
    let mut value = match preset {
        Some(name) => serde_json::to_value(SchemeConfig::preset(name)?).expect("scheme serializes"),
        None => Value::Object(Default::default()),
    };
    if let Some(top) = overlay {
        merge_json(&mut value, top);
    }
    let scheme: SchemeConfig =
        serde_json::from_value(value).map_err(|e| SimError::Config(format!("scheme: {e}")))?;
    scheme.validate()?;
    Ok(scheme)
}

fn load_all(paths: &[PathBuf], dir: &Path) -> Result<Vec<Trace>, SimError> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_traces(&dir.join(p))?);
    }
    Ok(out)
}

/// Builds a scenario from a parsed document. `preset` overrides the
/// document's own preset.
pub fn scenario_from_value(
    value: Value,
    dir: &Path,
    preset: Option<&str>,
    default_name: &str,
) -> Result<Scenario, SimError> {
    let doc: ScenarioDoc = serde_json::from_value(value).map_err(|e| SimError::Config(format!("scenario: {e}")))?;
    if doc.traces.is_empty() {
        return Err(SimError::Config("scenario lists no traces".into()));
    }
    let scheme = resolve_scheme(preset.or(doc.preset.as_deref()), doc.scheme)?;

    let mut traces = load_all(&doc.traces, dir)?;
    if let Some(f) = doc.f_context_hz {
        traces = traces
            .iter()
            .map(|t| resample_context(t, f))
            .collect::<Result<_, _>>()
            .map_err(|e| SimError::Data(e.to_string()))?;
    }
    let map = doc.map.as_ref().map(|p| load_map_file(&dir.join(p))).transpose()?;
    let rate_model = doc.rate_model.as_ref().map(|p| load_model_file(&dir.join(p))).transpose()?;
    let frame = map
        .as_ref()
        .map(|m| *m.origin())
        .or_else(|| traces.first().map(|t| t.origin))
        .expect("traces are non-empty");
    let predictor = match doc.predictor {
        None => None,
        Some(PredictorDoc::Gps) => Some(PredictorChoice::Gps),
        Some(PredictorDoc::Trajectory { traces: paths, points }) => {
            let prior = load_all(&paths, dir)?;
            Some(PredictorChoice::Trajectory(mean_trajectory(&prior, &frame, points)?))
        }
        Some(PredictorDoc::Reference { trace }) => {
            let mut loaded = load_traces(&dir.join(trace))?;
            if loaded.len() != 1 {
                return Err(SimError::Config(format!(
                    "reference predictor needs exactly one trace, got {}",
                    loaded.len()
                )));
            }
            Some(PredictorChoice::Reference(loaded.remove(0)))
        }
    };

    let scenario = Scenario {
        name: doc.name.unwrap_or_else(|| default_name.to_string()),
        traces,
        map,
        predictor,
        rate_model,
        scheme,
        sensor: doc.sensor,
        device: doc.device.unwrap_or_else(DeviceCharacteristic::example_device),
        tx_power: doc.tx_power,
        oracle: doc.oracle,
        walk: doc.walk,
        seed: doc.seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path, preset: Option<&str>) -> Result<Scenario, SimError> {
    let value = read_config(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    scenario_from_value(value, dir, preset, &stem)
}

/// Loads `{"baseline": ..., "repetitions": ..., "scenarios": [...]}`.
pub fn load_comparison_set(path: &Path, preset: Option<&str>) -> Result<ComparisonSet, SimError> {
    let doc: ComparisonDoc =
        serde_json::from_value(read_config(path)?).map_err(|e| SimError::Config(format!("comparison set: {e}")))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let scenarios = doc
        .scenarios
        .into_iter()
        .enumerate()
        .map(|(i, v)| scenario_from_value(v, dir, preset, &format!("scenario{i}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ComparisonSet {
        baseline: doc.baseline,
        repetitions: doc.repetitions,
        scenarios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txscheme::Mode;
    use serde_json::json;

    #[test]
    fn preset_overlay() {
        let s = resolve_scheme(Some("paper-defaults"), Some(json!({"mode": "periodic", "period": 10.0}))).unwrap();
        assert_eq!(s.mode, Mode::Periodic);
        assert_eq!(s.period, Some(10.0));
        assert_eq!(s.t_max, 120.0);
        let s = resolve_scheme(Some("paper-defaults"), Some(json!({"metric": {"gamma": 0.7}}))).unwrap();
        assert_eq!(s.metric.gamma, 0.7);
        assert_eq!(s.metric.phi_max, 30.0);
    }

    #[test]
    fn incomplete_scheme_without_preset() {
        assert!(matches!(
            resolve_scheme(None, Some(json!({"mode": "cat"}))),
            Err(SimError::Config(_))
        ));
        assert!(matches!(resolve_scheme(Some("nope"), None), Err(SimError::Config(_))));
    }

    #[test]
    fn unknown_field_is_config_error() {
        let v = json!({"traces": ["a.csv"], "oracle": {"kind": "table"}, "bogus": 1});
        assert!(matches!(
            scenario_from_value(v, Path::new("."), Some("paper-defaults"), "x"),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn missing_trace_is_data_error() {
        let v = json!({"traces": ["does-not-exist.csv"], "oracle": {"kind": "table"}, "scheme": {"mode": "cat"}});
        assert!(matches!(
            scenario_from_value(v, Path::new("/nonexistent"), Some("paper-defaults"), "x"),
            Err(SimError::Data(_))
        ));
    }
}
