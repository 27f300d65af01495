//! Trace replay under a transmission scheme.
//!
//! Each trace is stepped at the decision interval `t_p`. Sensor samples
//! accrue to a buffer, the scheme decides whether to send it, and a channel
//! oracle supplies the rate the transmission achieves. Transmissions are
//! non-preemptive: while one is in flight no decisions are taken, but new
//! samples keep accruing. Whatever is still buffered at the end of a trace
//! goes out as a flagged flush record.
//!
//! Randomness comes from one ChaCha8 generator per run. Trace `i` uses
//! stream `i`, and decision step `k` reads words `4k..4k+4`: the first
//! `f64` is the decision draw, the second the oracle draw. Skipped steps
//! therefore never shift later draws.

pub mod config;
pub mod kpi;
pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datarate::{predict_context, RateModel};
use crate::geo::{ChannelContext, GeoError, GeoPoint, Trace};
use crate::map::{lookup, ConnectivityMap};
use crate::mobility::{
    predict_on_reference, state_of, MobilityError, MobilityPredictor, ReferenceTrack, Trajectory, WalkParams,
};
use crate::power::{transmission_duration, transmission_energy, DeviceCharacteristic, PowerError, PowerEstimate, TxPowerParams};
use crate::txscheme::{decide, BufferState, Decision, MetricKind, Mode, SchemeConfig, SchemeError};

pub use kpi::{aggregate, compare_schemes, compute_kpis, Comparison, ComparisonRow, KpiReport};
pub use oracle::{channel_oracle, OracleConfig, OracleInput, OracleKind};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("run produced no transmission records")]
    EmptyRun,
    #[error("comparison error: {0}")]
    Comparison(String),
}

impl From<SchemeError> for SimError {
    fn from(e: SchemeError) -> Self {
        SimError::Config(e.to_string())
    }
}

impl From<MobilityError> for SimError {
    fn from(e: MobilityError) -> Self {
        SimError::Data(e.to_string())
    }
}

impl From<GeoError> for SimError {
    fn from(e: GeoError) -> Self {
        SimError::Data(e.to_string())
    }
}

fn default_f_sensor() -> f64 {
    1.0
}

fn default_s_sensor() -> f64 {
    50.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Sample frequency in Hz.
    #[serde(default = "default_f_sensor")]
    pub f_sensor_hz: f64,
    /// Payload per sample in kB.
    #[serde(default = "default_s_sensor")]
    pub s_sensor_kb: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            f_sensor_hz: default_f_sensor(),
            s_sensor_kb: default_s_sensor(),
        }
    }
}

/// Where the predicted future position comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictorChoice {
    Gps,
    /// Mean trajectory, already expressed in the scenario frame.
    Trajectory(Trajectory),
    /// A single earlier drive; its recorded context replaces the map lookup.
    Reference(Trace),
}

impl PredictorChoice {
    pub fn name(&self) -> &'static str {
        match self {
            PredictorChoice::Gps => "gps",
            PredictorChoice::Trajectory(_) => "trajectory",
            PredictorChoice::Reference(_) => "reference",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub traces: Vec<Trace>,
    pub map: Option<ConnectivityMap>,
    pub predictor: Option<PredictorChoice>,
    pub rate_model: Option<RateModel>,
    pub scheme: SchemeConfig,
    pub sensor: SensorConfig,
    pub device: DeviceCharacteristic,
    pub tx_power: TxPowerParams,
    pub oracle: OracleConfig,
    pub walk: WalkParams,
    pub seed: u64,
}

impl Scenario {
    /// Scenario with defaults for everything but traces, scheme and oracle.
    pub fn new(name: impl Into<String>, traces: Vec<Trace>, scheme: SchemeConfig, oracle: OracleConfig) -> Self {
        Self {
            name: name.into(),
            traces,
            map: None,
            predictor: None,
            rate_model: None,
            scheme,
            sensor: SensorConfig::default(),
            device: DeviceCharacteristic::example_device(),
            tx_power: TxPowerParams::default(),
            oracle,
            walk: WalkParams::default(),
            seed: 0,
        }
    }

    /// Local frame: the map origin if there is a map, else the first trace's origin.
    pub fn frame(&self) -> Option<GeoPoint> {
        self.map
            .as_ref()
            .map(|m| *m.origin())
            .or_else(|| self.traces.first().map(|t| t.origin))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let cfg = |m: String| Err(SimError::Config(m));
        if self.traces.is_empty() {
            return cfg("scenario has no traces".into());
        }
        let s = &self.sensor;
        if !(s.f_sensor_hz > 0.0 && s.f_sensor_hz.is_finite() && s.s_sensor_kb > 0.0 && s.s_sensor_kb.is_finite()) {
            return cfg(format!(
                "sensor frequency and payload must be positive, got {} Hz and {} kB",
                s.f_sensor_hz, s.s_sensor_kb
            ));
        }
        self.scheme.validate()?;
        self.device
            .validate()
            .map_err(|e: PowerError| SimError::Config(e.to_string()))?;
        if self.scheme.mode == Mode::Pcat {
            match &self.predictor {
                None => return cfg("pcat mode needs a mobility predictor".into()),
                Some(PredictorChoice::Gps | PredictorChoice::Trajectory(_)) if self.map.is_none() => {
                    return cfg("pcat mode needs a connectivity map".into())
                }
                _ => {}
            }
        }
        let needs_model = self.scheme.metric.name == MetricKind::DataRate
            || matches!(self.oracle.kind, OracleKind::Model { .. });
        if needs_model && self.rate_model.is_none() {
            return cfg("the data-rate metric and the model oracle need a rate model".into());
        }
        if !(self.oracle.min_rate_mbps > 0.0 && self.oracle.min_rate_mbps.is_finite()) {
            return cfg(format!("min_rate_mbps must be positive, got {}", self.oracle.min_rate_mbps));
        }
        match self.oracle.kind {
            OracleKind::Model { sigma_ln } if !(sigma_ln >= 0.0 && sigma_ln.is_finite()) => {
                return cfg(format!("sigma_ln must be non-negative, got {sigma_ln}"))
            }
            OracleKind::Table { window_s } if !(window_s >= 0.0) => {
                return cfg(format!("window_s must be non-negative, got {window_s}"))
            }
            _ => {}
        }
        if !(self.walk.off_route_m >= 0.0) {
            return cfg(format!("off_route_m must be non-negative, got {}", self.walk.off_route_m));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionRecord {
    pub trace_index: usize,
    pub start_s: f64,
    pub payload_kb: f64,
    pub rate_mbps: f64,
    pub duration_s: f64,
    /// `None` when the transmit power could not be estimated.
    pub energy: Option<PowerEstimate>,
    pub oldest_sample_s: f64,
    pub mean_aoi_s: f64,
    pub samples: usize,
    /// End-of-trace flush.
    pub flush: bool,
    pub decision: Decision,
}

impl TransmissionRecord {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }
}

/// The configuration a run was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub scheme: SchemeConfig,
    pub sensor: SensorConfig,
    pub oracle: OracleConfig,
    pub device: DeviceCharacteristic,
    pub tx_power: TxPowerParams,
    pub walk: WalkParams,
    pub predictor: Option<String>,
    pub traces: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: String,
    pub seed: u64,
    pub config: ConfigEcho,
    pub records: Vec<TransmissionRecord>,
    /// Age of information of every delivered sensor sample, in delivery order.
    pub aoi_s: Vec<f64>,
    pub generated_kb: f64,
    pub decision_steps: u64,
    pub fallback_steps: u64,
    pub unknown_energy: usize,
}

pub const RECORDS_CSV_HEADER: &str = "start_s,payload_kb,rate_mbps,duration_s,energy_j,mean_aoi_s,p,theta,delta_phi,z,fallback";

impl RunResult {
    pub fn transmitted_kb(&self) -> f64 {
        self.records.iter().map(|r| r.payload_kb).sum()
    }

    /// One line per record; `energy_j` is empty when unknown.
    pub fn records_csv(&self) -> String {
        let mut out = String::from(RECORDS_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let energy = r.energy.map(|e| e.energy_j.to_string()).unwrap_or_default();
            let d = &r.decision;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.start_s,
                r.payload_kb,
                r.rate_mbps,
                r.duration_s,
                energy,
                r.mean_aoi_s,
                d.probability,
                d.theta,
                d.delta_phi,
                d.z,
                d.used_fallback
            ));
        }
        out
    }
}

enum LivePredictor {
    None,
    Position(MobilityPredictor),
    Reference(ReferenceTrack, WalkParams),
}

struct Runner<'a> {
    s: &'a Scenario,
    frame: GeoPoint,
    predictor: LivePredictor,
    result: RunResult,
}

/// Metric value for a context; the rate metric asks the model.
fn metric_value(s: &Scenario, ctx: &ChannelContext, buffered_kb: f64, velocity: f64) -> Option<f64> {
    match s.scheme.metric.name.indicator() {
        Some(ind) => ind.of(ctx),
        None => s
            .rate_model
            .as_ref()
            .and_then(|m| predict_context(m, ctx, buffered_kb, velocity).ok()),
    }
}

impl<'a> Runner<'a> {
    fn future_phi(&self, sample: &crate::geo::ContextSample, buffered_kb: f64) -> Result<Option<f64>, SimError> {
        let tau = self.s.scheme.tau;
        let state = state_of(sample, &self.frame)?;
        let ctx = match &self.predictor {
            LivePredictor::None => return Ok(None),
            LivePredictor::Position(p) => {
                let Ok(pos) = p.predict(&state, tau).position else {
                    return Ok(None);
                };
                match self.s.map.as_ref().and_then(|m| lookup(m, &pos)) {
                    Some(cell) => cell.mean_context(),
                    None => return Ok(None),
                }
            }
            LivePredictor::Reference(track, params) => match predict_on_reference(&state, track, tau, params).1 {
                Some(ctx) => ctx,
                None => return Ok(None),
            },
        };
        Ok(metric_value(self.s, &ctx, buffered_kb, sample.velocity))
    }

    #[allow(clippy::too_many_arguments)]
    fn transmit(
        &mut self,
        trace_index: usize,
        trace: &Trace,
        sample: &crate::geo::ContextSample,
        start: f64,
        pending: &mut Vec<f64>,
        oracle_draw: f64,
        decision: Decision,
        flush: bool,
    ) -> Result<f64, SimError> {
        let s = self.s;
        let payload_kb = pending.len() as f64 * s.sensor.s_sensor_kb;
        let rate = channel_oracle(
            &s.oracle,
            &OracleInput {
                ctx: &sample.context,
                payload_kb,
                velocity: sample.velocity,
                time: start,
                trace,
                model: s.rate_model.as_ref(),
            },
            oracle_draw,
        )?;
        let duration_s = transmission_duration(payload_kb, rate);
        let energy = match transmission_energy(payload_kb, rate, &sample.context, &s.device, &s.tx_power) {
            Ok(e) => Some(e),
            Err(PowerError::MissingRsrp) => {
                self.result.unknown_energy += 1;
                None
            }
            Err(e) => return Err(SimError::Data(e.to_string())),
        };
        let end = start + duration_s;
        let mut aoi_sum = 0.0;
        for gen in pending.iter() {
            let aoi = end - gen;
            aoi_sum += aoi;
            self.result.aoi_s.push(aoi);
        }
        self.result.records.push(TransmissionRecord {
            trace_index,
            start_s: start,
            payload_kb,
            rate_mbps: rate,
            duration_s,
            energy,
            oldest_sample_s: pending[0],
            mean_aoi_s: aoi_sum / pending.len() as f64,
            samples: pending.len(),
            flush,
            decision,
        });
        pending.clear();
        Ok(end)
    }

    fn run_trace(&mut self, trace_index: usize, trace: &Trace, seed: u64) -> Result<(), SimError> {
        let s = self.s;
        let cfg = &s.scheme;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trace_index as u64);

        let t0 = trace.start_time();
        let t_end = trace.end_time();
        let mut pending: Vec<f64> = Vec::new();
        let mut next_gen: u64 = 1;
        let gen_time = |j: u64| t0 + j as f64 / s.sensor.f_sensor_hz;
        let mut sample_idx = 0usize;
        let mut last_tx = t0;
        let mut busy_until = f64::NEG_INFINITY;
        let mut last_valid_phi = None;

        let mut k: u64 = 0;
        loop {
            let now = t0 + k as f64 * cfg.t_p;
            if now > t_end + 1e-9 {
                break;
            }
            while gen_time(next_gen) <= now + 1e-9 && gen_time(next_gen) <= t_end + 1e-9 {
                pending.push(gen_time(next_gen));
                next_gen += 1;
            }
            if now < busy_until {
                k += 1;
                continue;
            }
            while sample_idx + 1 < trace.samples.len() && trace.samples[sample_idx + 1].timestamp <= now {
                sample_idx += 1;
            }
            let sample = &trace.samples[sample_idx];

            rng.set_word_pos(k as u128 * 4);
            let decision_draw: f64 = rng.random();
            let oracle_draw: f64 = rng.random();

            let buffered_kb = pending.len() as f64 * s.sensor.s_sensor_kb;
            let phi_now = metric_value(s, &sample.context, buffered_kb, sample.velocity);
            let phi_future = if cfg.mode == Mode::Pcat {
                self.future_phi(sample, buffered_kb)?
            } else {
                None
            };
            let buf = BufferState {
                buffered_kb,
                last_tx_time: last_tx,
                now,
                last_valid_phi,
            };
            let decision = decide(cfg, &buf, phi_now, phi_future, decision_draw);
            self.result.decision_steps += 1;
            if decision.used_fallback {
                self.result.fallback_steps += 1;
            }
            if phi_now.is_some() {
                last_valid_phi = phi_now;
            }
            if decision.transmit && !pending.is_empty() {
                busy_until = self.transmit(trace_index, trace, sample, now, &mut pending, oracle_draw, decision, false)?;
                last_tx = now;
            }
            k += 1;
        }

        if !pending.is_empty() {
            let start = t_end.max(busy_until);
            rng.set_word_pos(k as u128 * 4 + 2);
            let oracle_draw: f64 = rng.random();
            let sample = trace.samples.last().expect("trace has samples");
            let decision = Decision {
                transmit: true,
                probability: 1.0,
                used_fallback: false,
                theta: 0.0,
                delta_phi: 0.0,
                z: 1.0,
            };
            self.transmit(trace_index, trace, sample, start, &mut pending, oracle_draw, decision, true)?;
        }
        Ok(())
    }
}

/// Replays every trace of `s` with the scenario's own seed.
pub fn run_simulation(s: &Scenario) -> Result<RunResult, SimError> {
    run_simulation_seeded(s, s.seed)
}

/// Replays every trace of `s` with an explicit seed.
pub fn run_simulation_seeded(s: &Scenario, seed: u64) -> Result<RunResult, SimError> {
    s.validate()?;
    let frame = s.frame().expect("validated scenario has traces");
    let predictor = if s.scheme.mode != Mode::Pcat {
        LivePredictor::None
    } else {
        match s.predictor.as_ref().expect("validated pcat scenario has a predictor") {
            PredictorChoice::Gps => LivePredictor::Position(MobilityPredictor::Gps),
            PredictorChoice::Trajectory(t) => LivePredictor::Position(MobilityPredictor::Trajectory {
                trajectory: t.clone(),
                params: s.walk,
            }),
            PredictorChoice::Reference(t) => LivePredictor::Reference(ReferenceTrack::new(t, &frame)?, s.walk),
        }
    };
    let config = ConfigEcho {
        scheme: s.scheme.clone(),
        sensor: s.sensor,
        oracle: s.oracle.clone(),
        device: s.device.clone(),
        tx_power: s.tx_power,
        walk: s.walk,
        predictor: s.predictor.as_ref().map(|p| p.name().to_string()),
        traces: s.traces.iter().map(|t| t.trip_id.clone()).collect(),
    };
    let mut runner = Runner {
        s,
        frame,
        predictor,
        result: RunResult {
            scenario: s.name.clone(),
            seed,
            config,
            records: Vec::new(),
            aoi_s: Vec::new(),
            generated_kb: 0.0,
            decision_steps: 0,
            fallback_steps: 0,
            unknown_energy: 0,
        },
    };
    let mut generated = 0u64;
    for (i, trace) in s.traces.iter().enumerate() {
        runner.run_trace(i, trace, seed)?;
        let span = trace.end_time() - trace.start_time();
        generated += (span * s.sensor.f_sensor_hz + 1e-9).floor() as u64;
    }
    runner.result.generated_kb = generated as f64 * s.sensor.s_sensor_kb;
    Ok(runner.result)
}
