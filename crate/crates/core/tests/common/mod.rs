#![allow(dead_code)]

use pcat_core::geo::{to_geo, CartesianPoint, ChannelContext, ContextSample, GeoPoint, Trace};
use pcat_core::map::Indicator;
use pcat_core::sim::{OracleConfig, Scenario};
use pcat_core::txscheme::{Mode, SchemeConfig};

pub fn origin() -> GeoPoint {
    GeoPoint { lat: 51.49, lon: 7.41 }
}

/// Context whose RSRP follows the SNR, as on a single serving cell.
pub fn ctx_for_snr(snr: f64) -> ChannelContext {
    ChannelContext {
        rsrp: Some(-110.0 + 2.0 * snr),
        rsrq: Some(-11.0 + 7.0 * snr / 30.0),
        snr: Some(snr),
        cqi: Some((2.0 + snr * 14.0 / 30.0).round().min(15.0) as u8),
    }
}

/// Trace from local (t, x, y, v, heading, snr) tuples.
pub fn trace_from_local(id: &str, frame: &GeoPoint, rows: &[(f64, f64, f64, f64, f64, f64)]) -> Trace {
    let samples = rows
        .iter()
        .map(|&(t, x, y, v, heading, snr)| ContextSample {
            timestamp: t,
            position: to_geo(&CartesianPoint::new(x, y), frame).unwrap(),
            velocity: v,
            heading,
            context: ctx_for_snr(snr),
            measured_rate: None,
        })
        .collect();
    let mut trace = Trace::new(id, samples).unwrap();
    trace.origin = *frame;
    trace
}

/// Eastbound drive at `speed` m/s, 1 Hz, starting `x0` metres east of the frame origin.
pub fn eastbound(id: &str, seconds: usize, speed: f64, x0: f64, snr: impl Fn(f64) -> f64) -> Trace {
    let rows: Vec<_> = (0..=seconds)
        .map(|i| {
            let t = i as f64;
            (t, x0 + speed * t, 0.0, speed, 90.0, snr(t))
        })
        .collect();
    trace_from_local(id, &origin(), &rows)
}

pub fn sinusoid(t: f64) -> f64 {
    15.0 + 15.0 * (2.0 * std::f64::consts::PI * t / 120.0).sin()
}

pub fn snr_oracle() -> OracleConfig {
    OracleConfig::synthetic(Indicator::Snr, 0.5, 0.0)
}

pub fn scheme(mode: Mode) -> SchemeConfig {
    SchemeConfig {
        mode,
        period: (mode == Mode::Periodic).then_some(10.0),
        ..SchemeConfig::paper_defaults()
    }
}

pub fn scenario(name: &str, traces: Vec<Trace>, mode: Mode) -> Scenario {
    Scenario::new(name, traces, scheme(mode), snr_oracle())
}
