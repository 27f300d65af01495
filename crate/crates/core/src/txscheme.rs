//! Probabilistic channel-aware transmission decisions.
//!
//! The current metric value is normalised to `theta` in [0, 1]. The
//! transmission probability inside the `(t_min, t_max)` window is
//! `theta^(alpha * z)`, where `z` stretches or shrinks the exponent
//! depending on whether the channel is expected to improve or degrade
//! over the prediction horizon. Outside the window the probability is 0
//! (too early) or 1 (buffering deadline reached).
//!
//! Everything here is a pure function; the random draw is supplied by the
//! caller.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::Indicator;

#[derive(Debug, Error, PartialEq)]
pub enum SchemeError {
    #[error("metric {name}: {reason}")]
    InvalidMetric { name: String, reason: String },
    #[error("invalid scheme configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

/// Source of the metric value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Rsrp,
    Rsrq,
    Snr,
    Cqi,
    /// Data rate predicted by the trained rate model.
    DataRate,
}

impl MetricKind {
    /// Map layer backing a single-indicator metric.
    pub fn indicator(&self) -> Option<Indicator> {
        match self {
            MetricKind::Rsrp => Some(Indicator::Rsrp),
            MetricKind::Rsrq => Some(Indicator::Rsrq),
            MetricKind::Snr => Some(Indicator::Snr),
            MetricKind::Cqi => Some(Indicator::Cqi),
            MetricKind::DataRate => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDefinition {
    pub name: MetricKind,
    pub phi_min: f64,
    pub phi_max: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl MetricDefinition {
    pub fn new(name: MetricKind, phi_min: f64, phi_max: f64, alpha: f64, gamma: f64) -> Result<Self, SchemeError> {
        let m = Self {
            name,
            phi_min,
            phi_max,
            alpha,
            gamma,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        let bad = |reason: &str| {
            Err(SchemeError::InvalidMetric {
                name: format!("{:?}", self.name),
                reason: reason.to_string(),
            })
        };
        if !(self.phi_min.is_finite() && self.phi_max.is_finite()) || self.phi_max <= self.phi_min {
            return bad("phi_max must exceed phi_min");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        Ok(())
    }

    // Reference metric parametrisation of the field evaluation.

    pub fn rsrp() -> Self {
        Self { name: MetricKind::Rsrp, phi_min: -120.0, phi_max: -70.0, alpha: 8.0, gamma: 0.3 }
    }

    pub fn rsrq() -> Self {
        Self { name: MetricKind::Rsrq, phi_min: -11.0, phi_max: -4.0, alpha: 8.0, gamma: 2.14 }
    }

    pub fn snr() -> Self {
        Self { name: MetricKind::Snr, phi_min: 0.0, phi_max: 30.0, alpha: 8.0, gamma: 0.5 }
    }

    pub fn cqi() -> Self {
        Self { name: MetricKind::Cqi, phi_min: 2.0, phi_max: 16.0, alpha: 8.0, gamma: 1.07 }
    }

    /// Predicted data rate in Mbit/s; the upper bound was evaluated at 15 and 18.
    pub fn data_rate(phi_max: f64) -> Self {
        Self { name: MetricKind::DataRate, phi_min: 0.0, phi_max, alpha: 8.0, gamma: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Periodic,
    Cat,
    Pcat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub mode: Mode,
    pub t_min: f64,
    pub t_max: f64,
    /// Decision interval.
    pub t_p: f64,
    /// Prediction horizon.
    pub tau: f64,
    pub metric: MetricDefinition,
    /// Transmission period in periodic mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

pub const PAPER_DEFAULTS: &str = "paper-defaults";

impl SchemeConfig {
    /// Reference scenario: t_min 10 s, t_max 120 s, 1 s decisions, 10 s
    /// horizon, SNR metric, predictive mode.
    pub fn paper_defaults() -> Self {
        Self {
            mode: Mode::Pcat,
            t_min: 10.0,
            t_max: 120.0,
            t_p: 1.0,
            tau: 10.0,
            metric: MetricDefinition::snr(),
            period: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self, SchemeError> {
        match name {
            PAPER_DEFAULTS => Ok(Self::paper_defaults()),
            other => Err(SchemeError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        self.metric.validate()?;
        let bad = |m: String| Err(SchemeError::InvalidConfig(m));
        if !(self.t_min >= 0.0 && self.t_min < self.t_max && self.t_max.is_finite()) {
            return bad(format!("need 0 <= t_min < t_max, got {} and {}", self.t_min, self.t_max));
        }
        if !(self.t_p > 0.0 && self.t_p.is_finite()) {
            return bad(format!("t_p must be positive, got {}", self.t_p));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be non-negative, got {}", self.tau));
        }
        if self.mode == Mode::Periodic && !self.period.is_some_and(|p| p > 0.0 && p.is_finite()) {
            return bad("periodic mode needs a positive period".into());
        }
        Ok(())
    }
}

/// Caller-owned scheduler state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferState {
    pub buffered_kb: f64,
    pub last_tx_time: f64,
    pub now: f64,
    /// Most recent valid metric value, used when the current one is missing.
    pub last_valid_phi: Option<f64>,
}

impl BufferState {
    pub fn elapsed(&self) -> f64 {
        self.now - self.last_tx_time
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub transmit: bool,
    pub probability: f64,
    pub used_fallback: bool,
    pub theta: f64,
    pub delta_phi: f64,
    pub z: f64,
}

/// Normalised metric value, saturating outside `[phi_min, phi_max]`.
pub fn normalize(phi: f64, m: &MetricDefinition) -> f64 {
    ((phi - m.phi_min) / (m.phi_max - m.phi_min)).clamp(0.0, 1.0)
}

/// Anticipated gain: positive when conditions are expected to improve.
pub fn gain(phi_now: f64, phi_future: f64) -> f64 {
    phi_future - phi_now
}

pub fn exponent_z(delta_phi: f64, theta: f64, gamma: f64) -> f64 {
    if delta_phi > 0.0 {
        (delta_phi * (1.0 - theta) * gamma).abs().max(1.0)
    } else {
        1.0 / (delta_phi * theta * gamma).abs().max(1.0)
    }
}

/// `dt == t_max` belongs to the deadline branch.
pub fn tx_probability(theta: f64, z: f64, alpha: f64, dt: f64, t_min: f64, t_max: f64) -> f64 {
    if dt <= t_min {
        0.0
    } else if dt >= t_max {
        1.0
    } else {
        theta.powf(alpha * z)
    }
}

/// Weighting factor that makes `target` comparable to `reference`:
/// `gamma_ref * range(reference) / range(target)`.
pub fn derive_gamma(target: &MetricDefinition, reference: &MetricDefinition) -> Result<f64, SchemeError> {
    let target_range = target.phi_max - target.phi_min;
    let reference_range = reference.phi_max - reference.phi_min;
    if !(target_range > 0.0) || !(reference_range > 0.0) {
        return Err(SchemeError::InvalidMetric {
            name: format!("{:?}", target.name),
            reason: "metric range must be positive".into(),
        });
    }
    Ok(reference.gamma * reference_range / target_range)
}

/// One scheduling decision.
///
/// In predictive mode a missing `phi_future` degrades to the plain
/// channel-aware rule (`z = 1`). A missing `phi_now` falls back to the last
/// valid value; with none at all, only the deadline branch can fire.
pub fn decide(
    cfg: &SchemeConfig,
    buf: &BufferState,
    phi_now: Option<f64>,
    phi_future: Option<f64>,
    random_draw: f64,
) -> Decision {
    let dt = buf.elapsed();
    if cfg.mode == Mode::Periodic {
        let transmit = cfg.period.is_some_and(|p| dt >= p);
        return Decision {
            transmit,
            probability: if transmit { 1.0 } else { 0.0 },
            used_fallback: false,
            theta: phi_now.map_or(0.0, |phi| normalize(phi, &cfg.metric)),
            delta_phi: 0.0,
            z: 1.0,
        };
    }

    let current = phi_now.or(buf.last_valid_phi);
    let theta = current.map_or(0.0, |phi| normalize(phi, &cfg.metric));
    let (delta_phi, z, used_fallback) = match (cfg.mode, phi_now, phi_future) {
        (Mode::Pcat, Some(now), Some(future)) => {
            let delta = gain(now, future);
            (delta, exponent_z(delta, theta, cfg.metric.gamma), false)
        }
        (Mode::Pcat, _, _) => (0.0, 1.0, true),
        _ => (0.0, 1.0, phi_now.is_none()),
    };
    let probability = tx_probability(theta, z, cfg.metric.alpha, dt, cfg.t_min, cfg.t_max);
    Decision {
        transmit: random_draw < probability,
        probability,
        used_fallback,
        theta,
        delta_phi,
        z,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: Mode) -> SchemeConfig {
        SchemeConfig {
            mode,
            period: Some(10.0),
            ..SchemeConfig::paper_defaults()
        }
    }

    fn buf(dt: f64) -> BufferState {
        BufferState {
            buffered_kb: 100.0,
            last_tx_time: 0.0,
            now: dt,
            last_valid_phi: None,
        }
    }

    #[test]
    fn normalize_examples() {
        let snr = MetricDefinition::snr();
        assert_eq!(normalize(15.0, &snr), 0.5);
        assert_eq!(normalize(0.0, &snr), 0.0);
        assert_eq!(normalize(30.0, &snr), 1.0);
        assert_eq!(normalize(45.0, &snr), 1.0);
        assert_eq!(normalize(-3.0, &snr), 0.0);
    }

    #[test]
    fn gain_examples() {
        assert_eq!(gain(10.0, 10.0), 0.0);
        assert_eq!(gain(10.0, 14.0), 4.0);
        assert_eq!(gain(-95.0, -105.0), -10.0);
    }

    #[test]
    fn exponent_examples() {
        assert_eq!(exponent_z(0.0, 0.37, 0.5), 1.0);
        assert_eq!(exponent_z(4.0, 0.5, 1.0), 2.0);
        assert_eq!(exponent_z(-4.0, 0.5, 1.0), 0.5);
        assert_eq!(exponent_z(0.1, 0.5, 1.0), 1.0);
    }

    #[test]
    fn probability_examples() {
        assert_eq!(tx_probability(0.5, 1.0, 8.0, 5.0, 10.0, 120.0), 0.0);
        assert_eq!(tx_probability(0.5, 1.0, 8.0, 60.0, 10.0, 120.0), 0.00390625);
        assert_eq!(tx_probability(0.5, 0.5, 8.0, 60.0, 10.0, 120.0), 0.0625);
        assert_eq!(tx_probability(0.0, 1.0, 8.0, 120.0, 10.0, 120.0), 1.0);
        assert_eq!(tx_probability(1.0, 1.0, 8.0, 10.0, 10.0, 120.0), 0.0);
    }

    #[test]
    fn gamma_table() {
        let snr = MetricDefinition::snr();
        let round2 = |x: f64| (x * 100.0).round() / 100.0;
        assert!((derive_gamma(&MetricDefinition::rsrp(), &snr).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(round2(derive_gamma(&MetricDefinition::rsrq(), &snr).unwrap()), 2.14);
        assert_eq!(round2(derive_gamma(&MetricDefinition::cqi(), &snr).unwrap()), 1.07);
        let flat = MetricDefinition { phi_max: 2.0, ..MetricDefinition::cqi() };
        assert!(derive_gamma(&flat, &snr).is_err());
    }

    #[test]
    fn decide_fallback_on_missing_future() {
        // phi_now = 15 dB -> theta 0.5
        let d = decide(&cfg(Mode::Pcat), &buf(60.0), Some(15.0), None, 0.003);
        assert!(d.used_fallback);
        assert_eq!(d.z, 1.0);
        assert_eq!(d.delta_phi, 0.0);
        assert_eq!(d.probability, 0.00390625);
        assert!(d.transmit);
    }

    #[test]
    fn decide_deadline_and_periodic() {
        let d = decide(&cfg(Mode::Pcat), &buf(130.0), Some(1.0), Some(0.0), 0.999_999);
        assert_eq!(d.probability, 1.0);
        assert!(d.transmit);

        let d = decide(&cfg(Mode::Periodic), &buf(9.0), Some(30.0), None, 0.0);
        assert!(!d.transmit);
        let d = decide(&cfg(Mode::Periodic), &buf(10.0), None, None, 0.9);
        assert!(d.transmit);
    }

    #[test]
    fn decide_predictive_chain() {
        // theta 0.5, future +4 dB with gamma 0.5 -> z = max(4*0.5*0.5, 1) = 1
        let d = decide(&cfg(Mode::Pcat), &buf(60.0), Some(15.0), Some(19.0), 0.5);
        assert_eq!((d.delta_phi, d.z, d.used_fallback), (4.0, 1.0, false));
        // future -20 dB -> z = 1 / max(20*0.5*0.5, 1) = 0.2
        let d = decide(&cfg(Mode::Pcat), &buf(60.0), Some(15.0), Some(-5.0), 0.5);
        assert_eq!(d.z, 0.2);
        assert_eq!(d.probability, 0.5f64.powf(8.0 * 0.2));
    }

    #[test]
    fn decide_without_any_metric() {
        let d = decide(&cfg(Mode::Cat), &buf(60.0), None, None, 0.0);
        assert!(d.used_fallback && !d.transmit && d.probability == 0.0);
        let d = decide(&cfg(Mode::Cat), &buf(120.0), None, None, 0.5);
        assert!(d.transmit);

        let mut stale = buf(60.0);
        stale.last_valid_phi = Some(30.0);
        let d = decide(&cfg(Mode::Pcat), &stale, None, Some(10.0), 0.5);
        assert!(d.used_fallback && d.transmit && d.theta == 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(SchemeConfig::paper_defaults().validate().is_ok());
        assert!(SchemeConfig::preset("paper-defaults").is_ok());
        assert!(SchemeConfig::preset("nope").is_err());
        let mut c = SchemeConfig::paper_defaults();
        c.t_min = 200.0;
        assert!(c.validate().is_err());
        let mut c = SchemeConfig::paper_defaults();
        c.mode = Mode::Periodic;
        assert!(c.validate().is_err());
        assert!(MetricDefinition::new(MetricKind::Snr, 1.0, 1.0, 8.0, 1.0).is_err());
        assert!(MetricDefinition::new(MetricKind::Snr, 0.0, 1.0, 0.0, 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn zero_gain_equals_cat(theta in 0.0f64..=1.0, alpha in 0.1f64..20.0, gamma in 0.01f64..5.0, dt in 0.0f64..200.0) {
                let z = exponent_z(0.0, theta, gamma);
                prop_assert_eq!(
                    tx_probability(theta, z, alpha, dt, 10.0, 120.0),
                    tx_probability(theta, 1.0, alpha, dt, 10.0, 120.0)
                );
            }

            #[test]
            fn non_increasing_in_gain(theta in 0.001f64..0.999, alpha in 0.1f64..20.0, gamma in 0.01f64..5.0,
                                      d1 in -50.0f64..50.0, d2 in -50.0f64..50.0) {
                let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
                let p = |d| tx_probability(theta, exponent_z(d, theta, gamma), alpha, 60.0, 10.0, 120.0);
                prop_assert!(p(lo) >= p(hi));
            }

            #[test]
            fn non_decreasing_in_quality(t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0, alpha in 0.1f64..20.0,
                                         gamma in 0.01f64..5.0, delta in -50.0f64..50.0) {
                let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                let p = |t| tx_probability(t, exponent_z(delta, t, gamma), alpha, 60.0, 10.0, 120.0);
                prop_assert!(p(lo) <= p(hi));
            }

            #[test]
            fn bounded(theta in 0.0f64..=1.0, alpha in 0.1f64..20.0, gamma in 0.01f64..5.0,
                       delta in -50.0f64..50.0, dt in 0.0f64..200.0) {
                let p = tx_probability(theta, exponent_z(delta, theta, gamma), alpha, dt, 10.0, 120.0);
                prop_assert!((0.0..=1.0).contains(&p));
                if dt > 10.0 && dt < 120.0 {
                    let at = |t: f64| tx_probability(t, exponent_z(delta, t, gamma), alpha, dt, 10.0, 120.0);
                    prop_assert_eq!(at(0.0), 0.0);
                    prop_assert_eq!(at(1.0), 1.0);
                    // Away from underflow the interior stays strictly inside (0, 1).
                    let q = tx_probability(theta.clamp(0.3, 0.7), 1.0, alpha.min(8.0), dt, 10.0, 120.0);
                    prop_assert!(q > 0.0 && q < 1.0);
                }
            }

            #[test]
            fn decide_is_pure(theta_phi in -5.0f64..35.0, future in -5.0f64..35.0, dt in 0.0f64..150.0, draw in 0.0f64..1.0) {
                let c = SchemeConfig::paper_defaults();
                let b = BufferState { buffered_kb: 1.0, last_tx_time: 0.0, now: dt, last_valid_phi: None };
                prop_assert_eq!(
                    decide(&c, &b, Some(theta_phi), Some(future), draw),
                    decide(&c, &b, Some(theta_phi), Some(future), draw)
                );
            }
        }
    }
}
