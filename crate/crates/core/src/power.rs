//! Uplink energy estimation with a two-segment device characteristic.
//!
//! The device's power draw is piecewise linear in the transmit power (dBm),
//! with the two segments meeting at a knee. The transmit power itself is
//! estimated from RSRP with an open-loop pathloss heuristic, because the
//! modem does not report it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::ChannelContext;

#[derive(Debug, Error, PartialEq)]
pub enum PowerError {
    #[error("transmit power estimation needs an RSRP value")]
    MissingRsrp,
    #[error("transmit power {tx_dbm} dBm exceeds the device maximum {p_max_dbm} dBm")]
    AboveMaximum { tx_dbm: f64, p_max_dbm: f64 },
    #[error("achieved rate must be positive, got {0} Mbit/s")]
    InvalidRate(f64),
    #[error("invalid device characteristic: {0}")]
    InvalidDevice(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub slope_w_per_db: f64,
    /// Power at 0 dBm.
    pub intercept_w: f64,
}

impl Segment {
    fn at(&self, tx_dbm: f64) -> f64 {
        self.intercept_w + self.slope_w_per_db * tx_dbm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceCharacteristic {
    pub knee_dbm: f64,
    pub low: Segment,
    pub high: Segment,
    pub p_max_dbm: f64,
    pub state_edges_dbm: Vec<f64>,
}

impl DeviceCharacteristic {
    /// Illustrative characteristic: flat-ish below 10 dBm, steeper above.
    pub fn example_device() -> Self {
        Self {
            knee_dbm: 10.0,
            low: Segment {
                slope_w_per_db: 0.005,
                intercept_w: 1.0,
            },
            high: Segment {
                slope_w_per_db: 0.05,
                intercept_w: 0.55,
            },
            p_max_dbm: 23.0,
            state_edges_dbm: vec![-20.0, 0.0, 10.0, 17.0],
        }
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        let bad = |m: String| Err(PowerError::InvalidDevice(m));
        let gap = (self.low.at(self.knee_dbm) - self.high.at(self.knee_dbm)).abs();
        if !(gap <= 1e-6) {
            return bad(format!("segments differ by {gap} W at the knee"));
        }
        if self.low.slope_w_per_db < 0.0 || self.high.slope_w_per_db < 0.0 {
            return bad("segment slopes must be non-negative".into());
        }
        if !(self.knee_dbm <= self.p_max_dbm) {
            return bad("knee lies above p_max".into());
        }
        if self.state_edges_dbm.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("state edges must be strictly ascending".into());
        }
        Ok(())
    }

    pub fn state_count(&self) -> usize {
        self.state_edges_dbm.len() + 1
    }
}

/// Open-loop transmit power from downlink pathloss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxPowerParams {
    pub p0_dbm: f64,
    pub alpha_pl: f64,
    pub rsrp_ref_dbm: f64,
    pub p_max_dbm: f64,
}

impl Default for TxPowerParams {
    fn default() -> Self {
        Self {
            p0_dbm: -60.0,
            alpha_pl: 0.8,
            rsrp_ref_dbm: -50.0,
            p_max_dbm: 23.0,
        }
    }
}

/// Pluggable transmit-power estimate.
pub trait TxPowerEstimator {
    fn estimate(&self, ctx: &ChannelContext) -> Result<f64, PowerError>;
}

impl TxPowerEstimator for TxPowerParams {
    fn estimate(&self, ctx: &ChannelContext) -> Result<f64, PowerError> {
        estimate_tx_power(ctx, self)
    }
}

pub fn estimate_tx_power(ctx: &ChannelContext, params: &TxPowerParams) -> Result<f64, PowerError> {
    let rsrp = ctx.rsrp.ok_or(PowerError::MissingRsrp)?;
    let pathloss = params.rsrp_ref_dbm - rsrp;
    Ok(params.p_max_dbm.min(params.p0_dbm + params.alpha_pl * pathloss))
}

/// Device power draw in W at transmit power `tx_dbm`.
pub fn device_power(tx_dbm: f64, dev: &DeviceCharacteristic) -> Result<f64, PowerError> {
    if tx_dbm > dev.p_max_dbm {
        return Err(PowerError::AboveMaximum {
            tx_dbm,
            p_max_dbm: dev.p_max_dbm,
        });
    }
    let segment = if tx_dbm < dev.knee_dbm { &dev.low } else { &dev.high };
    Ok(segment.at(tx_dbm))
}

/// Discrete power state; intervals are closed on the left.
pub fn power_state(tx_dbm: f64, dev: &DeviceCharacteristic) -> usize {
    dev.state_edges_dbm.partition_point(|&edge| edge <= tx_dbm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub tx_power_dbm: f64,
    pub state: usize,
    pub device_power_w: f64,
    pub energy_j: f64,
    pub duration_s: f64,
}

/// Air time of `payload_kb` at `rate_mbps`, in seconds.
pub fn transmission_duration(payload_kb: f64, rate_mbps: f64) -> f64 {
    payload_kb * 8.0 / 1000.0 / rate_mbps
}

pub fn transmission_energy(
    payload_kb: f64,
    achieved_rate_mbps: f64,
    ctx: &ChannelContext,
    dev: &DeviceCharacteristic,
    estimator: &dyn TxPowerEstimator,
) -> Result<PowerEstimate, PowerError> {
    if !(achieved_rate_mbps > 0.0 && achieved_rate_mbps.is_finite()) {
        return Err(PowerError::InvalidRate(achieved_rate_mbps));
    }
    let tx_power_dbm = estimator.estimate(ctx)?.min(dev.p_max_dbm);
    let device_power_w = device_power(tx_power_dbm, dev)?;
    let duration_s = transmission_duration(payload_kb, achieved_rate_mbps);
    Ok(PowerEstimate {
        tx_power_dbm,
        state: power_state(tx_power_dbm, dev),
        device_power_w,
        energy_j: device_power_w * duration_s,
        duration_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rsrp(v: f64) -> ChannelContext {
        ChannelContext {
            rsrp: Some(v),
            ..Default::default()
        }
    }

    struct Fixed(f64);
    impl TxPowerEstimator for Fixed {
        fn estimate(&self, _: &ChannelContext) -> Result<f64, PowerError> {
            Ok(self.0)
        }
    }

    #[test]
    fn tx_power_examples() {
        let p = TxPowerParams::default();
        assert_eq!(estimate_tx_power(&rsrp(-50.0), &p), Ok(-60.0));
        assert!((estimate_tx_power(&rsrp(-120.0), &p).unwrap() - -4.0).abs() < 1e-12);
        assert_eq!(estimate_tx_power(&rsrp(-200.0), &p), Ok(23.0));
        assert_eq!(estimate_tx_power(&ChannelContext::default(), &p), Err(PowerError::MissingRsrp));
    }

    #[test]
    fn device_power_examples() {
        let dev = DeviceCharacteristic::example_device();
        dev.validate().unwrap();
        assert!((dev.low.at(dev.knee_dbm) - dev.high.at(dev.knee_dbm)).abs() < 1e-6);
        assert_eq!(device_power(0.0, &dev), Ok(1.0));
        assert!(device_power(20.0, &dev).unwrap() > device_power(0.0, &dev).unwrap());
        assert!(matches!(device_power(23.5, &dev), Err(PowerError::AboveMaximum { .. })));
    }

    #[test]
    fn state_examples() {
        let dev = DeviceCharacteristic::example_device();
        assert_eq!(power_state(-30.0, &dev), 0);
        assert_eq!(power_state(0.0, &dev), 2);
        assert_eq!(power_state(-0.001, &dev), 1);
        assert_eq!(power_state(22.0, &dev), dev.state_count() - 1);
    }

    #[test]
    fn energy_examples() {
        let dev = DeviceCharacteristic {
            low: Segment { slope_w_per_db: 0.0, intercept_w: 2.0 },
            high: Segment { slope_w_per_db: 0.0, intercept_w: 2.0 },
            ..DeviceCharacteristic::example_device()
        };
        let e = transmission_energy(1000.0, 8.0, &rsrp(-90.0), &dev, &TxPowerParams::default()).unwrap();
        assert_eq!((e.duration_s, e.energy_j), (1.0, 2.0));
        let zero = transmission_energy(0.0, 8.0, &rsrp(-90.0), &dev, &TxPowerParams::default()).unwrap();
        assert_eq!((zero.duration_s, zero.energy_j), (0.0, 0.0));
        let fast = transmission_energy(1000.0, 16.0, &rsrp(-90.0), &dev, &TxPowerParams::default()).unwrap();
        assert_eq!(fast.energy_j, e.energy_j / 2.0);
        assert_eq!(
            transmission_energy(1.0, 0.0, &rsrp(-90.0), &dev, &TxPowerParams::default()),
            Err(PowerError::InvalidRate(0.0))
        );
        assert_eq!(
            transmission_energy(1.0, 1.0, &ChannelContext::default(), &dev, &TxPowerParams::default()),
            Err(PowerError::MissingRsrp)
        );
        let pluggable = transmission_energy(1000.0, 8.0, &ChannelContext::default(), &dev, &Fixed(5.0)).unwrap();
        assert_eq!(pluggable.tx_power_dbm, 5.0);
    }

    #[test]
    fn validation_rejects_broken_devices() {
        let mut dev = DeviceCharacteristic::example_device();
        dev.high.intercept_w += 0.1;
        assert!(dev.validate().is_err());
        let mut dev = DeviceCharacteristic::example_device();
        dev.state_edges_dbm = vec![0.0, 0.0];
        assert!(dev.validate().is_err());
    }

    fn device_strategy() -> impl Strategy<Value = DeviceCharacteristic> {
        (-10.0f64..20.0, 0.0f64..0.1, 0.0f64..0.2, 0.1f64..3.0).prop_map(|(knee, ls, hs, base)| {
            let low = Segment { slope_w_per_db: ls, intercept_w: base };
            let at_knee = low.at(knee);
            DeviceCharacteristic {
                knee_dbm: knee,
                low,
                high: Segment { slope_w_per_db: hs, intercept_w: at_knee - hs * knee },
                p_max_dbm: 23.0,
                state_edges_dbm: vec![-20.0, 0.0, 10.0],
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn monotone_over_operating_range(dev in device_strategy()) {
            prop_assert!(dev.validate().is_ok());
            let mut prev = f64::NEG_INFINITY;
            for i in 0..10_000 {
                let tx = -40.0 + 63.0 * i as f64 / 9_999.0;
                let p = device_power(tx, &dev).unwrap();
                prop_assert!(p >= prev - 1e-12);
                prev = p;
            }
        }

        #[test]
        fn energy_is_homogeneous(payload in 0.0f64..5000.0, k in 0.0f64..10.0, rate in 0.1f64..50.0, r in -130.0f64..-50.0) {
            let dev = DeviceCharacteristic::example_device();
            let params = TxPowerParams::default();
            let a = transmission_energy(payload, rate, &rsrp(r), &dev, &params).unwrap();
            let b = transmission_energy(k * payload, rate, &rsrp(r), &dev, &params).unwrap();
            prop_assert!((b.energy_j - k * a.energy_j).abs() <= 1e-9 * (1.0 + b.energy_j.abs()));
            prop_assert_eq!(a.energy_j, a.device_power_w * a.duration_s);
        }

        #[test]
        fn states_partition(tx1 in -60.0f64..23.0, tx2 in -60.0f64..23.0) {
            let dev = DeviceCharacteristic::example_device();
            let (lo, hi) = if tx1 <= tx2 { (tx1, tx2) } else { (tx2, tx1) };
            prop_assert!(power_state(lo, &dev) <= power_state(hi, &dev));
            prop_assert!(power_state(hi, &dev) < dev.state_count());
        }
    }
}
