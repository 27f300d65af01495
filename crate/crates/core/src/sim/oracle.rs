//! Achieved-rate oracle standing in for real uplink transmissions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::datarate::{predict_context, RateModel};
use crate::geo::{ChannelContext, Trace};
use crate::map::Indicator;

use super::SimError;

fn default_sigma() -> f64 {
    0.25
}

fn default_window() -> f64 {
    5.0
}

fn default_min_rate() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleKind {
    /// Rate-model prediction with multiplicative lognormal noise.
    Model {
        #[serde(default = "default_sigma")]
        sigma_ln: f64,
    },
    /// Measured rate of the nearest trace sample within `window_s`.
    Table {
        #[serde(default = "default_window")]
        window_s: f64,
    },
    /// `intercept + slope * indicator`.
    Synthetic {
        indicator: Indicator,
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    #[serde(flatten)]
    pub kind: OracleKind,
    /// Floor applied to every achieved rate so air time stays finite.
    #[serde(default = "default_min_rate")]
    pub min_rate_mbps: f64,
}

impl OracleConfig {
    pub fn synthetic(indicator: Indicator, slope: f64, intercept: f64) -> Self {
        Self {
            kind: OracleKind::Synthetic {
                indicator,
                slope,
                intercept,
            },
            min_rate_mbps: default_min_rate(),
        }
    }

    pub fn model(sigma_ln: f64) -> Self {
        Self {
            kind: OracleKind::Model { sigma_ln },
            min_rate_mbps: default_min_rate(),
        }
    }

    pub fn table(window_s: f64) -> Self {
        Self {
            kind: OracleKind::Table { window_s },
            min_rate_mbps: default_min_rate(),
        }
    }
}

/// Everything the oracle may look at for one transmission.
pub struct OracleInput<'a> {
    pub ctx: &'a ChannelContext,
    pub payload_kb: f64,
    pub velocity: f64,
    pub time: f64,
    pub trace: &'a Trace,
    pub model: Option<&'a RateModel>,
}

/// Achieved rate in Mbit/s; deterministic in `draw`.
pub fn channel_oracle(cfg: &OracleConfig, input: &OracleInput<'_>, draw: f64) -> Result<f64, SimError> {
    let rate = match &cfg.kind {
        OracleKind::Model { sigma_ln } => {
            let model = input
                .model
                .ok_or_else(|| SimError::Config("model oracle needs a rate model".into()))?;
            let predicted = predict_context(model, input.ctx, input.payload_kb, input.velocity)
                .map_err(|e| SimError::Oracle(e.to_string()))?;
            if *sigma_ln == 0.0 {
                predicted
            } else {
                let u = draw.clamp(1e-12, 1.0 - 1e-12);
                let z = Normal::standard().inverse_cdf(u);
                predicted * (sigma_ln * z).exp()
            }
        }
        OracleKind::Table { window_s } => input
            .trace
            .samples
            .iter()
            .filter_map(|s| s.measured_rate.map(|r| ((s.timestamp - input.time).abs(), r)))
            .filter(|(dt, _)| *dt <= *window_s)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, r)| r)
            .ok_or_else(|| {
                SimError::Oracle(format!(
                    "no measured rate within {window_s} s of t = {}",
                    input.time
                ))
            })?,
        OracleKind::Synthetic {
            indicator,
            slope,
            intercept,
        } => {
            let v = indicator
                .of(input.ctx)
                .ok_or_else(|| SimError::Oracle(format!("{indicator:?} missing for synthetic oracle")))?;
            intercept + slope * v
        }
    };
    if !rate.is_finite() {
        return Err(SimError::Oracle(format!("non-finite rate {rate}")));
    }
    Ok(rate.max(cfg.min_rate_mbps))
}
