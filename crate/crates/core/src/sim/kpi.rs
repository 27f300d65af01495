//! Key performance indicators of simulation runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::stats::{Estimate, RunningStats};

use super::{run_simulation_seeded, RunResult, Scenario, SimError, TransmissionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    /// Mean of per-transmission rates, flush records excluded.
    pub mean_rate_mbps: Estimate,
    /// Total bits over total air time of the same records.
    pub byte_weighted_rate_mbps: f64,
    pub mean_aoi_s: Estimate,
    /// Σ energy / Σ payload over records with a known energy.
    pub energy_per_mb_j: Option<Estimate>,
    /// Non-flush transmissions, summed over runs.
    pub tx_count: usize,
    pub flush_count: usize,
    pub decision_steps: u64,
    pub fallback_steps: u64,
    pub fallback_ratio: f64,
    pub unknown_energy: usize,
    pub runs: usize,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// KPIs of a single run. Confidence intervals here span the records
/// (rate) and samples (AoI) of this run; [`aggregate`] builds the
/// cross-run intervals from run means.
pub fn compute_kpis(r: &RunResult) -> Result<KpiReport, SimError> {
    if r.records.is_empty() {
        return Err(SimError::EmptyRun);
    }
    let regular: Vec<&TransmissionRecord> = r.records.iter().filter(|x| !x.flush).collect();
    let rate_set: Vec<&TransmissionRecord> = if regular.is_empty() {
        r.records.iter().collect()
    } else {
        regular.clone()
    };
    let mean_rate = Estimate::from_values(rate_set.iter().map(|x| x.rate_mbps)).expect("non-empty");
    let bits: f64 = rate_set.iter().map(|x| x.payload_kb * 8.0 / 1000.0).sum();
    let air: f64 = rate_set.iter().map(|x| x.duration_s).sum();
    let mean_aoi = Estimate::from_values(r.aoi_s.iter().copied()).ok_or(SimError::EmptyRun)?;

    let (mut joules, mut mb) = (0.0, 0.0);
    for x in &r.records {
        if let Some(e) = x.energy {
            joules += e.energy_j;
            mb += x.payload_kb / 1000.0;
        }
    }
    let energy = (mb > 0.0).then(|| Estimate {
        mean: joules / mb,
        ci95: 0.0,
        n: 1,
        degenerate: true,
    });

    Ok(KpiReport {
        mean_rate_mbps: mean_rate,
        byte_weighted_rate_mbps: bits / air,
        mean_aoi_s: mean_aoi,
        energy_per_mb_j: energy,
        tx_count: regular.len(),
        flush_count: r.records.len() - regular.len(),
        decision_steps: r.decision_steps,
        fallback_steps: r.fallback_steps,
        fallback_ratio: ratio(r.fallback_steps, r.decision_steps),
        unknown_energy: r.unknown_energy,
        runs: 1,
    })
}

/// Combines per-run reports; every interval is Student-t over the run means.
pub fn aggregate(reports: &[KpiReport]) -> Option<KpiReport> {
    if reports.is_empty() {
        return None;
    }
    let over = |f: &dyn Fn(&KpiReport) -> f64| -> Estimate {
        Estimate::from_values(reports.iter().map(f)).expect("non-empty")
    };
    let energies: RunningStats = reports
        .iter()
        .filter_map(|r| r.energy_per_mb_j.map(|e| e.mean))
        .collect();
    let decision_steps = reports.iter().map(|r| r.decision_steps).sum();
    let fallback_steps = reports.iter().map(|r| r.fallback_steps).sum();
    Some(KpiReport {
        mean_rate_mbps: over(&|r| r.mean_rate_mbps.mean),
        byte_weighted_rate_mbps: over(&|r| r.byte_weighted_rate_mbps).mean,
        mean_aoi_s: over(&|r| r.mean_aoi_s.mean),
        energy_per_mb_j: Estimate::from_stats(&energies),
        tx_count: reports.iter().map(|r| r.tx_count).sum(),
        flush_count: reports.iter().map(|r| r.flush_count).sum(),
        decision_steps,
        fallback_steps,
        fallback_ratio: ratio(fallback_steps, decision_steps),
        unknown_energy: reports.iter().map(|r| r.unknown_energy).sum(),
        runs: reports.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub report: KpiReport,
    /// Relative change against the baseline, `(x - base) / base`.
    pub rate_gain: f64,
    pub aoi_gain: f64,
    pub energy_per_mb_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub repetitions: usize,
    pub rows: Vec<ComparisonRow>,
}

pub const COMPARISON_CSV_HEADER: &str = "scenario,runs,mean_rate_mbps,mean_rate_ci95,byte_weighted_rate_mbps,mean_aoi_s,mean_aoi_ci95,energy_per_mb_j,energy_per_mb_ci95,tx_count,fallback_ratio,rate_gain,aoi_gain,energy_per_mb_gain";

impl Comparison {
    pub fn row(&self, scenario: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.scenario == scenario)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(COMPARISON_CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let k = &row.report;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                row.scenario,
                k.runs,
                k.mean_rate_mbps.mean,
                k.mean_rate_mbps.ci95,
                k.byte_weighted_rate_mbps,
                k.mean_aoi_s.mean,
                k.mean_aoi_s.ci95,
                opt(k.energy_per_mb_j.map(|e| e.mean)),
                opt(k.energy_per_mb_j.map(|e| e.ci95)),
                k.tx_count,
                k.fallback_ratio,
                row.rate_gain,
                row.aoi_gain,
                opt(row.energy_per_mb_gain)
            ));
        }
        out
    }
}

fn relative(x: f64, base: f64) -> f64 {
    (x - base) / base
}

/// Runs every scenario `repetitions` times with seeds `seed, seed + 1, ...`
/// in parallel and reports gains against the scenario named `baseline`.
pub fn compare_schemes(scenarios: &[Scenario], repetitions: usize, baseline: &str) -> Result<Comparison, SimError> {
    if repetitions < 1 {
        return Err(SimError::Config("need at least one repetition".into()));
    }
    let base_idx = scenarios
        .iter()
        .position(|s| s.name == baseline)
        .ok_or_else(|| SimError::Config(format!("baseline scenario {baseline:?} not found")))?;
    for s in scenarios {
        s.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|i| (0..repetitions).map(move |rep| (i, rep)))
        .collect();
    let runs: Vec<Result<RunResult, SimError>> = jobs
        .par_iter()
        .map(|&(i, rep)| {
            let s = &scenarios[i];
            run_simulation_seeded(s, s.seed.wrapping_add(rep as u64))
        })
        .collect();

    let mut reports: Vec<Vec<KpiReport>> = vec![Vec::with_capacity(repetitions); scenarios.len()];
    for (&(i, _), run) in jobs.iter().zip(runs) {
        let run = run?;
        let kpi = match compute_kpis(&run) {
            Ok(k) => k,
            Err(SimError::EmptyRun) if i == base_idx => {
                return Err(SimError::Comparison(format!(
                    "baseline {baseline:?} produced no transmissions"
                )))
            }
            Err(SimError::EmptyRun) => {
                return Err(SimError::Comparison(format!(
                    "scenario {:?} produced no transmissions",
                    scenarios[i].name
                )))
            }
            Err(e) => return Err(e),
        };
        reports[i].push(kpi);
    }
    let aggregated: Vec<KpiReport> = reports
        .iter()
        .map(|r| aggregate(r).expect("repetitions >= 1"))
        .collect();
    let base = aggregated[base_idx];
    if base.tx_count == 0 {
        return Err(SimError::Comparison(format!(
            "baseline {baseline:?} produced no transmissions"
        )));
    }
    let rows = scenarios
        .iter()
        .zip(aggregated)
        .map(|(s, k)| ComparisonRow {
            scenario: s.name.clone(),
            rate_gain: relative(k.mean_rate_mbps.mean, base.mean_rate_mbps.mean),
            aoi_gain: relative(k.mean_aoi_s.mean, base.mean_aoi_s.mean),
            energy_per_mb_gain: match (k.energy_per_mb_j, base.energy_per_mb_j) {
                (Some(x), Some(b)) => Some(relative(x.mean, b.mean)),
                _ => None,
            },
            report: k,
        })
        .collect();
    Ok(Comparison {
        baseline: baseline.to_string(),
        repetitions,
        rows,
    })
}
