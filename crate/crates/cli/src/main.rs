use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pcat_core::datarate::{evaluate, holdout_split, read_labeled_csv, save_model, train, ModelKind, TrainParams};
use pcat_core::geo::{resample_context, save_trace_store, Trace};
use pcat_core::map::{build_map_with_origin, save_map, DEFAULT_CELL_SIDE_M};
use pcat_core::mobility::{
    evaluate_prediction_error, mean_trajectory, MobilityPredictor, ReferenceTrack, WalkParams, DEFAULT_OFF_ROUTE_M,
    DEFAULT_SPEED_BIN_MPS, DEFAULT_TRAJECTORY_POINTS,
};
use pcat_core::sim::config::{load_comparison_set, load_scenario, load_traces};
use pcat_core::sim::{compare_schemes, compute_kpis, run_simulation_seeded, SimError};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "pcat", version, about = "Trace-driven evaluation of channel-aware uplink scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    ModelTree,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Gps,
    Trajectory,
    Reference,
}

#[derive(Subcommand)]
enum Command {
    /// Validate CSV traces and write them as one trace store.
    Ingest {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Resample every trace to this context frequency (Hz).
        #[arg(long)]
        f_context: Option<f64>,
    },
    /// Aggregate traces into a connectivity map.
    BuildMap {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CELL_SIDE_M)]
        cell_side: f64,
    },
    /// Fit a data-rate model on a labeled CSV.
    Train {
        data: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = KindArg::ModelTree)]
        kind: KindArg,
        #[arg(long, default_value_t = 20)]
        min_leaf: usize,
        #[arg(long, default_value_t = 8)]
        max_depth: usize,
        #[arg(long)]
        no_prune: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also report accuracy on a held-out 20 % split.
        #[arg(long)]
        holdout: bool,
    },
    /// Position prediction error per speed bin, as CSV.
    EvalMobility {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = PredictorArg::Gps)]
        predictor: PredictorArg,
        /// Earlier drives for the trajectory predictor.
        #[arg(long)]
        prior: Vec<PathBuf>,
        /// Earlier drive for the reference predictor.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Prediction horizon in seconds.
        #[arg(long, default_value_t = 10.0)]
        tau: f64,
        #[arg(long, default_value_t = DEFAULT_SPEED_BIN_MPS)]
        bin_width: f64,
        #[arg(long, default_value_t = DEFAULT_TRAJECTORY_POINTS)]
        points: usize,
        #[arg(long, default_value_t = DEFAULT_OFF_ROUTE_M)]
        off_route: f64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Replay a scenario and write the run result.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run result JSON.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Transmission records CSV.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Run a scenario set repeatedly and compare it against a baseline.
    Compare {
        set: PathBuf,
        #[arg(long)]
        preset: Option<String>,
        #[arg(short = 'n', long)]
        repetitions: Option<usize>,
        #[arg(long)]
        baseline: Option<String>,
        /// Comparison table CSV.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Data(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => Failure::Config(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn config<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_many(paths: &[PathBuf]) -> Result<Vec<Trace>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_traces(p)?);
    }
    Ok(out)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest { inputs, out, f_context } => {
            let mut traces = load_many(&inputs)?;
            if let Some(f) = f_context {
                if !(f > 0.0 && f.is_finite()) {
                    return Err(Failure::Config(format!("--f-context must be positive, got {f}")));
                }
                traces = traces
                    .iter()
                    .map(|t| resample_context(t, f))
                    .collect::<Result<_, _>>()
                    .map_err(data)?;
            }
            write(&out, &save_trace_store(&traces))?;
            let samples: usize = traces.iter().map(|t| t.samples.len()).sum();
            eprintln!("{} traces, {samples} samples", traces.len());
        }
        Command::BuildMap { traces, out, cell_side } => {
            if !(cell_side > 0.0 && cell_side.is_finite()) {
                return Err(Failure::Config(format!("--cell-side must be positive, got {cell_side}")));
            }
            let traces = load_many(&traces)?;
            let origin = traces[0].origin;
            let map = build_map_with_origin(&traces, cell_side, origin).map_err(data)?;
            write(&out, &save_map(&map))?;
            eprintln!("{} cells", map.len());
        }
        Command::Train {
            data: input,
            out,
            kind,
            min_leaf,
            max_depth,
            no_prune,
            seed,
            holdout,
        } => {
            let file = fs::File::open(&input).map_err(|e| Failure::Data(format!("{}: {e}", input.display())))?;
            let (rows, dropped) = read_labeled_csv(file).map_err(data)?;
            let kind = match kind {
                KindArg::ModelTree => ModelKind::ModelTree,
                KindArg::Linear => ModelKind::Linear,
            };
            let params = TrainParams {
                min_leaf,
                max_depth,
                prune: !no_prune,
                seed,
                ..TrainParams::default()
            };
            if min_leaf == 0 {
                return Err(Failure::Config("--min-leaf must be at least 1".into()));
            }
            let model = train(&rows, kind, &params).map_err(data)?;
            let mut report = serde_json::json!({
                "rows": rows.len(),
                "dropped": dropped,
                "training": evaluate(&model, &rows).map_err(data)?,
            });
            if holdout {
                let (grow, held) = holdout_split(&rows, seed);
                let partial = train(&grow, kind, &params).map_err(data)?;
                report["holdout"] = serde_json::to_value(evaluate(&partial, &held).map_err(data)?).map_err(data)?;
            }
            write(&out, &save_model(&model))?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(data)?);
        }
        Command::EvalMobility {
            traces,
            predictor,
            prior,
            reference,
            tau,
            bin_width,
            points,
            off_route,
            out,
        } => {
            let traces = load_many(&traces)?;
            let frame = traces[0].origin;
            let params = WalkParams { off_route_m: off_route };
            let predictor = match predictor {
                PredictorArg::Gps => MobilityPredictor::Gps,
                PredictorArg::Trajectory => {
                    if prior.is_empty() {
                        return Err(Failure::Config("the trajectory predictor needs --prior traces".into()));
                    }
                    let prior = load_many(&prior)?;
                    let trajectory = mean_trajectory(&prior, &frame, points).map_err(data)?;
                    MobilityPredictor::Trajectory { trajectory, params }
                }
                PredictorArg::Reference => {
                    let path = reference
                        .ok_or_else(|| Failure::Config("the reference predictor needs --reference".into()))?;
                    let reference = load_traces(&path)?;
                    let track = ReferenceTrack::new(&reference[0], &frame).map_err(data)?;
                    MobilityPredictor::Reference { track, params }
                }
            };
            let table = evaluate_prediction_error(&predictor, &traces, &frame, tau, bin_width).map_err(|e| match e {
                pcat_core::mobility::MobilityError::InvalidParameter(_) => config(e),
                _ => data(e),
            })?;
            emit(out.as_deref(), &table.to_csv())?;
        }
        Command::Simulate {
            scenario,
            preset,
            seed,
            out,
            records,
        } => {
            let s = load_scenario(&scenario, preset.as_deref())?;
            let result = run_simulation_seeded(&s, seed.unwrap_or(s.seed))?;
            let json = serde_json::to_vec_pretty(&result).map_err(data)?;
            if let Some(p) = &out {
                write(p, &json)?;
            }
            if let Some(p) = &records {
                write(p, result.records_csv().as_bytes())?;
            }
            let kpis = compute_kpis(&result)?;
            println!("{}", serde_json::to_string_pretty(&kpis).map_err(data)?);
        }
        Command::Compare {
            set,
            preset,
            repetitions,
            baseline,
            out,
            json,
        } => {
            let set = load_comparison_set(&set, preset.as_deref())?;
            let n = repetitions.unwrap_or(set.repetitions);
            let baseline = baseline.unwrap_or(set.baseline);
            let comparison = compare_schemes(&set.scenarios, n, &baseline)?;
            if let Some(p) = &json {
                write(p, &serde_json::to_vec_pretty(&comparison).map_err(data)?)?;
            }
            emit(out.as_deref(), &comparison.to_csv())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn error_classes() {
        assert!(matches!(Failure::from(SimError::Config("x".into())), Failure::Config(_)));
        assert!(matches!(Failure::from(SimError::Oracle("x".into())), Failure::Data(_)));
        assert!(matches!(Failure::from(SimError::EmptyRun), Failure::Data(_)));
    }
}
