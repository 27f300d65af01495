//! Uplink data-rate regression from passive channel context.
//!
//! Two model kinds are supported: a plain least-squares linear model and a
//! model tree (binary splits chosen by standard-deviation reduction, a
//! linear model in every leaf, optional reduced-error pruning against a
//! held-out fifth of the rows).

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{read_rows, ChannelContext, TraceError};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const NUM_FEATURES: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum DataRateError {
    #[error("need at least {needed} training rows, got {got}")]
    InsufficientRows { needed: usize, got: usize },
    #[error("missing feature {0}")]
    MissingFeature(Feature),
    #[error("cannot evaluate on an empty data set")]
    EmptyEvaluation,
    #[error("invalid training parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported model format version {0}")]
    Version(serde_json::Value),
    #[error("corrupt model document: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Rsrp,
    Rsrq,
    Snr,
    Cqi,
    PayloadKb,
    Velocity,
}

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::Rsrp,
        Feature::Rsrq,
        Feature::Snr,
        Feature::Cqi,
        Feature::PayloadKb,
        Feature::Velocity,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Feature::Rsrp => "rsrp",
            Feature::Rsrq => "rsrq",
            Feature::Snr => "snr",
            Feature::Cqi => "cqi",
            Feature::PayloadKb => "payload_kb",
            Feature::Velocity => "velocity",
        };
        f.write_str(name)
    }
}

/// Model input. Also used for per-feature coefficients and ranges.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub rsrp: f64,
    pub rsrq: f64,
    pub snr: f64,
    pub cqi: f64,
    pub payload_kb: f64,
    pub velocity: f64,
}

impl FeatureVector {
    pub fn from_array(a: [f64; NUM_FEATURES]) -> Self {
        Self {
            rsrp: a[0],
            rsrq: a[1],
            snr: a[2],
            cqi: a[3],
            payload_kb: a[4],
            velocity: a[5],
        }
    }

    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [self.rsrp, self.rsrq, self.snr, self.cqi, self.payload_kb, self.velocity]
    }

    pub fn get(&self, feature: Feature) -> f64 {
        self.to_array()[feature.index()]
    }

    /// Assembles features from a channel context; every indicator must be present.
    pub fn from_context(ctx: &ChannelContext, payload_kb: f64, velocity: f64) -> Result<Self, DataRateError> {
        Ok(Self {
            rsrp: ctx.rsrp.ok_or(DataRateError::MissingFeature(Feature::Rsrp))?,
            rsrq: ctx.rsrq.ok_or(DataRateError::MissingFeature(Feature::Rsrq))?,
            snr: ctx.snr.ok_or(DataRateError::MissingFeature(Feature::Snr))?,
            cqi: ctx.cqi.map(f64::from).ok_or(DataRateError::MissingFeature(Feature::Cqi))?,
            payload_kb,
            velocity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: FeatureVector,
    /// Mbit/s
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: FeatureVector,
    /// Number of rows the model was fit on.
    pub n: usize,
}

impl LinearModel {
    pub fn eval(&self, f: &FeatureVector) -> f64 {
        let c = self.coefficients.to_array();
        f.to_array()
            .iter()
            .zip(c)
            .fold(self.intercept, |acc, (x, w)| acc + w * x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: Feature,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf(LinearModel),
}

impl TreeNode {
    fn leaf_for(&self, f: &FeatureVector) -> &LinearModel {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf(m) => return m,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if f.get(*feature) <= *threshold { left } else { right },
            }
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Splits in pre-order.
    pub fn splits(&self) -> Vec<(Feature, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            if let TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } = node
            {
                out.push((*feature, *threshold));
                stack.push(right);
                stack.push(left);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    ModelTree { root: TreeNode },
    Linear { model: LinearModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_samples: usize,
    pub feature_min: FeatureVector,
    pub feature_max: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    #[serde(flatten)]
    pub body: ModelBody,
    pub training_meta: TrainingMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ModelTree,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub min_leaf: usize,
    pub max_depth: usize,
    pub prune: bool,
    pub seed: u64,
    /// Nodes whose label deviation falls below this fraction of the root's stay leaves.
    pub sd_fraction: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            min_leaf: 20,
            max_depth: 8,
            prune: true,
            seed: 0,
            sd_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
    pub overestimation_share: f64,
}

/// Least-squares fit over all features. Constant and collinear columns get
/// the minimum-norm solution (zero weight for constant columns).
fn fit_linear(rows: &[&LabeledSample]) -> LinearModel {
    let n = rows.len();
    let nf = n as f64;
    let y_mean = rows.iter().map(|r| r.rate).sum::<f64>() / nf;
    let mut means = [0.0; NUM_FEATURES];
    let mut sds = [0.0; NUM_FEATURES];
    for j in 0..NUM_FEATURES {
        means[j] = rows.iter().map(|r| r.features.to_array()[j]).sum::<f64>() / nf;
        sds[j] = (rows
            .iter()
            .map(|r| (r.features.to_array()[j] - means[j]).powi(2))
            .sum::<f64>()
            / nf)
            .sqrt();
    }
    let active: Vec<usize> = (0..NUM_FEATURES)
        .filter(|&j| sds[j] > 1e-12 * (1.0 + means[j].abs()))
        .collect();
    let mut coefficients = [0.0; NUM_FEATURES];
    let all_equal = rows.iter().all(|r| r.rate == rows[0].rate);
    if !active.is_empty() && !all_equal {
        let x = DMatrix::from_fn(n, active.len(), |i, k| {
            let j = active[k];
            (rows[i].features.to_array()[j] - means[j]) / sds[j]
        });
        let y = DVector::from_iterator(n, rows.iter().map(|r| r.rate - y_mean));
        let svd = x.svd(true, true);
        let eps = 1e-10 * svd.singular_values.max();
        if let Ok(beta) = svd.solve(&y, eps) {
            for (k, &j) in active.iter().enumerate() {
                coefficients[j] = beta[k] / sds[j];
            }
        }
    }
    let intercept = if all_equal {
        rows[0].rate
    } else {
        y_mean - (0..NUM_FEATURES).map(|j| coefficients[j] * means[j]).sum::<f64>()
    };
    LinearModel {
        intercept,
        coefficients: FeatureVector::from_array(coefficients),
        n,
    }
}

fn population_sd(rows: &[&LabeledSample]) -> f64 {
    let stats: crate::stats::RunningStats = rows.iter().map(|r| r.rate).collect();
    (stats.m2 / stats.n as f64).sqrt()
}

struct BestSplit {
    feature: Feature,
    threshold: f64,
    sdr: f64,
}

/// Split maximising the standard-deviation reduction with at least
/// `min_leaf` rows on each side.
fn best_split(rows: &[&LabeledSample], min_leaf: usize) -> Option<BestSplit> {
    best_split_among(rows, min_leaf, &Feature::ALL)
}

fn best_split_among(rows: &[&LabeledSample], min_leaf: usize, features: &[Feature]) -> Option<BestSplit> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let sd_all = population_sd(rows);
    let y_mean = rows.iter().map(|r| r.rate).sum::<f64>() / n as f64;
    let mut best: Option<BestSplit> = None;
    for &feature in features {
        let mut order: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.features.get(feature), r.rate - y_mean))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total_s: f64 = order.iter().map(|o| o.1).sum();
        let total_q: f64 = order.iter().map(|o| o.1 * o.1).sum();
        let (mut s, mut q) = (0.0, 0.0);
        for i in 0..n - 1 {
            s += order[i].1;
            q += order[i].1 * order[i].1;
            let left_n = i + 1;
            let right_n = n - left_n;
            if left_n < min_leaf || right_n < min_leaf || order[i].0 == order[i + 1].0 {
                continue;
            }
            let sd = |sum: f64, sq: f64, cnt: usize| {
                let c = cnt as f64;
                (sq / c - (sum / c).powi(2)).max(0.0).sqrt()
            };
            let sd_l = sd(s, q, left_n);
            let sd_r = sd(total_s - s, total_q - q, right_n);
            let sdr = sd_all - (left_n as f64 * sd_l + right_n as f64 * sd_r) / n as f64;
            if best.as_ref().is_none_or(|b| sdr > b.sdr) {
                let (lo, hi) = (order[i].0, order[i + 1].0);
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some(BestSplit { feature, threshold, sdr });
            }
        }
    }
    best.filter(|b| b.sdr > 1e-12 * (1.0 + sd_all))
}

/// Tree under construction: every node carries the linear model fit on its
/// rows, which pruning may promote to a leaf.
struct GrowNode {
    model: LinearModel,
    split: Option<(Feature, f64, Box<GrowNode>, Box<GrowNode>)>,
}

fn grow(rows: &[&LabeledSample], depth: usize, root_sd: f64, params: &TrainParams) -> GrowNode {
    let model = fit_linear(rows);
    let stop = rows.len() < 2 * params.min_leaf
        || depth >= params.max_depth
        || population_sd(rows) <= params.sd_fraction * root_sd;
    let split = if stop {
        None
    } else {
        best_split(rows, params.min_leaf).map(|b| {
            let (left, right): (Vec<&LabeledSample>, Vec<&LabeledSample>) =
                rows.iter().partition(|r| r.features.get(b.feature) <= b.threshold);
            (
                b.feature,
                b.threshold,
                Box::new(grow(&left, depth + 1, root_sd, params)),
                Box::new(grow(&right, depth + 1, root_sd, params)),
            )
        })
    };
    GrowNode { model, split }
}

fn abs_error(model: &LinearModel, rows: &[&LabeledSample]) -> f64 {
    rows.iter()
        .map(|r| (model.eval(&r.features).max(0.0) - r.rate).abs())
        .sum()
}

/// Reduced-error pruning. Returns the pruned subtree and its absolute error
/// on the held-out rows reaching it.
fn prune(node: GrowNode, holdout: &[&LabeledSample]) -> (TreeNode, f64) {
    let leaf_err = abs_error(&node.model, holdout);
    match node.split {
        None => (TreeNode::Leaf(node.model), leaf_err),
        Some((feature, threshold, left, right)) => {
            let (hl, hr): (Vec<&LabeledSample>, Vec<&LabeledSample>) =
                holdout.iter().partition(|r| r.features.get(feature) <= threshold);
            let (left, el) = prune(*left, &hl);
            let (right, er) = prune(*right, &hr);
            if leaf_err <= el + er {
                (TreeNode::Leaf(node.model), leaf_err)
            } else {
                (
                    TreeNode::Split {
                        feature,
                        threshold,
                        left: Box::new(left),
                        right: Box::new(right),
                    },
                    el + er,
                )
            }
        }
    }
}

/// Refits a pruned tree on all training rows: each split keeps its feature
/// but re-picks its threshold, and every leaf model is refit. A split with
/// no valid threshold left becomes a leaf.
fn refit(node: TreeNode, rows: &[&LabeledSample], min_leaf: usize) -> TreeNode {
    match node {
        TreeNode::Leaf(_) => TreeNode::Leaf(fit_linear(rows)),
        TreeNode::Split {
            feature, left, right, ..
        } => {
            let Some(best) = best_split_among(rows, min_leaf, &[feature]) else {
                return TreeNode::Leaf(fit_linear(rows));
            };
            let threshold = best.threshold;
            let (l, r): (Vec<&LabeledSample>, Vec<&LabeledSample>) =
                rows.iter().partition(|x| x.features.get(feature) <= threshold);
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(refit(*left, &l, min_leaf)),
                right: Box::new(refit(*right, &r, min_leaf)),
            }
        }
    }
}

fn freeze(node: GrowNode) -> TreeNode {
    match node.split {
        None => TreeNode::Leaf(node.model),
        Some((feature, threshold, left, right)) => TreeNode::Split {
            feature,
            threshold,
            left: Box::new(freeze(*left)),
            right: Box::new(freeze(*right)),
        },
    }
}

/// Seed-shuffled rows split into (growing part, last-20 % held-out part).
pub fn holdout_split(data: &[LabeledSample], seed: u64) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
    let mut rows = data.to_vec();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = rows.len() / 5;
    let held_part = rows.split_off(rows.len() - held);
    (rows, held_part)
}

fn training_meta(data: &[LabeledSample]) -> TrainingMeta {
    let mut lo = [f64::INFINITY; NUM_FEATURES];
    let mut hi = [f64::NEG_INFINITY; NUM_FEATURES];
    for s in data {
        for (j, v) in s.features.to_array().into_iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    TrainingMeta {
        n_samples: data.len(),
        feature_min: FeatureVector::from_array(lo),
        feature_max: FeatureVector::from_array(hi),
    }
}

pub fn train(data: &[LabeledSample], kind: ModelKind, params: &TrainParams) -> Result<RateModel, DataRateError> {
    if data.iter().any(|s| !(s.rate.is_finite() && s.rate > 0.0)) {
        return Err(DataRateError::InvalidParameter("labels must be finite and positive".into()));
    }
    if data
        .iter()
        .any(|s| s.features.to_array().iter().any(|v| !v.is_finite()))
    {
        return Err(DataRateError::InvalidParameter("features must be finite".into()));
    }
    let body = match kind {
        ModelKind::Linear => {
            if data.len() < 2 {
                return Err(DataRateError::InsufficientRows {
                    needed: 2,
                    got: data.len(),
                });
            }
            let rows: Vec<&LabeledSample> = data.iter().collect();
            ModelBody::Linear {
                model: fit_linear(&rows),
            }
        }
        ModelKind::ModelTree => {
            if params.min_leaf == 0 {
                return Err(DataRateError::InvalidParameter("min_leaf must be positive".into()));
            }
            let needed = 2 * params.min_leaf;
            if data.len() < needed {
                return Err(DataRateError::InsufficientRows { needed, got: data.len() });
            }
            let root = if params.prune {
                let (grow_part, held) = holdout_split(data, params.seed);
                let grow_rows: Vec<&LabeledSample> = grow_part.iter().collect();
                let held_rows: Vec<&LabeledSample> = held.iter().collect();
                let tree = grow(&grow_rows, 0, population_sd(&grow_rows), params);
                let all: Vec<&LabeledSample> = data.iter().collect();
                refit(prune(tree, &held_rows).0, &all, params.min_leaf)
            } else {
                let rows: Vec<&LabeledSample> = data.iter().collect();
                freeze(grow(&rows, 0, population_sd(&rows), params))
            };
            ModelBody::ModelTree { root }
        }
    };
    Ok(RateModel {
        body,
        training_meta: training_meta(data),
    })
}

/// Predicted rate in Mbit/s, never negative.
pub fn predict(model: &RateModel, f: &FeatureVector) -> f64 {
    let leaf = match &model.body {
        ModelBody::Linear { model } => model,
        ModelBody::ModelTree { root } => root.leaf_for(f),
    };
    leaf.eval(f).max(0.0)
}

pub fn predict_context(
    model: &RateModel,
    ctx: &ChannelContext,
    payload_kb: f64,
    velocity: f64,
) -> Result<f64, DataRateError> {
    Ok(predict(model, &FeatureVector::from_context(ctx, payload_kb, velocity)?))
}

pub fn evaluate(model: &RateModel, data: &[LabeledSample]) -> Result<AccuracyReport, DataRateError> {
    if data.is_empty() {
        return Err(DataRateError::EmptyEvaluation);
    }
    let predictions: Vec<f64> = data.iter().map(|s| predict(model, &s.features)).collect();
    Ok(accuracy(&predictions, &data.iter().map(|s| s.rate).collect::<Vec<_>>()))
}

/// Accuracy of `predictions` against `labels` (same length, non-empty).
pub fn accuracy(predictions: &[f64], labels: &[f64]) -> AccuracyReport {
    let n = labels.len();
    let (mut abs, mut sq, mut over) = (0.0, 0.0, 0usize);
    for (p, y) in predictions.iter().zip(labels) {
        let e = p - y;
        abs += e.abs();
        sq += e * e;
        if e > 0.0 {
            over += 1;
        }
    }
    AccuracyReport {
        mae: abs / n as f64,
        rmse: (sq / n as f64).sqrt(),
        n,
        overestimation_share: over as f64 / n as f64,
    }
}

#[derive(Serialize)]
struct ModelDocumentRef<'a> {
    version: u32,
    #[serde(flatten)]
    model: &'a RateModel,
}

#[derive(Deserialize)]
struct ModelDocument {
    #[allow(dead_code)]
    version: u32,
    #[serde(flatten)]
    model: RateModel,
}

pub fn save_model(model: &RateModel) -> Vec<u8> {
    serde_json::to_vec_pretty(&ModelDocumentRef {
        version: MODEL_FORMAT_VERSION,
        model,
    })
    .expect("model document serializes")
}

pub fn load_model(bytes: &[u8]) -> Result<RateModel, DataRateError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| DataRateError::Format(e.to_string()))?;
    let version = value.get("version").cloned().unwrap_or(serde_json::Value::Null);
    if version != serde_json::Value::from(MODEL_FORMAT_VERSION) {
        return Err(DataRateError::Version(version));
    }
    let doc: ModelDocument = serde_json::from_value(value).map_err(|e| DataRateError::Format(e.to_string()))?;
    if let ModelBody::ModelTree { root } = &doc.model.body {
        if root.splits().iter().any(|(_, t)| !t.is_finite()) {
            return Err(DataRateError::Format("non-finite split threshold".into()));
        }
    }
    Ok(doc.model)
}

/// Reads labelled rows from a trace CSV with a trailing `payload_kb`
/// column. Rows lacking any feature or a positive rate are dropped; the
/// second value is the number of dropped rows.
pub fn read_labeled_csv<R: Read>(input: R) -> Result<(Vec<LabeledSample>, usize), DataRateError> {
    let rows = read_rows(input, &["payload_kb"])?;
    let total = rows.len();
    let samples: Vec<LabeledSample> = rows
        .into_iter()
        .filter_map(|row| {
            let payload = row.extra[0]?;
            let rate = row.sample.measured_rate.filter(|r| *r > 0.0)?;
            let features = FeatureVector::from_context(&row.sample.context, payload, row.sample.velocity).ok()?;
            Some(LabeledSample { features, rate })
        })
        .collect();
    let dropped = total - samples.len();
    Ok((samples, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(snr: f64) -> FeatureVector {
        FeatureVector {
            rsrp: -90.0,
            rsrq: -8.0,
            snr,
            cqi: 9.0,
            payload_kb: 500.0,
            velocity: 10.0,
        }
    }

    fn labeled(snr: f64, rate: f64) -> LabeledSample {
        LabeledSample { features: fv(snr), rate }
    }

    fn piecewise(n: usize) -> Vec<LabeledSample> {
        (0..n)
            .map(|i| {
                let snr = 20.0 * i as f64 / (n - 1) as f64;
                labeled(snr, if snr < 10.0 { 2.0 } else { 8.0 })
            })
            .collect()
    }

    /// Brute-force best single split on the fixture: tries every midpoint and
    /// picks the one minimising the summed squared error of two constant fits.
    fn brute_force_split(data: &[LabeledSample]) -> f64 {
        let mut xs: Vec<f64> = data.iter().map(|s| s.features.snr).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let sse = |part: Vec<f64>| {
            let m = part.iter().sum::<f64>() / part.len() as f64;
            part.iter().map(|y| (y - m).powi(2)).sum::<f64>()
        };
        let mut best = (f64::INFINITY, 0.0);
        for w in xs.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<&LabeledSample>, Vec<&LabeledSample>) = data.iter().partition(|s| s.features.snr <= t);
            let cost = sse(l.iter().map(|s| s.rate).collect()) + sse(r.iter().map(|s| s.rate).collect());
            if cost < best.0 {
                best = (cost, t);
            }
        }
        best.1
    }

    #[test]
    fn linear_recovers_exact_law() {
        let data: Vec<_> = (0..40).map(|i| labeled(i as f64 * 0.75, 0.5 * i as f64 * 0.75 + 1.0)).collect();
        let model = train(&data, ModelKind::Linear, &TrainParams::default()).unwrap();
        let ModelBody::Linear { model: lin } = &model.body else {
            panic!("linear body expected")
        };
        assert!((lin.coefficients.snr - 0.5).abs() < 1e-6);
        assert!((lin.eval(&fv(0.0)) - 1.0).abs() < 1e-6);
        assert!(evaluate(&model, &data).unwrap().mae < 1e-9);
    }

    #[test]
    fn zero_variance_gives_constant_leaf() {
        let data = vec![labeled(12.0, 4.25); 100];
        let model = train(&data, ModelKind::ModelTree, &TrainParams::default()).unwrap();
        let ModelBody::ModelTree { root } = &model.body else { panic!() };
        assert_eq!(root.leaves(), 1);
        assert_eq!(predict(&model, &fv(3.0)), 4.25);
        assert_eq!(predict(&model, &fv(30.0)), 4.25);
    }

    #[test]
    fn piecewise_fixture_splits_near_ten() {
        let data = piecewise(100);
        let oracle = brute_force_split(&data);
        let params = TrainParams {
            min_leaf: 5,
            prune: false,
            ..Default::default()
        };
        let model = train(&data, ModelKind::ModelTree, &params).unwrap();
        let ModelBody::ModelTree { root } = &model.body else { panic!() };
        let splits = root.splits();
        assert_eq!(splits.len(), 1);
        assert_eq!(splits[0].0, Feature::Snr);
        assert!((splits[0].1 - oracle).abs() < 1e-12);
        assert!(splits[0].1 > 9.0 && splits[0].1 < 11.0);
        assert!(evaluate(&model, &data).unwrap().mae < 0.01);
        assert_eq!(predict(&model, &fv(9.9)), 2.0);
        assert_eq!(predict(&model, &fv(10.1)), 8.0);
    }

    #[test]
    fn insufficient_rows() {
        let params = TrainParams { min_leaf: 5, ..Default::default() };
        assert_eq!(
            train(&piecewise(9), ModelKind::ModelTree, &params),
            Err(DataRateError::InsufficientRows { needed: 10, got: 9 })
        );
        assert!(train(&[labeled(1.0, 1.0)], ModelKind::Linear, &params).is_err());
    }

    #[test]
    fn predict_examples() {
        let meta = training_meta(&[labeled(0.0, 1.0)]);
        let constant = RateModel {
            body: ModelBody::ModelTree {
                root: TreeNode::Leaf(LinearModel {
                    intercept: 7.0,
                    coefficients: FeatureVector::default(),
                    n: 1,
                }),
            },
            training_meta: meta.clone(),
        };
        assert_eq!(predict(&constant, &fv(-3.0)), 7.0);

        let leaf = LinearModel {
            intercept: -3.0,
            coefficients: FeatureVector {
                snr: 0.1,
                ..Default::default()
            },
            n: 1,
        };
        let model = RateModel {
            body: ModelBody::Linear { model: leaf },
            training_meta: meta,
        };
        assert_eq!(predict(&model, &fv(10.0)), 0.0);
        assert!((predict(&model, &fv(50.0)) - 2.0).abs() < 1e-12);
        let missing = ChannelContext {
            rsrp: Some(-90.0),
            ..Default::default()
        };
        assert_eq!(
            predict_context(&model, &missing, 1.0, 1.0),
            Err(DataRateError::MissingFeature(Feature::Rsrq))
        );
    }

    #[test]
    fn accuracy_examples() {
        let r = accuracy(&[3.0, 5.0], &[4.0, 4.0]);
        assert_eq!((r.mae, r.rmse, r.overestimation_share), (1.0, 1.0, 0.5));
        let r = accuracy(&[0.0, 0.0], &[2.0, 2.0]);
        assert_eq!((r.mae, r.rmse, r.overestimation_share), (2.0, 2.0, 0.0));
        let model = train(&piecewise(40), ModelKind::Linear, &TrainParams::default()).unwrap();
        assert_eq!(evaluate(&model, &[]), Err(DataRateError::EmptyEvaluation));
    }

    #[test]
    fn persistence_round_trip() {
        let data = piecewise(120);
        let model = train(&data, ModelKind::ModelTree, &TrainParams { min_leaf: 5, ..Default::default() }).unwrap();
        let bytes = save_model(&model);
        let back = load_model(&bytes).unwrap();
        assert_eq!(back, model);
        for s in &data {
            assert_eq!(predict(&back, &s.features).to_bits(), predict(&model, &s.features).to_bits());
        }
        assert!(matches!(load_model(&bytes[..bytes.len() - 10]), Err(DataRateError::Format(_))));
        let mut doc: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        doc["version"] = serde_json::json!("v9");
        assert!(matches!(
            load_model(&serde_json::to_vec(&doc).unwrap()),
            Err(DataRateError::Version(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<_> = (0..300)
            .map(|i| {
                let snr = (i * 37 % 300) as f64 / 10.0;
                labeled(snr, 1.0 + 0.4 * snr + ((i * 13) % 7) as f64 * 0.1)
            })
            .collect();
        let params = TrainParams { seed: 9, ..Default::default() };
        let a = save_model(&train(&data, ModelKind::ModelTree, &params).unwrap());
        let b = save_model(&train(&data, ModelKind::ModelTree, &params).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn reads_labeled_csv() {
        let csv = "timestamp_s,lat,lon,velocity_mps,heading_deg,rsrp_dbm,rsrq_db,snr_db,cqi,datarate_mbps,payload_kb\n\
                   0,51,7,10,0,-90,-8,12,9,5.5,500\n\
                   1,51,7,10,0,-90,-8,12,,5.5,500\n\
                   2,51,7,10,0,-90,-8,12,9,,500\n";
        let (rows, dropped) = read_labeled_csv(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(dropped, 2);
        assert_eq!(rows[0].rate, 5.5);
        assert_eq!(rows[0].features.payload_kb, 500.0);
    }
}
