//! Experiment drivers shared by the command line and the acceptance suite.
//!
//! Volumes are encoded and pooled once per dataset; studies that vary `K`,
//! the projection seed or the view subset only re-run the projection.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::encoders::{EncoderError, EncoderSpec, SyntheticEncoder, TokenTensor};
use crate::heads::metrics;
use crate::heads::{
    self, classification_report, fit_logreg, fit_mlp, make_split, regression_report, HeadsError, MetricReport,
    MlpConfig, ScarcityPoint,
};
use crate::par;
use crate::reduction::{
    self, embed_pooled, AxisSet, BenchRow, PooledTokens, ProjectionMatrix, ReductionError, ScaleMode,
};
use crate::rng::{self, CounterRng};
use crate::simlab::{
    self, builtin, BlobPhantom, DigitSource, HostSource, InsertionRecord, SimError, SimSampler, SimSpec, SimTask,
};
use crate::volumes::{self, Axis, RvolOptions};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Heads(#[from] HeadsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Pooled tokens for all three views of every sample.
#[derive(Debug, Clone)]
pub struct PooledSet {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub views: Vec<Vec<PooledTokens>>,
}

impl PooledSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn token_dim(&self) -> usize {
        self.views.first().map_or(0, |v| v[0].dim())
    }

    /// One embedding row per sample.
    pub fn embed(&self, k: usize, seed: u64, scale: ScaleMode, axes: AxisSet) -> Result<Vec<Vec<f32>>> {
        let r = ProjectionMatrix::generate(k, self.token_dim(), seed, scale);
        Ok(par::try_map_range(self.len(), |i| {
            embed_pooled(&self.views[i], &r, axes).map(|e| e.vector)
        })?)
    }
}

/// Encodes and pools every volume of an in-memory dataset.
pub fn pool_dataset(ds: &simlab::SimDataset, encoder: &SyntheticEncoder, target: Option<usize>) -> Result<PooledSet> {
    let views = par::try_map_range(ds.len(), |i| {
        reduction::pool_volume(&ds.volumes[i], encoder, target, AxisSet::ALL)
    })?;
    Ok(PooledSet {
        ids: ds.volumes.iter().map(|v| v.id.clone()).collect(),
        labels: ds.labels.clone(),
        views,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinTask {
    /// Presence of a compact extra blob.
    Blob,
    /// Position of a rod that only the axial view resolves.
    Rod,
}

impl FromStr for BuiltinTask {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blob" => Ok(Self::Blob),
            "rod" => Ok(Self::Rod),
            other => Err(ExperimentError::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Dataset, encoder and split shared by the built-in studies.
#[derive(Debug, Clone, Serialize)]
pub struct DataConfig {
    pub task: BuiltinTask,
    pub n: usize,
    pub ratios: [f64; 3],
    pub data_seed: u64,
    pub split_seed: u64,
    pub encoder_seed: u64,
    pub grid: Vec<f64>,
}

impl DataConfig {
    pub fn new(task: BuiltinTask, n: usize, ratios: [f64; 3]) -> Self {
        Self {
            task,
            n,
            ratios,
            data_seed: 0,
            split_seed: 0,
            encoder_seed: 0,
            grid: heads::DEFAULT_GRID.to_vec(),
        }
    }

    pub fn pooled(&self) -> Result<PooledSet> {
        let ds = match self.task {
            BuiltinTask::Blob => builtin::blob_task(self.n, self.data_seed)?,
            BuiltinTask::Rod => builtin::axial_rod_task(self.n, self.data_seed)?,
        };
        let spec = EncoderSpec::synthetic(builtin::BUILTIN_PATCH, builtin::BUILTIN_TOKEN_DIM, self.encoder_seed);
        pool_dataset(&ds, &SyntheticEncoder::new(spec)?, None)
    }
}

/// Fits the logistic head on train, selects on validation, scores the test
/// split.
pub fn evaluate_classification(
    x: &[Vec<f32>],
    y: &[usize],
    ratios: [f64; 3],
    split_seed: u64,
    grid: &[f64],
) -> Result<MetricReport> {
    let split = make_split(x.len(), ratios, split_seed)?;
    let fit = fit_logreg(x, y, grid, &split)?;
    let test_x: Vec<Vec<f32>> = split.test.iter().map(|&i| x[i].clone()).collect();
    let test_y: Vec<usize> = split.test.iter().map(|&i| y[i]).collect();
    Ok(classification_report(&fit.model.predict_proba_rows(&test_x), &test_y)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Cls,
    Reg,
    Multilabel,
}

impl FromStr for EvalTask {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Self::Cls),
            "reg" => Ok(Self::Reg),
            "multilabel" => Ok(Self::Multilabel),
            other => Err(ExperimentError::Config(format!("unknown eval task {other:?}"))),
        }
    }
}

/// Test-split metrics for any supported target type. `targets` holds one
/// row per sample: the class index, the regression targets, or 0/1 flags.
pub fn evaluate_task(
    x: &[Vec<f32>],
    targets: &[Vec<f64>],
    task: EvalTask,
    ratios: [f64; 3],
    split_seed: u64,
    grid: &[f64],
    mlp: &MlpConfig,
) -> Result<MetricReport> {
    if x.len() != targets.len() {
        return Err(ExperimentError::Config(format!(
            "{} rows for {} targets",
            x.len(),
            targets.len()
        )));
    }
    match task {
        EvalTask::Cls => {
            let y = class_labels(targets)?;
            evaluate_classification(x, &y, ratios, split_seed, grid)
        }
        EvalTask::Reg => {
            let split = make_split(x.len(), ratios, split_seed)?;
            let fit = fit_mlp(x, targets, &split, mlp)?;
            let test_x: Vec<Vec<f32>> = split.test.iter().map(|&i| x[i].clone()).collect();
            let test_y: Vec<Vec<f64>> = split.test.iter().map(|&i| targets[i].clone()).collect();
            Ok(regression_report(&fit.model.predict_rows(&test_x), &test_y)?)
        }
        EvalTask::Multilabel => multilabel(x, targets, ratios, split_seed, grid),
    }
}

fn class_labels(targets: &[Vec<f64>]) -> Result<Vec<usize>> {
    targets
        .iter()
        .map(|t| match t.first() {
            Some(&v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as usize),
            _ => Err(ExperimentError::Config(format!(
                "class label {t:?} is not a non-negative integer"
            ))),
        })
        .collect()
}

/// One binary logistic head per label; macro averages over labels with
/// both outcomes in the test split, micro pools every label's scores.
fn multilabel(
    x: &[Vec<f32>],
    targets: &[Vec<f64>],
    ratios: [f64; 3],
    split_seed: u64,
    grid: &[f64],
) -> Result<MetricReport> {
    let split = make_split(x.len(), ratios, split_seed)?;
    let labels = targets.first().map_or(0, Vec::len);
    let test_x: Vec<Vec<f32>> = split.test.iter().map(|&i| x[i].clone()).collect();
    let mut per_auc = Vec::new();
    let mut per_ap = Vec::new();
    let (mut all_scores, mut all_truth) = (Vec::new(), Vec::new());
    for l in 0..labels {
        let y: Vec<usize> = targets.iter().map(|t| usize::from(t[l] > 0.5)).collect();
        let fit = match fit_logreg(x, &y, grid, &split) {
            Ok(f) => f,
            Err(HeadsError::SingleClass) => continue,
            Err(e) => return Err(e.into()),
        };
        let scores: Vec<f64> = fit.model.predict_proba_rows(&test_x).iter().map(|p| p[1]).collect();
        let truth: Vec<bool> = split.test.iter().map(|&i| y[i] == 1).collect();
        if let (Ok(a), Ok(p)) = (
            metrics::auroc(&scores, &truth),
            metrics::average_precision(&scores, &truth),
        ) {
            per_auc.push(a);
            per_ap.push(p);
        }
        all_scores.extend(scores);
        all_truth.extend(truth);
    }
    if per_auc.is_empty() {
        return Err(HeadsError::NoPositives.into());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(MetricReport {
        auroc_macro: Some(mean(&per_auc)),
        auroc_micro: metrics::auroc(&all_scores, &all_truth).ok(),
        aupr_macro: Some(mean(&per_ap)),
        aupr_micro: metrics::average_precision(&all_scores, &all_truth).ok(),
        ..MetricReport::default()
    })
}

fn auroc_of(report: &MetricReport) -> f64 {
    report.auroc_macro.unwrap_or(f64::NAN)
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct KStudyConfig {
    pub data: DataConfig,
    pub k_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub scale: ScaleMode,
}

impl Default for KStudyConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::new(BuiltinTask::Blob, 400, [0.5, 0.25, 0.25]),
            k_list: vec![1, 5, 10, 100, 150],
            seeds: vec![0, 1, 2],
            scale: ScaleMode::InvSqrtK,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KStudyRow {
    pub k: usize,
    pub seed: u64,
    pub auroc: f64,
    pub aupr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KSummary {
    pub k: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KStudy {
    pub rows: Vec<KStudyRow>,
    pub summary: Vec<KSummary>,
}

/// Test AUROC for every `(K, projection seed)` pair.
pub fn kstudy(cfg: &KStudyConfig) -> Result<KStudy> {
    let pooled = cfg.data.pooled()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &k in &cfg.k_list {
        let mut aucs = Vec::new();
        for &seed in &cfg.seeds {
            let x = pooled.embed(k, seed, cfg.scale, AxisSet::ALL)?;
            let rep =
                evaluate_classification(&x, &pooled.labels, cfg.data.ratios, cfg.data.split_seed, &cfg.data.grid)?;
            aucs.push(auroc_of(&rep));
            rows.push(KStudyRow {
                k,
                seed,
                auroc: auroc_of(&rep),
                aupr: rep.aupr_macro.unwrap_or(f64::NAN),
            });
        }
        summary.push(KSummary {
            k,
            mean: aucs.iter().sum::<f64>() / aucs.len().max(1) as f64,
            std: std_dev(&aucs),
        });
    }
    Ok(KStudy { rows, summary })
}

#[derive(Debug, Clone, Serialize)]
pub struct ViewStudyConfig {
    pub data: DataConfig,
    pub k: usize,
    pub projection_seed: u64,
    pub scale: ScaleMode,
}

impl Default for ViewStudyConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::new(BuiltinTask::Rod, 400, [0.5, 0.25, 0.25]),
            k: 10,
            projection_seed: 0,
            scale: ScaleMode::InvSqrtK,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ViewRow {
    pub axes: String,
    pub auroc: f64,
    pub aupr: f64,
    pub accuracy: f64,
}

/// Test metrics for each of the seven nonempty view subsets.
pub fn viewstudy(cfg: &ViewStudyConfig) -> Result<Vec<ViewRow>> {
    let pooled = cfg.data.pooled()?;
    AxisSet::nonempty_subsets()
        .into_iter()
        .map(|axes| {
            let x = pooled.embed(cfg.k, cfg.projection_seed, cfg.scale, axes)?;
            let rep =
                evaluate_classification(&x, &pooled.labels, cfg.data.ratios, cfg.data.split_seed, &cfg.data.grid)?;
            Ok(ViewRow {
                axes: axes.to_string(),
                auroc: auroc_of(&rep),
                aupr: rep.aupr_macro.unwrap_or(f64::NAN),
                accuracy: rep.accuracy.unwrap_or(f64::NAN),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateConfig {
    pub task: SimTask,
    pub resolutions: Vec<usize>,
    pub n: usize,
    /// Procedural host; its extent is the side before embedding. The default
    /// shares one blob layout across subjects with a small per-subject jitter,
    /// standing in for co-registered anatomy.
    pub host: BlobPhantom,
    /// Side the volumes are resampled to before encoding.
    pub embed_side: usize,
    pub patch_size: usize,
    pub token_dim: usize,
    pub k: usize,
    pub seed: u64,
    pub digit: Option<u8>,
    pub digit_source: DigitSource,
    /// Overrides the synthetic phantom host.
    pub host_dir: Option<std::path::PathBuf>,
    pub ratios: [f64; 3],
    pub grid: Vec<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            task: SimTask::Size,
            resolutions: vec![64, 32, 16, 8],
            n: 200,
            host: BlobPhantom {
                layout_seed: Some(0),
                jitter: 0.005,
                ..BlobPhantom::default()
            },
            embed_side: 64,
            patch_size: 16,
            token_dim: 32,
            k: 100,
            seed: 0,
            digit: None,
            digit_source: DigitSource::BuiltinGlyph,
            host_dir: None,
            ratios: [0.5, 0.2, 0.3],
            grid: heads::DEFAULT_GRID.to_vec(),
        }
    }
}

impl SimulateConfig {
    pub fn spec(&self, resolution: usize) -> SimSpec {
        let host_source = match &self.host_dir {
            Some(path) => HostSource::VolumeDir {
                path: path.clone(),
                extent: self.host.extent,
            },
            None => HostSource::SyntheticPhantom(self.host.clone()),
        };
        SimSpec {
            digit: self.digit,
            digit_source: self.digit_source.clone(),
            host_source,
            ..SimSpec::new(self.task, resolution, self.n, self.seed)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimRow {
    pub task: SimTask,
    pub px: usize,
    pub auroc: f64,
    pub aupr: f64,
    pub n: usize,
}

/// Generates, encodes and pools samples one at a time, optionally writing
/// each volume under `out`.
pub fn pool_simulation(
    spec: &SimSpec,
    encoder: &SyntheticEncoder,
    embed_side: usize,
    out: Option<&Path>,
) -> Result<(PooledSet, Vec<Option<InsertionRecord>>)> {
    let sampler = SimSampler::new(spec)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let items = par::try_map_range(sampler.len(), |i| -> Result<_> {
        let (v, label, record) = sampler.sample(i)?;
        if let Some(dir) = out {
            volumes::write_volume(&v, &dir.join(format!("{}.rvol", v.id)), RvolOptions::default())
                .map_err(SimError::from)?;
        }
        let views = reduction::pool_volume(&v, encoder, Some(embed_side), AxisSet::ALL)?;
        Ok((v.id.clone(), label, record, views))
    })?;
    let mut set = PooledSet {
        ids: Vec::new(),
        labels: Vec::new(),
        views: Vec::new(),
    };
    let mut records = Vec::new();
    for (id, label, record, views) in items {
        set.ids.push(id);
        set.labels.push(label);
        set.views.push(views);
        records.push(record);
    }
    if let Some(dir) = out {
        simlab::write_manifests(dir, &set.ids, &set.labels, &records)?;
    }
    Ok((set, records))
}

/// End-to-end AUROC of the digit task at every resolution.
pub fn simulate(cfg: &SimulateConfig, out: Option<&Path>) -> Result<Vec<SimRow>> {
    let spec = EncoderSpec::synthetic(cfg.patch_size, cfg.token_dim, cfg.seed);
    let encoder = SyntheticEncoder::new(spec)?;
    cfg.resolutions
        .iter()
        .map(|&px| {
            let dir = out.map(|o| o.join(format!("{}_{px}px", task_name(cfg.task))));
            let (pooled, _) = pool_simulation(&cfg.spec(px), &encoder, cfg.embed_side, dir.as_deref())?;
            let x = pooled.embed(cfg.k, cfg.seed, ScaleMode::InvSqrtK, AxisSet::ALL)?;
            let rep = evaluate_classification(&x, &pooled.labels, cfg.ratios, cfg.seed, &cfg.grid)?;
            Ok(SimRow {
                task: cfg.task,
                px,
                auroc: auroc_of(&rep),
                aupr: rep.aupr_macro.unwrap_or(f64::NAN),
                n: cfg.n,
            })
        })
        .collect()
}

pub fn task_name(task: SimTask) -> &'static str {
    match task {
        SimTask::Location => "location",
        SimTask::Size => "size",
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScarcityConfig {
    pub data: DataConfig,
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub k: usize,
    pub projection_seed: u64,
}

impl Default for ScarcityConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::new(BuiltinTask::Blob, 800, [0.625, 0.125, 0.25]),
            sizes: heads::DEFAULT_SIZES.to_vec(),
            repeats: 20,
            k: 10,
            projection_seed: 0,
        }
    }
}

pub fn scarcity(cfg: &ScarcityConfig) -> Result<Vec<ScarcityPoint>> {
    let pooled = cfg.data.pooled()?;
    let x = pooled.embed(cfg.k, cfg.projection_seed, ScaleMode::InvSqrtK, AxisSet::ALL)?;
    let split = make_split(x.len(), cfg.data.ratios, cfg.data.split_seed)?;
    Ok(heads::scarcity_curve(
        &x,
        &pooled.labels,
        &split,
        &cfg.sizes,
        cfg.repeats,
        &cfg.data.grid,
        rng::derive_seed(cfg.data.split_seed, 1),
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Jl,
    Alpha,
    Bounds,
    Overlap,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Jl, Suite::Alpha, Suite::Bounds, Suite::Overlap];
}

impl FromStr for Suite {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jl" => Ok(Self::Jl),
            "alpha" => Ok(Self::Alpha),
            "bounds" => Ok(Self::Bounds),
            "overlap" => Ok(Self::Overlap),
            other => Err(ExperimentError::Config(format!("unknown suite {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance condition.
    pub condition: String,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, value: f64, condition: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.to_string(),
            value,
            condition: condition.into(),
            pass,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub elapsed_s: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub fn verify(suite: Suite, seed: u64) -> Result<VerifyReport> {
    let t = Instant::now();
    let checks = match suite {
        Suite::Jl => verify_jl(seed)?,
        Suite::Alpha => verify_alpha(seed)?,
        Suite::Bounds => verify_bounds(seed)?,
        Suite::Overlap => verify_overlap(seed)?,
    };
    Ok(VerifyReport {
        suite,
        checks,
        elapsed_s: t.elapsed().as_secs_f64(),
    })
}

pub fn gaussian_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut rng = CounterRng::derived(seed, i as u64);
            (0..d).map(|_| rng.next_normal()).collect()
        })
        .collect()
}

fn verify_jl(seed: u64) -> Result<Vec<Check>> {
    let (n, d, eps) = (128, 1024, 0.25);
    let points = gaussian_points(n, d, seed);
    let k = analysis::jl_dimension(n, eps);
    let seeds: Vec<u64> = (0..10).map(|s| rng::derive_seed(seed, 100 + s)).collect();
    let report = analysis::jl_check(&points, k, eps, &seeds)?;
    let frac = report.violation_fraction();
    let trial_seeds: Vec<u64> = (0..1000).map(|s| rng::derive_seed(seed, 10_000 + s)).collect();
    let ratios = analysis::norm_ratios(&points[0], 100, &trial_seeds);
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(vec![
        Check::new(
            "pairwise_violation_fraction",
            frac,
            format!("<= 0.01 at K={k}"),
            frac <= 0.01,
        ),
        Check::new(
            "norm_ratio_mean_k100",
            mean,
            "in [0.95, 1.05]",
            (0.95..=1.05).contains(&mean),
        ),
    ])
}

fn random_tensor(rng: &mut CounterRng, axis: Axis, slices: usize, p: usize, d: usize) -> TokenTensor {
    let values = (0..slices * p * p * d).map(|_| rng.next_normal() as f32).collect();
    TokenTensor::new(axis, slices, p, d, values, [0; 32]).expect("consistent shape")
}

/// Brute-force `α_j`: every partial sum is rebuilt from scratch.
pub fn alpha_oracle(a: &TokenTensor, b: &TokenTensor) -> Vec<f64> {
    let diff = |j: usize| -> Vec<f64> {
        a.slice(j)
            .iter()
            .zip(b.slice(j))
            .map(|(x, y)| *x as f64 - *y as f64)
            .collect()
    };
    (1..a.slices())
        .map(|j| {
            let dj = diff(j);
            let mut s = vec![0.0; dj.len()];
            for i in 0..j {
                s.iter_mut().zip(diff(i)).for_each(|(acc, v)| *acc += v);
            }
            let nd = dj.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ns = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nd < analysis::ALPHA_NORM_FLOOR || ns < analysis::ALPHA_NORM_FLOOR {
                0.0
            } else {
                (dj.iter().zip(&s).map(|(x, y)| x * y).sum::<f64>() / (nd * ns)).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

fn verify_alpha(seed: u64) -> Result<Vec<Check>> {
    let mut rng = CounterRng::derived(seed, 2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let slices = 2 + rng.below(7);
        let a = random_tensor(&mut rng, Axis::Axial, slices, 2, 4);
        let b = random_tensor(&mut rng, Axis::Axial, slices, 2, 4);
        let got = analysis::alpha_profile(&a, &b)?;
        for (x, y) in got.alphas.iter().zip(alpha_oracle(&a, &b)) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(vec![Check::new(
        "alpha_max_abs_error",
        worst,
        "<= 1e-12",
        worst <= 1e-12,
    )])
}

/// A pair whose slice differences share a common drift direction, so every
/// `α_j` is well above zero.
pub fn drifting_pair(seed: u64, slices: usize, p: usize, d: usize, jitter: f64) -> (TokenTensor, TokenTensor) {
    let mut rng = CounterRng::new(seed);
    let a = random_tensor(&mut rng, Axis::Axial, slices, p, d);
    let drift: Vec<f64> = (0..p * p * d).map(|_| rng.next_normal()).collect();
    let mut values = Vec::with_capacity(a.values().len());
    for j in 0..slices {
        for (x, u) in a.slice(j).iter().zip(&drift) {
            values.push((*x as f64 - u - jitter * rng.next_normal()) as f32);
        }
    }
    let b = TokenTensor::new(Axis::Axial, slices, p, d, values, [0; 32]).expect("consistent shape");
    (a, b)
}

fn verify_bounds(seed: u64) -> Result<Vec<Check>> {
    let (eps, k) = (0.3, 100);
    let reports = par::try_map_range(100, |i| -> Result<_> {
        let s = rng::derive_seed(seed, 3_000 + i as u64);
        let (a, b) = drifting_pair(s, 16, 4, 64, 0.6);
        let r = ProjectionMatrix::generate(k, 64, rng::derive_seed(s, 1), ScaleMode::InvSqrtK);
        Ok(analysis::bound_check(&a, &b, &r, eps)?)
    })?;
    let eligible = reports.iter().filter(|r| r.alpha_min >= 0.2).count();
    let held = reports
        .iter()
        .filter(|r| r.alpha_min >= 0.2 && r.holds_lower && r.holds_upper)
        .count();
    Ok(vec![
        Check::new(
            "pairs_with_alpha_min_ge_0.2",
            eligible as f64,
            "== 100",
            eligible == 100,
        ),
        Check::new("sandwich_holds", held as f64, ">= 99 of 100", held >= 99),
    ])
}

/// Reference ("generic") set with a decaying spectrum and a probe
/// ("domain") set spreading its variance evenly over the same span.
pub fn overlap_sets(seed: u64, dim: usize, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = CounterRng::derived(seed, 4);
    let reference = (0..n)
        .map(|_| (0..dim).map(|i| rng.next_normal() / ((i + 1) as f64).sqrt()).collect())
        .collect();
    let probe = (0..n)
        .map(|_| (0..dim).map(|_| rng.next_normal() * 0.5).collect())
        .collect();
    (reference, probe)
}

pub const OVERLAP_CHECKPOINTS: [usize; 4] = [4, 8, 16, 32];

fn verify_overlap(seed: u64) -> Result<Vec<Check>> {
    let (reference, probe) = overlap_sets(seed, 32, 400);
    let rows = analysis::variance_overlap(&reference, &probe, &OVERLAP_CHECKPOINTS)?;
    let rises = rows.windows(2).filter(|w| w[1].ratio > w[0].ratio).count();
    let last = rows.last().map_or(0.0, |r| r.ratio);
    Ok(vec![
        Check::new(
            "ratio_rises_between_checkpoints",
            rises as f64,
            format!("== {}", rows.len() - 1),
            rises == rows.len() - 1,
        ),
        Check::new("ratio_at_full_rank", last, ">= 0.99", last >= 0.99),
    ])
}

/// `total_ms(2D) / total_ms(D)` for consecutive sides at one `K`.
pub fn doubling_ratios(rows: &[BenchRow], k: usize) -> Vec<(usize, f64)> {
    let mut at_k: Vec<&BenchRow> = rows.iter().filter(|r| r.k == k).collect();
    at_k.sort_by_key(|r| r.d_side);
    at_k.windows(2)
        .filter(|w| w[1].d_side == 2 * w[0].d_side)
        .map(|w| (w[1].d_side, w[1].total_ms / w[0].total_ms))
        .collect()
}

/// Median of each scarcity size; handy for monotonicity checks.
pub fn medians(points: &[ScarcityPoint]) -> Vec<f64> {
    points.iter().map(|p| p.median).collect()
}

/// Number of strict decreases in a sequence expected to be non-decreasing.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}
