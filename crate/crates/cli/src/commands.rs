use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use raptor::analysis::alpha_profile;
use raptor::encoders::{load_tokens, EncoderSpec, SyntheticEncoder, TokenTensor};
use raptor::experiments::{
    self, drifting_pair, DataConfig, EvalTask, KStudyConfig, ScarcityConfig, SimulateConfig, Suite, ViewStudyConfig,
};
use raptor::heads::MlpConfig;
use raptor::par;
use raptor::reduction::{
    bench_embed, embed_volume, raptor_embed, rp_vs_pca, AxisSet, BenchConfig, Embedding, ProjectionMatrix, ScaleMode,
};
use raptor::rng;
use raptor::simlab::{BlobPhantom, DigitSource};
use raptor::store::{read_embeddings, write_embeddings, EmbeddingSet};
use raptor::volumes::{self, load_volume, Axis, VolumeFormat};
use serde::Serialize;

use crate::output::Output;
use crate::{
    BenchArgs, EmbedArgs, EncoderArg, EvalArgs, Globals, KStudyArgs, ScarcityArgs, SimulateArgs, SuiteArg, VerifyArgs,
    ViewStudyArgs,
};

fn ratios(v: &[f64]) -> Result<[f64; 3]> {
    <[f64; 3]>::try_from(v).map_err(|_| anyhow!("expected three split ratios, got {}", v.len()))
}

fn data_config(task: experiments::BuiltinTask, n: usize, ratios: [f64; 3], seed: u64) -> DataConfig {
    DataConfig {
        data_seed: seed,
        split_seed: seed,
        encoder_seed: seed,
        ..DataConfig::new(task, n, ratios)
    }
}

pub fn embed(a: &EmbedArgs, g: &Globals, out: &Output) -> Result<bool> {
    let scale: ScaleMode = a.scale.into();
    let embeddings = match a.encoder {
        EncoderArg::Synthetic => embed_volumes(a, g.seed, scale)?,
        EncoderArg::Tokens => embed_tokens(a, g.seed, scale)?,
    };
    let set = EmbeddingSet::from_embeddings(&embeddings)?;
    let path = a.out.clone().unwrap_or_else(|| out.path("embeddings.remb"));
    let bytes = write_embeddings(&set, &path)?;
    println!(
        "wrote {} rows of length {} ({bytes} bytes) to {}",
        set.len(),
        set.header.row_len(),
        path.display()
    );
    Ok(true)
}

fn volume_inputs(dir: &Path, raw_dims: Option<[usize; 3]>) -> Result<Vec<(PathBuf, VolumeFormat)>> {
    let mut files: Vec<(PathBuf, VolumeFormat)> = volumes::list_volume_files(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .into_iter()
        .filter_map(|p| VolumeFormat::from_extension(&p).map(|f| (p, f)))
        .collect();
    if let Some(dims) = raw_dims {
        for entry in std::fs::read_dir(dir)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "raw") {
                files.push((p, VolumeFormat::RawU8(dims)));
            }
        }
        files.sort_by(|x, y| x.0.cmp(&y.0));
    }
    ensure!(!files.is_empty(), "no volumes found in {}", dir.display());
    Ok(files)
}

fn embed_volumes(a: &EmbedArgs, seed: u64, scale: ScaleMode) -> Result<Vec<Embedding>> {
    let files = volume_inputs(&a.input, a.raw_dims)?;
    let d = a.token_dim.unwrap_or(a.patch_size * a.patch_size);
    let encoder = SyntheticEncoder::new(EncoderSpec::synthetic(a.patch_size, d, seed))?;
    let r = ProjectionMatrix::generate(a.k, d, seed, scale);
    par::map_slice(&files, |(path, format)| -> Result<Embedding> {
        let v = load_volume(path, *format).with_context(|| format!("reading {}", path.display()))?;
        embed_volume(&v, &encoder, &r, a.axes, a.side).with_context(|| format!("embedding {}", path.display()))
    })
    .into_iter()
    .collect()
}

/// Groups `<id>.<axis>.rtok` files by id.
fn token_inputs(dir: &Path) -> Result<BTreeMap<String, Vec<(Axis, PathBuf)>>> {
    let mut groups: BTreeMap<String, Vec<(Axis, PathBuf)>> = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if !p.extension().is_some_and(|e| e == "rtok") {
            continue;
        }
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let parsed = stem.rsplit_once('.').and_then(|(id, ax)| {
            let mut letters = ax.chars();
            let axis = Axis::from_letter(letters.next()?)?;
            letters.next().is_none().then(|| (id.to_string(), axis))
        });
        let (id, axis) = parsed.ok_or_else(|| anyhow!("{} is not named <id>.<a|c|s>.rtok", p.display()))?;
        groups.entry(id).or_default().push((axis, p));
    }
    ensure!(!groups.is_empty(), "no token files found in {}", dir.display());
    Ok(groups)
}

fn load_views(id: &str, files: &[(Axis, PathBuf)], axes: AxisSet) -> Result<Vec<TokenTensor>> {
    axes.iter()
        .map(|axis| {
            let (_, path) = files
                .iter()
                .find(|(a, _)| *a == axis)
                .ok_or_else(|| anyhow!("{id}: missing {axis} token file"))?;
            let t = load_tokens(path).with_context(|| format!("reading {}", path.display()))?;
            ensure!(t.axis == axis, "{} holds {} tokens", path.display(), t.axis);
            Ok(t)
        })
        .collect()
}

fn embed_tokens(a: &EmbedArgs, seed: u64, scale: ScaleMode) -> Result<Vec<Embedding>> {
    let groups: Vec<(String, Vec<(Axis, PathBuf)>)> = token_inputs(&a.input)?.into_iter().collect();
    let (first_id, first_files) = &groups[0];
    let d = load_views(first_id, first_files, a.axes)?[0].dim();
    let r = ProjectionMatrix::generate(a.k, d, seed, scale);
    par::map_slice(&groups, |(id, files)| -> Result<Embedding> {
        let views = load_views(id, files, a.axes)?;
        Ok(raptor_embed(&views, &r, a.axes)
            .with_context(|| format!("embedding {id}"))?
            .with_volume_id(id.clone()))
    })
    .into_iter()
    .collect()
}

/// Target column names and the targets of every id.
type Labels = (Vec<String>, HashMap<String, Vec<f64>>);

/// Reads a labels CSV; `path` columns are ignored.
fn read_labels(path: &Path) -> Result<Labels> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| anyhow!("{} has no id column", path.display()))?;
    let cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != id_col && &headers[i] != "path")
        .collect();
    ensure!(!cols.is_empty(), "{} has no target columns", path.display());
    let names = cols.iter().map(|&i| headers[i].to_string()).collect();
    let mut targets = HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let id = record[id_col].to_string();
        let values = cols
            .iter()
            .map(|&i| {
                record[i]
                    .parse::<f64>()
                    .with_context(|| format!("row {}: bad value {:?} in {}", line + 1, &record[i], &headers[i]))
            })
            .collect::<Result<Vec<f64>>>()?;
        if targets.insert(id.clone(), values).is_some() {
            bail!("duplicate id {id:?} in {}", path.display());
        }
    }
    Ok((names, targets))
}

fn preview(ids: &[&String]) -> String {
    let mut s: Vec<String> = ids.iter().take(3).map(|i| format!("{i:?}")).collect();
    if ids.len() > 3 {
        s.push("...".into());
    }
    s.join(", ")
}

#[derive(Serialize)]
struct MetricRow {
    metric: String,
    value: f64,
}

pub fn eval(a: &EvalArgs, _g: &Globals, out: &Output) -> Result<bool> {
    let set = read_embeddings(&a.embeddings).with_context(|| format!("reading {}", a.embeddings.display()))?;
    let (names, mut labels) = read_labels(&a.labels)?;
    let missing: Vec<&String> = set.ids.iter().filter(|id| !labels.contains_key(*id)).collect();
    let mut extra: Vec<&String> = labels.keys().filter(|id| set.row(id).is_none()).collect();
    extra.sort();
    if !missing.is_empty() || !extra.is_empty() {
        bail!(
            "id mismatch: {} embedding ids without labels [{}], {} label ids without embeddings [{}]",
            missing.len(),
            preview(&missing),
            extra.len(),
            preview(&extra)
        );
    }
    let targets: Vec<Vec<f64>> = set.ids.iter().map(|id| labels.remove(id).expect("checked")).collect();
    if a.task != EvalTask::Multilabel {
        ensure!(
            names.len() == 1 || a.task == EvalTask::Reg,
            "classification expects one target column, found {}",
            names.len()
        );
    }
    let mlp = MlpConfig {
        hidden: a.hidden,
        epochs: a.epochs,
        seed: a.split_seed,
        ..MlpConfig::default()
    };
    let report = experiments::evaluate_task(
        &set.rows,
        &targets,
        a.task,
        ratios(&a.ratios)?,
        a.split_seed,
        &a.grid,
        &mlp,
    )?;
    let mut rows = Vec::new();
    let named = [
        ("auroc_macro", report.auroc_macro),
        ("auroc_micro", report.auroc_micro),
        ("accuracy", report.accuracy),
        ("aupr_macro", report.aupr_macro),
        ("aupr_micro", report.aupr_micro),
        ("r2_mean", report.r2_mean),
    ];
    for (name, value) in named {
        if let Some(v) = value {
            rows.push(MetricRow {
                metric: name.into(),
                value: v,
            });
        }
    }
    for (name, r2) in names.iter().zip(&report.r2_per_target) {
        rows.push(MetricRow {
            metric: format!("r2[{name}]"),
            value: *r2,
        });
    }
    for r in &rows {
        println!("{:<16} {:.4}", r.metric, r.value);
    }
    out.csv("eval_metrics.csv", &rows)?;
    out.json("eval_report.json", &report)?;
    Ok(true)
}

pub fn kstudy(a: &KStudyArgs, g: &Globals, out: &Output) -> Result<bool> {
    let cfg = KStudyConfig {
        data: data_config(a.task, a.n, KStudyConfig::default().data.ratios, g.seed),
        k_list: a.k_list.clone(),
        seeds: a.seeds.clone(),
        scale: a.scale.into(),
    };
    let study = experiments::kstudy(&cfg)?;
    for s in &study.summary {
        println!("K={:<5} mean AUROC {:.4}  std {:.4}", s.k, s.mean, s.std);
    }
    out.csv("kstudy.csv", &study.rows)?;
    out.csv("kstudy_summary.csv", &study.summary)?;
    Ok(true)
}

pub fn viewstudy(a: &ViewStudyArgs, g: &Globals, out: &Output) -> Result<bool> {
    let cfg = ViewStudyConfig {
        data: data_config(a.task, a.n, ViewStudyConfig::default().data.ratios, g.seed),
        k: a.k,
        projection_seed: g.seed,
        ..ViewStudyConfig::default()
    };
    let rows = experiments::viewstudy(&cfg)?;
    for r in &rows {
        println!(
            "{:<4} AUROC {:.4}  AUPR {:.4}  acc {:.4}",
            r.axes, r.auroc, r.aupr, r.accuracy
        );
    }
    out.csv("viewstudy.csv", &rows)?;
    Ok(true)
}

pub fn simulate(a: &SimulateArgs, g: &Globals, out: &Output) -> Result<bool> {
    let defaults = SimulateConfig::default();
    let digit_source = match (&a.idx_images, &a.idx_labels) {
        (Some(images), Some(labels)) => DigitSource::IdxFile {
            images: images.clone(),
            labels: labels.clone(),
        },
        _ => DigitSource::BuiltinGlyph,
    };
    let cfg = SimulateConfig {
        task: a.task.into(),
        resolutions: a.res.clone(),
        n: a.n,
        host: BlobPhantom {
            jitter: a.jitter,
            ..defaults.host.clone()
        },
        embed_side: a.embed_side,
        patch_size: a.patch_size,
        token_dim: a.token_dim,
        k: a.k,
        seed: g.seed,
        digit: a.digit,
        digit_source,
        host_dir: a.host_dir.clone(),
        ..defaults
    };
    let rows = experiments::simulate(&cfg, a.save_volumes.then(|| out.dir()))?;
    #[derive(Serialize)]
    struct Row {
        task: &'static str,
        px: usize,
        auroc: f64,
        aupr: f64,
        n: usize,
    }
    let rows: Vec<Row> = rows
        .iter()
        .map(|r| Row {
            task: experiments::task_name(r.task),
            px: r.px,
            auroc: r.auroc,
            aupr: r.aupr,
            n: r.n,
        })
        .collect();
    for r in &rows {
        println!("{} {:>3}px AUROC {:.4}  AUPR {:.4}", r.task, r.px, r.auroc, r.aupr);
    }
    out.csv(&format!("simulate_{}.csv", experiments::task_name(cfg.task)), &rows)?;
    Ok(true)
}

pub fn scarcity(a: &ScarcityArgs, g: &Globals, out: &Output) -> Result<bool> {
    let cfg = ScarcityConfig {
        data: data_config(a.task, a.n, ScarcityConfig::default().data.ratios, g.seed),
        sizes: a.sizes.clone(),
        repeats: a.repeats,
        k: a.k,
        projection_seed: g.seed,
    };
    let points = experiments::scarcity(&cfg)?;
    #[derive(Serialize)]
    struct Curve {
        size: usize,
        median: f64,
        lo: f64,
        hi: f64,
    }
    #[derive(Serialize)]
    struct Draw {
        size: usize,
        repeat: usize,
        auroc: f64,
    }
    let curve: Vec<Curve> = points
        .iter()
        .map(|p| Curve {
            size: p.size,
            median: p.median,
            lo: p.lo,
            hi: p.hi,
        })
        .collect();
    let draws: Vec<Draw> = points
        .iter()
        .flat_map(|p| {
            p.aucs.iter().enumerate().map(|(repeat, &auroc)| Draw {
                size: p.size,
                repeat,
                auroc,
            })
        })
        .collect();
    for c in &curve {
        println!(
            "n={:<4} median AUROC {:.4}  [{:.4}, {:.4}]",
            c.size, c.median, c.lo, c.hi
        );
    }
    out.csv("scarcity.csv", &curve)?;
    out.csv("scarcity_draws.csv", &draws)?;
    Ok(true)
}

const ALPHA_BINS: usize = 20;

/// Histogram of `α_j` over drifting token pairs, including the spike at 0
/// from vanishing slice differences.
fn alpha_histogram(seed: u64) -> Result<Vec<(f64, f64, usize)>> {
    let mut counts = [0usize; ALPHA_BINS];
    for i in 0..100u64 {
        let (a, b) = drifting_pair(rng::derive_seed(seed, i), 16, 4, 64, 0.6);
        for &alpha in &alpha_profile(&a, &b)?.alphas {
            let bin = (((alpha + 1.0) / 2.0 * ALPHA_BINS as f64) as usize).min(ALPHA_BINS - 1);
            counts[bin] += 1;
        }
    }
    let edge = |i: usize| (2.0 * i as f64 - ALPHA_BINS as f64) / ALPHA_BINS as f64;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (edge(i), edge(i + 1), c))
        .collect())
}

pub fn verify(a: &VerifyArgs, g: &Globals, out: &Output) -> Result<bool> {
    let mut suites: Vec<Suite> = Vec::new();
    for s in &a.suite {
        let add: &[Suite] = match s {
            SuiteArg::Jl => &[Suite::Jl],
            SuiteArg::Alpha => &[Suite::Alpha],
            SuiteArg::Bounds => &[Suite::Bounds],
            SuiteArg::Overlap => &[Suite::Overlap],
            SuiteArg::All => &Suite::ALL,
        };
        for &suite in add {
            if !suites.contains(&suite) {
                suites.push(suite);
            }
        }
    }
    #[derive(Serialize)]
    struct Row {
        suite: Suite,
        check: String,
        value: f64,
        condition: String,
        pass: bool,
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for suite in suites {
        let report = experiments::verify(suite, g.seed)?;
        for c in &report.checks {
            println!(
                "[{}] {:?}/{} = {:.6} ({})",
                if c.pass { "PASS" } else { "FAIL" },
                suite,
                c.name,
                c.value,
                c.condition
            );
            rows.push(Row {
                suite,
                check: c.name.clone(),
                value: c.value,
                condition: c.condition.clone(),
                pass: c.pass,
            });
        }
        if suite == Suite::Alpha {
            #[derive(Serialize)]
            struct Bin {
                lo: f64,
                hi: f64,
                count: usize,
            }
            let bins: Vec<Bin> = alpha_histogram(g.seed)?
                .into_iter()
                .map(|(lo, hi, count)| Bin { lo, hi, count })
                .collect();
            out.csv("alpha_histogram.csv", &bins)?;
        }
        reports.push(report);
    }
    out.csv("verify.csv", &rows)?;
    out.json("verify.json", &reports)?;
    let passed = reports.iter().all(|r| r.passed());
    println!(
        "{}",
        if passed {
            "all checks passed"
        } else {
            "some checks failed"
        }
    );
    Ok(passed)
}

pub fn bench(a: &BenchArgs, g: &Globals, out: &Output) -> Result<bool> {
    let cfg = BenchConfig {
        d_list: a.d_list.clone(),
        k_list: a.k_list.clone(),
        n: a.n,
        patches_per_side: a.patches_per_side,
        token_dim: a.token_dim,
        reps: a.reps,
        seed: g.seed,
    };
    let rows = bench_embed(&cfg)?;
    for r in &rows {
        println!(
            "D={:<4} K={:<4} encode {:>9.2}ms  pool {:>8.2}ms  project {:>8.2}ms  total {:>8.2}ms",
            r.d_side, r.k, r.encode_ms, r.pool_ms, r.project_ms, r.total_ms
        );
    }
    out.csv("bench.csv", &rows)?;
    if a.pca {
        let t = rp_vs_pca(
            a.pca_dim,
            a.k_list.iter().copied().max().unwrap_or(100),
            a.pca_n,
            g.seed,
        )?;
        println!(
            "d={} K={} n={}: projection {:.2}ms, PCA {:.2}ms",
            t.d, t.k, t.n, t.rp_ms, t.pca_ms
        );
        out.csv("rp_vs_pca.csv", &[t])?;
    }
    Ok(true)
}
