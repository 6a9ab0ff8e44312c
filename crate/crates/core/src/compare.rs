//! Side-by-side evaluation of inversion methods on a held-out subset of a
//! dataset: reconstruction error, latent recovery and the downstream
//! precision/recall/F1 of boundaries fitted on each method's latents.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::{
    encode_refine, encode_result, project_optimize, train_encoder, Encoder, InversionMethod,
    InversionResult, OptimizeConfig,
};
use crate::latent::NormalStream;
use crate::semantics::{self, LatentSource, MetricsReport, SvmConfig};
use crate::store::LatentTable;
use crate::world::{rank_transform, Dataset, DeprivationRecord, Dimension};

/// Reconstruction MSE counted as a successful inversion.
pub const SUCCESS_MSE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub eval_subset_size: usize,
    pub subset_seed: u64,
    pub encoder_lambda: f64,
    /// Upper bound on encoder training pairs drawn from outside the subset.
    pub encoder_pairs: usize,
    pub refine_rounds: usize,
    pub optimize: OptimizeConfig,
    pub label_fraction: f64,
    pub split_seed: u64,
    pub svm: SvmConfig,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            eval_subset_size: 200,
            subset_seed: 17,
            encoder_lambda: 1e-3,
            encoder_pairs: 2000,
            refine_rounds: 5,
            optimize: OptimizeConfig::default(),
            label_fraction: semantics::DEFAULT_FRACTION,
            split_seed: 23,
            svm: SvmConfig::default(),
        }
    }
}

/// Per-image results of one method, in subset order.
#[derive(Clone, Debug, PartialEq)]
pub struct InversionRun {
    pub method: InversionMethod,
    pub results: Vec<(String, InversionResult)>,
}

impl InversionRun {
    pub fn latents(&self) -> Result<LatentTable> {
        let mut t = LatentTable::new();
        for (id, r) in &self.results {
            t.insert(id.clone(), r.latent.clone())?;
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionOutputs {
    pub subset_ids: Vec<String>,
    pub encoder: Option<Encoder>,
    pub runs: Vec<InversionRun>,
}

/// Order-preserving de-duplication of method names.
pub fn parse_methods<S: AsRef<str>>(names: &[S]) -> Result<Vec<InversionMethod>> {
    let mut out: Vec<InversionMethod> = Vec::new();
    for name in names {
        let m: InversionMethod = name.as_ref().parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("inversion methods"));
    }
    Ok(out)
}

/// Seeded choice of `size` entry indices, returned in manifest order.
pub fn select_subset(n: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size == 0 || size > n {
        return Err(Error::InvalidConfig(format!(
            "evaluation subset of {size} from {n} entries"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut stream = NormalStream::new(seed, 0);
    for i in (1..n).rev() {
        let j = (stream.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    let mut chosen = order[..size].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Inverts the held-out subset with every requested method.
///
/// The encoder, when needed, is trained on entries outside the subset so
/// that encoder results are measured on unseen images.
pub fn run_inversions(
    dataset: &Dataset,
    methods: &[InversionMethod],
    cfg: &CompareConfig,
) -> Result<InversionOutputs> {
    if methods.is_empty() {
        return Err(Error::EmptyInput("inversion methods"));
    }
    cfg.optimize.validate()?;
    let constants = dataset.generator()?;
    let entries = &dataset.manifest.entries;
    let subset = select_subset(entries.len(), cfg.eval_subset_size, cfg.subset_seed)?;
    let in_subset: BTreeSet<usize> = subset.iter().copied().collect();

    let needs_encoder = methods
        .iter()
        .any(|m| matches!(m, InversionMethod::Encode | InversionMethod::EncodeRefined));
    let encoder = if needs_encoder {
        let hidden = dataset.hidden_latents()?;
        let mut pairs = Vec::new();
        for (i, e) in entries.iter().enumerate() {
            if in_subset.contains(&i) {
                continue;
            }
            if pairs.len() == cfg.encoder_pairs {
                break;
            }
            let z = hidden.get(&e.image_id).expect("hidden table covers the manifest");
            pairs.push((dataset.load_image(e)?, z.clone()));
        }
        log::info!("training encoder on {} pairs", pairs.len());
        Some(train_encoder(&pairs, cfg.encoder_lambda)?)
    } else {
        None
    };

    let targets = subset
        .iter()
        .map(|&i| Ok((entries[i].image_id.clone(), dataset.load_image(&entries[i])?)))
        .collect::<Result<Vec<_>>>()?;
    let mut runs = Vec::new();
    for &method in methods {
        log::info!("inverting {} images with {method}", targets.len());
        let mut results = Vec::with_capacity(targets.len());
        for (k, (id, image)) in targets.iter().enumerate() {
            let r = match method {
                InversionMethod::Optimize => {
                    let oc = OptimizeConfig {
                        seed: cfg.optimize.seed.wrapping_add(k as u64),
                        ..cfg.optimize.clone()
                    };
                    project_optimize(image, &constants, &oc)?
                }
                InversionMethod::Encode => {
                    encode_result(encoder.as_ref().expect("trained above"), image, &constants)?
                }
                InversionMethod::EncodeRefined => encode_refine(
                    encoder.as_ref().expect("trained above"),
                    image,
                    &constants,
                    cfg.refine_rounds,
                )?,
            };
            results.push((id.clone(), r));
        }
        runs.push(InversionRun { method, results });
    }
    Ok(InversionOutputs {
        subset_ids: targets.into_iter().map(|(id, _)| id).collect(),
        encoder,
        runs,
    })
}

/// Records of `ids` with every rank column recomputed within the subset.
pub fn subset_records(records: &[DeprivationRecord], ids: &[String]) -> Result<Vec<DeprivationRecord>> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let mut out: Vec<DeprivationRecord> = records
        .iter()
        .filter(|r| wanted.contains(r.image_id.as_str()))
        .cloned()
        .collect();
    if out.len() != wanted.len() {
        return Err(Error::InvalidConfig(format!(
            "{} of {} subset ids have records",
            out.len(),
            wanted.len()
        )));
    }
    for dim in Dimension::ALL {
        let scores: Vec<f64> = out.iter().map(|r| r.rank(dim) as f64).collect();
        let ranks = rank_transform(&scores)?;
        for (r, new) in out.iter_mut().zip(ranks) {
            match dim {
                Dimension::Income => r.income_rank = new,
                Dimension::Education => r.education_rank = new,
                Dimension::Health => r.health_rank = new,
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: InversionMethod,
    pub count: usize,
    pub mse_mean: f64,
    pub mse_median: f64,
    pub mse_max: f64,
    /// Share of images reconstructed with MSE at most [`SUCCESS_MSE`].
    pub success_fraction: f64,
    pub monotone_fraction: f64,
    pub latent_cosine_median: f64,
    pub latent_cosine_mean: f64,
    pub steps_mean: f64,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dimension: Dimension,
    pub inversion_method: LatentSource,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub subset_size: usize,
    pub subset_seed: u64,
    pub label_fraction: f64,
    pub methods: Vec<MethodSummary>,
    /// One row per (method, dimension).
    pub rows: Vec<MetricsRow>,
    /// Same evaluation on the true latents of the subset.
    pub reference_rows: Vec<MetricsRow>,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

fn summarize_run(run: &InversionRun, hidden: &LatentTable) -> Result<MethodSummary> {
    let n = run.results.len();
    let mut mses: Vec<f64> = run.results.iter().map(|(_, r)| r.final_loss()).collect();
    let mut cosines = Vec::with_capacity(n);
    for (id, r) in &run.results {
        let truth = hidden.get(id).ok_or_else(|| Error::MissingLatents {
            source_name: "hidden-true".into(),
            detail: format!("no latent for {id}"),
        })?;
        cosines.push(r.latent.cosine(truth)?);
    }
    let count = |f: &dyn Fn(&InversionResult) -> bool| {
        run.results.iter().filter(|(_, r)| f(r)).count() as f64 / n as f64
    };
    Ok(MethodSummary {
        method: run.method,
        count: n,
        mse_mean: mses.iter().sum::<f64>() / n as f64,
        mse_max: mses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mse_median: median(&mut mses),
        success_fraction: count(&|r| r.final_loss() <= SUCCESS_MSE),
        monotone_fraction: count(&|r| r.trace_is_monotone()),
        latent_cosine_mean: cosines.iter().sum::<f64>() / n as f64,
        latent_cosine_median: median(&mut cosines),
        steps_mean: run.results.iter().map(|(_, r)| r.steps_used as f64).sum::<f64>() / n as f64,
        elapsed_secs: run.results.iter().map(|(_, r)| r.elapsed_secs).sum(),
    })
}

/// Fits and validates one boundary per dimension on `latents`.
pub fn dimension_rows(
    records: &[DeprivationRecord],
    latents: &LatentTable,
    source: LatentSource,
    cfg: &CompareConfig,
) -> Result<Vec<MetricsRow>> {
    Dimension::ALL
        .iter()
        .map(|&dim| {
            let (train, val) = semantics::label_extremes(
                records,
                latents,
                dim,
                cfg.label_fraction,
                source,
                cfg.split_seed,
            )?;
            let b = semantics::fit_boundary(&train, source, &cfg.svm)?;
            Ok(MetricsRow {
                dimension: dim,
                inversion_method: source,
                metrics: semantics::evaluate(&b, &val)?,
            })
        })
        .collect()
}

/// Builds the report from finished inversion runs.
pub fn summarize(dataset: &Dataset, outputs: &InversionOutputs, cfg: &CompareConfig) -> Result<ComparisonReport> {
    let hidden = dataset.hidden_latents()?;
    let records = subset_records(&dataset.records()?, &outputs.subset_ids)?;
    let mut methods = Vec::new();
    let mut rows = Vec::new();
    for run in &outputs.runs {
        methods.push(summarize_run(run, &hidden)?);
        rows.extend(dimension_rows(
            &records,
            &run.latents()?,
            LatentSource::Inverted(run.method),
            cfg,
        )?);
    }
    let mut truth = LatentTable::new();
    for id in &outputs.subset_ids {
        truth.insert(id.clone(), hidden.get(id).expect("hidden covers subset").clone())?;
    }
    let reference_rows = dimension_rows(&records, &truth, LatentSource::HiddenTrue, cfg)?;
    Ok(ComparisonReport {
        subset_size: outputs.subset_ids.len(),
        subset_seed: cfg.subset_seed,
        label_fraction: cfg.label_fraction,
        methods,
        rows,
        reference_rows,
    })
}

/// Inverts the held-out subset with each method and evaluates the results.
pub fn compare_methods(
    dataset: &Dataset,
    methods: &[InversionMethod],
    cfg: &CompareConfig,
) -> Result<(ComparisonReport, InversionOutputs)> {
    let outputs = run_inversions(dataset, methods, cfg)?;
    let report = summarize(dataset, &outputs, cfg)?;
    Ok((report, outputs))
}

pub const TABLE_HEADER: [&str; 5] = ["dimension", "inversion_method", "precision", "recall", "f1"];

pub fn write_metrics_csv(path: &std::path::Path, rows: &[MetricsRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        crate::store::ensure_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TABLE_HEADER)?;
    for r in rows {
        w.write_record([
            r.dimension.as_str().to_string(),
            r.inversion_method.to_string(),
            r.metrics.precision.to_string(),
            r.metrics.recall.to_string(),
            r.metrics.f1.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl ComparisonReport {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "held-out subset: {} images (seed {})\n",
            self.subset_size, self.subset_seed
        );
        let _ = writeln!(
            s,
            "{:<16} {:>5} {:>12} {:>12} {:>9} {:>9} {:>10}",
            "method", "n", "mse_mean", "mse_median", "mse<=1e-3", "monotone", "cos_median"
        );
        for m in &self.methods {
            let _ = writeln!(
                s,
                "{:<16} {:>5} {:>12.3e} {:>12.3e} {:>9.3} {:>9.3} {:>10.4}",
                m.method.as_str(),
                m.count,
                m.mse_mean,
                m.mse_median,
                m.success_fraction,
                m.monotone_fraction,
                m.latent_cosine_median
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<10} {:<16} {:>9} {:>9} {:>9}",
            "dimension", "inversion_method", "precision", "recall", "f1"
        );
        for r in self.rows.iter().chain(&self.reference_rows) {
            let _ = writeln!(
                s,
                "{:<10} {:<16} {:>9.3} {:>9.3} {:>9.3}",
                r.dimension.as_str(),
                r.inversion_method.as_str(),
                r.metrics.precision,
                r.metrics.recall,
                r.metrics.f1
            );
        }
        s
    }
}
