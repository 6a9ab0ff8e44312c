//! Planted socioeconomic ground truth, the ranked image dataset built on it
//! and the pixel-level curation classifier.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{dot, random_unit, LatentCode, NormalStream, SamplingConfig};
use crate::scenegen::{generate, GeneratorConstants, RasterImage, SceneParams, HEIGHT, WIDTH};
use crate::store::{self, LatentTable};

pub const DEFAULT_NOISE_SIGMA: f64 = 0.25;
pub const DEFAULT_TARGET_RHO: f64 = 0.3;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const RECORDS_HEADER: [&str; 5] = [
    "image_id",
    "area_id",
    "income_rank",
    "education_rank",
    "health_rank",
];

/// Side of the pooling grid used for curation features.
pub const POOL_SIDE: usize = 16;
pub const POOL_FEATURES: usize = POOL_SIDE * POOL_SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Income,
    Education,
    Health,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Income, Dimension::Education, Dimension::Health];

    pub fn as_str(&self) -> &'static str {
        match self {
            Dimension::Income => "income",
            Dimension::Education => "education",
            Dimension::Health => "health",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            Dimension::Income => 0,
            Dimension::Education => 1,
            Dimension::Health => 2,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "dimension",
                name: s.to_string(),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    pub seed: u64,
    pub w_income: LatentCode,
    pub w_education: LatentCode,
    pub w_health: LatentCode,
    pub noise_sigma: f64,
    pub target_rho: f64,
}

impl GroundTruthModel {
    pub fn weights(&self, dim: Dimension) -> &LatentCode {
        match dim {
            Dimension::Income => &self.w_income,
            Dimension::Education => &self.w_education,
            Dimension::Health => &self.w_health,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_income.dim()
    }
}

/// Three unit directions with pairwise cosine `target_rho`.
///
/// A shared unit vector `u` and three unit vectors `e_i` orthogonal to `u`
/// and to each other are drawn; `w_i = sqrt(rho) u + sqrt(1 - rho) e_i`.
pub fn make_ground_truth(
    seed: u64,
    dim: usize,
    target_rho: f64,
    noise_sigma: f64,
) -> Result<GroundTruthModel> {
    if !(0.0..1.0).contains(&target_rho) {
        return Err(Error::InvalidConfig(format!(
            "target_rho {target_rho} outside [0, 1)"
        )));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "noise_sigma {noise_sigma} must be finite and non-negative"
        )));
    }
    let needed = if target_rho > 0.0 { 4 } else { 3 };
    if dim < needed {
        return Err(Error::InvalidConfig(format!(
            "latent dimension {dim} too small for three planted directions (need {needed})"
        )));
    }
    let mut stream = NormalStream::new(seed, 0);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(4);
    while basis.len() < needed {
        let mut v = random_unit(&mut stream, dim);
        for b in &basis {
            let p = dot(&v, b)?;
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if let Ok(u) = crate::latent::normalize(&v) {
            if crate::latent::norm(&v) > 1e-6 {
                basis.push(u);
            }
        }
    }
    let shared = if target_rho > 0.0 {
        Some(basis.remove(0))
    } else {
        None
    };
    let a = target_rho.sqrt();
    let c = (1.0 - target_rho).sqrt();
    let mut ws = basis.into_iter().map(|e| {
        let v: Vec<f64> = match &shared {
            Some(u) => u.iter().zip(&e).map(|(u, e)| a * u + c * e).collect(),
            None => e,
        };
        LatentCode::new(v).expect("finite construction")
    });
    Ok(GroundTruthModel {
        seed,
        w_income: ws.next().expect("three directions"),
        w_education: ws.next().expect("three directions"),
        w_health: ws.next().expect("three directions"),
        noise_sigma,
        target_rho,
    })
}

/// Identifies the noise draw of one item: `(noise_seed, item index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub item: u64,
}

/// `w_dim . z + eps`, with `eps ~ N(0, sigma^2)` drawn from a stream unique
/// to `(item, dim)`.
pub fn score(z: &LatentCode, model: &GroundTruthModel, dim: Dimension, key: NoiseKey) -> Result<f64> {
    let signal = model.weights(dim).dot(z)?;
    if model.noise_sigma == 0.0 {
        return Ok(signal);
    }
    let stream_id = key.item * 3 + dim.index() as u64;
    let eps = NormalStream::new(key.seed, stream_id).next_normal();
    Ok(signal + model.noise_sigma * eps)
}

/// Rank 1 for the lowest score; ties keep input order.
pub fn rank_transform(scores: &[f64]) -> Result<Vec<u32>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    if let Some(index) = scores.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite { index });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0u32; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r as u32 + 1;
    }
    Ok(ranks)
}

pub fn is_permutation(ranks: &[u32]) -> bool {
    let mut seen = vec![false; ranks.len()];
    for &r in ranks {
        let r = r as usize;
        if r == 0 || r > ranks.len() || seen[r - 1] {
            return false;
        }
        seen[r - 1] = true;
    }
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeprivationRecord {
    pub image_id: String,
    pub area_id: String,
    pub income_rank: u32,
    pub education_rank: u32,
    pub health_rank: u32,
}

impl DeprivationRecord {
    pub fn rank(&self, dim: Dimension) -> u32 {
        match dim {
            Dimension::Income => self.income_rank,
            Dimension::Education => self.education_rank,
            Dimension::Health => self.health_rank,
        }
    }

    fn set_rank(&mut self, dim: Dimension, rank: u32) {
        match dim {
            Dimension::Income => self.income_rank = rank,
            Dimension::Education => self.education_rank = rank,
            Dimension::Health => self.health_rank = rank,
        }
    }
}

/// Coarse 4x4 bucket of the first two latent coordinates.
pub fn area_id(z: &LatentCode) -> String {
    let bucket = |v: f64| ((v + 1.0) / 0.5).floor().clamp(0.0, 3.0) as u8;
    let s = z.as_slice();
    let a = bucket(s[0]);
    let b = s.get(1).map_or(0, |&v| bucket(v));
    format!("A{a}{b}")
}

pub fn image_id(index: usize) -> String {
    format!("img_{index:05}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Relative to the manifest's directory.
    pub image: String,
    pub record: DeprivationRecord,
    /// Row of this entry in the hidden latent table.
    pub latent_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub n: usize,
    pub dim: usize,
    pub psi: f64,
    pub sampling_seed: u64,
    pub noise_seed: u64,
    /// Paths below are relative to the manifest's directory.
    pub ground_truth: String,
    pub generator: String,
    /// Directory holding `latents.bin` and `latents.index.json`.
    pub hidden_latents: String,
    /// Set when this manifest is a filtered view of another dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filtered_from: Option<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn records(&self) -> Vec<DeprivationRecord> {
        self.entries.iter().map(|e| e.record.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != self.n {
            return Err(Error::InvalidConfig(format!(
                "manifest lists {} entries but n = {}",
                self.entries.len(),
                self.n
            )));
        }
        check_rank_columns(&self.records())
    }
}

pub fn check_rank_columns(records: &[DeprivationRecord]) -> Result<()> {
    for dim in Dimension::ALL {
        let ranks: Vec<u32> = records.iter().map(|r| r.rank(dim)).collect();
        if !is_permutation(&ranks) {
            return Err(Error::InvalidConfig(format!(
                "{dim} ranks are not a permutation of 1..{}",
                records.len()
            )));
        }
    }
    Ok(())
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.csv";
pub const LATENT_STEM: &str = "latents";

/// Samples `n` latents, renders them and writes a ranked dataset to
/// `out_dir`.
pub fn build_dataset(
    n: usize,
    sampling: &SamplingConfig,
    model: &GroundTruthModel,
    constants: &GeneratorConstants,
    noise_seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n < 10 {
        return Err(Error::NotEnoughSamples { needed: 10, got: n });
    }
    if sampling.count() != n {
        return Err(Error::InvalidConfig(format!(
            "sampling count {} does not match n = {n}",
            sampling.count()
        )));
    }
    if sampling.dim() != model.dim() || sampling.dim() != constants.dim {
        return Err(Error::LengthMismatch {
            expected: constants.dim,
            actual: sampling.dim(),
        });
    }
    let latents = crate::latent::sample_latents(sampling);
    let mut raw = vec![Vec::with_capacity(n); 3];
    let mut hidden = LatentTable::new();
    let mut entries = Vec::with_capacity(n);
    let images_dir = out_dir.join("images");
    store::ensure_dir(&images_dir)?;
    for (i, z) in latents.iter().enumerate() {
        let id = image_id(i);
        let image = generate(z, constants)?;
        store::write_bytes(&images_dir.join(format!("{id}.png")), &image.to_png()?)?;
        let key = NoiseKey {
            seed: noise_seed,
            item: i as u64,
        };
        for dim in Dimension::ALL {
            raw[dim.index()].push(score(z, model, dim, key)?);
        }
        hidden.insert(id.clone(), z.clone())?;
        entries.push(ManifestEntry {
            image: format!("images/{id}.png"),
            record: DeprivationRecord {
                image_id: id.clone(),
                area_id: area_id(z),
                income_rank: 0,
                education_rank: 0,
                health_rank: 0,
            },
            image_id: id,
            latent_index: i,
        });
    }
    for dim in Dimension::ALL {
        let ranks = rank_transform(&raw[dim.index()])?;
        for (e, r) in entries.iter_mut().zip(ranks) {
            e.record.set_rank(dim, r);
        }
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        n,
        dim: sampling.dim(),
        psi: sampling.psi(),
        sampling_seed: sampling.seed(),
        noise_seed,
        ground_truth: "ground_truth.json".into(),
        generator: "generator.json".into(),
        hidden_latents: "hidden".into(),
        filtered_from: None,
        entries,
    };
    hidden.write(&out_dir.join("hidden"), LATENT_STEM)?;
    store::write_json(&out_dir.join("ground_truth.json"), model)?;
    store::write_json(&out_dir.join("generator.json"), constants)?;
    write_records(&out_dir.join(RECORDS_FILE), &manifest.records())?;
    store::write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn write_records(path: &Path, records: &[DeprivationRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        store::ensure_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<DeprivationRecord>> {
    if !path.exists() {
        return Err(Error::NotFound {
            what: "records file",
            path: path.to_path_buf(),
        });
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RECORDS_HEADER {
        return Err(Error::malformed(
            path,
            format!("header must be {}", RECORDS_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// A dataset directory with its manifest loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::NotFound {
                what: "dataset manifest",
                path,
            });
        }
        let manifest: DatasetManifest = store::read_json(&path)?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::malformed(
                &path,
                format!("unsupported schema version {}", manifest.schema_version),
            ));
        }
        manifest.validate().map_err(|e| Error::malformed(&path, e))?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn load_image(&self, entry: &ManifestEntry) -> Result<RasterImage> {
        let path = self.resolve(&entry.image);
        let bytes = store::read_bytes(&path)?;
        RasterImage::from_png(&bytes).map_err(|e| Error::malformed(&path, e))
    }

    pub fn generator(&self) -> Result<GeneratorConstants> {
        let path = self.resolve(&self.manifest.generator);
        let c: GeneratorConstants = store::read_json(&path)?;
        c.validate().map_err(|e| Error::malformed(&path, e))?;
        Ok(c)
    }

    pub fn ground_truth(&self) -> Result<GroundTruthModel> {
        store::read_json(&self.resolve(&self.manifest.ground_truth))
    }

    /// Records from `records.csv`, which may have been replaced by an
    /// external file. Falls back to the manifest when the file is absent.
    pub fn records(&self) -> Result<Vec<DeprivationRecord>> {
        let path = self.dir.join(RECORDS_FILE);
        if !path.exists() {
            return Ok(self.manifest.records());
        }
        let mut by_id: std::collections::HashMap<String, DeprivationRecord> = read_records(&path)?
            .into_iter()
            .map(|r| (r.image_id.clone(), r))
            .collect();
        if by_id.len() != self.manifest.entries.len() {
            return Err(Error::malformed(
                &path,
                format!(
                    "{} distinct records for {} manifest entries",
                    by_id.len(),
                    self.manifest.entries.len()
                ),
            ));
        }
        let records = self
            .manifest
            .entries
            .iter()
            .map(|e| {
                by_id
                    .remove(&e.image_id)
                    .ok_or_else(|| Error::malformed(&path, format!("no record for {}", e.image_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        check_rank_columns(&records).map_err(|e| Error::malformed(&path, e))?;
        Ok(records)
    }

    /// True latents keyed by image id, restricted to this manifest's entries.
    pub fn hidden_latents(&self) -> Result<LatentTable> {
        let all = LatentTable::read(&self.resolve(&self.manifest.hidden_latents), LATENT_STEM)?;
        let mut out = LatentTable::new();
        for e in &self.manifest.entries {
            let z = all.get(&e.image_id).ok_or_else(|| Error::MissingLatents {
                source_name: "hidden-true".into(),
                detail: format!("no latent for {}", e.image_id),
            })?;
            out.insert(e.image_id.clone(), z.clone())?;
        }
        Ok(out)
    }
}

/// 16x16 block means of a 64x64 image.
pub fn pooled_features(image: &RasterImage) -> Vec<f64> {
    let bw = WIDTH / POOL_SIDE;
    let bh = HEIGHT / POOL_SIDE;
    let mut out = vec![0.0; POOL_FEATURES];
    let px = image.pixels();
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            out[(y / bh) * POOL_SIDE + x / bw] += px[y * WIDTH + x];
        }
    }
    let inv = 1.0 / (bw * bh) as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationFilter {
    /// Over [`pooled_features`].
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub iterations: usize,
    pub final_loss: f64,
}

pub const CURATION_TOL: f64 = 1e-6;
pub const CURATION_MAX_ITER: usize = 10_000;

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(t)) without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl CurationFilter {
    pub fn probability(&self, image: &RasterImage) -> f64 {
        let f = pooled_features(image);
        sigmoid(self.bias + f.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn keeps(&self, image: &RasterImage) -> bool {
        self.probability(image) >= self.threshold
    }
}

/// Logistic regression on pooled pixels by full-batch gradient descent.
///
/// Features are standardized internally and the scaling is folded back into
/// the returned weights. The step is `1/L` for the loss's gradient Lipschitz
/// constant `L = lambda_max(X^T X / n) / 4`, estimated by power iteration.
pub fn fit_curation_filter(samples: &[(RasterImage, bool)]) -> Result<CurationFilter> {
    let n = samples.len();
    let positives = samples.iter().filter(|(_, k)| *k).count();
    if positives == 0 || positives == n {
        return Err(Error::SingleClass(format!(
            "curation labels need both classes ({positives} keep of {n})"
        )));
    }
    let raw: Vec<Vec<f64>> = samples.iter().map(|(img, _)| pooled_features(img)).collect();
    let y: Vec<f64> = samples.iter().map(|(_, k)| if *k { 1.0 } else { 0.0 }).collect();

    let mut mean = vec![0.0; POOL_FEATURES];
    for f in &raw {
        mean.iter_mut().zip(f).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0; POOL_FEATURES];
    for f in &raw {
        scale
            .iter_mut()
            .zip(f.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m));
    }
    scale
        .iter_mut()
        .for_each(|s| *s = if *s / n as f64 > 1e-24 { (*s / n as f64).sqrt() } else { 1.0 });
    let x: Vec<Vec<f64>> = raw
        .iter()
        .map(|f| {
            f.iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();

    // power iteration on [X 1]^T [X 1] / n
    let width = POOL_FEATURES + 1;
    let mut v = vec![1.0 / (width as f64).sqrt(); width];
    let mut lambda = 1.0;
    for _ in 0..100 {
        let mut next = vec![0.0; width];
        for row in &x {
            let t = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[POOL_FEATURES];
            next.iter_mut().zip(row).for_each(|(o, a)| *o += t * a);
            next[POOL_FEATURES] += t;
        }
        next.iter_mut().for_each(|o| *o /= n as f64);
        let nn = crate::latent::norm(&next);
        if nn < 1e-300 {
            break;
        }
        lambda = nn;
        v = next.into_iter().map(|o| o / nn).collect();
    }
    let step = 4.0 / lambda.max(1e-12);

    let mut w = vec![0.0; POOL_FEATURES];
    let mut b = 0.0;
    let mut prev = f64::INFINITY;
    let mut loss = f64::INFINITY;
    let mut iterations = 0;
    let mut grad = vec![0.0; POOL_FEATURES];
    while iterations < CURATION_MAX_ITER {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        loss = 0.0;
        for (row, &yi) in x.iter().zip(&y) {
            let t = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            loss += softplus(t) - yi * t;
            let r = sigmoid(t) - yi;
            grad.iter_mut().zip(row).for_each(|(g, a)| *g += r * a);
            gb += r;
        }
        loss /= n as f64;
        iterations += 1;
        if (prev - loss).abs() < CURATION_TOL {
            break;
        }
        prev = loss;
        let k = step / n as f64;
        w.iter_mut().zip(&grad).for_each(|(wi, g)| *wi -= k * g);
        b -= k * gb;
    }

    let weights: Vec<f64> = w.iter().zip(&scale).map(|(wi, s)| wi / s).collect();
    let bias = b - weights.iter().zip(&mean).map(|(wi, m)| wi * m).sum::<f64>();
    if let Some(index) = weights.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(CurationFilter {
        weights,
        bias,
        threshold: 0.5,
        iterations,
        final_loss: loss,
    })
}

/// Keeps entries whose keep-probability reaches `threshold` (clamped to
/// `[0, 1]`) and re-ranks the survivors. The returned manifest references
/// the source dataset's files relative to `out_dir`; nothing is written.
pub fn apply_filter(
    filter: &CurationFilter,
    dataset: &Dataset,
    threshold: f64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let threshold = if threshold.is_nan() { 0.0 } else { threshold.clamp(0.0, 1.0) };
    let records = dataset.records()?;
    let mut kept: Vec<(ManifestEntry, DeprivationRecord)> = Vec::new();
    for (entry, record) in dataset.manifest.entries.iter().zip(records) {
        let p = filter.probability(&dataset.load_image(entry)?);
        if p >= threshold {
            kept.push((entry.clone(), record));
        }
    }
    let prefix = relative_prefix(out_dir, &dataset.dir);
    for dim in Dimension::ALL {
        // re-rank by the surviving order of the original ranks
        let scores: Vec<f64> = kept.iter().map(|(_, r)| r.rank(dim) as f64).collect();
        if scores.is_empty() {
            break;
        }
        for ((_, r), new) in kept.iter_mut().zip(rank_transform(&scores)?) {
            r.set_rank(dim, new);
        }
    }
    let m = &dataset.manifest;
    let entries: Vec<ManifestEntry> = kept
        .into_iter()
        .map(|(e, record)| ManifestEntry {
            image: format!("{prefix}{}", e.image),
            record,
            ..e
        })
        .collect();
    Ok(DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        n: entries.len(),
        dim: m.dim,
        psi: m.psi,
        sampling_seed: m.sampling_seed,
        noise_seed: m.noise_seed,
        ground_truth: format!("{prefix}{}", m.ground_truth),
        generator: format!("{prefix}{}", m.generator),
        hidden_latents: format!("{prefix}{}", m.hidden_latents),
        filtered_from: Some(prefix.trim_end_matches('/').to_string()),
        entries,
    })
}

/// Writes a filtered manifest and its records file into `out_dir`.
pub fn write_filtered(manifest: &DatasetManifest, out_dir: &Path) -> Result<()> {
    write_records(&out_dir.join(RECORDS_FILE), &manifest.records())?;
    store::write_json(&out_dir.join(MANIFEST_FILE), manifest)
}

/// Path prefix that reaches `target` from `from`, with a trailing slash.
/// Both are assumed to share a parent when they are siblings.
fn relative_prefix(from: &Path, target: &Path) -> String {
    if from == target {
        return String::new();
    }
    if from.parent() == target.parent() {
        if let Some(name) = target.file_name() {
            return format!("../{}/", name.to_string_lossy());
        }
    }
    let abs = std::path::absolute(target).unwrap_or_else(|_| target.to_path_buf());
    format!("{}/", abs.to_string_lossy())
}

/// Pipeline keep rule for hand-style curation labels: a scene is kept unless
/// trees or the hedge hide most of the building.
pub fn obstruction_free(params: &SceneParams) -> bool {
    params.tree_count < 3.5 && params.hedge_height < 0.85
}
