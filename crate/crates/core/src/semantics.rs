//! Semantic boundaries in latent space.
//!
//! Extreme-rank images are labeled, a linear soft-margin SVM separates them
//! and the unit normal of each hyperplane becomes an editing direction.
//! Directions are conditioned against each other by sequential
//! Gram–Schmidt so that moving along one leaves the others' decision values
//! unchanged.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::InversionMethod;
use crate::latent::{LatentCode, NormalStream, DEGENERATE_NORM};
use crate::store::LatentTable;
use crate::world::{DeprivationRecord, Dimension};

pub const DEFAULT_FRACTION: f64 = 0.2;
/// Share of the labeled pool held out for validation.
pub const VALIDATION_SHARE: f64 = 0.2;
/// Projected norms below this mean the two directions are parallel.
pub const PARALLEL_NORM: f64 = 1e-8;
/// Largest |dot| accepted between conditioned normals.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// Where the latents used for labeling come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LatentSource {
    HiddenTrue,
    Inverted(InversionMethod),
}

impl LatentSource {
    pub const ALL: [LatentSource; 4] = [
        LatentSource::HiddenTrue,
        LatentSource::Inverted(InversionMethod::Optimize),
        LatentSource::Inverted(InversionMethod::Encode),
        LatentSource::Inverted(InversionMethod::EncodeRefined),
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LatentSource::HiddenTrue => "hidden-true",
            LatentSource::Inverted(m) => m.as_str(),
        }
    }
}

impl fmt::Display for LatentSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LatentSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "hidden-true" || s == "hidden_true" {
            return Ok(LatentSource::HiddenTrue);
        }
        s.parse::<InversionMethod>()
            .map(LatentSource::Inverted)
            .map_err(|_| Error::Unknown {
                kind: "latent source",
                name: s.to_string(),
            })
    }
}

impl Serialize for LatentSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LatentSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub dimension: Dimension,
    pub fraction: f64,
    pub ids: Vec<String>,
    pub latents: Vec<LatentCode>,
    /// -1 or +1; +1 is the less deprived (higher rank) side.
    pub labels: Vec<i8>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l > 0).count();
        (self.labels.len() - pos, pos)
    }

    /// Same points with every label negated.
    pub fn flipped(&self) -> LabeledSet {
        LabeledSet {
            labels: self.labels.iter().map(|l| -l).collect(),
            ..self.clone()
        }
    }
}

fn shuffle(items: &mut [usize], stream: &mut NormalStream) {
    for i in (1..items.len()).rev() {
        let j = (stream.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Labels the bottom `fraction` of ranks -1 and the top `fraction` +1, then
/// holds out a class-balanced share of the pool for validation.
pub fn label_extremes(
    records: &[DeprivationRecord],
    latents: &LatentTable,
    dimension: Dimension,
    fraction: f64,
    source: LatentSource,
    split_seed: u64,
) -> Result<(LabeledSet, LabeledSet)> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::InvalidConfig(format!(
            "label fraction {fraction} outside (0, 0.5]"
        )));
    }
    let n = records.len();
    let needed = (10.0 / fraction).ceil() as usize;
    if n < needed {
        return Err(Error::NotEnoughSamples { needed, got: n });
    }
    let k = (fraction * n as f64).floor() as usize;
    let mut by_rank: Vec<&DeprivationRecord> = records.iter().collect();
    by_rank.sort_by_key(|r| r.rank(dimension));
    let negatives = &by_rank[..k];
    let positives = &by_rank[n - k..];

    let lookup = |r: &DeprivationRecord| -> Result<LatentCode> {
        latents.get(&r.image_id).cloned().ok_or_else(|| Error::MissingLatents {
            source_name: source.to_string(),
            detail: format!("no latent for {}", r.image_id),
        })
    };

    let val_total = (VALIDATION_SHARE * (2 * k) as f64).round() as usize;
    let per_class = val_total / 2;
    let mut stream = NormalStream::new(split_seed, dimension.index() as u64);
    let mut train = LabeledSet {
        dimension,
        fraction,
        ids: Vec::new(),
        latents: Vec::new(),
        labels: Vec::new(),
    };
    let mut val = train.clone();
    for (class, label) in [(negatives, -1i8), (positives, 1i8)] {
        let mut order: Vec<usize> = (0..class.len()).collect();
        shuffle(&mut order, &mut stream);
        let mut held = vec![false; class.len()];
        order[..per_class].iter().for_each(|&i| held[i] = true);
        for (i, r) in class.iter().enumerate() {
            let set = if held[i] { &mut val } else { &mut train };
            set.ids.push(r.image_id.clone());
            set.latents.push(lookup(r)?);
            set.labels.push(label);
        }
    }
    Ok((train, val))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Initial step of the `step0 / sqrt(t)` schedule.
    pub step0: f64,
    /// Iterations between convergence checks.
    pub window: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            tol: 1e-6,
            max_iter: 100_000,
            step0: 1.0,
            window: 1000,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c > 0.0
            && self.c.is_finite()
            && self.tol > 0.0
            && self.max_iter > 0
            && self.step0 > 0.0
            && self.step0.is_finite()
            && self.window > 0;
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid SVM settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub step0: f64,
    pub window: usize,
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MetricsReport {
    /// Rates from confusion counts; undefined ratios are reported as 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        MetricsReport {
            precision,
            recall,
            f1: f1_score(precision, recall),
            tp,
            fp,
            tn,
            fn_,
        }
    }

    pub fn support(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticBoundary {
    pub dimension: Dimension,
    /// Unit normal used for decisions and traversal.
    pub normal: LatentCode,
    pub offset: f64,
    /// Dimensions this normal was projected off, in order.
    pub conditioned_against: Vec<Dimension>,
    /// Normal before the final normalization: the raw SVM weights for a
    /// fitted boundary, the unnormalized projection for a conditioned one.
    pub raw_normal: LatentCode,
    pub raw_offset: f64,
    pub latent_source: LatentSource,
    pub train_metrics: MetricsReport,
    /// Validation metrics, filled by [`evaluate`] callers.
    pub metrics: Option<MetricsReport>,
    pub solver: SolverInfo,
}

impl SemanticBoundary {
    /// `n . z + b`.
    pub fn decision(&self, z: &LatentCode) -> Result<f64> {
        Ok(self.normal.dot(z)? + self.offset)
    }

    pub fn predict(&self, z: &LatentCode) -> Result<i8> {
        Ok(sign(self.decision(z)?))
    }
}

/// Zero counts as +1.
pub fn sign(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

fn objective(w: &[f64], b: f64, xs: &[&[f64]], ys: &[f64], lambda: f64) -> f64 {
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (1.0 - y * (dot_raw(w, x) + b)).max(0.0))
        .sum();
    0.5 * lambda * dot_raw(w, w) + hinge / xs.len() as f64
}

fn dot_raw(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear soft-margin SVM by full-batch subgradient descent.
///
/// Minimizes `||w||^2 / (2 C n) + mean(hinge)` with steps
/// `step0 / sqrt(t)`, keeping the best primal iterate. Every `window`
/// iterations the best objective is compared with the previous check; the
/// solver stops when it improved by less than `tol`.
pub fn fit_boundary(train: &LabeledSet, source: LatentSource, cfg: &SvmConfig) -> Result<SemanticBoundary> {
    cfg.validate()?;
    let (neg, pos) = train.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::SingleClass(format!(
            "{} training set has {neg} negatives and {pos} positives",
            train.dimension
        )));
    }
    let dim = train.latents[0].dim();
    for z in &train.latents {
        if z.dim() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: z.dim(),
            });
        }
        if let Some(index) = z.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
    }
    let n = train.len();
    let xs: Vec<&[f64]> = train.latents.iter().map(LatentCode::as_slice).collect();
    let ys: Vec<f64> = train.labels.iter().map(|&l| l as f64).collect();
    let lambda = 1.0 / (cfg.c * n as f64);

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut best_w = w.clone();
    let mut best_b = b;
    let mut best = objective(&w, b, &xs, &ys, lambda);
    let mut checkpoint = best;
    let mut iterations = 0;
    let mut converged = false;
    let mut gw = vec![0.0; dim];
    while iterations < cfg.max_iter {
        iterations += 1;
        gw.iter_mut().zip(&w).for_each(|(g, wi)| *g = lambda * wi);
        let mut gb = 0.0;
        let mut hinge = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            let margin = y * (dot_raw(&w, x) + b);
            if margin < 1.0 {
                hinge += 1.0 - margin;
                gw.iter_mut().zip(*x).for_each(|(g, xi)| *g -= y * xi / n as f64);
                gb -= y / n as f64;
            }
        }
        // objective at the current iterate, before stepping
        let current = 0.5 * lambda * dot_raw(&w, &w) + hinge / n as f64;
        if current < best {
            best = current;
            best_w.copy_from_slice(&w);
            best_b = b;
        }
        let eta = cfg.step0 / (iterations as f64).sqrt();
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= eta * g);
        b -= eta * gb;
        if iterations % cfg.window == 0 {
            if checkpoint - best < cfg.tol {
                converged = true;
                break;
            }
            checkpoint = best;
        }
    }
    let last = objective(&w, b, &xs, &ys, lambda);
    if last < best {
        best = last;
        best_w = w;
        best_b = b;
    }

    let scale = crate::latent::norm(&best_w);
    if !(scale >= DEGENERATE_NORM) {
        return Err(Error::DegenerateVector {
            norm: scale,
            threshold: DEGENERATE_NORM,
        });
    }
    let raw_normal = LatentCode::new(best_w)?;
    let normal = raw_normal.scale(1.0 / scale);
    let mut boundary = SemanticBoundary {
        dimension: train.dimension,
        normal,
        offset: best_b / scale,
        conditioned_against: Vec::new(),
        raw_normal,
        raw_offset: best_b,
        latent_source: source,
        train_metrics: MetricsReport::from_counts(0, 0, 0, 0),
        metrics: None,
        solver: SolverInfo {
            c: cfg.c,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            step0: cfg.step0,
            window: cfg.window,
            iterations,
            objective: best,
            converged,
        },
    };
    boundary.train_metrics = evaluate(&boundary, train)?;
    Ok(boundary)
}

/// Confusion counts and rates for the +1 class; a zero decision value
/// predicts +1.
pub fn evaluate(boundary: &SemanticBoundary, set: &LabeledSet) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    let predictions = set
        .latents
        .iter()
        .map(|z| boundary.predict(z))
        .collect::<Result<Vec<i8>>>()?;
    Ok(confusion(&predictions, &set.labels))
}

pub fn confusion(predictions: &[i8], labels: &[i8]) -> MetricsReport {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p > 0, l > 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    MetricsReport::from_counts(tp, fp, tn, fn_)
}

/// Removes from `n1` its component along `n2`.
///
/// Both inputs are normalized first. Returns the unit result and the
/// unnormalized projection.
pub fn orthogonalize(n1: &LatentCode, n2: &LatentCode) -> Result<(LatentCode, LatentCode)> {
    let a = n1.normalize()?;
    let b = n2.normalize()?;
    let raw = a.add_scaled(&b, -a.dot(&b)?)?;
    let raw_norm = raw.norm();
    if !(raw_norm >= PARALLEL_NORM) {
        return Err(Error::ParallelVectors {
            norm: raw_norm,
            threshold: PARALLEL_NORM,
        });
    }
    // a second pass removes the rounding residue of the first
    let refined = raw.add_scaled(&b, -raw.dot(&b)?)?;
    Ok((refined.normalize()?, raw))
}

/// Sequential Gram–Schmidt over 2 or 3 boundaries in the given order.
///
/// The first normal is kept; each later one is projected off every
/// previously conditioned normal and renormalized. Offsets are carried over
/// as `b * (n_conditioned . n_fitted)`, so the conditioned hyperplane passes
/// through the fitted hyperplane's point closest to the origin.
pub fn orthogonalize_set(boundaries: &[SemanticBoundary]) -> Result<Vec<SemanticBoundary>> {
    if !(2..=3).contains(&boundaries.len()) {
        return Err(Error::InvalidConfig(format!(
            "orthogonalize_set takes 2 or 3 boundaries, got {}",
            boundaries.len()
        )));
    }
    let mut out: Vec<SemanticBoundary> = Vec::with_capacity(boundaries.len());
    for fitted in boundaries {
        let mut current = fitted.normal.normalize()?;
        let mut raw = current.clone();
        for prev in &out {
            current = orthogonalize(&current, &prev.normal)?.0;
            // raw keeps the unnormalized residual of the original normal
            raw = raw.add_scaled(&prev.normal, -raw.dot(&prev.normal)?)?;
        }
        if raw.norm() < PARALLEL_NORM {
            return Err(Error::ParallelVectors {
                norm: raw.norm(),
                threshold: PARALLEL_NORM,
            });
        }
        let offset = fitted.offset * current.dot(&fitted.normal)?;
        out.push(SemanticBoundary {
            normal: current,
            offset,
            conditioned_against: out.iter().map(|b| b.dimension).collect(),
            raw_normal: raw,
            raw_offset: fitted.offset,
            ..fitted.clone()
        });
    }
    check_orthogonal(&out.iter().map(|b| b.normal.clone()).collect::<Vec<_>>(), ORTHOGONALITY_TOL)?;
    Ok(out)
}

/// Largest pairwise |dot| among `normals`.
pub fn max_pairwise_dot(normals: &[LatentCode]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..normals.len() {
        for j in i + 1..normals.len() {
            worst = worst.max(normals[i].dot(&normals[j])?.abs());
        }
    }
    Ok(worst)
}

pub fn check_orthogonal(normals: &[LatentCode], tolerance: f64) -> Result<()> {
    let dot = max_pairwise_dot(normals)?;
    if dot > tolerance {
        return Err(Error::NonOrthogonal { dot, tolerance });
    }
    Ok(())
}
