#![allow(dead_code)]

use std::path::Path;

use latentwalk::latent::{random_unit, LatentCode, NormalStream};
use latentwalk::pipeline::{Pipeline, PipelineConfig};
use latentwalk::semantics::{LatentSource, MetricsReport, SemanticBoundary, SolverInfo};
use latentwalk::world::Dimension;

pub fn boundary(dimension: Dimension, normal: Vec<f64>, offset: f64) -> SemanticBoundary {
    let normal = LatentCode::new(normal).unwrap();
    SemanticBoundary {
        dimension,
        raw_normal: normal.clone(),
        normal: normal.normalize().unwrap(),
        offset,
        raw_offset: offset,
        conditioned_against: Vec::new(),
        latent_source: LatentSource::HiddenTrue,
        train_metrics: MetricsReport::from_counts(1, 0, 1, 0),
        metrics: None,
        solver: SolverInfo {
            c: 1.0,
            tol: 1e-6,
            max_iter: 1,
            step0: 1.0,
            window: 1,
            iterations: 1,
            objective: 0.0,
            converged: true,
        },
    }
}

/// Three random unit-normal boundaries in the default order.
pub fn random_boundaries(seed: u64, dim: usize) -> Vec<SemanticBoundary> {
    let mut s = NormalStream::new(seed, 99);
    Dimension::ALL
        .iter()
        .map(|&d| {
            let n = random_unit(&mut s, dim);
            let b = s.next_normal();
            boundary(d, n, b)
        })
        .collect()
}

pub fn truncated(seed: u64, stream: u64, psi: f64, dim: usize) -> LatentCode {
    let mut s = NormalStream::new(seed, stream);
    LatentCode::new(s.normal_vec(dim).into_iter().map(|x| x * psi).collect()).unwrap()
}

/// Config for a pipeline small enough for unit-scale tests.
pub fn small_config(out: &Path, extra: &[(&str, &str)]) -> PipelineConfig {
    let mut overrides: Vec<(String, String)> = vec![
        ("output_dir".into(), format!("{:?}", out.to_string_lossy())),
        ("n".into(), "300".into()),
        ("curation.label_count".into(), "150".into()),
        ("inversion.eval_subset_size".into(), "50".into()),
        ("inversion.encoder_pairs".into(), "200".into()),
        ("inversion.optimize.steps".into(), "40".into()),
        ("inversion.optimize.restarts".into(), "1".into()),
    ];
    overrides.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    PipelineConfig::from_toml_with("", &overrides).unwrap()
}

pub fn small_pipeline(out: &Path, extra: &[(&str, &str)]) -> Pipeline {
    Pipeline::new(small_config(out, extra))
}
