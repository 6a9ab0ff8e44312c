mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use latentwalk::editing::{self, WalkSpec};
use latentwalk::latent::{normalize, random_unit, sample_latents, LatentCode, NormalStream, SamplingConfig};
use latentwalk::scenegen::{self, GeneratorConstants, CONTINUITY_L1_BOUND};
use latentwalk::semantics::{self, f1_score, MetricsReport};
use latentwalk::service::SynthesisRequest;
use latentwalk::store::LatentTable;
use latentwalk::world::{self, Dimension};

use common::{random_boundaries, truncated};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampling_is_pure(seed in any::<u64>(), count in 1usize..8, psi in 0.0f64..=1.0, dim in 1usize..32) {
        let cfg = SamplingConfig::new(seed, count, psi, dim).unwrap();
        let a = sample_latents(&cfg);
        let b = sample_latents(&cfg);
        prop_assert_eq!(a.len(), count);
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.dim(), dim);
            let xb: Vec<u64> = x.as_slice().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.as_slice().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(xb, yb);
        }
    }

    #[test]
    fn truncation_scales(seed in any::<u64>(), psi in 0.01f64..=1.0, c in 0.0f64..=1.0) {
        let full = sample_latents(&SamplingConfig::new(seed, 4, psi, 16).unwrap());
        let scaled = sample_latents(&SamplingConfig::new(seed, 4, c * psi, 16).unwrap());
        for (a, b) in full.iter().zip(&scaled) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((c * x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn normalize_is_idempotent(v in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let once = normalize(&v).unwrap();
        let twice = normalize(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn planted_directions(seed in any::<u64>(), dim in 4usize..40, rho in 0.0f64..0.95) {
        let m = world::make_ground_truth(seed, dim, rho, 0.25).unwrap();
        let ws: Vec<&LatentCode> = Dimension::ALL.iter().map(|&d| m.weights(d)).collect();
        for w in &ws {
            prop_assert!((w.norm() - 1.0).abs() < 1e-12);
        }
        for i in 0..3 {
            for j in i + 1..3 {
                prop_assert!((ws[i].dot(ws[j]).unwrap() - rho).abs() <= 0.05);
            }
        }
    }

    #[test]
    fn ranks_form_permutations(scores in prop::collection::vec(-1e6f64..1e6, 1..300)) {
        let ranks = world::rank_transform(&scores).unwrap();
        prop_assert!(world::is_permutation(&ranks));
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] < scores[j] {
                    prop_assert!(ranks[i] < ranks[j]);
                }
            }
        }
    }

    #[test]
    fn area_id_shape(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let id = world::area_id(&LatentCode::new(vec![a, b, 0.0, 0.0]).unwrap());
        prop_assert_eq!(id.len(), 3);
        prop_assert!(id.starts_with('A'));
        prop_assert!(id[1..].chars().all(|c| ('0'..='3').contains(&c)));
    }

    #[test]
    fn pairwise_orthogonalization(seed in any::<u64>(), dim in 2usize..32) {
        let mut s = NormalStream::new(seed, 0);
        let a = LatentCode::new(random_unit(&mut s, dim)).unwrap().scale(3.0);
        let b = LatentCode::new(random_unit(&mut s, dim)).unwrap().scale(0.2);
        prop_assume!(a.cosine(&b).unwrap().abs() < 1.0 - 1e-6);
        let (unit, raw) = semantics::orthogonalize(&a, &b).unwrap();
        prop_assert!((unit.norm() - 1.0).abs() < 1e-12);
        prop_assert!(unit.dot(&b).unwrap().abs() <= 1e-12);
        prop_assert!(raw.dot(&b.normalize().unwrap()).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn conditioned_sets_are_invariant(seed in any::<u64>(), dim in 3usize..32, alpha in -3.0f64..3.0) {
        let fitted = random_boundaries(seed, dim);
        let set = semantics::orthogonalize_set(&fitted).unwrap();
        let normals: Vec<LatentCode> = set.iter().map(|b| b.normal.clone()).collect();
        prop_assert!(semantics::max_pairwise_dot(&normals).unwrap() <= 1e-8);
        let z = truncated(seed, 1, 0.5, dim);
        for a in &set {
            prop_assert!((a.normal.norm() - 1.0).abs() <= 1e-10);
            let moved = editing::walk(&z, &a.normal, alpha).unwrap();
            for b in &set {
                let delta = b.decision(&moved).unwrap() - b.decision(&z).unwrap();
                if a.dimension == b.dimension {
                    prop_assert!((delta - alpha).abs() <= 1e-9);
                } else {
                    prop_assert!(delta.abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn metric_identity(tp in 0usize..500, fp in 0usize..500, tn in 0usize..500, fn_ in 0usize..500) {
        let m = MetricsReport::from_counts(tp, fp, tn, fn_);
        prop_assert_eq!(m.support(), tp + fp + tn + fn_);
        if tp + fp > 0 {
            prop_assert!((m.precision * (tp + fp) as f64 - tp as f64).abs() <= 1e-9);
        }
        if tp + fn_ > 0 {
            prop_assert!((m.recall * (tp + fn_) as f64 - tp as f64).abs() <= 1e-9);
        }
        if m.precision + m.recall > 0.0 {
            let f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            prop_assert!((m.f1 - f1).abs() <= 1e-9);
        } else {
            prop_assert_eq!(m.f1, 0.0);
        }
        prop_assert_eq!(f1_score(m.precision, m.recall), m.f1);
    }

    #[test]
    fn walk_grid_is_symmetric(half in 1usize..8, alpha_max in 0.1f64..10.0) {
        let spec = WalkSpec { steps: 2 * half + 1, alpha_max, dimensions: vec![Dimension::Health] };
        spec.validate().unwrap();
        let a = spec.alphas();
        prop_assert_eq!(a.len(), 2 * half + 1);
        prop_assert_eq!(a[half], 0.0);
        for i in 0..a.len() {
            prop_assert!((a[i] + a[a.len() - 1 - i]).abs() <= 1e-12);
        }
        prop_assert!((a[a.len() - 1] - alpha_max).abs() <= 1e-12);
    }

    #[test]
    fn service_clamps(seed in any::<u64>(), psi in prop::option::of(-5.0f64..5.0), ai in -1e3f64..1e3, ae in -1e3f64..1e3, ah in -1e3f64..1e3) {
        let r = SynthesisRequest { seed, psi, alpha_income: ai, alpha_education: ae, alpha_health: ah };
        let applied = r.clamped();
        prop_assert!((0.0..=1.0).contains(&applied.psi));
        for v in applied.alphas.values() {
            prop_assert!((-3.0..=3.0).contains(v));
        }
        let again = SynthesisRequest {
            seed,
            psi: Some(applied.psi),
            alpha_income: applied.alphas[&Dimension::Income],
            alpha_education: applied.alphas[&Dimension::Education],
            alpha_health: applied.alphas[&Dimension::Health],
        }
        .clamped();
        prop_assert_eq!(again, applied);
    }

    #[test]
    fn latent_table_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e9f64..1e9, 5), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let mut t = LatentTable::new();
        for (i, r) in rows.iter().enumerate() {
            t.insert(format!("id{i}"), LatentCode::new(r.clone()).unwrap()).unwrap();
        }
        t.write(dir.path(), "t").unwrap();
        let back = LatentTable::read(dir.path(), "t").unwrap();
        prop_assert_eq!(back, t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn raw_and_normalized_predictions_agree(seed in any::<u64>()) {
        let mut s = NormalStream::new(seed, 5);
        let w = random_unit(&mut s, 8);
        let mut latents = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..60 {
            let z = LatentCode::new(s.normal_vec(8)).unwrap();
            let v = z.dot(&LatentCode::new(w.clone()).unwrap()).unwrap();
            if v.abs() < 0.05 {
                continue;
            }
            labels.push(if v > 0.0 { 1 } else { -1 });
            latents.push(z);
        }
        prop_assume!(labels.contains(&1) && labels.contains(&-1));
        let set = semantics::LabeledSet {
            dimension: Dimension::Income,
            fraction: 0.2,
            ids: (0..labels.len()).map(|i| i.to_string()).collect(),
            latents,
            labels,
        };
        let cfg = semantics::SvmConfig { max_iter: 5000, ..Default::default() };
        let b = semantics::fit_boundary(&set, semantics::LatentSource::HiddenTrue, &cfg).unwrap();
        prop_assert!((b.normal.norm() - 1.0).abs() <= 1e-10);
        for z in &set.latents {
            let raw = semantics::sign(b.raw_normal.dot(z).unwrap() + b.raw_offset);
            prop_assert_eq!(raw, b.predict(z).unwrap());
        }
    }

    #[test]
    fn edits_render_deterministically(seed in any::<u64>(), ai in -3.0f64..3.0, ah in -3.0f64..3.0) {
        let c = GeneratorConstants::shipped();
        let set = semantics::orthogonalize_set(&random_boundaries(seed, 16)).unwrap();
        let z = truncated(seed, 2, 0.5, 16);
        let alphas = BTreeMap::from([(Dimension::Income, ai), (Dimension::Health, ah)]);
        let a = editing::render_edit(&z, &alphas, &set, &c).unwrap();
        let b = editing::render_edit(&z, &alphas, &set, &c).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }
}

#[test]
fn pixels_stay_in_unit_range() {
    let c = GeneratorConstants::shipped();
    for (i, z) in sample_latents(&SamplingConfig::new(41, 1000, 0.5, 16).unwrap()).iter().enumerate() {
        let img = scenegen::generate(z, &c).unwrap();
        assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)), "latent {i}");
    }
}

#[test]
fn small_steps_change_little() {
    let c = GeneratorConstants::shipped();
    let mut s = NormalStream::new(77, 0);
    let mut total = 0.0;
    for _ in 0..100 {
        let z = LatentCode::new(s.normal_vec(16).into_iter().map(|x| x * 0.5).collect()).unwrap();
        let d = LatentCode::new(random_unit(&mut s, 16)).unwrap();
        let moved = z.add_scaled(&d, 1e-3).unwrap();
        total += scenegen::mean_abs_diff(&scenegen::generate(&z, &c).unwrap(), &scenegen::generate(&moved, &c).unwrap());
    }
    assert!(total / 100.0 < CONTINUITY_L1_BOUND, "mean L1 {}", total / 100.0);
}

#[test]
fn noiseless_ranks_follow_projection() {
    let dir = tempfile::tempdir().unwrap();
    let model = world::make_ground_truth(3, 16, 0.0, 0.0).unwrap();
    let sampling = SamplingConfig::new(8, 120, 0.5, 16).unwrap();
    let c = GeneratorConstants::shipped();
    let manifest = world::build_dataset(120, &sampling, &model, &c, 1, dir.path()).unwrap();
    let hidden = world::Dataset::open(dir.path()).unwrap().hidden_latents().unwrap();
    for d in Dimension::ALL {
        let proj: Vec<f64> = manifest
            .entries
            .iter()
            .map(|e| model.weights(d).dot(hidden.get(&e.image_id).unwrap()).unwrap())
            .collect();
        let expected = world::rank_transform(&proj).unwrap();
        let ranks: Vec<u32> = manifest.entries.iter().map(|e| e.record.rank(d)).collect();
        assert_eq!(ranks, expected, "{d}");
    }
}
