use std::path::Path;

use latentwalk::latent::{sample_latents, NormalStream, SamplingConfig};
use latentwalk::scenegen::{self, decode_params, facade_brightness, GeneratorConstants, RasterImage};
use latentwalk::store;
use latentwalk::world::{self, Dataset, Dimension, GroundTruthModel, RECORDS_HEADER};
use latentwalk::Error;

fn build(dir: &Path, n: usize) -> Dataset {
    let model = world::make_ground_truth(7, 16, 0.3, 0.25).unwrap();
    let sampling = SamplingConfig::new(1, n, 0.5, 16).unwrap();
    world::build_dataset(n, &sampling, &model, &GeneratorConstants::shipped(), 3, dir).unwrap();
    Dataset::open(dir).unwrap()
}

#[test]
fn hundred_entry_build() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path(), 100);
    assert_eq!(ds.manifest.n, 100);
    assert_eq!(ds.len(), 100);
    for d in Dimension::ALL {
        let ranks: Vec<u32> = ds.manifest.entries.iter().map(|e| e.record.rank(d)).collect();
        assert!(world::is_permutation(&ranks), "{d}");
    }
    for e in &ds.manifest.entries {
        assert!(ds.resolve(&e.image).is_file(), "{}", e.image);
    }
    let text = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "image_id,area_id,income_rank,education_rank,health_rank");
    assert_eq!(RECORDS_HEADER.join(","), text.lines().next().unwrap());
    assert_eq!(text.lines().count(), 101);
    let model: GroundTruthModel = ds.ground_truth().unwrap();
    assert_eq!(model, world::make_ground_truth(7, 16, 0.3, 0.25).unwrap());
    assert_eq!(ds.hidden_latents().unwrap().len(), 100);
}

#[test]
fn rebuild_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    build(a.path(), 60);
    build(b.path(), 60);
    let da = store::artifact_tree_digests(a.path()).unwrap();
    let db = store::artifact_tree_digests(b.path()).unwrap();
    assert_eq!(da.len(), 60 + 6);
    assert_eq!(da, db);
    for name in ["manifest.json", "images/img_00007.png", "hidden/latents.bin"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap()
        );
    }
}

#[test]
fn images_match_hidden_latents() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path(), 20);
    let hidden = ds.hidden_latents().unwrap();
    let c = ds.generator().unwrap();
    for e in &ds.manifest.entries {
        let expected = scenegen::generate(hidden.get(&e.image_id).unwrap(), &c).unwrap();
        assert_eq!(ds.load_image(e).unwrap().to_bytes(), expected.to_bytes());
        assert_eq!(e.record.area_id, world::area_id(hidden.get(&e.image_id).unwrap()));
    }
}

#[test]
fn external_records_replace_synthetic_ones() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path(), 30);
    let mut records = ds.manifest.records();
    records.reverse();
    for (i, r) in records.iter_mut().enumerate() {
        r.income_rank = i as u32 + 1;
    }
    world::write_records(&dir.path().join("records.csv"), &records).unwrap();
    let loaded = Dataset::open(dir.path()).unwrap().records().unwrap();
    assert_eq!(loaded[0].image_id, "img_00000");
    assert_eq!(loaded[0].income_rank, 30);
    assert_eq!(loaded[29].income_rank, 1);

    std::fs::write(dir.path().join("records.csv"), "id,rank\nimg_00000,1\n").unwrap();
    assert!(matches!(ds.records(), Err(Error::Malformed { .. })));

    let mut dup = ds.manifest.records();
    dup[1].health_rank = dup[0].health_rank;
    world::write_records(&dir.path().join("records.csv"), &dup).unwrap();
    assert!(matches!(ds.records(), Err(Error::Malformed { .. })));
}

#[test]
fn missing_manifest_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let err = Dataset::open(dir.path()).unwrap_err();
    assert!(err.to_string().starts_with("dataset manifest not found"), "{err}");
}

fn brightness_samples(seed: u64, n: usize) -> Vec<(RasterImage, bool)> {
    let c = GeneratorConstants::shipped();
    sample_latents(&SamplingConfig::new(seed, n, 0.5, 16).unwrap())
        .iter()
        .map(|z| {
            let p = decode_params(z, &c).unwrap();
            (scenegen::render(&p), facade_brightness(p.facade_tone) > 0.5)
        })
        .collect()
}

#[test]
fn curation_learns_separable_labels() {
    let samples = brightness_samples(21, 600);
    let keep = samples.iter().filter(|(_, k)| *k).count();
    assert!(keep > 60 && keep < 540, "unbalanced labels: {keep}");
    let filter = world::fit_curation_filter(&samples).unwrap();
    let correct = samples.iter().filter(|(img, k)| filter.keeps(img) == *k).count();
    assert!(correct as f64 / samples.len() as f64 >= 0.99, "accuracy {correct}/600");
}

#[test]
fn curation_on_random_labels_is_chance() {
    let mut s = NormalStream::new(5, 0);
    let samples: Vec<(RasterImage, bool)> = brightness_samples(22, 800)
        .into_iter()
        .map(|(img, _)| (img, s.uniform() < 0.5))
        .collect();
    let (train, held) = samples.split_at(400);
    let filter = world::fit_curation_filter(train).unwrap();
    let correct = held.iter().filter(|(img, k)| filter.keeps(img) == *k).count();
    let acc = correct as f64 / held.len() as f64;
    assert!((acc - 0.5).abs() <= 0.1, "held-out accuracy {acc}");
}

#[test]
fn apply_filter_contracts() {
    let root = tempfile::tempdir().unwrap();
    let ds = build(&root.path().join("dataset"), 300);
    let c = ds.generator().unwrap();
    let hidden = ds.hidden_latents().unwrap();
    let bright = |id: &str| facade_brightness(decode_params(hidden.get(id).unwrap(), &c).unwrap().facade_tone) > 0.5;
    let samples: Vec<(RasterImage, bool)> = ds
        .manifest
        .entries
        .iter()
        .map(|e| (ds.load_image(e).unwrap(), bright(&e.image_id)))
        .collect();
    let filter = world::fit_curation_filter(&samples).unwrap();
    let out = root.path().join("curated");

    let all = world::apply_filter(&filter, &ds, 0.0, &out).unwrap();
    assert_eq!(all.n, ds.len());
    assert_eq!(all.records(), ds.records().unwrap());

    let clamped = world::apply_filter(&filter, &ds, -4.0, &out).unwrap();
    assert_eq!(clamped.entries.len(), ds.len());
    assert!(world::apply_filter(&filter, &ds, 1.5, &out).unwrap().n <= ds.len());

    let m = world::apply_filter(&filter, &ds, 0.5, &out).unwrap();
    world::write_filtered(&m, &out).unwrap();
    let curated = Dataset::open(&out).unwrap();
    assert_eq!(curated.len(), m.n);
    for d in Dimension::ALL {
        let ranks: Vec<u32> = curated.records().unwrap().iter().map(|r| r.rank(d)).collect();
        assert!(world::is_permutation(&ranks));
    }
    // survivors keep their relative order on every rank column
    let originals = ds.records().unwrap();
    let recs = curated.records().unwrap();
    for w in recs.windows(2) {
        let a = originals.iter().find(|r| r.image_id == w[0].image_id).unwrap();
        let b = originals.iter().find(|r| r.image_id == w[1].image_id).unwrap();
        assert_eq!(a.income_rank < b.income_rank, w[0].income_rank < w[1].income_rank);
    }
    // survivor set matches the label-positive set
    let positives: Vec<String> = ds
        .manifest
        .entries
        .iter()
        .filter(|e| bright(&e.image_id))
        .map(|e| e.image_id.clone())
        .collect();
    let kept: Vec<String> = m.entries.iter().map(|e| e.image_id.clone()).collect();
    let mismatched = ds
        .manifest
        .entries
        .iter()
        .filter(|e| positives.contains(&e.image_id) != kept.contains(&e.image_id))
        .count();
    assert!(mismatched as f64 <= 0.01 * ds.len() as f64, "{mismatched} mismatches");
    for e in &curated.manifest.entries {
        assert!(curated.load_image(e).is_ok());
    }
    assert_eq!(curated.hidden_latents().unwrap().len(), curated.len());
}
