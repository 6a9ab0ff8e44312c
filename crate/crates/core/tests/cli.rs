use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use latentwalk::pipeline::{Seeds, Stage};
use latentwalk::store;

const SMALL: [&str; 14] = [
    "--set",
    "n=300",
    "--set",
    "curation.label_count=150",
    "--set",
    "inversion.eval_subset_size=50",
    "--set",
    "inversion.encoder_pairs=200",
    "--set",
    "inversion.optimize.steps=40",
    "--set",
    "inversion.optimize.restarts=1",
    "--set",
    "grid.multi_count=2",
];

fn cli(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentwalk"))
        .arg("--output")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn small(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<&str> = SMALL.to_vec();
    args.push(cmd);
    args.extend_from_slice(extra);
    cli(&args, out)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["fit"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset manifest not found"), "{}", stderr(&o));

    let o = cli(&["--set", "semantics.fraction=0.9", "fit"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = cli(&["--set", "nonsense", "fit"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = cli(&["--seed-override", "galaxy=3", "fit"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = cli(&["--config", "/nonexistent/config.toml", "fit"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = cli(&["no-such-command"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = cli(&["generate", "--seed", "1", "--psi", "2", "--out", "x.png"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let o = cli(&["grid", "--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("--kind"));
    let o = cli(&["serve", "--artifacts"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = cli(&["serve", "--artifacts", dir.path().to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_config_matches_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let a = cli(&["--config", shipped.to_str().unwrap(), "config"], dir.path());
    let b = cli(&["config"], dir.path());
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

fn stage_of(rel: &str) -> Stage {
    if let Some(name) = rel.strip_prefix("stages/") {
        let name = name.trim_end_matches(".json");
        return *Stage::ALL.iter().find(|s| s.as_str() == name).unwrap();
    }
    *Stage::ALL
        .iter()
        .find(|s| s.outputs().iter().any(|o| rel == *o || rel.starts_with(&format!("{o}/"))))
        .unwrap_or_else(|| panic!("unclassified artifact {rel}"))
}

fn changed_stages(a: &BTreeMap<String, String>, b: &BTreeMap<String, String>) -> Vec<Stage> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut stages: Vec<Stage> = keys
        .into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| stage_of(k))
        .collect();
    stages.sort();
    stages.dedup();
    stages
}

#[test]
fn seed_override_changes_only_downstream() {
    let root = tempfile::tempdir().unwrap();
    let base = root.path().join("base");
    let o = small("pipeline", &base, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let base_digests = store::artifact_tree_digests(&base).unwrap();

    for (seed, value) in [("split", "12"), ("grid", "6"), ("subset", "18")] {
        let out = root.path().join(seed);
        let arg = format!("{seed}={value}");
        let o = small("pipeline", &out, &["--seed-override", &arg]);
        assert!(o.status.success(), "{}", stderr(&o));
        let digests = store::artifact_tree_digests(&out).unwrap();
        let first = Seeds::first_stage(seed).unwrap();
        let changed = changed_stages(&base_digests, &digests);
        assert!(changed.contains(&first), "{seed}: {changed:?}");
        assert!(changed.iter().all(|s| *s >= first), "{seed}: upstream changed {changed:?}");
    }

    // two runs of the same config agree
    let again = root.path().join("again");
    assert!(small("pipeline", &again, &[]).status.success());
    assert_eq!(store::artifact_tree_digests(&again).unwrap(), base_digests);
}

#[test]
fn pipeline_outputs_have_table_shape() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("a");
    let o = small("pipeline", &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for d in ["income", "education", "health"] {
        assert!(out.join(format!("boundaries/hidden-true/{d}.json")).is_file());
        assert!(out.join(format!("boundaries/hidden-true/fitted/{d}.json")).is_file());
    }
    let table = std::fs::read_to_string(out.join("metrics/by_method.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "dimension,inversion_method,precision,recall,f1");
    assert_eq!(lines.len(), 1 + 3 * 3);
    for name in ["grids/image1/grid.png", "grids/image1/grid.json", "grids/image2/grid.png", "report/summary.txt"] {
        assert!(out.join(name).is_file(), "{name}");
    }

    let report = cli(&SMALL.iter().copied().chain(["report"]).collect::<Vec<_>>(), &out);
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("planted_cosine"));

    let enc_only = root.path().join("b");
    let o = small("pipeline", &enc_only, &["--set", "inversion.methods=[\"encode\"]"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(enc_only.join("metrics/by_method.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3);
    assert!(table.lines().skip(1).all(|l| l.split(',').nth(1) == Some("encode")));
}

#[test]
fn walk_and_single_grids() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("a");
    for stage in ["gen-world", "gen-dataset", "fit", "orthogonalize"] {
        let o = small(stage, &out, &[]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let o = small("walk", &out, &["--seed", "3", "--dimension", "income", "--steps", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let walk_dir = out.join("walks/income_seed3");
    let manifest: serde_json::Value = store::read_json(&walk_dir.join("grid.json")).unwrap();
    assert_eq!(manifest["cols"], 5);
    assert_eq!(manifest["rows"], 1);

    let o = small("grid", &out, &["--kind", "single"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("grids/image1/grid.png").is_file());
    assert!(!out.join("grids/image2").exists());

    let o = small("walk", &out, &["--seed", "3", "--dimension", "wealth"]);
    assert_eq!(o.status.code(), Some(1));
}
