//! Declarative end-to-end pipeline: configuration, stage functions and the
//! artifact layout they share.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! world/{ground_truth,generator}.json
//! dataset/            manifest.json, records.csv, images/, hidden/
//! curated/            filter.json, manifest.json, records.csv
//! inversions/         encoder.json, subset.json, <method>/{results.jsonl,latents.*}
//! boundaries/<source>/fitted/<dim>.json, <dim>.json, conditioning.json
//! metrics/            by_method.csv, validation.csv, validation.json
//! comparison/         report.json, report.txt
//! grids/image1, grids/image2
//! report/             summary.json, summary.txt
//! stages/<stage>.json output digests per stage
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compare::{self, CompareConfig, InversionOutputs, InversionRun, MetricsRow};
use crate::editing::{self, WalkSpec, SINGLE_IMAGE_ROWS};
use crate::error::{Error, Result};
use crate::inversion::{Encoder, InversionMethod, InversionResult, OptimizeConfig};
use crate::latent::{sample_latents, SamplingConfig, DEFAULT_DIM, DEFAULT_PSI};
use crate::scenegen::{decode_params, GeneratorConstants, DEFAULT_GENERATOR_SEED};
use crate::semantics::{self, LatentSource, SemanticBoundary, SvmConfig};
use crate::store::{self, LatentTable};
use crate::world::{self, Dataset, DeprivationRecord, Dimension, GroundTruthModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub generator: u64,
    pub world: u64,
    pub sampling: u64,
    pub noise: u64,
    pub subset: u64,
    pub optimize: u64,
    pub split: u64,
    pub grid: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            generator: DEFAULT_GENERATOR_SEED,
            world: 7,
            sampling: 1,
            noise: 3,
            subset: 17,
            optimize: 0,
            split: 11,
            grid: 5,
        }
    }
}

impl Seeds {
    /// Earliest stage whose outputs depend on the named seed.
    pub fn first_stage(name: &str) -> Option<Stage> {
        Some(match name {
            "generator" | "world" => Stage::GenWorld,
            "sampling" | "noise" => Stage::GenDataset,
            "subset" | "optimize" => Stage::Invert,
            "split" => Stage::Fit,
            "grid" => Stage::Grid,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub noise_sigma: f64,
    pub target_rho: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        WorldSection {
            noise_sigma: world::DEFAULT_NOISE_SIGMA,
            target_rho: world::DEFAULT_TARGET_RHO,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationSection {
    /// Images labeled by the keep rule to train the filter.
    pub label_count: usize,
    pub threshold: f64,
    /// Run later stages on the curated dataset instead of the full one.
    pub use_curated: bool,
}

impl Default for CurationSection {
    fn default() -> Self {
        CurationSection {
            label_count: 1000,
            threshold: 0.5,
            use_curated: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemanticsSection {
    pub fraction: f64,
    /// Latent sources boundaries are fitted for.
    pub sources: Vec<String>,
    /// Source whose conditioned boundaries drive grids and the service.
    pub edit_source: String,
    /// Conditioning order.
    pub order: Vec<Dimension>,
    pub svm: SvmConfig,
}

impl Default for SemanticsSection {
    fn default() -> Self {
        SemanticsSection {
            fraction: semantics::DEFAULT_FRACTION,
            sources: vec!["hidden-true".into()],
            edit_source: "hidden-true".into(),
            order: Dimension::ALL.to_vec(),
            svm: SvmConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionSection {
    pub methods: Vec<String>,
    pub eval_subset_size: usize,
    pub encoder_lambda: f64,
    pub encoder_pairs: usize,
    pub refine_rounds: usize,
    pub optimize: OptimizeConfig,
}

impl Default for InversionSection {
    fn default() -> Self {
        let c = CompareConfig::default();
        InversionSection {
            methods: ["optimize", "encode", "encode_refined"].map(String::from).to_vec(),
            eval_subset_size: c.eval_subset_size,
            encoder_lambda: c.encoder_lambda,
            encoder_pairs: c.encoder_pairs,
            refine_rounds: c.refine_rounds,
            optimize: OptimizeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub alpha_max: f64,
    pub steps: usize,
    pub single_rows: Vec<Dimension>,
    pub multi_dimension: Dimension,
    pub multi_count: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            alpha_max: editing::DEFAULT_ALPHA_MAX,
            steps: editing::DEFAULT_STEPS,
            single_rows: SINGLE_IMAGE_ROWS.to_vec(),
            multi_dimension: Dimension::Health,
            multi_count: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub dim: usize,
    pub n: usize,
    pub psi: f64,
    pub seeds: Seeds,
    pub world: WorldSection,
    pub curation: CurationSection,
    pub semantics: SemanticsSection,
    pub inversion: InversionSection,
    pub grid: GridSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("artifacts"),
            dim: DEFAULT_DIM,
            n: 2000,
            psi: DEFAULT_PSI,
            seeds: Seeds::default(),
            world: WorldSection::default(),
            curation: CurationSection::default(),
            semantics: SemanticsSection::default(),
            inversion: InversionSection::default(),
            grid: GridSection::default(),
        }
    }
}

/// Parses a TOML value literal, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets a dotted `key` inside a TOML table, creating tables as needed.
pub fn apply_override(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("malformed override key `{key}`")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            Error::InvalidConfig(format!("override `{key}`: `{part}` is not a table"))
        })?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw));
    Ok(())
}

/// Splits `key=value`.
pub fn split_assignment(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got `{s}`")))
}

impl PipelineConfig {
    /// Parses TOML text, applies `key=value` overrides and validates.
    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        SamplingConfig::new(self.seeds.sampling, self.n.max(1), self.psi, self.dim)?;
        if self.n < 10 {
            return Err(Error::InvalidConfig(format!("n = {} is below 10", self.n)));
        }
        if !(0.0..1.0).contains(&self.world.target_rho) {
            return Err(Error::InvalidConfig("world.target_rho must lie in [0, 1)".into()));
        }
        if !(self.world.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("world.noise_sigma must be >= 0".into()));
        }
        if !(self.semantics.fraction > 0.0 && self.semantics.fraction <= 0.5) {
            return Err(Error::InvalidConfig("semantics.fraction must lie in (0, 0.5]".into()));
        }
        self.sources()?;
        self.edit_source()?;
        self.methods()?;
        self.semantics.svm.validate()?;
        self.inversion.optimize.validate()?;
        let mut order = self.semantics.order.clone();
        order.sort();
        order.dedup();
        if order.len() != self.semantics.order.len() || !(2..=3).contains(&order.len()) {
            return Err(Error::InvalidConfig(
                "semantics.order must list 2 or 3 distinct dimensions".into(),
            ));
        }
        for d in self.grid.single_rows.iter().chain([&self.grid.multi_dimension]) {
            if !self.semantics.order.contains(d) {
                return Err(Error::InvalidConfig(format!(
                    "grid dimension {d} is not in semantics.order"
                )));
            }
        }
        if self.grid.multi_count == 0 {
            return Err(Error::InvalidConfig("grid.multi_count must be at least 1".into()));
        }
        self.walk_spec(self.grid.single_rows.clone()).validate()?;
        if self.inversion.eval_subset_size == 0 || self.inversion.eval_subset_size > self.n {
            return Err(Error::InvalidConfig(format!(
                "inversion.eval_subset_size {} must lie in 1..={}",
                self.inversion.eval_subset_size, self.n
            )));
        }
        let min_subset = (10.0 / self.semantics.fraction).ceil() as usize;
        if self.inversion.eval_subset_size < min_subset {
            return Err(Error::InvalidConfig(format!(
                "inversion.eval_subset_size {} is below {min_subset}, the smallest set labelable at fraction {}",
                self.inversion.eval_subset_size, self.semantics.fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.curation.threshold) {
            return Err(Error::InvalidConfig("curation.threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<InversionMethod>> {
        compare::parse_methods(&self.inversion.methods)
    }

    pub fn sources(&self) -> Result<Vec<LatentSource>> {
        let mut out: Vec<LatentSource> = Vec::new();
        for s in &self.semantics.sources {
            let src: LatentSource = s.parse()?;
            if !out.contains(&src) {
                out.push(src);
            }
        }
        Ok(out)
    }

    pub fn edit_source(&self) -> Result<LatentSource> {
        self.semantics.edit_source.parse()
    }

    pub fn walk_spec(&self, dimensions: Vec<Dimension>) -> WalkSpec {
        WalkSpec {
            steps: self.grid.steps,
            alpha_max: self.grid.alpha_max,
            dimensions,
        }
    }

    pub fn compare_config(&self) -> CompareConfig {
        CompareConfig {
            eval_subset_size: self.inversion.eval_subset_size,
            subset_seed: self.seeds.subset,
            encoder_lambda: self.inversion.encoder_lambda,
            encoder_pairs: self.inversion.encoder_pairs,
            refine_rounds: self.inversion.refine_rounds,
            optimize: OptimizeConfig {
                seed: self.seeds.optimize,
                ..self.inversion.optimize.clone()
            },
            label_fraction: self.semantics.fraction,
            split_seed: self.seeds.split,
            svm: self.semantics.svm.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenWorld,
    GenDataset,
    Curate,
    Invert,
    Fit,
    Orthogonalize,
    Evaluate,
    CompareInversions,
    Grid,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::GenWorld,
        Stage::GenDataset,
        Stage::Curate,
        Stage::Invert,
        Stage::Fit,
        Stage::Orthogonalize,
        Stage::Evaluate,
        Stage::CompareInversions,
        Stage::Grid,
        Stage::Report,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::GenWorld => "gen-world",
            Stage::GenDataset => "gen-dataset",
            Stage::Curate => "curate",
            Stage::Invert => "invert",
            Stage::Fit => "fit",
            Stage::Orthogonalize => "orthogonalize",
            Stage::Evaluate => "evaluate",
            Stage::CompareInversions => "compare-inversions",
            Stage::Grid => "grid",
            Stage::Report => "report",
        }
    }

    /// Directories (relative to the output dir) this stage writes.
    pub fn outputs(&self) -> &'static [&'static str] {
        match self {
            Stage::GenWorld => &["world"],
            Stage::GenDataset => &["dataset"],
            Stage::Curate => &["curated"],
            Stage::Invert => &["inversions"],
            Stage::Fit => &["boundaries"],
            Stage::Orthogonalize => &["boundaries"],
            Stage::Evaluate => &["metrics/validation.csv", "metrics/validation.json"],
            Stage::CompareInversions => &["comparison", "metrics/by_method.csv"],
            Stage::Grid => &["grids"],
            Stage::Report => &["report"],
        }
    }
}

/// Per-stage metadata: digests of everything the stage wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub outputs: BTreeMap<String, String>,
    pub elapsed_secs: f64,
}

/// Paths of the artifact tree.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn world(&self) -> PathBuf {
        self.root.join("world")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn curated(&self) -> PathBuf {
        self.root.join("curated")
    }

    pub fn inversions(&self) -> PathBuf {
        self.root.join("inversions")
    }

    pub fn boundaries(&self, source: LatentSource) -> PathBuf {
        self.root.join("boundaries").join(source.as_str())
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }

    pub fn comparison(&self) -> PathBuf {
        self.root.join("comparison")
    }

    pub fn grids(&self) -> PathBuf {
        self.root.join("grids")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn stages(&self) -> PathBuf {
        self.root.join("stages")
    }
}

fn require(path: &Path, what: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::NotFound {
            what,
            path: path.to_path_buf(),
        })
    }
}

/// Runs pipeline stages against one output directory.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub layout: Layout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetFile {
    pub seed: u64,
    pub ids: Vec<String>,
}

#[derive(Serialize)]
struct ResultLine<'a> {
    image_id: &'a str,
    #[serde(flatten)]
    result: &'a InversionResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OwnedResultLine {
    image_id: String,
    #[serde(flatten)]
    result: InversionResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditioningInfo {
    pub order: Vec<Dimension>,
    pub max_pairwise_dot: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationSummary {
    pub labeled: usize,
    pub labeled_keep: usize,
    pub training_accuracy: f64,
    pub threshold: f64,
    pub kept: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub dimension: Dimension,
    pub latent_source: LatentSource,
    pub metrics: semantics::MetricsReport,
    /// Cosine between the fitted normal and the planted direction.
    pub planted_cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub dim: usize,
    pub psi: f64,
    pub validation: Vec<ValidationRow>,
    pub by_method: Vec<MetricsRow>,
    pub inversion: Vec<compare::MethodSummary>,
    pub conditioning: BTreeMap<String, ConditioningInfo>,
    pub grids: BTreeMap<String, f64>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        let layout = Layout::new(config.output_dir.clone());
        Pipeline { config, layout }
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::ALL {
            self.run(stage)?;
        }
        Ok(())
    }

    pub fn run(&self, stage: Stage) -> Result<StageRecord> {
        let start = Instant::now();
        log::info!("stage {}", stage.as_str());
        match stage {
            Stage::GenWorld => self.gen_world()?,
            Stage::GenDataset => self.gen_dataset()?,
            Stage::Curate => self.curate()?,
            Stage::Invert => self.invert()?,
            Stage::Fit => self.fit()?,
            Stage::Orthogonalize => self.orthogonalize()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::CompareInversions => self.compare_inversions()?,
            Stage::Grid => self.grids()?,
            Stage::Report => self.report()?,
        }
        let mut outputs = BTreeMap::new();
        for rel in stage.outputs() {
            let path = self.layout.root.join(rel);
            if path.is_dir() {
                for (k, v) in store::artifact_tree_digests(&path)? {
                    outputs.insert(format!("{rel}/{k}"), v);
                }
            } else if path.is_file() {
                outputs.insert(rel.to_string(), store::artifact_file_digest(&path)?);
            }
        }
        let record = StageRecord {
            stage,
            outputs,
            elapsed_secs: start.elapsed().as_secs_f64(),
        };
        store::write_json(
            &self.layout.stages().join(format!("{}.json", stage.as_str())),
            &record,
        )?;
        Ok(record)
    }

    fn constants(&self) -> Result<GeneratorConstants> {
        let path = self.layout.world().join("generator.json");
        require(&path, "generator constants")?;
        let c: GeneratorConstants = store::read_json(&path)?;
        c.validate().map_err(|e| Error::malformed(&path, e))?;
        Ok(c)
    }

    fn ground_truth(&self) -> Result<GroundTruthModel> {
        let path = self.layout.world().join("ground_truth.json");
        require(&path, "ground truth model")?;
        store::read_json(&path)
    }

    /// The dataset later stages run on.
    pub fn active_dataset(&self) -> Result<Dataset> {
        if self.config.curation.use_curated {
            Dataset::open(&self.layout.curated())
        } else {
            Dataset::open(&self.layout.dataset())
        }
    }

    pub fn gen_world(&self) -> Result<()> {
        let c = &self.config;
        let constants = GeneratorConstants::from_seed(c.seeds.generator, c.dim)?;
        let model = world::make_ground_truth(c.seeds.world, c.dim, c.world.target_rho, c.world.noise_sigma)?;
        store::write_json(&self.layout.world().join("generator.json"), &constants)?;
        store::write_json(&self.layout.world().join("ground_truth.json"), &model)
    }

    pub fn gen_dataset(&self) -> Result<()> {
        let c = &self.config;
        let constants = self.constants()?;
        let model = self.ground_truth()?;
        let dir = self.layout.dataset();
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let sampling = SamplingConfig::new(c.seeds.sampling, c.n, c.psi, c.dim)?;
        world::build_dataset(c.n, &sampling, &model, &constants, c.seeds.noise, &dir)?;
        Ok(())
    }

    pub fn curate(&self) -> Result<()> {
        let dataset = Dataset::open(&self.layout.dataset())?;
        let constants = dataset.generator()?;
        let hidden = dataset.hidden_latents()?;
        let count = self.config.curation.label_count.min(dataset.len());
        let mut samples = Vec::with_capacity(count);
        for e in &dataset.manifest.entries[..count] {
            let z = hidden.get(&e.image_id).expect("hidden table covers the manifest");
            let keep = world::obstruction_free(&decode_params(z, &constants)?);
            samples.push((dataset.load_image(e)?, keep));
        }
        let mut filter = world::fit_curation_filter(&samples)?;
        filter.threshold = self.config.curation.threshold;
        let correct = samples.iter().filter(|(img, k)| filter.keeps(img) == *k).count();
        let out = self.layout.curated();
        let manifest = world::apply_filter(&filter, &dataset, filter.threshold, &out)?;
        world::write_filtered(&manifest, &out)?;
        store::write_json(&out.join("filter.json"), &filter)?;
        store::write_json(
            &out.join("summary.json"),
            &CurationSummary {
                labeled: samples.len(),
                labeled_keep: samples.iter().filter(|(_, k)| *k).count(),
                training_accuracy: correct as f64 / samples.len() as f64,
                threshold: filter.threshold,
                kept: manifest.n,
                total: dataset.len(),
            },
        )
    }

    pub fn invert(&self) -> Result<()> {
        let dataset = self.active_dataset()?;
        let outputs = compare::run_inversions(&dataset, &self.config.methods()?, &self.config.compare_config())?;
        let dir = self.layout.inversions();
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        store::write_json(
            &dir.join("subset.json"),
            &SubsetFile {
                seed: self.config.seeds.subset,
                ids: outputs.subset_ids.clone(),
            },
        )?;
        if let Some(enc) = &outputs.encoder {
            store::write_json(&dir.join("encoder.json"), enc)?;
        }
        for run in &outputs.runs {
            let mdir = dir.join(run.method.as_str());
            let mut text = String::new();
            for (id, r) in &run.results {
                text.push_str(&serde_json::to_string(&ResultLine {
                    image_id: id,
                    result: r,
                })?);
                text.push('\n');
            }
            store::write_bytes(&mdir.join("results.jsonl"), text.as_bytes())?;
            run.latents()?.write(&mdir, world::LATENT_STEM)?;
        }
        Ok(())
    }

    /// Reads the inversion stage's outputs back.
    pub fn load_inversions(&self) -> Result<InversionOutputs> {
        let dir = self.layout.inversions();
        let subset_path = dir.join("subset.json");
        require(&subset_path, "inversion outputs")?;
        let subset: SubsetFile = store::read_json(&subset_path)?;
        let enc_path = dir.join("encoder.json");
        let encoder: Option<Encoder> = if enc_path.exists() {
            Some(store::read_json(&enc_path)?)
        } else {
            None
        };
        let mut runs = Vec::new();
        for method in self.config.methods()? {
            let path = dir.join(method.as_str()).join("results.jsonl");
            if !path.exists() {
                return Err(Error::MissingLatents {
                    source_name: method.to_string(),
                    detail: format!("{} not found; run `invert` first", path.display()),
                });
            }
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut results = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let row: OwnedResultLine =
                    serde_json::from_str(line).map_err(|e| Error::malformed(&path, e))?;
                results.push((row.image_id, row.result));
            }
            runs.push(InversionRun { method, results });
        }
        Ok(InversionOutputs {
            subset_ids: subset.ids,
            encoder,
            runs,
        })
    }

    /// Records and latents that boundaries for `source` are fitted on.
    pub fn semantic_inputs(&self, source: LatentSource) -> Result<(Vec<DeprivationRecord>, LatentTable)> {
        let dataset = self.active_dataset()?;
        match source {
            LatentSource::HiddenTrue => Ok((dataset.records()?, dataset.hidden_latents()?)),
            LatentSource::Inverted(method) => {
                let dir = self.layout.inversions();
                let subset_path = dir.join("subset.json");
                if !subset_path.exists() {
                    return Err(Error::MissingLatents {
                        source_name: source.to_string(),
                        detail: format!("{} not found; run `invert` first", subset_path.display()),
                    });
                }
                let subset: SubsetFile = store::read_json(&subset_path)?;
                let latents = LatentTable::read(&dir.join(method.as_str()), world::LATENT_STEM).map_err(|e| {
                    Error::MissingLatents {
                        source_name: source.to_string(),
                        detail: e.to_string(),
                    }
                })?;
                Ok((compare::subset_records(&dataset.records()?, &subset.ids)?, latents))
            }
        }
    }

    fn fitted_path(&self, source: LatentSource, dim: Dimension) -> PathBuf {
        self.layout.boundaries(source).join("fitted").join(format!("{dim}.json"))
    }

    fn conditioned_path(&self, source: LatentSource, dim: Dimension) -> PathBuf {
        self.layout.boundaries(source).join(format!("{dim}.json"))
    }

    fn labeled(&self, source: LatentSource, dim: Dimension) -> Result<(semantics::LabeledSet, semantics::LabeledSet)> {
        let (records, latents) = self.semantic_inputs(source)?;
        semantics::label_extremes(
            &records,
            &latents,
            dim,
            self.config.semantics.fraction,
            source,
            self.config.seeds.split,
        )
    }

    pub fn fit(&self) -> Result<()> {
        for source in self.config.sources()? {
            let (records, latents) = self.semantic_inputs(source)?;
            for &dim in &self.config.semantics.order {
                let (train, val) = semantics::label_extremes(
                    &records,
                    &latents,
                    dim,
                    self.config.semantics.fraction,
                    source,
                    self.config.seeds.split,
                )?;
                let mut b = semantics::fit_boundary(&train, source, &self.config.semantics.svm)?;
                b.metrics = Some(semantics::evaluate(&b, &val)?);
                store::write_json(&self.fitted_path(source, dim), &b)?;
            }
        }
        Ok(())
    }

    pub fn load_fitted(&self, source: LatentSource) -> Result<Vec<SemanticBoundary>> {
        self.config
            .semantics
            .order
            .iter()
            .map(|&dim| {
                let path = self.fitted_path(source, dim);
                require(&path, "fitted boundary")?;
                store::read_json(&path)
            })
            .collect()
    }

    pub fn load_conditioned(&self, source: LatentSource) -> Result<Vec<SemanticBoundary>> {
        load_boundary_set(&self.layout.boundaries(source), &self.config.semantics.order)
    }

    pub fn orthogonalize(&self) -> Result<()> {
        for source in self.config.sources()? {
            let fitted = self.load_fitted(source)?;
            let conditioned = semantics::orthogonalize_set(&fitted)?;
            for b in &conditioned {
                store::write_json(&self.conditioned_path(source, b.dimension), b)?;
            }
            let normals: Vec<_> = conditioned.iter().map(|b| b.normal.clone()).collect();
            store::write_json(
                &self.layout.boundaries(source).join("conditioning.json"),
                &ConditioningInfo {
                    order: self.config.semantics.order.clone(),
                    max_pairwise_dot: semantics::max_pairwise_dot(&normals)?,
                },
            )?;
        }
        Ok(())
    }

    fn validation_rows(&self) -> Result<Vec<ValidationRow>> {
        let model = self.ground_truth()?;
        let mut rows = Vec::new();
        for source in self.config.sources()? {
            for b in self.load_fitted(source)? {
                let (_, val) = self.labeled(source, b.dimension)?;
                rows.push(ValidationRow {
                    dimension: b.dimension,
                    latent_source: source,
                    metrics: semantics::evaluate(&b, &val)?,
                    planted_cosine: b.normal.cosine(model.weights(b.dimension))?,
                });
            }
        }
        Ok(rows)
    }

    pub fn evaluate(&self) -> Result<()> {
        let rows = self.validation_rows()?;
        let table: Vec<MetricsRow> = rows
            .iter()
            .map(|r| MetricsRow {
                dimension: r.dimension,
                inversion_method: r.latent_source,
                metrics: r.metrics,
            })
            .collect();
        compare::write_metrics_csv(&self.layout.metrics().join("validation.csv"), &table)?;
        store::write_json(&self.layout.metrics().join("validation.json"), &rows)
    }

    pub fn compare_inversions(&self) -> Result<()> {
        let dataset = self.active_dataset()?;
        let outputs = self.load_inversions()?;
        let report = compare::summarize(&dataset, &outputs, &self.config.compare_config())?;
        store::write_json(&self.layout.comparison().join("report.json"), &report)?;
        store::write_bytes(&self.layout.comparison().join("report.txt"), report.to_text().as_bytes())?;
        compare::write_metrics_csv(&self.layout.metrics().join("by_method.csv"), &report.rows)
    }

    /// Base latents of the figures: the first for the single-image grid,
    /// the rest for the multi-image grid.
    pub fn grid_latents(&self) -> Result<Vec<crate::latent::LatentCode>> {
        let c = &self.config;
        let sampling = SamplingConfig::new(c.seeds.grid, 1 + c.grid.multi_count, c.psi, c.dim)?;
        Ok(sample_latents(&sampling))
    }

    pub fn grids(&self) -> Result<()> {
        let constants = self.constants()?;
        let boundaries = self.load_conditioned(self.config.edit_source()?)?;
        let zs = self.grid_latents()?;
        let single = editing::render_matrix_single_image(
            &zs[0],
            &boundaries,
            &self.config.walk_spec(self.config.grid.single_rows.clone()),
            &constants,
        )?;
        let multi = editing::render_matrix_multi_image(
            &zs[1..],
            self.config.grid.multi_dimension,
            &boundaries,
            &self.config.walk_spec(vec![self.config.grid.multi_dimension]),
            &constants,
        )?;
        let dir = self.layout.grids();
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        editing::write_grid(&single, &dir.join("image1"))?;
        editing::write_grid(&multi, &dir.join("image2"))
    }

    pub fn report(&self) -> Result<()> {
        let report_path = self.layout.comparison().join("report.json");
        require(&report_path, "comparison report")?;
        let comparison: compare::ComparisonReport = store::read_json(&report_path)?;
        let mut conditioning = BTreeMap::new();
        for source in self.config.sources()? {
            let path = self.layout.boundaries(source).join("conditioning.json");
            require(&path, "conditioned boundaries")?;
            conditioning.insert(source.to_string(), store::read_json(&path)?);
        }
        let mut grids = BTreeMap::new();
        for name in ["image1", "image2"] {
            let path = self.layout.grids().join(name).join("grid.json");
            require(&path, "grid manifest")?;
            let m: editing::GridManifest = store::read_json(&path)?;
            grids.insert(name.to_string(), m.max_cross_drift);
        }
        let summary = Summary {
            n: self.active_dataset()?.len(),
            dim: self.config.dim,
            psi: self.config.psi,
            validation: self.validation_rows()?,
            by_method: comparison.rows.clone(),
            inversion: comparison.methods.clone(),
            conditioning,
            grids,
        };
        store::write_json(&self.layout.report().join("summary.json"), &summary)?;
        store::write_bytes(&self.layout.report().join("summary.txt"), summary.to_text().as_bytes())
    }
}

/// Loads `<dim>.json` for each dimension in `order` from `dir`.
pub fn load_boundary_set(dir: &Path, order: &[Dimension]) -> Result<Vec<SemanticBoundary>> {
    order
        .iter()
        .map(|dim| {
            let path = dir.join(format!("{dim}.json"));
            require(&path, "conditioned boundary")?;
            let b: SemanticBoundary = store::read_json(&path)?;
            if b.dimension != *dim {
                return Err(Error::malformed(&path, format!("holds the {} boundary", b.dimension)));
            }
            Ok(b)
        })
        .collect()
}

impl Summary {
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "dataset: n = {}, D = {}, psi = {}\n", self.n, self.dim, self.psi);
        let _ = writeln!(
            s,
            "{:<10} {:<16} {:>9} {:>9} {:>9} {:>14}",
            "dimension", "latent_source", "precision", "recall", "f1", "planted_cosine"
        );
        for r in &self.validation {
            let _ = writeln!(
                s,
                "{:<10} {:<16} {:>9.3} {:>9.3} {:>9.3} {:>14.4}",
                r.dimension.as_str(),
                r.latent_source.as_str(),
                r.metrics.precision,
                r.metrics.recall,
                r.metrics.f1,
                r.planted_cosine
            );
        }
        let _ = writeln!(s, "\nper inversion method (held-out subset):");
        let _ = writeln!(
            s,
            "{:<10} {:<16} {:>9} {:>9} {:>9}",
            "dimension", "inversion_method", "precision", "recall", "f1"
        );
        for r in &self.by_method {
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
        let _ = writeln!(s, "\nreconstruction:");
        for m in &self.inversion {
            let _ = writeln!(
                s,
                "  {:<16} mse mean {:.3e}, median {:.3e}, <=1e-3 {:.3}, latent cosine median {:.4}",
                m.method.as_str(),
                m.mse_mean,
                m.mse_median,
                m.success_fraction,
                m.latent_cosine_median
            );
        }
        let _ = writeln!(s, "\nconditioning:");
        for (source, c) in &self.conditioning {
            let order: Vec<&str> = c.order.iter().map(Dimension::as_str).collect();
            let _ = writeln!(
                s,
                "  {source}: order {}, max |dot| {:.3e}",
                order.join(" > "),
                c.max_pairwise_dot
            );
        }
        for (name, drift) in &self.grids {
            let _ = writeln!(s, "  {name}: max cross-boundary drift {drift:.3e}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml_with(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let overrides = vec![
            ("seeds.split".to_string(), "99".to_string()),
            ("inversion.methods".to_string(), "[\"encode\"]".to_string()),
            ("output_dir".to_string(), "elsewhere".to_string()),
            ("semantics.svm.c".to_string(), "2.5".to_string()),
        ];
        let cfg = PipelineConfig::from_toml_with("", &overrides).unwrap();
        assert_eq!(cfg.seeds.split, 99);
        assert_eq!(cfg.methods().unwrap(), vec![InversionMethod::Encode]);
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.semantics.svm.c, 2.5);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            "n = 5",
            "psi = 1.5",
            "[inversion]\nmethods = [\"gradient\"]",
            "[semantics]\nfraction = 0.7",
            "[world]\ntarget_rho = 1.0",
            "unknown_key = 1",
            "[grid]\nsteps = 6",
        ] {
            assert!(
                matches!(PipelineConfig::from_toml_with(bad, &[]), Err(Error::InvalidConfig(_)) | Err(Error::Unknown { .. })),
                "accepted {bad}"
            );
        }
    }

    #[test]
    fn assignment_parsing() {
        assert_eq!(split_assignment("a.b = 3").unwrap(), ("a.b", "3"));
        assert!(split_assignment("novalue").is_err());
        assert!(split_assignment("=3").is_err());
    }
}
