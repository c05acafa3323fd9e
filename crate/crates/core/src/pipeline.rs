//! Experiment orchestration.
//!
//! A run is a fixed sequence of stages (generate, train, segment, evaluate,
//! ablate, render). Every stage reads its inputs from the output directory
//! and writes its outputs there, so stages can be invoked one at a time from
//! the command line or chained by [`run_all`]. Each stage records its
//! artifacts and wall-clock time in `manifest.json`.
//!
//! Tabular outputs are CSV, written in sample-id order by a single writer
//! after the parallel work finishes, so reports are byte-identical across
//! runs and worker counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{
    export_lesion_analysis, segment_vertebra, AttributionConfig, LesionRow, PhenotypeFilter, Polarity,
    SegmentationResult,
};
use crate::baselines::{ad_baseline, otsu_baseline};
use crate::classifier::{train_classifier, GateDecision, LinearClassifier, TrainConfig};
use crate::error::{Error, Result};
use crate::imaging::pnm::{
    read_image, read_labeling, read_mask, write_image, write_labeling, write_mask, write_ppm, RgbImage,
};
use crate::imaging::{ssim, BinaryMask, Image};
use crate::latent::{Latent, LatentModel, SemanticAutoencoder};
use crate::metrics::{
    evaluate_sample, roc_auc, summarize, surface, MetricsReport, SampleRecord, Summary, METRIC_NAMES,
};
use crate::phantom::{generate_dataset, Label, PhantomConfig, PhantomSample, Phenotype, Regime, Split, SplitCounts};

/// Seed of the reference benchmark.
pub const DEFAULT_SEED: u64 = 2024;
/// Environment variable that overrides the output directory.
pub const OUTPUT_ENV: &str = "HIDESEEK_OUT";

const MANIFEST_FILE: &str = "manifest.json";
const DATASET_FILE: &str = "data/dataset.json";
const LATENT_FILE: &str = "models/latent.bin";
const HEALTHY_LATENT_FILE: &str = "models/latent_healthy.bin";
const CLASSIFIER_FILE: &str = "models/classifier.json";
const LESION_ANALYSIS_FILE: &str = "reports/lesion_analysis.csv";

/// How the phenotype filter is chosen for each test sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Derived from the sample's phenotype (mixed keeps both).
    Auto,
    LyticOnly,
    BlasticOnly,
    Both,
}

impl FilterMode {
    pub fn filter_for(self, phenotype: Phenotype) -> PhenotypeFilter {
        match self {
            FilterMode::Auto => PhenotypeFilter::for_phenotype(phenotype),
            FilterMode::LyticOnly => PhenotypeFilter::LyticOnly,
            FilterMode::BlasticOnly => PhenotypeFilter::BlasticOnly,
            FilterMode::Both => PhenotypeFilter::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineToggles {
    pub otsu: bool,
    pub ad: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Test samples used for the occlusion projection ablation.
    pub projection_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub regime: Regime,
    pub phantom: PhantomConfig,
    pub splits: SplitCounts,
    pub latent_dim: usize,
    pub train: TrainConfig,
    pub attribution: AttributionConfig,
    pub phenotype_filter: FilterMode,
    pub baselines: BaselineToggles,
    pub ablation: AblationConfig,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_regime(Regime::Easy)
    }
}

fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl ExperimentConfig {
    pub fn for_regime(regime: Regime) -> Self {
        Self {
            seed: DEFAULT_SEED,
            regime,
            phantom: PhantomConfig::preset(regime),
            splits: SplitCounts::default(),
            latent_dim: 8,
            train: TrainConfig {
                lambda: 1e-6,
                ..TrainConfig::default()
            },
            attribution: AttributionConfig::default(),
            phenotype_filter: FilterMode::Auto,
            baselines: BaselineToggles { otsu: true, ad: true },
            ablation: AblationConfig { projection_samples: 50 },
            output_dir: PathBuf::from("runs/default"),
            jobs: 0,
        }
    }

    /// Parses a TOML config. Keys left out take the defaults of the selected
    /// `regime`; tables merge key by key over those defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse()?;
        let regime = match user.get("regime") {
            Some(v) => v.clone().try_into::<Regime>()?,
            None => Regime::Easy,
        };
        let mut merged =
            toml::Value::try_from(Self::for_regime(regime)).map_err(|e| Error::format("config", e.to_string()))?;
        merge_toml(&mut merged, toml::Value::Table(user));
        let cfg: Self = merged.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::format("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.splits.validate()?;
        self.train.validate()?;
        self.attribution.validate()?;
        if self.attribution.phenotype_filter != PhenotypeFilter::Both {
            return Err(Error::InvalidArgument(
                "set the top-level phenotype_filter instead of attribution.phenotype_filter".into(),
            ));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent_dim must be positive".into()));
        }
        if self.ablation.projection_samples == 0 {
            return Err(Error::InvalidArgument(
                "ablation.projection_samples must be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 over everything that affects outputs; the output directory
    /// and worker count are excluded.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output_dir: PathBuf::new(),
            jobs: 0,
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m = vec![Method::HideAndSeek];
        if self.baselines.otsu {
            m.push(Method::Otsu);
        }
        if self.baselines.ad {
            m.push(Method::Ad);
        }
        m
    }

    fn attribution_for(&self, phenotype: Phenotype) -> AttributionConfig {
        self.attribution
            .with_filter(self.phenotype_filter.filter_for(phenotype))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    HideAndSeek,
    Otsu,
    Ad,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::HideAndSeek => "hide_and_seek",
            Method::Otsu => "otsu",
            Method::Ad => "ad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Generate,
    Train,
    Segment,
    Evaluate,
    Ablate,
    Render,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Generate,
        Stage::Train,
        Stage::Segment,
        Stage::Evaluate,
        Stage::Ablate,
        Stage::Render,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Train => "train",
            Stage::Segment => "segment",
            Stage::Evaluate => "evaluate",
            Stage::Ablate => "ablate",
            Stage::Render => "render",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub seconds: f64,
    pub ok: bool,
    pub error: Option<String>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub regime: Regime,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    /// Set until every stage has completed successfully.
    pub partial: bool,
}

impl RunManifest {
    fn new(cfg: &ExperimentConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("hideseek".to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert("manifest".to_string(), "1".to_string());
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            regime: cfg.regime,
            versions,
            stages: Vec::new(),
            partial: true,
        }
    }

    /// The manifest in `root` if it belongs to this config, else a fresh one.
    fn open(root: &Path, cfg: &ExperimentConfig) -> Self {
        let path = root.join(MANIFEST_FILE);
        fs::read_to_string(path)
            .ok()
            .and_then(|s| serde_json::from_str::<RunManifest>(&s).ok())
            .filter(|m| m.config_hash == cfg.hash())
            .unwrap_or_else(|| Self::new(cfg))
    }

    fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|s| s.stage != rec.stage);
        self.stages.push(rec);
        self.stages
            .sort_by_key(|s| Stage::ALL.iter().position(|&x| x == s.stage));
        self.partial = !Stage::ALL
            .iter()
            .all(|st| self.stages.iter().any(|s| s.stage == *st && s.ok));
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &str> {
        self.stages.iter().flat_map(|s| s.artifacts.iter().map(String::as_str))
    }

    /// Artifacts that are missing or empty under `root`.
    pub fn missing_artifacts(&self, root: &Path) -> Vec<String> {
        self.artifacts()
            .filter(|a| fs::metadata(root.join(a)).map(|m| m.len() == 0).unwrap_or(true))
            .map(str::to_string)
            .collect()
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        write_json(&root.join(MANIFEST_FILE), self)
    }
}

/// Collects the files a stage writes, relative to the output directory.
struct Artifacts<'a> {
    root: &'a Path,
    paths: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn new(root: &'a Path) -> Self {
        Self {
            root,
            paths: Vec::new(),
        }
    }

    fn path(&mut self, rel: impl Into<String>) -> PathBuf {
        let rel = rel.into();
        let full = self.root.join(&rel);
        self.paths.push(rel);
        full
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    require(path)?;
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.display().to_string()))
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    pool.install(f)
}

/// One entry of `data/dataset.json`; paths are relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub sample_id: String,
    pub split: Split,
    pub label: Label,
    pub phenotype: Phenotype,
    pub image: String,
    pub body_mask: String,
    pub gt_lytic: String,
    pub gt_blastic: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub regime: Regime,
    pub samples: Vec<DatasetEntry>,
}

pub fn load_split(root: &Path, split: Split) -> Result<Vec<PhantomSample>> {
    let path = root.join(DATASET_FILE);
    require(&path)?;
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    manifest
        .samples
        .par_iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let file = |rel: &str| {
                let p = root.join(rel);
                require(&p).map(|_| p)
            };
            Ok(PhantomSample {
                sample_id: e.sample_id.clone(),
                label: e.label,
                phenotype: e.phenotype,
                image: read_image(&file(&e.image)?)?,
                body_mask: read_mask(&file(&e.body_mask)?)?,
                gt_lytic: read_labeling(&file(&e.gt_lytic)?)?,
                gt_blastic: read_labeling(&file(&e.gt_blastic)?)?,
            })
        })
        .collect()
}

fn generate_stage(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let ds = generate_dataset(cfg.seed, &cfg.phantom, &cfg.splits)?;
    let splits = [
        (Split::Generative, &ds.generative),
        (Split::Classifier, &ds.classifier),
        (Split::Test, &ds.test),
    ];
    let mut entries = Vec::new();
    for (split, samples) in splits {
        for s in samples.iter() {
            let base = format!("data/{}/{}", split.prefix(), s.sample_id);
            entries.push(DatasetEntry {
                sample_id: s.sample_id.clone(),
                split,
                label: s.label,
                phenotype: s.phenotype,
                image: format!("{base}_image.pgm"),
                body_mask: format!("{base}_body.pgm"),
                gt_lytic: format!("{base}_gt_lytic.pgm"),
                gt_blastic: format!("{base}_gt_blastic.pgm"),
            });
        }
    }
    let root = art.root;
    entries
        .par_iter()
        .zip(ds.all().collect::<Vec<_>>())
        .try_for_each(|(e, s)| -> Result<()> {
            write_image(&root.join(&e.image), &s.image)?;
            write_mask(&root.join(&e.body_mask), &s.body_mask)?;
            write_labeling(&root.join(&e.gt_lytic), &s.gt_lytic)?;
            write_labeling(&root.join(&e.gt_blastic), &s.gt_blastic)
        })?;
    for e in &entries {
        for p in [&e.image, &e.body_mask, &e.gt_lytic, &e.gt_blastic] {
            art.paths.push(p.clone());
        }
    }
    let manifest = DatasetManifest {
        seed: cfg.seed,
        regime: cfg.regime,
        samples: entries,
    };
    write_json(&art.path(DATASET_FILE), &manifest)
}

/// Training diagnostics written next to the models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub latent_dim: usize,
    pub generative_samples: usize,
    pub healthy_samples: usize,
    pub classifier_samples: usize,
    pub training_accuracy: f64,
    pub normal_norm: f64,
    pub bias: f64,
}

fn train_stage(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let root = art.root;
    let generative = load_split(root, Split::Generative)?;
    let classifier_set = load_split(root, Split::Classifier)?;

    let corpus: Vec<Image> = generative.iter().map(|s| s.image.clone()).collect();
    let model = LatentModel::fit(&corpus, cfg.latent_dim)?;
    let healthy: Vec<Image> = generative
        .iter()
        .filter(|s| s.label == Label::Healthy)
        .map(|s| s.image.clone())
        .collect();
    let healthy_model = LatentModel::fit(&healthy, cfg.latent_dim)?;

    let latents: Vec<Latent> = classifier_set
        .par_iter()
        .map(|s| model.encode(&s.image))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = classifier_set.iter().map(|s| s.label.as_class()).collect();
    let clf = train_classifier(&latents, &labels, &cfg.train)?;

    let mut correct = 0;
    for (z, &y) in latents.iter().zip(&labels) {
        if (clf.probability(z)? >= 0.5) as u8 == y {
            correct += 1;
        }
    }
    model.save(&art.path(LATENT_FILE))?;
    healthy_model.save(&art.path(HEALTHY_LATENT_FILE))?;
    clf.save(&art.path(CLASSIFIER_FILE), cfg.train.lambda, cfg.attribution.p_target)?;
    let summary = TrainingSummary {
        latent_dim: cfg.latent_dim,
        generative_samples: corpus.len(),
        healthy_samples: healthy.len(),
        classifier_samples: latents.len(),
        training_accuracy: correct as f64 / latents.len() as f64,
        normal_norm: clf.norm(),
        bias: clf.bias(),
    };
    log::info!(
        "classifier training accuracy {:.3}, |n| = {:.3}",
        summary.training_accuracy,
        summary.normal_norm
    );
    write_json(&art.path("models/training.json"), &summary)
}

struct Models {
    full: LatentModel,
    healthy: LatentModel,
    classifier: LinearClassifier,
}

fn load_models(root: &Path) -> Result<Models> {
    let p = |rel: &str| {
        let path = root.join(rel);
        require(&path).map(|_| path)
    };
    Ok(Models {
        full: LatentModel::load(&p(LATENT_FILE)?)?,
        healthy: LatentModel::load(&p(HEALTHY_LATENT_FILE)?)?,
        classifier: LinearClassifier::load(&p(CLASSIFIER_FILE)?)?.0,
    })
}

/// Segments one sample with one method.
pub fn run_method(
    method: Method,
    cfg: &ExperimentConfig,
    full: &LatentModel,
    healthy: &LatentModel,
    clf: &LinearClassifier,
    sample: &PhantomSample,
) -> Result<SegmentationResult> {
    let acfg = cfg.attribution_for(sample.phenotype);
    match method {
        Method::HideAndSeek => segment_vertebra(full, clf, &sample.image, &sample.body_mask, &acfg),
        Method::Otsu => otsu_baseline(
            &sample.image,
            &sample.body_mask,
            acfg.phenotype_filter,
            &acfg.post_process(),
        ),
        Method::Ad => ad_baseline(healthy, &sample.image, &sample.body_mask, &acfg),
    }
}

/// Candidate ledger row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub sample_id: String,
    pub candidate: usize,
    pub polarity: Polarity,
    pub size: usize,
    pub delta: f64,
    pub kept: bool,
    pub hide_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResultRow {
    pub sample_id: String,
    pub phenotype: Phenotype,
    pub gate: GateDecision,
    pub original_probability: f64,
    pub healthy_probability: f64,
    pub lytic_instances: usize,
    pub blastic_instances: usize,
    pub warnings: String,
}

fn segmentation_paths(method: Method, sample_id: &str) -> (String, String) {
    let base = format!("segmentations/{}/{}", method.as_str(), sample_id);
    (format!("{base}_lytic.pgm"), format!("{base}_blastic.pgm"))
}

fn segment_stage(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let root = art.root;
    let models = load_models(root)?;
    let test = load_split(root, Split::Test)?;
    for method in cfg.methods() {
        let results: Vec<SegmentationResult> = test
            .par_iter()
            .map(|s| run_method(method, cfg, &models.full, &models.healthy, &models.classifier, s))
            .collect::<Result<_>>()?;

        let mut candidates = Vec::new();
        let mut summaries = Vec::new();
        for (s, r) in test.iter().zip(&results) {
            let (lytic, blastic) = segmentation_paths(method, &s.sample_id);
            write_labeling(&art.path(lytic), &r.lytic)?;
            write_labeling(&art.path(blastic), &r.blastic)?;
            for (k, (c, kept)) in r.candidates().into_iter().enumerate() {
                candidates.push(CandidateRow {
                    sample_id: s.sample_id.clone(),
                    candidate: k,
                    polarity: c.polarity,
                    size: c.size,
                    delta: c.delta,
                    kept,
                    hide_probability: c.hide_probability,
                });
            }
            summaries.push(SampleResultRow {
                sample_id: s.sample_id.clone(),
                phenotype: s.phenotype,
                gate: r.gate_decision,
                original_probability: r.original_probability,
                healthy_probability: r.healthy_probability,
                lytic_instances: r.lytic.count(),
                blastic_instances: r.blastic.count(),
                warnings: r.warnings.join("; "),
            });
        }
        let dir = format!("segmentations/{}", method.as_str());
        write_csv(&art.path(format!("{dir}/samples.csv")), &summaries)?;

        // only the attribution method scores candidates
        if method == Method::HideAndSeek {
            write_csv(&art.path(format!("{dir}/candidates.csv")), &candidates)?;
            let rows = export_lesion_analysis(
                test.iter().zip(&results).map(|(s, r)| (s.sample_id.as_str(), r, s)),
                &cfg.attribution.polarity_map,
            )?;
            write_csv(&art.path(LESION_ANALYSIS_FILE), &rows)?;
        }
    }
    Ok(())
}

fn load_segmentation(root: &Path, method: Method, sample: &PhantomSample) -> Result<SegmentationResult> {
    let (lytic, blastic) = segmentation_paths(method, &sample.sample_id);
    let (lytic, blastic) = (root.join(lytic), root.join(blastic));
    require(&lytic)?;
    require(&blastic)?;
    let (w, h) = sample.image.dims();
    Ok(SegmentationResult {
        lytic: read_labeling(&lytic)?,
        blastic: read_labeling(&blastic)?,
        ..SegmentationResult::empty(w, h, GateDecision::Malignant)
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Scores every method on the test set and writes the metric reports.
pub fn evaluate_outputs(cfg: &ExperimentConfig, root: &Path) -> Result<(Vec<SampleRecord>, MetricsReport)> {
    let test = load_split(root, Split::Test)?;
    let mut records = Vec::new();
    for method in cfg.methods() {
        let per_sample: Vec<SampleRecord> = test
            .par_iter()
            .map(|s| {
                let seg = load_segmentation(root, method, s)?;
                let metrics = evaluate_sample(&seg.prediction(s.phenotype), &s.ground_truth(s.phenotype))?;
                Ok(SampleRecord {
                    sample_id: s.sample_id.clone(),
                    method: method.as_str().to_string(),
                    phenotype: s.phenotype.as_str().to_string(),
                    metrics,
                })
            })
            .collect::<Result<_>>()?;
        records.extend(per_sample);
    }
    let report = MetricsReport::from_records(&records);
    Ok((records, report))
}

fn evaluate_stage(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let (records, report) = evaluate_outputs(cfg, art.root)?;

    let path = art.path("reports/per_sample_metrics.csv");
    ensure_parent(&path)?;
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["sample_id", "method", "phenotype"];
    header.extend(METRIC_NAMES);
    w.write_record(&header)?;
    for r in &records {
        let mut row = vec![r.sample_id.clone(), r.method.clone(), r.phenotype.clone()];
        row.extend(r.metrics.values().into_iter().map(fmt_opt));
        w.write_record(&row)?;
    }
    w.flush()?;

    report.write_csv(fs::File::create(art.path("reports/metrics.csv"))?)?;
    report.write_comparison_csv(fs::File::create(art.path("reports/comparison.csv"))?)?;
    write_json(&art.path("reports/metrics.json"), &report.to_json())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRow {
    pub sample_id: String,
    pub phenotype: Phenotype,
    pub reconstruction_ssim: f64,
    pub healthy_edit_ssim: f64,
}

/// Candidate discrimination by Δ against the raw hidden-image probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaAucRow {
    pub phenotype: String,
    pub candidates: usize,
    pub true_positives: usize,
    pub auc_delta: Option<f64>,
    pub auc_probability: Option<f64>,
    pub delta_at_least_probability: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub sample_id: String,
    pub occluded_pixels: usize,
    pub occluded_ssim: f64,
    pub projected_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub reconstruction: Vec<ReconstructionRow>,
    pub reconstruction_ssim: Summary,
    pub healthy_edit_ssim: Summary,
    pub delta_auc: Vec<DeltaAucRow>,
    pub projection: Vec<ProjectionRow>,
    pub occluded_ssim: Summary,
    pub projected_ssim: Summary,
    pub projection_improvement: Summary,
}

fn delta_auc_rows(rows: &[LesionRow]) -> Result<Vec<DeltaAucRow>> {
    let mut out = Vec::new();
    for phenotype in [Phenotype::Blastic, Phenotype::Lytic] {
        let group: Vec<&LesionRow> = rows.iter().filter(|r| r.phenotype == phenotype.as_str()).collect();
        let labels: Vec<u8> = group.iter().map(|r| r.true_positive as u8).collect();
        let tp = labels.iter().filter(|&&l| l == 1).count();
        let both_classes = tp > 0 && tp < labels.len();
        let auc = |scores: Vec<f64>| -> Result<Option<f64>> {
            if both_classes {
                roc_auc(&scores, &labels).map(Some)
            } else {
                Ok(None)
            }
        };
        let auc_delta = auc(group.iter().map(|r| r.delta).collect())?;
        let auc_probability = auc(group.iter().map(|r| r.hide_probability).collect())?;
        out.push(DeltaAucRow {
            phenotype: phenotype.as_str().to_string(),
            candidates: group.len(),
            true_positives: tp,
            auc_delta,
            auc_probability,
            delta_at_least_probability: auc_delta.zip(auc_probability).map(|(d, p)| d >= p),
        });
    }
    Ok(out)
}

/// Blanks the ground-truth lesion pixels to zero.
pub fn occlude_lesions(sample: &PhantomSample) -> Result<(Image, usize)> {
    let gt = sample.gt_lytic.foreground().union(&sample.gt_blastic.foreground())?;
    let (w, h) = sample.image.dims();
    let pixels = sample
        .image
        .pixels()
        .iter()
        .zip(gt.bits())
        .map(|(&v, &hit)| if hit { 0.0 } else { v })
        .collect();
    Ok((Image::new(w, h, pixels)?, gt.count()))
}

/// Runs the three ablations against the artifacts in `root`.
pub fn compute_ablations(cfg: &ExperimentConfig, root: &Path) -> Result<AblationReport> {
    let models = load_models(root)?;
    let test = load_split(root, Split::Test)?;
    let model = &models.full;

    let reconstruction: Vec<ReconstructionRow> = test
        .par_iter()
        .map(|s| {
            let (recon, z) = model.project(&s.image)?;
            let edited = model.decode(&models.classifier.healthy_edit(&z, cfg.attribution.p_target)?)?;
            Ok(ReconstructionRow {
                sample_id: s.sample_id.clone(),
                phenotype: s.phenotype,
                reconstruction_ssim: ssim(&recon, &s.image)?,
                healthy_edit_ssim: ssim(&edited, &s.image)?,
            })
        })
        .collect::<Result<_>>()?;

    let lesions: Vec<LesionRow> = read_csv(&root.join(LESION_ANALYSIS_FILE))?;
    let delta_auc = delta_auc_rows(&lesions)?;

    let occluded: Vec<&PhantomSample> = test
        .iter()
        .filter(|s| s.label == Label::Malignant)
        .take(cfg.ablation.projection_samples)
        .collect();
    let projection: Vec<ProjectionRow> = occluded
        .par_iter()
        .map(|s| {
            let (hidden, n) = occlude_lesions(s)?;
            let (projected, _) = model.project(&hidden)?;
            Ok(ProjectionRow {
                sample_id: s.sample_id.clone(),
                occluded_pixels: n,
                occluded_ssim: ssim(&hidden, &s.image)?,
                projected_ssim: ssim(&projected, &s.image)?,
            })
        })
        .collect::<Result<_>>()?;

    Ok(AblationReport {
        reconstruction_ssim: summarize(reconstruction.iter().map(|r| Some(r.reconstruction_ssim))),
        healthy_edit_ssim: summarize(reconstruction.iter().map(|r| Some(r.healthy_edit_ssim))),
        reconstruction,
        delta_auc,
        occluded_ssim: summarize(projection.iter().map(|r| Some(r.occluded_ssim))),
        projected_ssim: summarize(projection.iter().map(|r| Some(r.projected_ssim))),
        projection_improvement: summarize(projection.iter().map(|r| Some(r.projected_ssim - r.occluded_ssim))),
        projection,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AblationSummaryRow {
    ablation: &'static str,
    statistic: &'static str,
    mean: f64,
    sd: f64,
    n: usize,
}

fn ablate_stage(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let report = compute_ablations(cfg, art.root)?;
    write_csv(&art.path("ablations/reconstruction_ssim.csv"), &report.reconstruction)?;
    write_csv(&art.path("ablations/delta_auc.csv"), &report.delta_auc)?;
    write_csv(&art.path("ablations/projection_ssim.csv"), &report.projection)?;
    let row = |ablation, statistic, s: Summary| AblationSummaryRow {
        ablation,
        statistic,
        mean: s.mean,
        sd: s.sd,
        n: s.n,
    };
    let summary = [
        row("reconstruction", "reconstruction_ssim", report.reconstruction_ssim),
        row("reconstruction", "healthy_edit_ssim", report.healthy_edit_ssim),
        row("projection", "occluded_ssim", report.occluded_ssim),
        row("projection", "projected_ssim", report.projected_ssim),
        row("projection", "ssim_improvement", report.projection_improvement),
    ];
    write_csv(&art.path("ablations/summary.csv"), &summary)
}

const LYTIC_COLOR: [u8; 3] = [255, 0, 0];
const BLASTIC_COLOR: [u8; 3] = [0, 0, 255];
const GT_COLOR: [u8; 3] = [0, 255, 0];

/// Grayscale image with lytic instances filled red, blastic blue and the
/// optional ground-truth contour in green.
pub fn render_overlay(img: &Image, result: &SegmentationResult, gt: Option<&BinaryMask>) -> Result<RgbImage> {
    let dims = img.dims();
    for other in [result.lytic.dims(), result.blastic.dims()]
        .into_iter()
        .chain(gt.map(BinaryMask::dims))
    {
        if other != dims {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", dims.0, dims.1),
                actual: format!("{}x{}", other.0, other.1),
            });
        }
    }
    let contour = gt.map(surface);
    let lytic = result.lytic.labels().as_slice();
    let blastic = result.blastic.labels().as_slice();
    let data = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if contour.as_ref().is_some_and(|c| c.bits()[i]) {
                GT_COLOR
            } else if blastic[i] != 0 {
                BLASTIC_COLOR
            } else if lytic[i] != 0 {
                LYTIC_COLOR
            } else {
                let g = (v * 255.0).round() as u8;
                [g, g, g]
            }
        })
        .collect();
    Ok(RgbImage {
        width: dims.0,
        height: dims.1,
        data,
    })
}

fn render_stage(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let root = art.root;
    let test = load_split(root, Split::Test)?;
    for method in cfg.methods() {
        for s in &test {
            let seg = load_segmentation(root, method, s)?;
            let gt = s.gt_lytic.foreground().union(&s.gt_blastic.foreground())?;
            let overlay = render_overlay(&s.image, &seg, Some(&gt))?;
            write_ppm(
                &art.path(format!("overlays/{}/{}.ppm", method.as_str(), s.sample_id)),
                &overlay,
            )?;
        }
    }
    Ok(())
}

/// Runs one stage and records it in the manifest. Failures are recorded
/// too, and returned tagged with the stage name.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage) -> Result<RunManifest> {
    cfg.validate()?;
    let root = cfg.output_dir.as_path();
    fs::create_dir_all(root)?;
    let mut manifest = RunManifest::open(root, cfg);
    let mut art = Artifacts::new(root);
    let start = Instant::now();
    log::info!("stage {} starting", stage.as_str());
    let outcome = with_pool(cfg.jobs, || match stage {
        Stage::Generate => generate_stage(cfg, &mut art),
        Stage::Train => train_stage(cfg, &mut art),
        Stage::Segment => segment_stage(cfg, &mut art),
        Stage::Evaluate => evaluate_stage(cfg, &mut art),
        Stage::Ablate => ablate_stage(cfg, &mut art),
        Stage::Render => render_stage(cfg, &mut art),
    });
    let seconds = start.elapsed().as_secs_f64();
    log::info!("stage {} finished in {seconds:.2}s", stage.as_str());
    let mut paths = art.paths;
    paths.sort();
    paths.dedup();
    manifest.record(StageRecord {
        stage,
        seconds,
        ok: outcome.is_ok(),
        error: outcome.as_ref().err().map(ToString::to_string),
        artifacts: if outcome.is_ok() { paths } else { Vec::new() },
    });
    manifest.write(root)?;
    outcome.map_err(|e| e.in_stage(stage.as_str()))?;
    Ok(manifest)
}

/// Every stage in order; stops at the first failure.
pub fn run_all(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let mut manifest = None;
    for stage in Stage::ALL {
        manifest = Some(run_stage(cfg, stage)?);
    }
    Ok(manifest.expect("at least one stage"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{Grid, InstanceLabeling};

    #[test]
    fn toml_overrides_merge_over_regime_preset() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 7
            regime = "hard"
            [phantom]
            noise_sigma = 0.01
            lesion_radius = { max = 4.0 }
            [baselines]
            ad = false
            "#,
        )
        .unwrap();
        let hard = PhantomConfig::hard();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.phantom.noise_sigma, 0.01);
        assert_eq!(cfg.phantom.lesion_radius.min, hard.lesion_radius.min);
        assert_eq!(cfg.phantom.lesion_radius.max, 4.0);
        assert_eq!(cfg.phantom.lesion_contrast, hard.lesion_contrast);
        assert_eq!(cfg.methods(), vec![Method::HideAndSeek, Method::Otsu]);
        assert_eq!(cfg.attribution, AttributionConfig::default());
    }

    #[test]
    fn unknown_keys_and_invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 1").is_err());
        assert!(ExperimentConfig::from_toml("[attribution]\ntau = -1.0").is_err());
        assert!(ExperimentConfig::from_toml("[attribution]\nphenotype_filter = \"lytic_only\"").is_err());
    }

    #[test]
    fn config_round_trips_and_hash_ignores_output_location() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let moved = ExperimentConfig {
            output_dir: "elsewhere".into(),
            jobs: 3,
            ..cfg.clone()
        };
        assert_eq!(moved.hash(), cfg.hash());
        let reseeded = ExperimentConfig { seed: 1, ..cfg.clone() };
        assert_ne!(reseeded.hash(), cfg.hash());
    }

    fn gray(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, _| x as f64 / (w - 1) as f64).unwrap()
    }

    #[test]
    fn empty_overlay_is_grayscale() {
        let img = gray(6, 4);
        let res = SegmentationResult::empty(6, 4, GateDecision::Healthy);
        let o = render_overlay(&img, &res, None).unwrap();
        assert_eq!((o.width, o.height), (6, 4));
        assert!(o.data.iter().all(|p| p[0] == p[1] && p[1] == p[2]));
    }

    #[test]
    fn blastic_instance_is_blue_exactly_on_its_mask() {
        let img = gray(6, 4);
        let mut res = SegmentationResult::empty(6, 4, GateDecision::Malignant);
        let mut labels = vec![0u32; 24];
        for i in [7, 8, 13, 14] {
            labels[i] = 1;
        }
        res.blastic = InstanceLabeling::from_labels(Grid::from_vec(6, 4, labels.clone()).unwrap()).unwrap();
        let o = render_overlay(&img, &res, None).unwrap();
        for (i, p) in o.data.iter().enumerate() {
            assert_eq!(*p == BLASTIC_COLOR, labels[i] != 0, "pixel {i}");
        }
    }

    #[test]
    fn overlay_rejects_shape_mismatch() {
        let img = gray(6, 4);
        let res = SegmentationResult::empty(5, 4, GateDecision::Healthy);
        assert!(render_overlay(&img, &res, None).is_err());
    }

    #[test]
    fn manifest_tracks_partial_runs() {
        let cfg = ExperimentConfig::default();
        let mut m = RunManifest::new(&cfg);
        for (k, stage) in Stage::ALL.iter().enumerate().rev() {
            assert!(m.partial);
            m.record(StageRecord {
                stage: *stage,
                seconds: 0.0,
                ok: true,
                error: None,
                artifacts: vec![format!("a{k}")],
            });
        }
        assert!(!m.partial);
        assert_eq!(m.stages.iter().map(|s| s.stage).collect::<Vec<_>>(), Stage::ALL);
        m.record(StageRecord {
            stage: Stage::Train,
            seconds: 0.0,
            ok: false,
            error: Some("boom".into()),
            artifacts: vec![],
        });
        assert!(m.partial);
    }
}
